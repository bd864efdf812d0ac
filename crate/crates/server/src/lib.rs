//! HTTP service and command-line tools around `vlaudit-core`.

pub mod api;
pub mod cli;
pub mod config;
pub mod provider;
pub mod session;

use std::future::Future;
use std::sync::Arc;

use anyhow::Context;
use tokio::net::TcpListener;
use vlaudit_core::store::load_embeddings;
use vlaudit_core::EmbeddingMatrix;

pub use api::{router, AppState};
pub use config::Config;
pub use provider::TextEncoder;
pub use session::{Clock, SessionStore};

impl AppState {
    pub fn new(
        matrix: Arc<EmbeddingMatrix>,
        encoder: TextEncoder,
        config: &Config,
    ) -> anyhow::Result<Self> {
        let clock = config.fixed_time.map_or(Clock::System, Clock::Fixed);
        Ok(Self {
            store: SessionStore::new(matrix, clock),
            encoder,
            clustering: config.clustering()?,
            default_k: config.defaults.k,
        })
    }

    /// Loads the corpus and provider named in `config`.
    pub fn from_config(config: &Config) -> anyhow::Result<Self> {
        let corpus = load_embeddings(&config.corpus.vlsl, &config.corpus.manifest)
            .with_context(|| format!("loading corpus {}", config.corpus.vlsl.display()))?;
        let encoder = match (&config.provider.endpoint, &config.provider.fixture) {
            (Some(endpoint), _) => TextEncoder::http(endpoint, config.timeout())?,
            (None, Some(path)) => TextEncoder::fixture_file(path)
                .with_context(|| format!("loading fixture provider {}", path.display()))?,
            (None, None) => anyhow::bail!("no text encoder configured"),
        };
        Self::new(Arc::new(corpus.matrix), encoder, config)
    }
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
