//! Text-encoder providers.
//!
//! Wire protocol: `POST {endpoint}/encode` with `{"texts": [...]}`, answered
//! by `{"dim": d, "embeddings": [[...], ...]}` with one row per text.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("text encoder unavailable: {0}")]
    Unavailable(String),
    #[error("text encoder timed out after {0:?}")]
    Timeout(Duration),
    #[error("text encoder returned a malformed response: {0}")]
    Malformed(String),
    #[error("fixture provider has no embedding for {0:?}")]
    UnknownText(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub enum TextEncoder {
    Http {
        client: reqwest::Client,
        url: String,
        timeout: Duration,
    },
    Fixture {
        vectors: HashMap<String, Vec<f32>>,
    },
}

impl TextEncoder {
    pub fn http(endpoint: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(TextEncoder::Http {
            client,
            url: format!("{}/encode", endpoint.trim_end_matches('/')),
            timeout,
        })
    }

    pub fn fixture(vectors: HashMap<String, Vec<f32>>) -> Self {
        TextEncoder::Fixture { vectors }
    }

    /// Reads a JSON object mapping caption text to its vector.
    pub fn fixture_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::fixture(serde_json::from_str(&text)?))
    }

    /// One embedding per input text, each of length `dim`.
    pub async fn encode(
        &self,
        texts: &[String],
        dim: usize,
    ) -> Result<Vec<Vec<f32>>, ProviderError> {
        let embeddings = match self {
            TextEncoder::Fixture { vectors } => texts
                .iter()
                .map(|t| {
                    vectors
                        .get(t)
                        .cloned()
                        .ok_or_else(|| ProviderError::UnknownText(t.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?,
            TextEncoder::Http {
                client,
                url,
                timeout,
            } => {
                let request = EncodeRequest {
                    texts: texts.to_vec(),
                };
                let response = client.post(url).json(&request).send().await.map_err(|e| {
                    if e.is_timeout() {
                        ProviderError::Timeout(*timeout)
                    } else {
                        ProviderError::Unavailable(e.to_string())
                    }
                })?;
                let status = response.status();
                if !status.is_success() {
                    return Err(ProviderError::Unavailable(format!("status {status}")));
                }
                let body: EncodeResponse = response.json().await.map_err(|e| {
                    if e.is_timeout() {
                        ProviderError::Timeout(*timeout)
                    } else {
                        ProviderError::Malformed(e.to_string())
                    }
                })?;
                if body.dim != dim {
                    return Err(ProviderError::Malformed(format!(
                        "dim {} does not match corpus dim {dim}",
                        body.dim
                    )));
                }
                body.embeddings
            }
        };
        if embeddings.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "{} embeddings for {} texts",
                embeddings.len(),
                texts.len()
            )));
        }
        for (text, e) in texts.iter().zip(&embeddings) {
            if e.len() != dim {
                return Err(ProviderError::Malformed(format!(
                    "embedding for {text:?} has length {}, expected {dim}",
                    e.len()
                )));
            }
            if e.iter().any(|x| !x.is_finite()) || e.iter().all(|&x| x == 0.0) {
                return Err(ProviderError::Malformed(format!(
                    "embedding for {text:?} cannot be normalized"
                )));
            }
        }
        Ok(embeddings)
    }
}
