//! Service configuration: one TOML file, then `VLAUDIT_*` environment
//! overrides. Relative paths resolve against the config file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use vlaudit_core::ClusteringConfig;

pub const DEFAULT_K: usize = 3000;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub corpus: CorpusConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub defaults: Defaults,
    /// Pins every server timestamp, for reproducible snapshots.
    #[serde(default)]
    pub fixed_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub vlsl: PathBuf,
    pub manifest: PathBuf,
}

/// Exactly one of `endpoint` and `fixture` must be set.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            a: default_a(),
            dt: default_dt(),
        }
    }
}

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().unwrap()
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_a() -> f64 {
    ClusteringConfig::default().a
}

fn default_dt() -> f64 {
    ClusteringConfig::default().dt
}

impl Config {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, applies process environment overrides, and validates.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config =
            Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        config.apply_env(|key| std::env::var(key).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.vlsl);
        fix(&mut self.corpus.manifest);
        if let Some(f) = self.provider.fixture.as_mut() {
            fix(f);
        }
    }

    /// Overrides fields from `VLAUDIT_*` variables looked up through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> anyhow::Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("invalid {key}={value:?}: {e}"))
        }

        if let Some(v) = get("VLAUDIT_BIND") {
            self.bind = parse("VLAUDIT_BIND", &v)?;
        }
        if let Some(v) = get("VLAUDIT_VLSL") {
            self.corpus.vlsl = v.into();
        }
        if let Some(v) = get("VLAUDIT_MANIFEST") {
            self.corpus.manifest = v.into();
        }
        if let Some(v) = get("VLAUDIT_PROVIDER_ENDPOINT") {
            self.provider.endpoint = Some(v);
            self.provider.fixture = None;
        }
        if let Some(v) = get("VLAUDIT_PROVIDER_FIXTURE") {
            self.provider.fixture = Some(v.into());
            self.provider.endpoint = None;
        }
        if let Some(v) = get("VLAUDIT_PROVIDER_TIMEOUT_MS") {
            self.provider.timeout_ms = parse("VLAUDIT_PROVIDER_TIMEOUT_MS", &v)?;
        }
        if let Some(v) = get("VLAUDIT_K") {
            self.defaults.k = parse("VLAUDIT_K", &v)?;
        }
        if let Some(v) = get("VLAUDIT_A") {
            self.defaults.a = parse("VLAUDIT_A", &v)?;
        }
        if let Some(v) = get("VLAUDIT_DT") {
            self.defaults.dt = parse("VLAUDIT_DT", &v)?;
        }
        if let Some(v) = get("VLAUDIT_FIXED_TIME") {
            self.fixed_time = Some(parse("VLAUDIT_FIXED_TIME", &v)?);
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match (&self.provider.endpoint, &self.provider.fixture) {
            (Some(_), Some(_)) => bail!("provider: set either endpoint or fixture, not both"),
            (None, None) => bail!("provider: one of endpoint or fixture is required"),
            _ => {}
        }
        if self.provider.timeout_ms == 0 {
            bail!("provider.timeout_ms must be positive");
        }
        if self.defaults.k == 0 {
            bail!("defaults.k must be at least 1");
        }
        self.clustering()?;
        Ok(())
    }

    pub fn clustering(&self) -> anyhow::Result<ClusteringConfig> {
        Ok(ClusteringConfig::new(self.defaults.a, self.defaults.dt)?)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.provider.timeout_ms)
    }
}
