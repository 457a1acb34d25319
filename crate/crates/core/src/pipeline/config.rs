use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::adapter::{AdapterEndpointConfig, DEFAULT_MAX_NEW_TOKENS};
use crate::error::{Error, Result};
use crate::evaluation::NoiseConfig;
use crate::filtering::FilterConfig;
use crate::integration::{CombineFallback, IntegrationConfig};
use crate::kg::{GraphFormat, PageRankConfig};
use crate::prompting::DEFAULT_MAX_CHARS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: GraphFormat,
}

fn default_format() -> GraphFormat {
    GraphFormat::Tsv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RetrievalConfig {
    Builtin {
        #[serde(default = "default_max_hops")]
        max_hops: usize,
        #[serde(default = "default_max_paths")]
        max_paths: usize,
    },
    Ingest {
        path: PathBuf,
    },
}

fn default_max_hops() -> usize {
    2
}

fn default_max_paths() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    Attention,
    Similarity,
    Pagerank,
    /// Scores shipped with ingested paths.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderChoice {
    Lexical,
    Adapter,
}

/// What to do when the attention scorer cannot reach the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerFallback {
    None,
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub scorer: ScorerChoice,
    pub embedder: EmbedderChoice,
    pub fallback: ScorerFallback,
    pub pagerank: PageRankConfig,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerChoice::Attention,
            embedder: EmbedderChoice::Lexical,
            fallback: ScorerFallback::None,
            pagerank: PageRankConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSection {
    /// When off, the prompt is answered once and its raw answers are final.
    pub enabled: bool,
    pub tau_g: f64,
    pub tau_l: f64,
    pub fallback: CombineFallback,
}

impl Default for IntegrationSection {
    fn default() -> Self {
        Self::from_thresholds(true, IntegrationConfig::default())
    }
}

impl IntegrationSection {
    pub fn from_thresholds(enabled: bool, t: IntegrationConfig) -> Self {
        Self {
            enabled,
            tau_g: t.tau_g,
            tau_l: t.tau_l,
            fallback: t.fallback,
        }
    }

    pub fn thresholds(&self) -> IntegrationConfig {
        IntegrationConfig {
            tau_g: self.tau_g,
            tau_l: self.tau_l,
            fallback: self.fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub max_chars: usize,
    pub max_new_tokens: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            max_chars: DEFAULT_MAX_CHARS,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterConfig {
    Mock {
        fixture: PathBuf,
    },
    Http {
        base_url: Url,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
    },
}

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    1000
}

impl AdapterConfig {
    /// Endpoint settings for the HTTP mode; `None` in mock mode.
    pub fn endpoint(&self, auth_token: Option<String>) -> Option<AdapterEndpointConfig> {
        match self {
            AdapterConfig::Mock { .. } => None,
            AdapterConfig::Http {
                base_url,
                timeout_secs,
                retries,
                backoff_ms,
            } => Some(AdapterEndpointConfig {
                base_url: base_url.clone(),
                timeout: Duration::from_secs_f64(*timeout_secs),
                retries: *retries,
                auth_token,
                backoff_base: Duration::from_millis(*backoff_ms),
            }),
        }
    }
}

fn default_parallelism() -> usize {
    4
}

/// Everything one pipeline run needs. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub graph: GraphConfig,
    pub dataset: DatasetConfig,
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub integration: IntegrationSection,
    #[serde(default)]
    pub prompt: PromptConfig,
    pub adapter: AdapterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        resolve(base, &mut self.graph.path);
        resolve(base, &mut self.dataset.path);
        if let RetrievalConfig::Ingest { path } = &mut self.retrieval {
            resolve(base, path);
        }
        if let AdapterConfig::Mock { fixture } = &mut self.adapter {
            resolve(base, fixture);
        }
    }

    /// Checks every section; called before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if let RetrievalConfig::Builtin { max_hops, .. } = self.retrieval {
            if !(1..=4).contains(&max_hops) {
                return bad(format!(
                    "retrieval.max_hops must be in 1..=4, got {max_hops}"
                ));
            }
        }
        if self.scoring.scorer == ScorerChoice::External
            && !matches!(self.retrieval, RetrievalConfig::Ingest { .. })
        {
            return bad("scoring.scorer = \"external\" needs retrieval.mode = \"ingest\"".into());
        }
        if self.scoring.embedder == EmbedderChoice::Adapter
            && matches!(self.adapter, AdapterConfig::Mock { .. })
        {
            return bad("scoring.embedder = \"adapter\" needs adapter.mode = \"http\"".into());
        }
        if let AdapterConfig::Http { timeout_secs, .. } = self.adapter {
            if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
                return bad(format!(
                    "adapter.timeout_secs must be positive, got {timeout_secs}"
                ));
            }
        }
        if self.prompt.max_new_tokens == 0 {
            return bad("prompt.max_new_tokens must be at least 1".into());
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.scoring.pagerank.validate().map_err(wrap)?;
        self.filter.validate().map_err(wrap)?;
        self.integration.thresholds().validate().map_err(wrap)?;
        if let Some(n) = &self.noise {
            n.validate().map_err(wrap)?;
        }
        Ok(())
    }
}
