//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Validation};
use crate::embedding::{EmbeddingCache, EmbeddingProvider, HashProvider, RemoteProvider};
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_K_LIST, DEFAULT_SWEEP_COUNTS};
use crate::extraction::{Extractor, PromptStrategy, StrategyKind, TemplateSet, DEFAULT_DOC_CHAR_BUDGET};
use crate::gateway::{read_transcript, ChatBackend, Gateway, MockScript, RetryPolicy};
use crate::lexicon::TechnologyLexicon;
use crate::pipeline::Pipeline;

pub const RESOLVED_LEXICON: &str = "lexicon.resolved.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_examples: Option<PathBuf>,
    /// Directory holding template sets as subdirectories. The built-in
    /// `v1` set is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayKind {
    #[default]
    Mock,
    /// Replays a recorded transcript.
    Replay,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default)]
    pub kind: GatewayKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl Default for GatewaySection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

fn default_key_env() -> String {
    "STARS_API_KEY".into()
}
fn default_retry_limit() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderChoice {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    #[serde(default)]
    pub kind: ProviderChoice,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

fn default_dimension() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_few_shot")]
    pub few_shot_count: usize,
    #[serde(default = "default_template_set")]
    pub template_set: String,
    #[serde(default = "default_summary_weight")]
    pub summary_weight: f64,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default = "default_sweep_counts")]
    pub sweep_counts: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub validation: Validation,
    #[serde(default = "default_doc_budget")]
    pub doc_char_budget: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        toml::from_str("").unwrap()
    }
}

fn default_strategy() -> String {
    "stars".into()
}
fn default_few_shot() -> usize {
    5
}
fn default_template_set() -> String {
    "v1".into()
}
fn default_summary_weight() -> f64 {
    0.5
}
fn default_k_list() -> Vec<usize> {
    DEFAULT_K_LIST.to_vec()
}
fn default_sweep_counts() -> Vec<usize> {
    DEFAULT_SWEEP_COUNTS.to_vec()
}
fn default_doc_budget() -> usize {
    DEFAULT_DOC_CHAR_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn strategy(&self) -> Result<PromptStrategy> {
        let kind: StrategyKind = self.pipeline.strategy.parse()?;
        let n = if kind == StrategyKind::Stars { self.pipeline.few_shot_count } else { 0 };
        PromptStrategy::new(kind, n, self.pipeline.template_set.clone())
    }

    /// Everything checkable without side effects: values, referenced files,
    /// templates and mock scripts.
    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        self.strategy()?;
        if !(0.0..=1.0).contains(&p.summary_weight) {
            return Err(Error::Config(format!("summary_weight {} outside [0, 1]", p.summary_weight)));
        }
        if p.k_list.is_empty() || p.k_list.contains(&0) {
            return Err(Error::Config("k_list must be non-empty with every k ≥ 1".into()));
        }
        if p.sweep_counts.is_empty() {
            return Err(Error::Config("sweep_counts must be non-empty".into()));
        }
        if p.doc_char_budget == 0 {
            return Err(Error::Config("doc_char_budget must be positive".into()));
        }
        let g = &self.gateway;
        if g.retry_limit == 0 {
            return Err(Error::Config("retry_limit must be at least 1".into()));
        }
        if g.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if self.embedding.dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }

        let must_exist = |label: &str, path: &Path| -> Result<()> {
            let full = self.resolve(path);
            if full.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{label} path {} does not exist", full.display())))
            }
        };
        must_exist("corpus", &self.paths.corpus)?;
        must_exist("lexicon", &self.paths.lexicon)?;
        if let Some(ex) = &self.paths.labeled_examples {
            must_exist("labeled_examples", ex)?;
        }
        self.templates()?;

        match g.kind {
            GatewayKind::Mock => {
                let script = g
                    .mock_script
                    .as_ref()
                    .ok_or_else(|| Error::Config("gateway kind mock needs mock_script".into()))?;
                MockScript::load(self.resolve(script))?;
            }
            GatewayKind::Replay => {
                let t = g
                    .transcript
                    .as_ref()
                    .ok_or_else(|| Error::Config("gateway kind replay needs transcript".into()))?;
                read_transcript(self.resolve(t))?;
            }
            GatewayKind::Chat => {
                if g.endpoint.is_none() || g.model.is_none() {
                    return Err(Error::Config("gateway kind chat needs endpoint and model".into()));
                }
            }
        }
        if self.embedding.kind == ProviderChoice::Remote
            && (self.embedding.endpoint.is_none() || self.embedding.model.is_none())
        {
            return Err(Error::Config("remote embedding needs endpoint and model".into()));
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.paths.templates {
            Some(dir) => TemplateSet::load(self.resolve(dir), &self.pipeline.template_set),
            None if self.pipeline.template_set == "v1" => Ok(TemplateSet::builtin()),
            None => Err(Error::MissingTemplate {
                set: self.pipeline.template_set.clone(),
                step: "system".into(),
            }),
        }
    }

    fn input_digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut add = |name: String, p: Option<PathBuf>| {
            if let Some(p) = p {
                if let Ok(bytes) = fs::read(self.resolve(&p)) {
                    out.insert(name, hex::encode(Sha256::digest(&bytes)));
                }
            }
        };
        add("corpus".into(), Some(self.paths.corpus.clone()));
        add("lexicon".into(), Some(self.paths.lexicon.clone()));
        add("labeled_examples".into(), self.paths.labeled_examples.clone());
        add("mock_script".into(), self.gateway.mock_script.clone());
        add("transcript".into(), self.gateway.transcript.clone());
        if let Some(dir) = &self.paths.templates {
            for name in ["system", "extract", "summarize", "identify", "single"] {
                let file = dir.join(&self.pipeline.template_set).join(format!("{name}.txt"));
                add(format!("template/{name}"), Some(file));
            }
        }
        out
    }

    /// First 16 hex digits of sha256 over the canonical JSON form of the
    /// config together with digests of its input files.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canonical {
            config: serde_json::Value,
            inputs: BTreeMap<String, String>,
        }
        // serde_json::Value sorts object keys, which gives a canonical form
        let mut config = serde_json::to_value(self).expect("config serializes");
        for (section, key) in [("paths", "cache_dir"), ("paths", "output_dir"), ("gateway", "concurrency")] {
            if let Some(obj) = config.get_mut(section).and_then(|s| s.as_object_mut()) {
                obj.remove(key);
            }
        }
        let canonical = Canonical {
            config,
            inputs: self.input_digests(),
        };
        let bytes = serde_json::to_vec(&canonical).expect("canonical form serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    /// `<output_dir>/<digest>`.
    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir).join(self.digest())
    }

    pub fn load_lexicon(&self) -> Result<TechnologyLexicon> {
        let resolved = self.run_dir().join(RESOLVED_LEXICON);
        let path = if resolved.exists() { resolved } else { self.resolve(&self.paths.lexicon) };
        let lexicon = TechnologyLexicon::load(path)?;
        match &self.paths.labeled_examples {
            Some(p) => lexicon.with_labeled_examples(&TechnologyLexicon::load(self.resolve(p))?),
            None => Ok(lexicon),
        }
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let g = &self.gateway;
        let policy = RetryPolicy {
            max_attempts: g.retry_limit,
            initial_backoff: Duration::from_millis(g.initial_backoff_ms),
        };
        let backend: Box<dyn crate::gateway::Backend> = match g.kind {
            GatewayKind::Mock => Box::new(MockScript::load(self.resolve(g.mock_script.as_ref().unwrap()))?),
            GatewayKind::Replay => Box::new(MockScript::from_transcript(&read_transcript(
                self.resolve(g.transcript.as_ref().unwrap()),
            )?)),
            GatewayKind::Chat => Box::new(ChatBackend::new(
                g.endpoint.clone().unwrap(),
                g.model.clone().unwrap(),
                std::env::var(&g.api_key_env).ok(),
            )),
        };
        Ok(Gateway::new(backend, policy, g.concurrency))
    }

    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.embedding;
        Ok(match e.kind {
            ProviderChoice::Hash => Box::new(HashProvider::new(e.dimension, e.seed)?),
            ProviderChoice::Remote => Box::new(
                RemoteProvider::new(
                    e.endpoint.clone().unwrap(),
                    e.model.clone().unwrap(),
                    e.dimension,
                    std::env::var(&self.gateway.api_key_env).ok(),
                )
                .with_retries(
                    self.gateway.retry_limit,
                    Duration::from_millis(self.gateway.initial_backoff_ms),
                ),
            ),
        })
    }

    /// Validate, load every input, and assemble a pipeline whose result
    /// stores live under [`RunConfig::run_dir`]. Nothing is written until
    /// all checks have passed.
    pub fn build_pipeline(&self) -> Result<Pipeline> {
        self.validate()?;
        let lexicon = self.load_lexicon()?;
        let corpus = Corpus::load(self.resolve(&self.paths.corpus), &lexicon, self.pipeline.validation)?;
        let strategy = self.strategy()?;
        if strategy.few_shot_count > 0 {
            lexicon.few_shot_examples(strategy.few_shot_count, self.pipeline.seed)?;
        }
        let gateway = self.gateway()?;
        let provider = self.provider()?;
        let mut extractor = Extractor::new(self.templates()?);
        extractor.doc_char_budget = self.pipeline.doc_char_budget;
        extractor.few_shot_seed = self.pipeline.seed;
        let cache = EmbeddingCache::open(self.resolve(&self.paths.cache_dir))?;
        Ok(Pipeline {
            corpus,
            lexicon,
            gateway,
            provider,
            cache,
            extractor,
            summary_weight: self.pipeline.summary_weight,
            validation: self.pipeline.validation,
            concurrency: self.gateway.concurrency,
            store_dir: Some(self.run_dir()),
        })
    }
}
