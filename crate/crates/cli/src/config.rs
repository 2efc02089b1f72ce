//! Run configuration: one TOML file, flag overrides, secrets from the environment.

use std::fmt;
use std::path::{Path, PathBuf};

use nadet::corpus::{Engine, MetaTopic};
use nadet::evaluator::Granularity;
use nadet::llm_detector::DetectionMode;
use nadet::pair_builder::NeighborPolicy;
use serde::{Deserialize, Serialize};

/// A problem with the configuration or the requested combination of options.
/// Reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub const DEFAULT_CONFIG_FILE: &str = "nadet.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root of all stage outputs.
    pub workspace: PathBuf,
    /// Seed for every random choice in the pipeline.
    pub seed: u64,
    pub ingest: IngestConfig,
    pub vocab: VocabConfig,
    pub inject: InjectConfig,
    pub split: SplitConfig,
    pub pairs: PairsConfig,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub audit: AuditConfig,
    pub report: ReportConfig,
    pub llm: LlmConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("runs"),
            seed: 7,
            ingest: IngestConfig::default(),
            vocab: VocabConfig::default(),
            inject: InjectConfig::default(),
            split: SplitConfig::default(),
            pairs: PairsConfig::default(),
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
            eval: EvalConfig::default(),
            audit: AuditConfig::default(),
            report: ReportConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    /// Generated queries for the ten bundled topics.
    Synthetic,
    /// `<topic>.txt` files with one query per line.
    Dir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SearchClientKind {
    Synthetic,
    /// Answers looked up in a JSON object mapping query text to response text.
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub source: QuerySource,
    pub queries_dir: Option<PathBuf>,
    pub queries_per_topic: usize,
    pub client: SearchClientKind,
    pub fixture: Option<PathBuf>,
    /// Engine label recorded for fixture responses.
    pub engine: Engine,
    pub repeats: usize,
    pub max_in_flight: usize,
    pub max_retries: usize,
    pub timeout_secs: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            source: QuerySource::Synthetic,
            queries_dir: None,
            queries_per_topic: 110,
            client: SearchClientKind::Synthetic,
            fixture: None,
            engine: Engine::Synthetic,
            repeats: 1,
            max_in_flight: 4,
            max_retries: 2,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum VocabSource {
    /// Bundled vocabularies for the synthetic topics.
    Synthetic,
    /// Reviewed `<topic>.txt` files.
    Reviewed,
    /// Ask an LLM for drafts to review.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub source: VocabSource,
    pub reviewed_dir: Option<PathBuf>,
    /// LLM variant id used for drafting.
    pub llm: Option<String>,
    pub max_attempts: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            source: VocabSource::Synthetic,
            reviewed_dir: None,
            llm: None,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Template,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BankKind {
    /// One shared template list.
    Default,
    /// Templates specific to each synthetic topic.
    Topic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectConfig {
    pub generator: GeneratorKind,
    pub bank: BankKind,
    /// LLM variant id used for shortlisting and insertion.
    pub llm: Option<String>,
    /// Operator selection file (`<query_id> <id>, <id>` per line).
    pub selection: Option<PathBuf>,
}

impl Default for InjectConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::Template,
            bank: BankKind::Default,
            llm: None,
            selection: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: nadet::splitter::FIXED_RATIOS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsConfig {
    /// `fixed` or the name of a held-out topic.
    pub split: String,
    pub target_positive_fraction: f64,
    pub neighbor_policy: NeighborPolicy,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            split: "fixed".into(),
            target_positive_fraction: 0.5,
            neighbor_policy: NeighborPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `compact`, `large`, `reference-compact` or `reference-large`.
    pub profile: String,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: "compact".into(),
            epochs: None,
            batch_size: None,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Encoder,
    Llm,
    Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub detector: DetectorKind,
    pub threshold: f64,
    /// LLM variant for `detector = "llm"`; defaults to the first configured.
    pub variant: Option<String>,
    /// The three variants that vote; defaults to all configured variants.
    pub vote: Vec<String>,
    pub max_in_flight: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::Encoder,
            threshold: 0.5,
            variant: None,
            vote: Vec::new(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub granularity: Granularity,
    /// Share of the inserted span an LLM passage must cover to count as found.
    pub min_span_overlap: f64,
    /// Sizes of the blinded error sample.
    pub sample_false_positives: usize,
    pub sample_false_negatives: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::Response,
            min_span_overlap: nadet::llm_detector::DEFAULT_MIN_SPAN_OVERLAP,
            sample_false_positives: 50,
            sample_false_negatives: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub phrases: Vec<String>,
    /// Maximum sentence pairs compared per group in the diversity report.
    pub pair_budget: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            phrases: nadet::injector::DEFAULT_MARKER_PHRASES.iter().map(|s| s.to_string()).collect(),
            pair_budget: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub confidence_level: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { confidence_level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub variants: Vec<LlmVariantConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// OpenAI-compatible chat completions endpoint.
    Openai,
    /// Always answers with `output`; for dry runs.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmVariantConfig {
    pub id: String,
    pub provider: Provider,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_mode")]
    pub mode: DetectionMode,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_mode() -> DetectionMode {
    DetectionMode::Full
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> usize {
    2
}

impl Config {
    /// Load `path`, or `nadet.toml` in the working directory when present,
    /// or the built-in defaults.
    pub fn resolve(path: Option<&Path>) -> anyhow::Result<Self> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None if Path::new(DEFAULT_CONFIG_FILE).exists() => PathBuf::from(DEFAULT_CONFIG_FILE),
            None => return Ok(Self::default()),
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| config_error(format!("cannot read config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("invalid config file {}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for v in &self.llm.variants {
            if !ids.insert(v.id.as_str()) {
                return Err(config_error(format!("duplicate LLM variant id '{}'", v.id)));
            }
            if v.provider == Provider::Static && v.output.is_none() {
                return Err(config_error(format!("static LLM variant '{}' needs `output`", v.id)));
            }
            if v.provider == Provider::Openai && v.model.is_empty() {
                return Err(config_error(format!("LLM variant '{}' needs `model`", v.id)));
            }
        }
        if !(0.0..=1.0).contains(&self.detect.threshold) {
            return Err(config_error("detect.threshold must lie in [0, 1]"));
        }
        if !(self.report.confidence_level > 0.0 && self.report.confidence_level < 1.0) {
            return Err(config_error("report.confidence_level must lie in (0, 1)"));
        }
        parse_split_name(&self.pairs.split)?;
        Ok(())
    }

    pub fn variant(&self, id: &str) -> anyhow::Result<&LlmVariantConfig> {
        self.llm
            .variants
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| config_error(format!("no LLM variant '{id}' in [[llm.variants]]")))
    }
}

/// Which split manifest a stage works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Fixed,
    Holdout(MetaTopic),
}

impl SplitName {
    pub fn dir_name(self) -> String {
        match self {
            SplitName::Fixed => "fixed".into(),
            SplitName::Holdout(t) => format!("holdout-{t}"),
        }
    }
}

/// `fixed` (alias `mixed`) or a topic name, optionally prefixed with `holdout-`.
pub fn parse_split_name(s: &str) -> anyhow::Result<SplitName> {
    match s {
        "fixed" | "mixed" => Ok(SplitName::Fixed),
        other => other
            .strip_prefix("holdout-")
            .unwrap_or(other)
            .parse::<MetaTopic>()
            .map(SplitName::Holdout)
            .map_err(|_| config_error(format!("unknown split '{s}': use 'fixed' or a topic name"))),
    }
}
