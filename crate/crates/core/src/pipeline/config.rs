use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::features::{FeatureConfig, SplitSpec};
use crate::models::bert::BertConfig;
use crate::models::gpt::{GenerationPolicy, GptConfig};
use crate::models::lstm::ClassLabelMap;
use crate::models::TrainConfig;
use crate::packet::Label;
use crate::synth::GrammarSpec;
use crate::text::BASE_VOCAB;

/// Overrides `paths.data` when set.
pub const DATA_ROOT_ENV: &str = "IPRED_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Artifact roots. Relative paths resolve against the config file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data: "data".into(), checkpoints: "checkpoints".into(), reports: "reports".into() }
    }
}

/// Where training packets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Synth {
        flows: usize,
        attack_fraction: f64,
    },
    /// A `.pcap` capture or packet CSV. `label` tags every packet of a pcap.
    File {
        path: PathBuf,
        #[serde(default)]
        label: Option<Label>,
    },
}

impl Default for Source {
    fn default() -> Self {
        Source::Synth { flows: 600, attack_fraction: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSettings {
    pub vocab_size: usize,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self { vocab_size: 1024 }
    }
}

/// Masked-token warm-up before pair fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmSettings {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for MlmSettings {
    fn default() -> Self {
        Self { epochs: 5, lr: 2e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSettings {
    /// Share of non-consecutive pairs in every pair set.
    pub neg_ratio: f64,
}

impl Default for PairSettings {
    fn default() -> Self {
        Self { neg_ratio: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmSettings {
    pub hidden: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub class_weighting: bool,
    pub modes: Vec<ClassLabelMap>,
}

impl Default for LstmSettings {
    fn default() -> Self {
        Self {
            hidden: 64,
            dropout: 0.2,
            max_epochs: 80,
            patience: 3,
            batch_size: 32,
            lr: 1e-3,
            class_weighting: false,
            modes: vec![ClassLabelMap::Binary, ClassLabelMap::Multiclass],
        }
    }
}

/// Packets replayed through the deployment loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stream {
    /// Fresh synthetic traffic; the grammar seed is the global seed plus
    /// `seed_offset`.
    Synth { flows: usize, attack_fraction: f64, seed_offset: u64 },
    File {
        path: PathBuf,
        #[serde(default)]
        label: Option<Label>,
    },
}

impl Default for Stream {
    fn default() -> Self {
        Stream::Synth { flows: 100, attack_fraction: 0.8, seed_offset: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploySettings {
    /// Drop generated packets the pair evaluator judges non-consecutive.
    pub gate: bool,
    pub policy: GenerationPolicy,
    pub classifier: ClassLabelMap,
    pub stream: Stream,
    /// Packets per batch; flow context carries across batches.
    pub chunk_size: usize,
}

impl Default for DeploySettings {
    fn default() -> Self {
        Self {
            gate: true,
            policy: GenerationPolicy::default(),
            classifier: ClassLabelMap::Multiclass,
            stream: Stream::default(),
            chunk_size: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub ingest: bool,
    pub features: bool,
    pub tokenize: bool,
    pub train_gpt: bool,
    pub build_pairs: bool,
    pub train_bert: bool,
    pub train_lstm: bool,
    pub evaluate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            ingest: true,
            features: true,
            tokenize: true,
            train_gpt: true,
            build_pairs: true,
            train_bert: true,
            train_lstm: true,
            evaluate: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub plots: bool,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { plots: true }
    }
}

/// Everything a run depends on. The `seed` fields inside the model and
/// grammar sections are ignored in favour of the global seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub precision: Precision,
    pub paths: Paths,
    pub source: Source,
    /// Full grammar override for synthetic sources; `source.attack_fraction`
    /// is ignored when present.
    pub grammar: Option<GrammarSpec>,
    pub features: FeatureConfig,
    pub split: SplitFractions,
    pub tokenizer: TokenizerSettings,
    pub gpt: GptConfig,
    pub gpt_train: TrainConfig,
    pub bert: BertConfig,
    pub bert_train: TrainConfig,
    pub mlm: MlmSettings,
    pub pairs: PairSettings,
    pub lstm: LstmSettings,
    pub deploy: DeploySettings,
    pub stages: StageToggles,
    pub report: ReportSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            precision: Precision::F32,
            paths: Paths::default(),
            source: Source::default(),
            grammar: None,
            features: FeatureConfig::default(),
            split: SplitFractions::default(),
            tokenizer: TokenizerSettings::default(),
            gpt: GptConfig::default(),
            gpt_train: TrainConfig::default(),
            bert: BertConfig::default(),
            bert_train: TrainConfig::default(),
            mlm: MlmSettings::default(),
            pairs: PairSettings::default(),
            lstm: LstmSettings::default(),
            deploy: DeploySettings::default(),
            stages: StageToggles::default(),
            report: ReportSettings::default(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { train_frac: self.split.train, val_frac: self.split.val, test_frac: self.split.test, seed: self.seed }
    }

    pub fn grammar_spec(&self) -> Option<GrammarSpec> {
        match &self.source {
            Source::Synth { attack_fraction, .. } => Some(match &self.grammar {
                Some(g) => GrammarSpec { seed: self.seed, ..g.clone() },
                None => GrammarSpec::with_attack_fraction(self.seed, *attack_fraction),
            }),
            Source::File { .. } => None,
        }
    }

    /// Hash of everything except `paths`, so the same settings hash alike in
    /// any directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("config is an object").remove("paths");
        crate::nn::config_hash(&v)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.split_spec().validate().map_err(|e| config_error(e.to_string()))?;
        match &self.source {
            Source::Synth { flows, attack_fraction } => {
                if *flows < 3 {
                    return Err(config_error("source.flows must be at least 3"));
                }
                if !(0.0..=1.0).contains(attack_fraction) {
                    return Err(config_error("source.attack_fraction must lie in [0, 1]"));
                }
                if let Some(g) = self.grammar_spec() {
                    g.validate().map_err(|e| config_error(e.to_string()))?;
                }
            }
            Source::File { path, .. } if path.as_os_str().is_empty() => return Err(config_error("source.path is empty")),
            Source::File { .. } => {}
        }
        if self.tokenizer.vocab_size < BASE_VOCAB {
            return Err(config_error(format!("tokenizer.vocab_size must be at least {BASE_VOCAB}")));
        }
        for (name, width, heads, layers) in
            [("gpt", self.gpt.width, self.gpt.heads, self.gpt.layers), ("bert", self.bert.width, self.bert.heads, self.bert.layers)]
        {
            if layers == 0 || heads == 0 || width == 0 || width % heads != 0 {
                return Err(config_error(format!("{name}: layers, heads and width must be positive with heads dividing width")));
            }
        }
        if self.gpt.context_packets == 0 {
            return Err(config_error("gpt.context_packets must be at least 1"));
        }
        for (name, t) in [("gpt_train", &self.gpt_train), ("bert_train", &self.bert_train)] {
            if t.max_epochs == 0 || t.batch_size == 0 || !(t.lr > 0.0) {
                return Err(config_error(format!("{name}: max_epochs, batch_size and lr must be positive")));
            }
        }
        if !(self.pairs.neg_ratio > 0.0 && self.pairs.neg_ratio < 1.0) {
            return Err(config_error("pairs.neg_ratio must lie in (0, 1)"));
        }
        if self.features.window == 0 {
            return Err(config_error("features.window must be at least 1"));
        }
        if self.lstm.modes.is_empty() {
            return Err(config_error("lstm.modes is empty"));
        }
        if !self.lstm.modes.contains(&self.deploy.classifier) {
            return Err(config_error("deploy.classifier must be one of lstm.modes"));
        }
        if self.deploy.chunk_size == 0 {
            return Err(config_error("deploy.chunk_size must be at least 1"));
        }
        if let Stream::Synth { flows, attack_fraction, .. } = &self.deploy.stream {
            if *flows == 0 || !(0.0..=1.0).contains(attack_fraction) {
                return Err(config_error("deploy.stream needs flows ≥ 1 and attack_fraction in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Resolved artifact directories.
#[derive(Clone, Debug, PartialEq)]
pub struct Workspace {
    pub base: PathBuf,
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Workspace {
    pub fn resolve(paths: &Paths, base: &Path, data_override: Option<PathBuf>) -> Self {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Self {
            base: base.to_path_buf(),
            data: data_override.map(|p| abs(&p)).unwrap_or_else(|| abs(&paths.data)),
            checkpoints: abs(&paths.checkpoints),
            reports: abs(&paths.reports),
        }
    }

    /// Resolves a user-supplied input path against the config directory.
    pub fn input(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Maps a logical artifact name such as `data/packets.csv` to disk.
    pub fn artifact(&self, logical: &str) -> PathBuf {
        let (root, rest) = logical.split_once('/').expect("logical names carry a root");
        match root {
            "data" => self.data.join(rest),
            "checkpoints" => self.checkpoints.join(rest),
            "reports" => self.reports.join(rest),
            _ => panic!("unknown artifact root {root}"),
        }
    }
}
