//! Development and deployment runs behind one config file.
//!
//! Every stage reads and writes files under the workspace roots. A manifest
//! records, per stage, a key over its settings and input hashes plus the
//! hashes of what it wrote, so reruns skip finished stages and notice
//! artifacts changed behind their back.

mod config;
mod deploy;
mod dev;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub use config::{
    DeploySettings, LstmSettings, MlmSettings, PairSettings, Paths, PipelineConfig, Precision, ReportSettings, Source,
    SplitFractions, StageToggles, Stream, TokenizerSettings, Workspace, DATA_ROOT_ENV,
};
pub use deploy::{
    classify_packets, classify_predicted, judge_pairs, predict_packets, Decision, DeployCounts, DeployReport, PacketClass, PacketPrediction, DEPLOY_SCHEMA,
};
pub use dev::{read_corpus, read_pairs, write_pairs, GeneratorReport, LineAccuracy, GENERATOR_SCHEMA};
pub use manifest::{file_hash, Manifest, StageRecord, MANIFEST_NAME};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {reason}")]
    StageFailure { stage: String, reason: String },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(String),
}

impl PipelineError {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Any error converts into a stage failure once the stage is known.
#[derive(Debug)]
pub(crate) struct Fail(pub String);

impl<E: std::error::Error> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail(e.to_string())
    }
}

pub(crate) fn fail<T>(msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Features,
    Tokenize,
    TrainGpt,
    BuildPairs,
    TrainBert,
    TrainLstm,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Features,
        Stage::Tokenize,
        Stage::TrainGpt,
        Stage::BuildPairs,
        Stage::TrainBert,
        Stage::TrainLstm,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Tokenize => "tokenize",
            Stage::TrainGpt => "train-gpt",
            Stage::BuildPairs => "build-pairs",
            Stage::TrainBert => "train-bert",
            Stage::TrainLstm => "train-lstm",
            Stage::Evaluate => "evaluate",
        }
    }

    fn enabled(self, t: &StageToggles) -> bool {
        match self {
            Stage::Ingest => t.ingest,
            Stage::Features => t.features,
            Stage::Tokenize => t.tokenize,
            Stage::TrainGpt => t.train_gpt,
            Stage::BuildPairs => t.build_pairs,
            Stage::TrainBert => t.train_bert,
            Stage::TrainLstm => t.train_lstm,
            Stage::Evaluate => t.evaluate,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Settings and inputs unchanged and every output intact.
    Cached,
    Disabled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Rerun even when the manifest says the stage is current.
    pub force: bool,
}

/// A loaded config bound to its resolved directories.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub ws: Workspace,
    config_hash: String,
}

impl Pipeline {
    /// Reads a JSON config; the data root may be overridden through
    /// [`DATA_ROOT_ENV`].
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = PipelineConfig::from_json(&text)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let data_override = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        Self::new(config, base, data_override)
    }

    pub fn new(config: PipelineConfig, base: &Path, data_override: Option<PathBuf>) -> Result<Self, PipelineError> {
        config.validate()?;
        let ws = Workspace::resolve(&config.paths, base, data_override);
        let config_hash = config.hash();
        Ok(Self { config, ws, config_hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.ws.reports.join(MANIFEST_NAME)
    }

    /// Runs every enabled development stage in order.
    pub fn run_dev(&self, opts: RunOptions) -> Result<Vec<(Stage, StageOutcome)>, PipelineError> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let outcome = if stage.enabled(&self.config.stages) { self.run_stage(stage, opts)? } else { StageOutcome::Disabled };
            log::info!("{stage}: {outcome:?}");
            out.push((stage, outcome));
        }
        Ok(out)
    }

    pub fn run_stage(&self, stage: Stage, opts: RunOptions) -> Result<StageOutcome, PipelineError> {
        manifest::run_cached(self, stage, opts)
    }

    pub fn run_deploy(&self) -> Result<DeployReport, PipelineError> {
        deploy::run(self)
    }
}
