use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{dev, Fail, Pipeline, PipelineError, RunOptions, Stage, StageOutcome};
use crate::nn::hex_digest;

pub const MANIFEST_NAME: &str = "manifest.json";

/// What one stage consumed and produced, keyed by logical artifact names
/// (`data/...`, `checkpoints/...`, `reports/...`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Config of the most recent run that touched the manifest.
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    /// A missing file is an empty manifest.
    pub fn load(path: &Path) -> Result<Self, String> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| format!("manifest {} is unreadable: {e}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.to_string()),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")
    }

    /// True once every development stage has a record.
    pub fn is_complete(&self) -> bool {
        Stage::ALL.iter().all(|s| self.stages.contains_key(s.name()))
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    std::io::copy(&mut fs::File::open(path)?, &mut h)?;
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub(crate) fn run_cached(p: &Pipeline, stage: Stage, opts: RunOptions) -> Result<StageOutcome, PipelineError> {
    let failure = |reason: String| PipelineError::StageFailure { stage: stage.name().to_string(), reason };

    let mut inputs = BTreeMap::new();
    for name in dev::inputs(stage) {
        let path = p.ws.artifact(&name);
        if !path.exists() {
            return Err(failure(format!("input {name} is missing; run the stage that produces it first")));
        }
        inputs.insert(name, file_hash(&path).map_err(|e| failure(e.to_string()))?);
    }
    let settings = dev::settings(p, stage).map_err(|Fail(r)| failure(r))?;
    let key_doc = json!({
        "stage": stage.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
        "inputs": inputs,
    });
    let key = hex_digest(key_doc.to_string().as_bytes());

    let manifest_path = p.manifest_path();
    let mut manifest = Manifest::load(&manifest_path).map_err(failure)?;
    if !opts.force {
        if let Some(rec) = manifest.stages.get(stage.name()).filter(|r| r.key == key) {
            let mut intact = true;
            for (name, want) in &rec.outputs {
                let path = p.ws.artifact(name);
                if !path.exists() {
                    intact = false;
                    continue;
                }
                let got = file_hash(&path).map_err(|e| failure(e.to_string()))?;
                if &got != want {
                    return Err(failure(format!(
                        "{name} no longer matches the manifest; restore it or rerun the stage with --force"
                    )));
                }
            }
            if intact {
                return Ok(StageOutcome::Cached);
            }
        }
    }

    log::info!("running stage {stage}");
    let produced = dev::execute(p, stage).map_err(|Fail(r)| failure(r))?;
    let mut outputs = BTreeMap::new();
    for name in produced {
        let h = file_hash(&p.ws.artifact(&name)).map_err(|e| failure(format!("{name}: {e}")))?;
        outputs.insert(name, h);
    }
    manifest.config_hash = p.config_hash().to_string();
    manifest.stages.insert(stage.name().to_string(), StageRecord { key, inputs, outputs });
    manifest.save(&manifest_path).map_err(|e| failure(e.to_string()))?;
    Ok(StageOutcome::Ran)
}
