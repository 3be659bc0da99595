use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{encode_ordinal, select_features, FeatureError, FeatureMatrix, MinMaxScaler, OrdinalEncoder, SelectionAudit};
use crate::packet::PacketRecord;

const PARAMS_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub var_threshold: f64,
    pub corr_threshold: f64,
    pub window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { var_threshold: 0.25, corr_threshold: 0.9, window: 10 }
    }
}

/// Everything needed to replay the transform on new packets: encoder maps,
/// selected columns and scaler. Fitted on training packets only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub format_version: u32,
    pub config: FeatureConfig,
    pub encoder: OrdinalEncoder,
    pub audit: SelectionAudit,
    pub scaler: MinMaxScaler,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformed {
    /// Selected columns, scaled and clamped to [0, 1].
    pub matrix: FeatureMatrix,
    pub unseen_categories: usize,
}

impl FeaturePipeline {
    pub fn fit(train: &[PacketRecord], config: &FeatureConfig) -> Result<Self, FeatureError> {
        let encoder = OrdinalEncoder::fit(train);
        let encoded = encode_ordinal(train, &encoder)?;
        let (selected, audit) = select_features(&encoded.matrix, config.var_threshold, config.corr_threshold)?;
        let scaler = MinMaxScaler::fit(&selected);
        Ok(Self { format_version: PARAMS_FORMAT, config: config.clone(), encoder, audit, scaler })
    }

    pub fn selected(&self) -> &[String] {
        &self.scaler.columns
    }

    pub fn transform(&self, records: &[PacketRecord]) -> Result<Transformed, FeatureError> {
        let encoded = encode_ordinal(records, &self.encoder)?;
        let keep = self
            .selected()
            .iter()
            .map(|n| encoded.matrix.column_index(n).ok_or_else(|| FeatureError::UnknownColumn(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let matrix = self.scaler.transform(&encoded.matrix.select_columns(&keep))?;
        Ok(Transformed { matrix, unseen_categories: encoded.unseen })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let p: Self = serde_json::from_str(text)?;
        if p.format_version != PARAMS_FORMAT {
            return Err(FeatureError::BadParams(format!("unsupported format version {}", p.format_version)));
        }
        if p.scaler.mins.len() != p.scaler.columns.len() || p.scaler.maxs.len() != p.scaler.columns.len() {
            return Err(FeatureError::BadParams("scaler arrays disagree with column list".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
