//! Raw packet tables to model-ready matrices: ordinal encoding, feature
//! selection, min-max scaling, splitting and sequence windows.

mod csvio;
mod encode;
mod fitted;
mod scale;
mod select;
mod split;
mod window;

use thiserror::Error;

use crate::packet::Label;

pub use csvio::{read_matrix_csv, write_matrix_csv};
pub use encode::{encode_ordinal, Encoded, OrdinalEncoder, OrdinalMap, UNSEEN_CATEGORY};
pub use fitted::{FeatureConfig, FeaturePipeline, Transformed};
pub use scale::{minmax_scale, MinMaxScaler};
pub use select::{pearson, select_features, DropReason, DroppedColumn, SelectionAudit};
pub use split::{partition, split, SplitSpec};
pub use window::{reshape_prefix_windows, reshape_sequences, Windows};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature selection dropped every column")]
    EmptyResult,
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("class {label} has {rows} rows; at least 3 are needed to split")]
    ClassTooSmall { label: Label, rows: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("bad pipeline parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major numeric table with per-row label and flow index.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    pub data: Vec<f64>,
    pub labels: Vec<Label>,
    pub flows: Vec<u32>,
}

impl FeatureMatrix {
    pub fn new(column_names: Vec<String>, data: Vec<f64>, labels: Vec<Label>, flows: Vec<u32>) -> Result<Self, FeatureError> {
        let cols = column_names.len();
        let rows = labels.len();
        if flows.len() != rows || data.len() != rows * cols {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} values for {rows} rows x {cols} columns ({} flow ids)",
                data.len(),
                flows.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = column_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(FeatureError::ShapeMismatch(format!("duplicate column {dup:?}")));
        }
        Ok(Self { column_names, data, labels, flows })
    }

    /// Builds from row vectors with every row in flow 0 and unlabeled.
    pub fn from_rows(column_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let n = rows.len();
        let data = rows.iter().flatten().copied().collect();
        Self::new(column_names, data, vec![Label::Unlabeled; n], vec![0; n])
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.at(i, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    pub fn select_columns(&self, keep: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.rows() * keep.len());
        for i in 0..self.rows() {
            let row = self.row(i);
            data.extend(keep.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            column_names: keep.iter().map(|&j| self.column_names[j].clone()).collect(),
            data,
            labels: self.labels.clone(),
            flows: self.flows.clone(),
        }
    }

    pub fn select_rows(&self, keep: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(keep.len() * self.cols());
        for &i in keep {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            column_names: self.column_names.clone(),
            data,
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            flows: keep.iter().map(|&i| self.flows[i]).collect(),
        }
    }
}
