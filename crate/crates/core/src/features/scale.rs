use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};

/// Per-column (min, max) learned from training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub columns: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(m: &FeatureMatrix) -> Self {
        let mut mins = vec![f64::INFINITY; m.cols()];
        let mut maxs = vec![f64::NEG_INFINITY; m.cols()];
        for i in 0..m.rows() {
            for (j, &x) in m.row(i).iter().enumerate() {
                mins[j] = mins[j].min(x);
                maxs[j] = maxs[j].max(x);
            }
        }
        if m.rows() == 0 {
            mins.fill(0.0);
            maxs.fill(0.0);
        }
        Self { columns: m.column_names.clone(), mins, maxs }
    }

    /// Columns with max = min; they scale to constant 0.
    pub fn degenerate(&self) -> Vec<&str> {
        self.columns
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .filter(|(_, (lo, hi))| hi <= lo)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn scale_value(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = (self.mins[j], self.maxs[j]);
        if hi <= lo {
            0.0
        } else {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }

    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if m.column_names != self.columns {
            return Err(FeatureError::ShapeMismatch("scaler fitted on different columns".into()));
        }
        let c = m.cols();
        let data = m.data.iter().enumerate().map(|(k, &x)| self.scale_value(k % c, x)).collect();
        Ok(FeatureMatrix { data, ..m.clone() })
    }
}

/// Fits on `train` and returns the scaled copy along with the scaler.
pub fn minmax_scale(train: &FeatureMatrix) -> (FeatureMatrix, MinMaxScaler) {
    let scaler = MinMaxScaler::fit(train);
    let scaled = scaler.transform(train).expect("same columns");
    (scaled, scaler)
}
