use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};

/// Largest variance a variable confined to [0, 1] can have.
const MAX_UNIT_VARIANCE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    LowVariance { variance: f64 },
    Correlated { with: String, r: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub var_threshold: f64,
    pub corr_threshold: f64,
    /// Variance cutoff applied to min-max pre-scaled columns.
    pub variance_cutoff: f64,
    pub kept: Vec<String>,
    pub dropped: Vec<DroppedColumn>,
}

fn unit_variance(col: &[f64]) -> f64 {
    let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if col.is_empty() || hi <= lo {
        return 0.0;
    }
    let scaled: Vec<f64> = col.iter().map(|&x| (x - lo) / (hi - lo)).collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    scaled.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / scaled.len() as f64
}

/// Pearson correlation; 0 when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Variance filter on pre-scaled copies (variance below
/// `var_threshold · 0.25` is dropped), then a correlation filter that keeps
/// the earlier of any pair with |r| above `corr_threshold`.
pub fn select_features(
    m: &FeatureMatrix,
    var_threshold: f64,
    corr_threshold: f64,
) -> Result<(FeatureMatrix, SelectionAudit), FeatureError> {
    for t in [var_threshold, corr_threshold] {
        if !(t > 0.0 && t < 1.0) {
            return Err(FeatureError::InvalidThreshold(t));
        }
    }
    let cutoff = var_threshold * MAX_UNIT_VARIANCE;
    let columns: Vec<Vec<f64>> = (0..m.cols()).map(|j| m.column(j)).collect();
    let mut dropped = Vec::new();
    let mut survivors = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let variance = unit_variance(col);
        if variance < cutoff {
            dropped.push(DroppedColumn { name: m.column_names[j].clone(), reason: DropReason::LowVariance { variance } });
        } else {
            survivors.push(j);
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    for j in survivors {
        let hit = kept.iter().map(|&k| (k, pearson(&columns[k], &columns[j]))).find(|(_, r)| r.abs() > corr_threshold);
        match hit {
            Some((k, r)) => dropped.push(DroppedColumn {
                name: m.column_names[j].clone(),
                reason: DropReason::Correlated { with: m.column_names[k].clone(), r },
            }),
            None => kept.push(j),
        }
    }
    if kept.is_empty() {
        return Err(FeatureError::EmptyResult);
    }
    let out = m.select_columns(&kept);
    let audit = SelectionAudit {
        var_threshold,
        corr_threshold,
        variance_cutoff: cutoff,
        kept: out.column_names.clone(),
        dropped,
    };
    Ok((out, audit))
}
