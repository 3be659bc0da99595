use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores ≥ threshold count as positive; `None` for the origin.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: u64,
    pub negatives: u64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            match p.threshold {
                Some(t) => s.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr)),
                None => s.push_str(&format!("inf,{},{}\n", p.fpr, p.tpr)),
            }
        }
        s
    }
}

/// One point per distinct score, thresholds descending, plus the origin.
/// The trapezoid area is accumulated in integers so it equals the
/// Mann–Whitney statistic `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` exactly.
pub fn roc_curve(truth: &[bool], scores: &[f64]) -> Result<RocCurve, MetricsError> {
    if truth.len() != scores.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: scores.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(s));
    }
    let pos = truth.iter().filter(|&&t| t).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 {
        return Err(MetricsError::SingleClass("negative"));
    }
    if neg == 0 {
        return Err(MetricsError::SingleClass("positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: None, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] { tp += 1 } else { fp += 1 }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint { threshold: Some(s), fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 });
    }
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc, positives: pos, negatives: neg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separating_and_tied_scores() {
        let t = [true, true, false, false];
        assert_eq!(roc_curve(&t, &[0.9, 0.8, 0.2, 0.1]).unwrap().auc, 1.0);
        let flat = roc_curve(&t, &[0.5; 4]).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert_eq!(flat.points.len(), 2);
    }

    #[test]
    fn six_sample_hand_case() {
        let t = [true, true, false, true, false, false];
        let s = [0.9, 0.8, 0.7, 0.6, 0.4, 0.2];
        // Of the 9 (+, −) pairs only (0.6, 0.7) is misordered.
        assert_eq!(roc_curve(&t, &s).unwrap().auc, 8.0 / 9.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(roc_curve(&[true, true], &[0.1, 0.2]), Err(MetricsError::SingleClass(_))));
    }
}
