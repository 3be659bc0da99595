use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};
use crate::packet::Label;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.8, val_frac: 0.1, test_frac: 0.1, seed: 42 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let f = [self.train_frac, self.val_frac, self.test_frac];
        if f.iter().any(|&x| !(x > 0.0)) {
            return Err(FeatureError::InvalidSplit(format!("fractions must be positive: {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(FeatureError::InvalidSplit(format!("fractions must sum to 1: {f:?}")));
        }
        Ok(())
    }
}

/// Stratified, seeded partition of item indices into (train, val, test).
/// Each class with n items contributes at least one item to every part;
/// indices in each part are sorted.
pub fn partition(labels: &[Label], spec: &SplitSpec) -> Result<[Vec<usize>; 3], FeatureError> {
    spec.validate()?;
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (label, mut idx) in by_class {
        let n = idx.len();
        if n < 3 {
            return Err(FeatureError::ClassTooSmall { label, rows: n });
        }
        idx.shuffle(&mut rng);
        let mut n_val = ((n as f64 * spec.val_frac).round() as usize).max(1);
        let mut n_test = ((n as f64 * spec.test_frac).round() as usize).max(1);
        while n_val + n_test > n - 1 {
            if n_val >= n_test {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        let n_train = n - n_val - n_test;
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Row-level stratified split; rows keep their original order.
pub fn split(m: &FeatureMatrix, spec: &SplitSpec) -> Result<(FeatureMatrix, FeatureMatrix, FeatureMatrix), FeatureError> {
    let [a, b, c] = partition(&m.labels, spec)?;
    Ok((m.select_rows(&a), m.select_rows(&b), m.select_rows(&c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(labels: Vec<Label>) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        let mut m = FeatureMatrix::from_rows(vec!["i".into()], &rows).unwrap();
        m.labels = labels;
        m
    }

    #[test]
    fn sizes_and_determinism() {
        let m = matrix(vec![Label::Normal; 100]);
        let spec = SplitSpec { train_frac: 0.8, val_frac: 0.1, test_frac: 0.1, seed: 7 };
        let (a, b, c) = split(&m, &spec).unwrap();
        assert_eq!((a.rows(), b.rows(), c.rows()), (80, 10, 10));
        assert_eq!(split(&m, &spec).unwrap().0, a);
    }

    #[test]
    fn three_rows_one_each_and_too_small() {
        let mut labels = vec![Label::Normal; 50];
        labels.extend([Label::XSS; 3]);
        let [a, b, c] = partition(&labels, &SplitSpec::default()).unwrap();
        let count = |p: &[usize]| p.iter().filter(|&&i| labels[i] == Label::XSS).count();
        assert_eq!((count(&a), count(&b), count(&c)), (1, 1, 1));
        labels.pop();
        assert!(matches!(partition(&labels, &SplitSpec::default()), Err(FeatureError::ClassTooSmall { label: Label::XSS, rows: 2 })));
    }
}
