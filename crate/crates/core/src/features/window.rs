use std::collections::HashMap;

use super::{FeatureError, FeatureMatrix};
use crate::packet::Label;

/// `count` windows of shape (window, features), flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub window: usize,
    pub features: usize,
    pub data: Vec<f64>,
    pub labels: Vec<Label>,
    /// True when the window starts with zero padding.
    pub padded: Vec<bool>,
    pub flows: Vec<u32>,
}

impl Windows {
    pub fn empty(window: usize, features: usize) -> Self {
        Self { window, features, data: Vec::new(), labels: Vec::new(), padded: Vec::new(), flows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, k: usize) -> &[f64] {
        let n = self.window * self.features;
        &self.data[k * n..(k + 1) * n]
    }

    /// Appends a window ending at `rows.last()`, front-padded with zeros.
    pub fn push(&mut self, rows: &[&[f64]], label: Label, flow: u32) {
        assert!(rows.len() <= self.window && !rows.is_empty());
        let pad = self.window - rows.len();
        self.data.extend(std::iter::repeat(0.0).take(pad * self.features));
        for r in rows {
            assert_eq!(r.len(), self.features);
            self.data.extend_from_slice(r);
        }
        self.labels.push(label);
        self.padded.push(pad > 0);
        self.flows.push(flow);
    }

    pub fn select(&self, keep: &[usize]) -> Windows {
        let mut out = Windows::empty(self.window, self.features);
        for &k in keep {
            out.data.extend_from_slice(self.get(k));
            out.labels.push(self.labels[k]);
            out.padded.push(self.padded[k]);
            out.flows.push(self.flows[k]);
        }
        out
    }
}

/// Row indices grouped by flow, flows in first-seen order.
fn flow_groups(m: &FeatureMatrix) -> Vec<Vec<usize>> {
    let mut slot: HashMap<u32, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &f) in m.flows.iter().enumerate() {
        let g = *slot.entry(f).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Sliding windows inside each flow. A flow shorter than the window gives
/// one front-padded window. The label is the last packet's label.
pub fn reshape_sequences(m: &FeatureMatrix, window: usize) -> Result<Windows, FeatureError> {
    if window == 0 {
        return Err(FeatureError::InvalidWindow);
    }
    let mut out = Windows::empty(window, m.cols());
    for g in flow_groups(m) {
        let rows: Vec<&[f64]> = g.iter().map(|&i| m.row(i)).collect();
        if rows.len() < window {
            let last = *g.last().unwrap();
            out.push(&rows, m.labels[last], m.flows[last]);
        } else {
            for end in window..=rows.len() {
                let last = g[end - 1];
                out.push(&rows[end - window..end], m.labels[last], m.flows[last]);
            }
        }
    }
    Ok(out)
}

/// One window ending at every row: the row and up to `window − 1`
/// predecessors from its flow, front-padded when the flow prefix is short.
/// Windows come out in row order.
pub fn reshape_prefix_windows(m: &FeatureMatrix, window: usize) -> Result<Windows, FeatureError> {
    if window == 0 {
        return Err(FeatureError::InvalidWindow);
    }
    let mut pos = vec![(0usize, 0usize); m.rows()];
    let groups = flow_groups(m);
    for (gi, g) in groups.iter().enumerate() {
        for (k, &i) in g.iter().enumerate() {
            pos[i] = (gi, k);
        }
    }
    let mut out = Windows::empty(window, m.cols());
    for i in 0..m.rows() {
        let (gi, k) = pos[i];
        let start = (k + 1).saturating_sub(window);
        let rows: Vec<&[f64]> = groups[gi][start..=k].iter().map(|&r| m.row(r)).collect();
        out.push(&rows, m.labels[i], m.flows[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flows(lens: &[usize]) -> FeatureMatrix {
        let mut rows = Vec::new();
        let mut fl = Vec::new();
        for (f, &n) in lens.iter().enumerate() {
            for k in 0..n {
                rows.push(vec![f as f64 * 100.0 + k as f64 + 1.0]);
                fl.push(f as u32);
            }
        }
        let mut m = FeatureMatrix::from_rows(vec!["x".into()], &rows).unwrap();
        m.flows = fl;
        m
    }

    #[test]
    fn counts() {
        assert_eq!(reshape_sequences(&flows(&[5]), 3).unwrap().len(), 3);
        let w = reshape_sequences(&flows(&[4, 3]), 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.get(2), &[101.0, 102.0, 103.0]);
        let id = reshape_sequences(&flows(&[2, 2]), 1).unwrap();
        assert_eq!(id.data, flows(&[2, 2]).data);
        assert!(reshape_sequences(&flows(&[1]), 0).is_err());
    }

    #[test]
    fn short_flow_is_padded() {
        let w = reshape_sequences(&flows(&[2]), 4).unwrap();
        assert_eq!(w.get(0), &[0.0, 0.0, 1.0, 2.0]);
        assert_eq!(w.padded, vec![true]);
    }

    #[test]
    fn prefix_windows_end_at_every_row() {
        let w = reshape_prefix_windows(&flows(&[3, 1]), 2).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.get(0), &[0.0, 1.0]);
        assert_eq!(w.get(2), &[2.0, 3.0]);
        assert_eq!(w.get(3), &[0.0, 101.0]);
        assert_eq!(w.padded, vec![true, false, false, true]);
    }
}
