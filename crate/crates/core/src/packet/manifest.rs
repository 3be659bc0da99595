//! The fixed list of 71 raw per-packet features.
//!
//! The list ships as `data/feature_manifest.csv` (name, layer, kind, unit,
//! description) and its order is the column order of every packet CSV.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub const RAW_FEATURE_COUNT: usize = 71;

const MANIFEST_CSV: &str = include_str!("../../data/feature_manifest.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    L2,
    L3,
    L4,
    Derived,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub layer: Layer,
    pub kind: FeatureKind,
    pub unit: String,
    pub description: String,
}

#[derive(Debug)]
pub struct FeatureManifest {
    features: Vec<FeatureSpec>,
    index: HashMap<String, usize>,
}

impl FeatureManifest {
    fn parse(text: &str) -> Self {
        let mut features = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.splitn(5, ',').collect();
            assert_eq!(cols.len(), 5, "bad manifest line: {line}");
            let layer = match cols[1] {
                "L2" => Layer::L2,
                "L3" => Layer::L3,
                "L4" => Layer::L4,
                "derived" => Layer::Derived,
                other => panic!("unknown layer {other}"),
            };
            let kind = match cols[2] {
                "numeric" => FeatureKind::Numeric,
                "categorical" => FeatureKind::Categorical,
                other => panic!("unknown kind {other}"),
            };
            features.push(FeatureSpec {
                name: cols[0].to_string(),
                layer,
                kind,
                unit: cols[3].to_string(),
                description: cols[4].to_string(),
            });
        }
        let index = features.iter().enumerate().map(|(i, f)| (f.name.clone(), i)).collect();
        Self { features, index }
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Index of a name known to be in the manifest.
    pub fn idx(&self, name: &str) -> usize {
        self.index_of(name).unwrap_or_else(|| panic!("{name} is not a manifest feature"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn kind(&self, name: &str) -> Option<FeatureKind> {
        self.index_of(name).map(|i| self.features[i].kind)
    }
}

pub fn manifest() -> &'static FeatureManifest {
    static MANIFEST: OnceLock<FeatureManifest> = OnceLock::new();
    MANIFEST.get_or_init(|| FeatureManifest::parse(MANIFEST_CSV))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_has_71_unique_features() {
        let m = manifest();
        assert_eq!(m.len(), RAW_FEATURE_COUNT);
        let mut names: Vec<&str> = m.names().collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), RAW_FEATURE_COUNT);
        assert_eq!(m.kind("eth_type"), Some(FeatureKind::Categorical));
        assert!(m.features().iter().any(|f| f.layer == Layer::Derived));
    }
}
