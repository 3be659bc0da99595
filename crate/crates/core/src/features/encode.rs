use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};
use crate::packet::{manifest, FeatureKind, FieldValue, PacketRecord};

/// Id given to categories that never appeared while fitting.
pub const UNSEEN_CATEGORY: f64 = -1.0;

/// Categories of one column in first-seen order; the position is the id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalMap {
    pub categories: Vec<String>,
}

impl OrdinalMap {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut m = Self::default();
        for v in values {
            if m.encode(v).is_none() {
                m.categories.push(v.to_string());
            }
        }
        m
    }

    pub fn encode(&self, v: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == v)
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.categories.get(id).map(String::as_str)
    }
}

/// Ordinal maps for every categorical manifest column.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalEncoder {
    pub maps: BTreeMap<String, OrdinalMap>,
}

impl OrdinalEncoder {
    pub fn fit(train: &[PacketRecord]) -> Self {
        let mut maps = BTreeMap::new();
        for (j, spec) in manifest().features().iter().enumerate() {
            if spec.kind == FeatureKind::Categorical {
                let values = train.iter().filter_map(|r| match &r.values[j] {
                    FieldValue::Cat(s) => Some(s.as_str()),
                    _ => None,
                });
                maps.insert(spec.name.clone(), OrdinalMap::fit(values));
            }
        }
        Self { maps }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub matrix: FeatureMatrix,
    /// Categorical cells whose category was not seen while fitting.
    pub unseen: usize,
}

/// All 71 manifest columns as numbers. Missing values become 0; categories
/// become their ordinal id, or −1 when unseen.
pub fn encode_ordinal(records: &[PacketRecord], encoder: &OrdinalEncoder) -> Result<Encoded, FeatureError> {
    let m = manifest();
    let names: Vec<String> = m.names().map(str::to_string).collect();
    let mut maps = Vec::with_capacity(names.len());
    for spec in m.features() {
        maps.push(match spec.kind {
            FeatureKind::Categorical => {
                Some(encoder.maps.get(&spec.name).ok_or_else(|| FeatureError::BadParams(format!("no ordinal map for {}", spec.name)))?)
            }
            FeatureKind::Numeric => None,
        });
    }
    let mut unseen = 0;
    let mut data = Vec::with_capacity(records.len() * names.len());
    for r in records {
        if r.values.len() != names.len() {
            return Err(FeatureError::ShapeMismatch(format!("record has {} values", r.values.len())));
        }
        for (v, map) in r.values.iter().zip(&maps) {
            data.push(match (v, map) {
                (FieldValue::Missing, _) => 0.0,
                (FieldValue::Num(x), None) => *x,
                (FieldValue::Cat(s), Some(map)) => match map.encode(s) {
                    Some(id) => id as f64,
                    None => {
                        unseen += 1;
                        UNSEEN_CATEGORY
                    }
                },
                (FieldValue::Num(x), Some(_)) => *x,
                (FieldValue::Cat(s), None) => {
                    return Err(FeatureError::BadParams(format!("category {s:?} in a numeric column")));
                }
            });
        }
    }
    let matrix = FeatureMatrix::new(
        names,
        data,
        records.iter().map(|r| r.label).collect(),
        records.iter().map(|r| r.flow_index).collect(),
    )?;
    Ok(Encoded { matrix, unseen })
}
