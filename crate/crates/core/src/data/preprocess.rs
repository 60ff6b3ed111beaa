use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::kdd::{FieldValue, RawRecord, KDD_CATEGORICAL, KDD_COLUMNS};
use super::PreparedDataset;
use crate::numerics::DenseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Behavioral,
    Contextual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric { log1p: bool },
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    pub block: Block,
}

/// Column roles and types of a raw record layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnDef>,
}

impl Schema {
    /// `service`, `duration`, `src_bytes`, `dst_bytes` are behavioural (the
    /// three byte/time counts log-transformed); every other field is context.
    pub fn kdd99() -> Self {
        let behavioral = ["service", "duration", "src_bytes", "dst_bytes"];
        let logged = ["duration", "src_bytes", "dst_bytes"];
        let columns = KDD_COLUMNS
            .iter()
            .map(|&name| ColumnDef {
                name: name.to_string(),
                kind: if KDD_CATEGORICAL.contains(&name) {
                    ColumnKind::Categorical
                } else {
                    ColumnKind::Numeric {
                        log1p: logged.contains(&name),
                    }
                },
                block: if behavioral.contains(&name) {
                    Block::Behavioral
                } else {
                    Block::Contextual
                },
            })
            .collect();
        Self { columns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Log1pThenMinMax,
    MinMax,
    OneHot { categories: Vec<String> },
}

/// Fitted transform of one source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub name: String,
    pub source_index: usize,
    pub block: Block,
    pub kind: TransformKind,
    /// Bounds after any log transform; unused for one-hot columns.
    pub min: f64,
    pub max: f64,
}

impl ColumnTransform {
    fn width(&self) -> usize {
        match &self.kind {
            TransformKind::OneHot { categories } => categories.len(),
            _ => 1,
        }
    }

    fn output_names(&self) -> Vec<String> {
        match &self.kind {
            TransformKind::OneHot { categories } => categories
                .iter()
                .map(|c| format!("{}={}", self.name, c))
                .collect(),
            _ => vec![self.name.clone()],
        }
    }

    fn scale(&self, v: f64) -> f64 {
        let v = match self.kind {
            TransformKind::Log1pThenMinMax => v.max(0.0).ln_1p(),
            _ => v,
        };
        if self.max > self.min {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Every fitted transform, in output order: behavioural block first
/// (one-hots, then numerics), then the contextual block in the same pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub columns: Vec<ColumnTransform>,
    pub behavioral_names: Vec<String>,
    pub contextual_names: Vec<String>,
}

impl PreprocessSpec {
    pub fn dim_x(&self) -> usize {
        self.behavioral_names.len()
    }

    pub fn dim_c(&self) -> usize {
        self.contextual_names.len()
    }

    pub fn fingerprint(&self) -> String {
        crate::io::fingerprint(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

fn ordered(schema: &Schema) -> Vec<(usize, &ColumnDef)> {
    let mut out = Vec::with_capacity(schema.columns.len());
    for block in [Block::Behavioral, Block::Contextual] {
        for want_cat in [true, false] {
            for (i, col) in schema.columns.iter().enumerate() {
                let is_cat = col.kind == ColumnKind::Categorical;
                if col.block == block && is_cat == want_cat {
                    out.push((i, col));
                }
            }
        }
    }
    out
}

/// Learns category dictionaries and min/max bounds from training records.
pub fn fit_preprocess(records: &[RawRecord], schema: &Schema) -> Result<PreprocessSpec> {
    if records.is_empty() {
        return Err(Error::Data(
            "cannot fit preprocessing on zero records".into(),
        ));
    }
    let mut columns = Vec::new();
    for (idx, col) in ordered(schema) {
        let values = records.iter().map(|r| &r.values[idx]);
        let transform = match col.kind {
            ColumnKind::Categorical => {
                let mut cats = BTreeSet::new();
                for v in values {
                    let s = v.as_category().ok_or_else(|| {
                        Error::Data(format!("column `{}` expected categorical", col.name))
                    })?;
                    cats.insert(s.to_string());
                }
                ColumnTransform {
                    name: col.name.clone(),
                    source_index: idx,
                    block: col.block,
                    kind: TransformKind::OneHot {
                        categories: cats.into_iter().collect(),
                    },
                    min: 0.0,
                    max: 1.0,
                }
            }
            ColumnKind::Numeric { log1p } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in values {
                    let mut x = v.as_numeric().ok_or_else(|| {
                        Error::Data(format!("column `{}` expected numeric", col.name))
                    })?;
                    if log1p {
                        if x < 0.0 {
                            return Err(Error::Data(format!(
                                "column `{}` is log-transformed but holds {x}",
                                col.name
                            )));
                        }
                        x = x.ln_1p();
                    }
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                ColumnTransform {
                    name: col.name.clone(),
                    source_index: idx,
                    block: col.block,
                    kind: if log1p {
                        TransformKind::Log1pThenMinMax
                    } else {
                        TransformKind::MinMax
                    },
                    min: lo,
                    max: hi,
                }
            }
        };
        columns.push(transform);
    }
    let names = |b: Block| -> Vec<String> {
        columns
            .iter()
            .filter(|t| t.block == b)
            .flat_map(|t| t.output_names())
            .collect()
    };
    let behavioral_names = names(Block::Behavioral);
    let contextual_names = names(Block::Contextual);
    Ok(PreprocessSpec {
        columns,
        behavioral_names,
        contextual_names,
    })
}

/// Encodes records with a fitted spec. Out-of-range values clip to `[0, 1]`;
/// unseen categories give an all-zero one-hot block.
pub fn apply_preprocess(
    spec: &PreprocessSpec,
    records: &[RawRecord],
    labels: Option<Vec<bool>>,
) -> Result<PreparedDataset> {
    let n = records.len();
    let (dx, dc) = (spec.dim_x(), spec.dim_c());
    let mut x = Vec::with_capacity(n * dx);
    let mut c = Vec::with_capacity(n * dc);
    let lookups: Vec<Option<BTreeMap<&str, usize>>> = spec
        .columns
        .iter()
        .map(|t| match &t.kind {
            TransformKind::OneHot { categories } => Some(
                categories
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i))
                    .collect(),
            ),
            _ => None,
        })
        .collect();
    let mut unseen: BTreeMap<(String, String), usize> = BTreeMap::new();

    for r in records {
        for (t, lookup) in spec.columns.iter().zip(&lookups) {
            let out = match t.block {
                Block::Behavioral => &mut x,
                Block::Contextual => &mut c,
            };
            let value = r
                .values
                .get(t.source_index)
                .ok_or_else(|| Error::Data(format!("record lacks column `{}`", t.name)))?;
            match (lookup, value) {
                (Some(map), FieldValue::Categorical(s)) => {
                    let start = out.len();
                    out.resize(start + t.width(), 0.0);
                    match map.get(s.as_str()) {
                        Some(&k) => out[start + k] = 1.0,
                        None => *unseen.entry((t.name.clone(), s.clone())).or_default() += 1,
                    }
                }
                (None, FieldValue::Numeric(v)) => out.push(t.scale(*v)),
                _ => {
                    return Err(Error::Data(format!(
                        "column `{}` has the wrong value type",
                        t.name
                    )))
                }
            }
        }
    }
    for ((col, cat), count) in &unseen {
        log::warn!("{count} record(s) with unseen `{col}` category `{cat}` encoded as zeros");
    }

    PreparedDataset::with_names(
        DenseMatrix::new(n, dx, x)?,
        DenseMatrix::new(n, dc, c)?,
        labels,
        (0..n as u64).collect(),
        spec.behavioral_names.clone(),
        spec.contextual_names.clone(),
    )
}
