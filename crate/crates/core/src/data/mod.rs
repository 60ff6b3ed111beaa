//! Datasets: the network-intrusion pipeline, stratified folds, a synthetic
//! generator for the two-latent process, and on-disk persistence.

mod folds;
mod kdd;
mod preprocess;
mod store;
mod synth;

pub use folds::{stratified_kfold, stratified_subsample, train_val_split};
pub use kdd::{
    filter_labels, parse_kdd_csv, parse_kdd_str, FieldValue, FilterOutcome, KddParse, LineError,
    RawRecord, UnknownLabelPolicy, KDD_COLUMNS, KDD_FIELD_COUNT, KDD_PAPER_ANOMALIES,
    KDD_PAPER_NORMALS, KDD_PAPER_TOTAL, RETAINED_ATTACKS,
};
pub use preprocess::{
    apply_preprocess, fit_preprocess, Block, ColumnDef, ColumnKind, ColumnTransform,
    PreprocessSpec, Schema, TransformKind,
};
pub use store::{load_dataset, save_dataset, DatasetManifest, DATASET_FORMAT_VERSION};
pub use synth::{synth_generate, Scaling, SynthSpec, SynthTruth};

use crate::numerics::{DenseMatrix, Scalar};
use crate::{Error, Result};

/// Paired behavioural (`x`) and contextual (`c`) blocks with optional labels
/// (`true` = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset<T = f64> {
    pub x: DenseMatrix<T>,
    pub c: DenseMatrix<T>,
    pub labels: Option<Vec<bool>>,
    pub row_ids: Vec<u64>,
    pub x_names: Vec<String>,
    pub c_names: Vec<String>,
}

impl<T: Scalar> PreparedDataset<T> {
    pub fn new(
        x: DenseMatrix<T>,
        c: DenseMatrix<T>,
        labels: Option<Vec<bool>>,
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        let x_names = (0..x.cols()).map(|i| format!("x{i}")).collect();
        let c_names = (0..c.cols()).map(|i| format!("c{i}")).collect();
        Self::with_names(x, c, labels, row_ids, x_names, c_names)
    }

    pub fn with_names(
        x: DenseMatrix<T>,
        c: DenseMatrix<T>,
        labels: Option<Vec<bool>>,
        row_ids: Vec<u64>,
        x_names: Vec<String>,
        c_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.rows();
        let labels_ok = labels.as_ref().is_none_or(|l| l.len() == n);
        if c.rows() != n || row_ids.len() != n || !labels_ok {
            return Err(Error::Data(format!(
                "row counts disagree: x {}, c {}, ids {}, labels {:?}",
                n,
                c.rows(),
                row_ids.len(),
                labels.as_ref().map(Vec::len)
            )));
        }
        if x_names.len() != x.cols() || c_names.len() != c.cols() {
            return Err(Error::Data("column name count disagrees with width".into()));
        }
        Ok(Self {
            x,
            c,
            labels,
            row_ids,
            x_names,
            c_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim_x(&self) -> usize {
        self.x.cols()
    }

    pub fn dim_c(&self) -> usize {
        self.c.cols()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            c: self.c.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
            x_names: self.x_names.clone(),
            c_names: self.c_names.clone(),
        }
    }

    /// Labels, or an error for unlabeled data.
    pub fn require_labels(&self) -> Result<&[bool]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data("dataset has no labels".into()))
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&a| a).count())
    }

    /// The single observation `[c, x]` consumed by point detectors.
    pub fn joined(&self) -> DenseMatrix<T> {
        self.c.hcat(&self.x).expect("row counts validated")
    }

    pub fn cast<U: Scalar>(&self) -> PreparedDataset<U> {
        PreparedDataset {
            x: self.x.cast(),
            c: self.c.cast(),
            labels: self.labels.clone(),
            row_ids: self.row_ids.clone(),
            x_names: self.x_names.clone(),
            c_names: self.c_names.clone(),
        }
    }
}
