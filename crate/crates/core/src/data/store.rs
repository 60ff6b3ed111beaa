use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PreparedDataset, PreprocessSpec, SynthSpec};
use crate::io::{matrix_from_csv, matrix_to_csv, read_json, write_atomic, write_json};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Free-form origin tag, e.g. `kdd99` or `synth`.
    pub source: String,
    pub rows: usize,
    pub dim_x: usize,
    pub dim_c: usize,
    pub anomalies: Option<usize>,
    pub normals: Option<usize>,
    pub x_names: Vec<String>,
    pub c_names: Vec<String>,
    #[serde(default)]
    pub preprocess: Option<PreprocessSpec>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    /// Extra provenance (label counts, reference comparisons, seeds).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl DatasetManifest {
    pub fn describe(ds: &PreparedDataset, source: &str) -> Self {
        let anomalies = ds.labels.as_ref().map(|_| ds.anomaly_count());
        Self {
            format_version: DATASET_FORMAT_VERSION,
            source: source.to_string(),
            rows: ds.len(),
            dim_x: ds.dim_x(),
            dim_c: ds.dim_c(),
            anomalies,
            normals: anomalies.map(|a| ds.len() - a),
            x_names: ds.x_names.clone(),
            c_names: ds.c_names.clone(),
            preprocess: None,
            synth: None,
            extra: serde_json::Value::Null,
        }
    }
}

/// Writes `{manifest.json, X.csv, C.csv, labels.csv}` into `dir`.
///
/// `labels.csv` holds `row_id,label` and is written even for unlabeled data
/// (empty label field) so row ids always survive a round trip.
pub fn save_dataset(dir: &Path, ds: &PreparedDataset, manifest: &DatasetManifest) -> Result<()> {
    if manifest.rows != ds.len() || manifest.dim_x != ds.dim_x() || manifest.dim_c != ds.dim_c() {
        return Err(Error::Data("manifest does not describe the dataset".into()));
    }
    write_atomic(
        &dir.join("X.csv"),
        matrix_to_csv(&ds.x_names, &ds.x).as_bytes(),
    )?;
    write_atomic(
        &dir.join("C.csv"),
        matrix_to_csv(&ds.c_names, &ds.c).as_bytes(),
    )?;
    let mut labels = String::from("row_id,label\n");
    for (i, id) in ds.row_ids.iter().enumerate() {
        match &ds.labels {
            Some(l) => writeln!(labels, "{id},{}", u8::from(l[i])).unwrap(),
            None => writeln!(labels, "{id},").unwrap(),
        }
    }
    write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;
    write_json(&dir.join("manifest.json"), manifest)
}

fn parse_labels(path: &Path, n: usize) -> Result<(Vec<u64>, Option<Vec<bool>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut missing = 0;
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| bad(i + 1, "expected `row_id,label`".into()))?;
        ids.push(
            id.parse()
                .map_err(|_| bad(i + 1, format!("bad row id `{id}`")))?,
        );
        match label {
            "" => missing += 1,
            "0" => labels.push(false),
            "1" => labels.push(true),
            other => return Err(bad(i + 1, format!("label must be 0 or 1, got `{other}`"))),
        }
    }
    let labels = match (missing, labels.len()) {
        (0, _) => Some(labels),
        (_, 0) => None,
        _ => return Err(bad(0, "labels present on some rows only".into())),
    };
    Ok((ids, labels))
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(PreparedDataset, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format_version {}",
            manifest.format_version
        )));
    }
    let (x_names, x) = matrix_from_csv(&dir.join("X.csv"))?;
    let (c_names, c) = matrix_from_csv(&dir.join("C.csv"))?;
    let (ids, labels) = parse_labels(&dir.join("labels.csv"), x.rows())?;
    let ds = PreparedDataset::with_names(x, c, labels, ids, x_names, c_names)?;
    if ds.len() != manifest.rows || ds.dim_x() != manifest.dim_x || ds.dim_c() != manifest.dim_c {
        return Err(Error::Data(format!(
            "{}: files disagree with manifest ({}x{}+{} vs {}x{}+{})",
            dir.display(),
            ds.len(),
            ds.dim_x(),
            ds.dim_c(),
            manifest.rows,
            manifest.dim_x,
            manifest.dim_c
        )));
    }
    Ok((ds, manifest))
}
