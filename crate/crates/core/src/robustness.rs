//! Contextual-corruption robustness protocol: perturb chosen attributes of
//! clean normal rows and count how many the calibrated model flags.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PreparedDataset;
use crate::model::JlvaeParams;
use crate::numerics::DenseMatrix;
use crate::rng::{derive_seed, streams, Rng};
use crate::scoring::{
    calibrate_threshold, classify, recon_error_score, recon_probability_score, ScoreMethod,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub name: String,
    pub n_behavioral: usize,
    pub n_contextual: usize,
    pub scale_low: f64,
    pub scale_high: f64,
    pub offset_low: f64,
    pub offset_high: f64,
    pub n_rows: usize,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(
        name: &str,
        n_behavioral: usize,
        n_contextual: usize,
        n_rows: usize,
        seed: u64,
    ) -> Self {
        Self {
            name: name.to_string(),
            n_behavioral,
            n_contextual,
            scale_low: -2.5,
            scale_high: 2.5,
            offset_low: -2.0,
            offset_high: 2.0,
            n_rows,
            seed,
        }
    }

    pub fn validate(&self, dim_x: usize, dim_c: usize) -> Result<()> {
        if self.n_behavioral > dim_x || self.n_contextual > dim_c {
            return Err(Error::InvalidConfig(format!(
                "spec {}: {} behavioural / {} contextual columns requested, data has {dim_x} / {dim_c}",
                self.name, self.n_behavioral, self.n_contextual
            )));
        }
        if self.scale_low > self.scale_high || self.offset_low > self.offset_high {
            return Err(Error::InvalidConfig(format!(
                "spec {}: low bound above high bound",
                self.name
            )));
        }
        Ok(())
    }

    /// The columns this spec perturbs: `(behavioural, contextual)`, ascending.
    pub fn choose_columns(&self, dim_x: usize, dim_c: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate(dim_x, dim_c)?;
        let mut rng = Rng::fork(self.seed, streams::CORRUPT, 0);
        let mut xs = rng.sample_without_replacement(dim_x, self.n_behavioral);
        let mut cs = rng.sample_without_replacement(dim_c, self.n_contextual);
        xs.sort_unstable();
        cs.sort_unstable();
        Ok((xs, cs))
    }
}

/// The fifteen data sets of the protocol for the given block widths.
///
/// A/B/C perturb `⌈p · dim⌉` columns of a block with `p` = 0.1 / 0.3 / 0.5
/// (suffix 1 behavioural only, 2 contextual only, 3 both). D/E/F perturb 2,
/// 5 and 10 columns of one block (clamped to the block width); `Fc` perturbs
/// the whole contextual block.
pub fn paper_suite(dim_x: usize, dim_c: usize, n_rows: usize, seed: u64) -> Vec<CorruptionSpec> {
    let share = |p: f64, d: usize| ((p * d as f64 - 1e-9).ceil() as usize).min(d);
    let mut out = Vec::with_capacity(15);
    for (tag, p) in [("A", 0.1), ("B", 0.3), ("C", 0.5)] {
        let (nx, nc) = (share(p, dim_x), share(p, dim_c));
        out.push((format!("{tag}1"), nx, 0));
        out.push((format!("{tag}2"), 0, nc));
        out.push((format!("{tag}3"), nx, nc));
    }
    for (tag, n) in [("D", 2), ("E", 5), ("F", 10)] {
        out.push((format!("{tag}x"), n.min(dim_x), 0));
        let nc = if tag == "F" { dim_c } else { n.min(dim_c) };
        out.push((format!("{tag}c"), 0, nc));
    }
    out.into_iter()
        .enumerate()
        .map(|(i, (name, nx, nc))| {
            CorruptionSpec::new(&name, nx, nc, n_rows, derive_seed(seed, i as u64))
        })
        .collect()
}

fn perturb(m: &mut DenseMatrix<f64>, cols: &[usize], spec: &CorruptionSpec, rng: &mut Rng) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        for &j in cols {
            let scale = rng.uniform_range(spec.scale_low, spec.scale_high);
            let offset = rng.uniform_range(spec.offset_low, spec.offset_high);
            row[j] = scale * row[j] + offset;
        }
    }
}

/// `v' = scale · v + offset` with independent draws per element on the given
/// columns; every other entry is left bit-identical.
pub fn corrupt_with_columns(
    x: &DenseMatrix<f64>,
    c: &DenseMatrix<f64>,
    x_cols: &[usize],
    c_cols: &[usize],
    spec: &CorruptionSpec,
) -> Result<(DenseMatrix<f64>, DenseMatrix<f64>)> {
    if x_cols.iter().any(|&j| j >= x.cols()) || c_cols.iter().any(|&j| j >= c.cols()) {
        return Err(Error::InvalidConfig(format!(
            "spec {}: column index out of range",
            spec.name
        )));
    }
    let mut rng = Rng::fork(spec.seed, streams::CORRUPT, 1);
    let (mut x2, mut c2) = (x.clone(), c.clone());
    perturb(&mut x2, x_cols, spec, &mut rng);
    perturb(&mut c2, c_cols, spec, &mut rng);
    Ok((x2, c2))
}

/// Perturbs the columns picked by [`CorruptionSpec::choose_columns`].
pub fn corrupt(
    x: &DenseMatrix<f64>,
    c: &DenseMatrix<f64>,
    spec: &CorruptionSpec,
) -> Result<(DenseMatrix<f64>, DenseMatrix<f64>)> {
    let (xs, cs) = spec.choose_columns(x.cols(), c.cols())?;
    corrupt_with_columns(x, c, &xs, &cs, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub name: String,
    pub n_behavioral_transformed: usize,
    pub n_contextual_transformed: usize,
    pub anomalies_reported: usize,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Share of the clean test set flagged at the calibrated threshold.
    pub target_rate: f64,
    pub method: ScoreMethod,
    /// Monte Carlo draws for the probability score.
    pub samples: usize,
    /// Seeds the shared normal sample and the probability-score noise.
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            target_rate: 0.01,
            method: ScoreMethod::ReconError,
            samples: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub threshold: f64,
    /// Flags among the clean test set at the threshold.
    pub test_flagged: usize,
    pub test_rows: usize,
    /// Flags among the uncorrupted shared sample.
    pub clean_sample_flagged: usize,
    pub sample_rows: usize,
    pub rows: Vec<RobustnessRow>,
}

fn score(
    params: &JlvaeParams<f64>,
    x: &DenseMatrix<f64>,
    c: &DenseMatrix<f64>,
    cfg: &ProtocolConfig,
) -> Result<Vec<f64>> {
    match cfg.method {
        ScoreMethod::ReconError => recon_error_score(params, x, c),
        ScoreMethod::ReconProbability => {
            recon_probability_score(params, x, c, cfg.samples, cfg.seed)
        }
    }
}

/// Calibrates on the clean test set, draws one shared sample of normal rows
/// (the largest `n_rows` among the specs; smaller specs use its prefix) and
/// counts flags on each corrupted copy.
pub fn run_protocol(
    params: &JlvaeParams<f64>,
    test_set: &PreparedDataset,
    specs: &[CorruptionSpec],
    config: &ProtocolConfig,
) -> Result<ProtocolOutcome> {
    let labels = test_set.require_labels()?;
    for s in specs {
        s.validate(test_set.dim_x(), test_set.dim_c())?;
    }
    let clean = score(params, &test_set.x, &test_set.c, config)?;
    let threshold = calibrate_threshold(&clean, config.target_rate)?;
    let test_flagged = classify(&clean, threshold).iter().filter(|&&f| f).count();

    let normals: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let want = specs.iter().map(|s| s.n_rows).max().unwrap_or(0);
    if want > normals.len() {
        return Err(Error::Data(format!(
            "protocol needs {want} normal rows, test set has {}",
            normals.len()
        )));
    }
    let mut rng = Rng::with_stream(config.seed, streams::SUBSAMPLE);
    let picked: Vec<usize> = rng
        .sample_without_replacement(normals.len(), want)
        .into_iter()
        .map(|i| normals[i])
        .collect();
    let sample = test_set.select(&picked);
    let clean_sample_flagged = classify(&score(params, &sample.x, &sample.c, config)?, threshold)
        .iter()
        .filter(|&&f| f)
        .count();

    let rows = specs
        .par_iter()
        .map(|s| {
            let idx: Vec<usize> = (0..s.n_rows).collect();
            let (x, c) = corrupt(&sample.x.select_rows(&idx), &sample.c.select_rows(&idx), s)?;
            let flagged = classify(&score(params, &x, &c, config)?, threshold)
                .iter()
                .filter(|&&f| f)
                .count();
            Ok(RobustnessRow {
                name: s.name.clone(),
                n_behavioral_transformed: s.n_behavioral,
                n_contextual_transformed: s.n_contextual,
                anomalies_reported: flagged,
                n_rows: s.n_rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolOutcome {
        threshold,
        test_flagged,
        test_rows: test_set.len(),
        clean_sample_flagged,
        sample_rows: want,
        rows,
    })
}

/// `data_set,behavior_trans,context_trans,anomalies_reported`.
pub fn table_to_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from("data_set,behavior_trans,context_trans,anomalies_reported\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.name, r.n_behavioral_transformed, r.n_contextual_transformed, r.anomalies_reported
        )
        .unwrap();
    }
    out
}
