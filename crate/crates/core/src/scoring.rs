//! Per-observation anomaly scores from a trained model, plus thresholding.
//!
//! All scores are oriented so that higher means more anomalous.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{write_atomic, write_json};
use crate::model::{
    decode_behavioral, encode_behavioral, encode_contextual, reparameterize, JlvaeParams,
};
use crate::numerics::{DenseMatrix, Scalar};
use crate::rng::{streams, Rng};
use crate::{Error, Result};

/// Rows per parallel work item.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// `‖x - x̂‖` at the posterior means.
    ReconError,
    /// Monte Carlo negative log-likelihood under a unit-variance Gaussian.
    ReconProbability,
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recon_error" => Ok(Self::ReconError),
            "recon_probability" => Ok(Self::ReconProbability),
            other => Err(Error::InvalidConfig(format!(
                "unknown score method `{other}` (expected recon_error or recon_probability)"
            ))),
        }
    }
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(n)))
        .collect()
}

fn rows_of<T: Scalar>(m: &DenseMatrix<T>, start: usize, end: usize) -> DenseMatrix<T> {
    DenseMatrix::from_vec(
        end - start,
        m.cols(),
        m.as_slice()[start * m.cols()..end * m.cols()].to_vec(),
    )
    .expect("slice of a valid matrix")
}

/// `‖x_i - x̂_i‖₂` with `x̂` decoded from the means of both posteriors.
pub fn recon_error_score<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
) -> Result<Vec<T>> {
    let parts: Result<Vec<Vec<T>>> = chunks(x.rows())
        .into_par_iter()
        .map(|(s, e)| {
            let (xb, cb) = (rows_of(x, s, e), rows_of(c, s, e));
            let zx = encode_behavioral(params, &xb)?;
            let zc = encode_contextual(params, &xb, &cb)?;
            let xh = decode_behavioral(params, &zx.mu, &zc.mu)?;
            let mut diff = xb;
            for (d, h) in diff.as_mut_slice().iter_mut().zip(xh.as_slice()) {
                *d -= *h;
            }
            Ok(diff.row_norms())
        })
        .collect();
    Ok(parts?.concat())
}

/// `-(1/L) Σ_l log N(x_i | x̂_i^(l), I)`, i.e. the mean over `L` posterior
/// draws of `½‖x - x̂‖² + (d/2) log 2π`.
///
/// Row `i` (its position in `x`) draws its noise from its own stream keyed
/// by `(seed, i)`, so results do not depend on the parallel schedule.
pub fn recon_probability_score<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    samples: usize,
    seed: u64,
) -> Result<Vec<T>> {
    if samples == 0 {
        return Err(Error::InvalidConfig(
            "recon_probability needs at least one sample".into(),
        ));
    }
    let d = x.cols();
    let log_norm = T::of(0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln());
    let half = T::of(0.5);
    let inv_l = T::of(1.0 / samples as f64);
    let (kx, kc) = (params.latent_x(), params.latent_c());
    let parts: Result<Vec<Vec<T>>> = chunks(x.rows())
        .into_par_iter()
        .map(|(s, e)| {
            let (xb, cb) = (rows_of(x, s, e), rows_of(c, s, e));
            let qx = encode_behavioral(params, &xb)?;
            let qc = encode_contextual(params, &xb, &cb)?;
            let mut rngs: Vec<Rng> = (s..e)
                .map(|i| Rng::fork(seed, streams::SCORE, i as u64))
                .collect();
            let mut acc = vec![T::zero(); e - s];
            for _ in 0..samples {
                let mut ex = DenseMatrix::zeros(e - s, kx);
                let mut ec = DenseMatrix::zeros(e - s, kc);
                for (r, rng) in rngs.iter_mut().enumerate() {
                    for v in ex.row_mut(r) {
                        *v = T::of(rng.normal());
                    }
                    for v in ec.row_mut(r) {
                        *v = T::of(rng.normal());
                    }
                }
                let xh = decode_behavioral(
                    params,
                    &reparameterize(&qx, &ex)?,
                    &reparameterize(&qc, &ec)?,
                )?;
                for (r, a) in acc.iter_mut().enumerate() {
                    let sq: T = xb
                        .row(r)
                        .iter()
                        .zip(xh.row(r))
                        .map(|(&u, &v)| (u - v) * (u - v))
                        .sum();
                    *a += half * sq + log_norm;
                }
            }
            Ok(acc.into_iter().map(|a| a * inv_l).collect())
        })
        .collect();
    Ok(parts?.concat())
}

/// The `⌈N·rate⌉`-th largest score. Flagging with the strict rule of
/// [`classify`] then marks at most that many rows.
pub fn calibrate_threshold<T: Scalar>(scores: &[T], target_rate: f64) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::Data(
            "cannot calibrate on an empty score vector".into(),
        ));
    }
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target rate must lie in (0, 1), got {target_rate}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let n = scores.len();
    let k = ((n as f64 * target_rate).ceil() as usize).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let t = sorted[k - 1];
    if sorted[0] == sorted[n - 1] {
        log::warn!("all {n} scores are equal; threshold {t} flags nothing");
    }
    Ok(t)
}

/// `score > threshold`, strictly.
pub fn classify<T: Scalar>(scores: &[T], threshold: T) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: ScoreMethod,
    pub scores: Vec<f64>,
    pub threshold: Option<f64>,
    pub flags: Option<Vec<bool>>,
}

/// Sidecar describing a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub method: ScoreMethod,
    pub rows: usize,
    pub threshold: Option<f64>,
    pub flagged: Option<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ScoreReport {
    pub fn new(method: ScoreMethod, scores: Vec<f64>) -> Self {
        Self {
            method,
            scores,
            threshold: None,
            flags: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.flags = Some(classify(&self.scores, threshold));
        self.threshold = Some(threshold);
        self
    }

    pub fn flagged(&self) -> Option<usize> {
        self.flags
            .as_ref()
            .map(|f| f.iter().filter(|&&b| b).count())
    }

    /// `row_id,score,flagged`; the flag column is empty without a threshold.
    pub fn to_csv(&self, row_ids: &[u64]) -> Result<String> {
        if row_ids.len() != self.scores.len() {
            return Err(Error::ShapeMismatch {
                op: "score csv",
                left: (row_ids.len(), 1),
                right: (self.scores.len(), 1),
            });
        }
        let mut out = String::from("row_id,score,flagged\n");
        for (i, (id, s)) in row_ids.iter().zip(&self.scores).enumerate() {
            match &self.flags {
                Some(f) => writeln!(out, "{id},{s},{}", u8::from(f[i])).unwrap(),
                None => writeln!(out, "{id},{s},").unwrap(),
            }
        }
        Ok(out)
    }

    /// Writes `path` and `path` with a `.json` extension beside it.
    pub fn save(
        &self,
        path: &Path,
        row_ids: &[u64],
        samples: Option<usize>,
        seed: Option<u64>,
    ) -> Result<()> {
        write_atomic(path, self.to_csv(row_ids)?.as_bytes())?;
        let sidecar = ScoreSidecar {
            method: self.method,
            rows: self.scores.len(),
            threshold: self.threshold,
            flagged: self.flagged(),
            samples,
            seed,
        };
        write_json(&path.with_extension("json"), &sidecar)
    }
}
