use serde::{Deserialize, Serialize};

use super::PreparedDataset;
use crate::numerics::DenseMatrix;
use crate::rng::{streams, Rng};
use crate::{Error, Result};

/// Parameters of the linear two-latent generator.
///
/// Normal rows follow `z_x, z_c ~ N(0, I)`, `c = A z_c + ν_c`,
/// `x = B z_x + D z_c + ν_x`. Anomalous rows replace `z_c` in the behavioural
/// equation by an independent draw, so their behaviour is plausible on its
/// own but inconsistent with their context; `anomaly_shift` optionally adds
/// a constant offset to their behaviour as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub latent_x: usize,
    pub latent_c: usize,
    pub dim_x: usize,
    pub dim_c: usize,
    pub noise_x: f64,
    pub noise_c: f64,
    /// Scale of `D`; zero removes the context-to-behaviour coupling.
    pub cross_weight: f64,
    pub anomaly_fraction: f64,
    #[serde(default)]
    pub anomaly_shift: f64,
    #[serde(default)]
    pub scaling: Scaling,
}

/// Per-column normalisation applied after generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Into `[0, 1]`.
    #[default]
    MinMax,
    /// Zero mean, unit standard deviation.
    Standardize,
    /// Raw generator output.
    None,
}

impl SynthSpec {
    /// Stand-in for the pump-station data: 28 behavioural and 38 contextual
    /// attributes driven by 2 and 2 latent factors. Behaviour leans heavily on
    /// the shared context latent, each contextual column is a noisy proxy of
    /// it, and columns are standardised as the plant data were.
    pub fn plant_synth() -> Self {
        Self {
            n_samples: 60_000,
            latent_x: 2,
            latent_c: 2,
            dim_x: 28,
            dim_c: 38,
            noise_x: 0.05,
            noise_c: 1.0,
            cross_weight: 3.0,
            anomaly_fraction: 0.01,
            anomaly_shift: 0.0,
            scaling: Scaling::Standardize,
        }
    }

    /// Small noiseless set used for optimisation sanity checks.
    pub fn linear_small() -> Self {
        Self {
            n_samples: 512,
            latent_x: 2,
            latent_c: 2,
            dim_x: 8,
            dim_c: 6,
            noise_x: 0.0,
            noise_c: 0.0,
            cross_weight: 1.0,
            anomaly_fraction: 0.0,
            anomaly_shift: 0.0,
            scaling: Scaling::MinMax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_samples,
            self.latent_x,
            self.latent_c,
            self.dim_x,
            self.dim_c,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "synthetic dims and n_samples must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return Err(Error::InvalidConfig(
                "anomaly_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.noise_x < 0.0 || self.noise_c < 0.0 {
            return Err(Error::InvalidConfig("noise scales must be >= 0".into()));
        }
        Ok(())
    }

    pub fn anomaly_count(&self) -> usize {
        (self.n_samples as f64 * self.anomaly_fraction).round() as usize
    }
}

/// Everything behind a synthetic draw.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub z_x: DenseMatrix<f64>,
    pub z_c: DenseMatrix<f64>,
    /// `dim_c × latent_c`.
    pub a: DenseMatrix<f64>,
    /// `dim_x × latent_x`.
    pub b: DenseMatrix<f64>,
    /// `dim_x × latent_c`.
    pub d: DenseMatrix<f64>,
    /// Values before column scaling.
    pub raw_x: DenseMatrix<f64>,
    pub raw_c: DenseMatrix<f64>,
    /// Ascending indices of injected anomalies.
    pub anomalies: Vec<usize>,
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

fn standardize_columns(m: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let n = m.rows() as f64;
    let stats: Vec<(f64, f64)> = (0..m.cols())
        .map(|j| {
            let col = m.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect();
    DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (mean, sd) = stats[c];
        if sd > 0.0 {
            (m.get(r, c) - mean) / sd
        } else {
            0.0
        }
    })
}

fn scale_columns(m: &DenseMatrix<f64>, scaling: Scaling) -> DenseMatrix<f64> {
    match scaling {
        Scaling::MinMax => min_max_columns(m),
        Scaling::Standardize => standardize_columns(m),
        Scaling::None => m.clone(),
    }
}

fn min_max_columns(m: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let bounds: Vec<(f64, f64)> = (0..m.cols())
        .map(|j| {
            let col = m.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (lo, hi) = bounds[c];
        if hi > lo {
            (m.get(r, c) - lo) / (hi - lo)
        } else {
            0.0
        }
    })
}

/// Draws a labelled dataset from [`SynthSpec`], normalising every column
/// as `spec.scaling` says.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<(PreparedDataset, SynthTruth)> {
    spec.validate()?;
    let n = spec.n_samples;
    let mut rng = Rng::with_stream(seed, streams::SYNTH);
    let a = gaussian(
        &mut rng,
        spec.dim_c,
        spec.latent_c,
        1.0 / (spec.latent_c as f64).sqrt(),
    );
    let b = gaussian(
        &mut rng,
        spec.dim_x,
        spec.latent_x,
        1.0 / (spec.latent_x as f64).sqrt(),
    );
    let d = gaussian(
        &mut rng,
        spec.dim_x,
        spec.latent_c,
        spec.cross_weight / (spec.latent_c as f64).sqrt(),
    );
    let z_x = gaussian(&mut rng, n, spec.latent_x, 1.0);
    let z_c = gaussian(&mut rng, n, spec.latent_c, 1.0);

    let mut anomalies = rng.sample_without_replacement(n, spec.anomaly_count());
    anomalies.sort_unstable();
    let mut is_anomaly = vec![false; n];
    for &i in &anomalies {
        is_anomaly[i] = true;
    }
    // The context driving behaviour: the true z_c, or a fresh draw for anomalies.
    let mut z_drive = z_c.clone();
    for &i in &anomalies {
        for v in z_drive.row_mut(i) {
            *v = rng.normal();
        }
    }

    let mut raw_c = z_c.matmul_t(&a)?;
    let mut raw_x = z_x.matmul_t(&b)?;
    raw_x.add_assign(&z_drive.matmul_t(&d)?)?;
    if spec.noise_c > 0.0 {
        raw_c.add_assign(&gaussian(&mut rng, n, spec.dim_c, spec.noise_c))?;
    }
    if spec.noise_x > 0.0 {
        raw_x.add_assign(&gaussian(&mut rng, n, spec.dim_x, spec.noise_x))?;
    }
    if spec.anomaly_shift != 0.0 {
        for &i in &anomalies {
            for v in raw_x.row_mut(i) {
                *v += spec.anomaly_shift;
            }
        }
    }

    let ds = PreparedDataset::new(
        scale_columns(&raw_x, spec.scaling),
        scale_columns(&raw_c, spec.scaling),
        Some(is_anomaly),
        (0..n as u64).collect(),
    )?;
    let truth = SynthTruth {
        z_x,
        z_c,
        a,
        b,
        d,
        raw_x,
        raw_c,
        anomalies,
    };
    Ok((ds, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_anomalies_when_fraction_zero() {
        let (ds, truth) = synth_generate(&SynthSpec::linear_small(), 1).unwrap();
        assert_eq!(ds.anomaly_count(), 0);
        assert!(truth.anomalies.is_empty());
    }

    #[test]
    fn exact_anomaly_count_and_labels() {
        let mut spec = SynthSpec::plant_synth();
        spec.n_samples = 10_000;
        let (ds, truth) = synth_generate(&spec, 2).unwrap();
        assert_eq!(ds.anomaly_count(), 100);
        let labelled: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.labels.as_ref().unwrap()[i])
            .collect();
        assert_eq!(labelled, truth.anomalies);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::linear_small();
        let (a, _) = synth_generate(&spec, 5).unwrap();
        let (b, _) = synth_generate(&spec, 5).unwrap();
        let (c, _) = synth_generate(&spec, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_uncoupled_behaviour_is_exactly_linear() {
        let mut spec = SynthSpec::linear_small();
        spec.cross_weight = 0.0;
        let (ds, t) = synth_generate(&spec, 3).unwrap();
        assert_eq!(t.raw_x, t.z_x.matmul_t(&t.b).unwrap());
        // the scaled block is an exact affine image of the raw block
        for j in 0..spec.dim_x {
            let col = t.raw_x.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (r, raw) in col.iter().enumerate() {
                let back = ds.x.get(r, j) * (hi - lo) + lo;
                assert!((back - raw).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_box_and_validation() {
        let mut spec = SynthSpec::plant_synth();
        spec.n_samples = 5_000;
        spec.scaling = Scaling::MinMax;
        let (ds, _) = synth_generate(&spec, 4).unwrap();
        assert!(ds
            .x
            .as_slice()
            .iter()
            .chain(ds.c.as_slice())
            .all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((ds.dim_x(), ds.dim_c()), (28, 38));

        spec.scaling = Scaling::Standardize;
        let (ds, _) = synth_generate(&spec, 4).unwrap();
        for j in 0..ds.dim_c() {
            let col = ds.c.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
        let mut bad = SynthSpec::linear_small();
        bad.dim_c = 0;
        assert!(synth_generate(&bad, 0).is_err());
    }
}
