//! Minibatch SGVB with Adam and validation-loss early stopping.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::PreparedDataset;
use crate::model::{
    loss_at_mean, loss_backward, loss_forward, JlvaeGrads, JlvaeParams, LossBreakdown, ModelConfig,
};
use crate::numerics::{DenseMatrix, Scalar};
use crate::rng::{streams, Rng};
use crate::{Error, Result};

fn default_batch_size() -> usize {
    200
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and patience must be >= 1".into(),
            ));
        }
        if !open_unit(self.adam_beta1) || !open_unit(self.adam_beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in (0, 1)".into()));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.adam_eps.is_nan()
            || self.adam_eps < 0.0
        {
            return Err(Error::InvalidConfig(
                "learning_rate must be > 0 and adam_eps >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment buffers, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: JlvaeParams<T>,
    pub v: JlvaeParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &JlvaeParams<T>) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut JlvaeParams<T>,
    grads: &JlvaeGrads<T>,
    config: &TrainConfig,
) -> Result<()> {
    if state.m.param_count() != params.param_count() || grads.param_count() != params.param_count()
    {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: (params.param_count(), 1),
            right: (grads.param_count(), 1),
        });
    }
    state.step += 1;
    let (b1, b2) = (T::of(config.adam_beta1), T::of(config.adam_beta2));
    let one = T::one();
    let t = state.step as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = T::of(config.learning_rate);
    let eps = T::of(config.adam_eps);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Row indices of each batch of one epoch: a seeded permutation cut into
/// consecutive chunks; the last one may be short.
pub fn minibatch_iter(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let perm = Rng::fork(seed, streams::SHUFFLE, epoch as u64).permutation(n);
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Row-weighted mean of the minibatch losses seen during the epoch.
    pub train: LossBreakdown<f64>,
    /// Posterior-mean loss on the validation set after the epoch.
    pub val: LossBreakdown<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Posterior-mean losses of the initial parameters.
    pub initial_train: LossBreakdown<f64>,
    pub initial_val: LossBreakdown<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` means the initial ones.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_total(&self) -> f64 {
        match self.best_epoch {
            Some(e) => self.epochs[e - 1].val.total,
            None => self.initial_val.total,
        }
    }

    /// Per-epoch losses; wall times are left out so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_total,train_kl_zx,train_kl_zc,train_recon_x,train_recon_c,train_l1,val_total\n",
        );
        for r in &self.epochs {
            let t = &r.train;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch, t.total, t.kl_zx, t.kl_zc, t.recon_x, t.recon_c, t.l1, r.val.total
            )
            .unwrap();
        }
        out
    }
}

fn to_f64<T: Scalar>(b: &LossBreakdown<T>) -> LossBreakdown<f64> {
    LossBreakdown {
        kl_zx: b.kl_zx.as_f64(),
        kl_zc: b.kl_zc.as_f64(),
        recon_x: b.recon_x.as_f64(),
        recon_c: b.recon_c.as_f64(),
        l1: b.l1.as_f64(),
        total: b.total.as_f64(),
    }
}

fn normals<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| T::of(rng.normal()))
}

/// Evaluates `loss_at_mean` in chunks so large sets do not allocate one
/// giant activation buffer; returns the row-weighted mean.
pub fn mean_loss<T: Scalar>(
    params: &JlvaeParams<T>,
    ds: &PreparedDataset<T>,
    config: &ModelConfig,
) -> Result<LossBreakdown<T>> {
    const CHUNK: usize = 4096;
    let mut acc = LossBreakdown::<T>::default();
    let n = ds.len();
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let part = loss_at_mean(
            params,
            &ds.x.select_rows(&idx),
            &ds.c.select_rows(&idx),
            config,
        )?;
        acc = acc.add(&part.scaled(T::of(idx.len() as f64 / n as f64)));
    }
    Ok(acc)
}

/// Trains from a seeded initialisation and returns the parameters of the
/// best validation epoch.
///
/// Every epoch draws its batch order and its noise from streams keyed by
/// `(seed, epoch)`, so a run is reproducible bit for bit.
pub fn train<T: Scalar>(
    train_set: &PreparedDataset<T>,
    val_set: &PreparedDataset<T>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(JlvaeParams<T>, TrainHistory)> {
    let params = JlvaeParams::<f64>::init(model_config, train_config.seed)?.cast();
    train_from(params, train_set, val_set, model_config, train_config)
}

/// As [`train`], starting from the given parameters.
pub fn train_from<T: Scalar>(
    mut params: JlvaeParams<T>,
    train_set: &PreparedDataset<T>,
    val_set: &PreparedDataset<T>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(JlvaeParams<T>, TrainHistory)> {
    model_config.validate()?;
    train_config.validate()?;
    for ds in [train_set, val_set] {
        if ds.dim_x() != model_config.dim_x || ds.dim_c() != model_config.dim_c {
            return Err(Error::ShapeMismatch {
                op: "train",
                left: (ds.dim_x(), ds.dim_c()),
                right: (model_config.dim_x, model_config.dim_c),
            });
        }
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(
            "training and validation sets must be non-empty".into(),
        ));
    }

    let at_start = |ds| {
        mean_loss(&params, ds, model_config).map_err(|e| match e {
            Error::NonFiniteTerm(term) => Error::NonFiniteLoss {
                term,
                epoch: 0,
                batch: 0,
            },
            other => other,
        })
    };
    let mut history = TrainHistory {
        initial_train: to_f64(&at_start(train_set)?),
        initial_val: to_f64(&at_start(val_set)?),
        ..Default::default()
    };
    let mut best = params.clone();
    let mut best_val = history.initial_val.total;
    let mut since_best = 0;
    let mut adam = AdamState::new(&params);
    let l = model_config.mc_samples_train;
    let (kx, kc) = (model_config.latent_x, model_config.latent_c);
    let n = train_set.len() as f64;

    for epoch in 1..=train_config.max_epochs {
        let started = Instant::now();
        let mut noise = Rng::fork(train_config.seed, streams::NOISE, epoch as u64);
        let mut epoch_loss = LossBreakdown::<f64>::default();
        let batches = minibatch_iter(
            train_set.len(),
            train_config.batch_size,
            train_config.seed,
            epoch,
        )?;
        for (b, idx) in batches.iter().enumerate() {
            let x = train_set.x.select_rows(idx);
            let c = train_set.c.select_rows(idx);
            let rows = idx.len();
            let eps_x: Vec<_> = (0..l).map(|_| normals(&mut noise, rows, kx)).collect();
            let eps_c: Vec<_> = (0..l).map(|_| normals(&mut noise, rows, kc)).collect();
            let (loss, cache) = loss_forward(&params, &x, &c, &eps_x, &eps_c, model_config)
                .map_err(|e| match e {
                    Error::NonFiniteTerm(term) => Error::NonFiniteLoss {
                        term,
                        epoch,
                        batch: b,
                    },
                    other => other,
                })?;
            let grads = loss_backward(&params, &cache)?;
            adam_step(&mut adam, &mut params, &grads, train_config)?;
            epoch_loss = epoch_loss.add(&to_f64(&loss).scaled(rows as f64 / n));
        }
        let val = to_f64(&mean_loss(&params, val_set, model_config)?);
        if let Some(term) = val.non_finite_term() {
            return Err(Error::NonFiniteLoss {
                term,
                epoch,
                batch: batches.len(),
            });
        }
        let seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} ({seconds:.2}s)",
            epoch_loss.total,
            val.total
        );
        history.epochs.push(EpochRecord {
            epoch,
            train: epoch_loss,
            val,
            seconds,
        });
        if val.total < best_val {
            best_val = val.total;
            best = params.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_config.patience {
                history.stopped_early = true;
                log::info!(
                    "early stop after epoch {epoch}; best epoch {:?}",
                    history.best_epoch
                );
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::model::JlvaeParams;

    fn tiny_config() -> ModelConfig {
        let mut c = ModelConfig::plant_synth();
        c.dim_x = 8;
        c.dim_c = 6;
        c.latent_x = 2;
        c.latent_c = 2;
        c
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let cfg = tiny_config();
        let mut p = JlvaeParams::<f64>::init(&cfg, 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut st, &mut p, &zero, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_value() {
        let cfg = tiny_config();
        let mut p = JlvaeParams::<f64>::zeros(&cfg).unwrap();
        let mut g = p.zeros_like();
        g.set_flat(&vec![1.0; g.param_count()]).unwrap();
        let mut st = AdamState::new(&p);
        adam_step(&mut st, &mut p, &g, &TrainConfig::default()).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!(p.to_flat().iter().all(|&v| (v - expected).abs() < 1e-15));
        // the commonly quoted figure -9.99999995e-4 agrees to a relative 1e-8
        assert!((expected + 9.99999995e-4).abs() < 1e-11);
    }

    #[test]
    fn momentum_keeps_moving_with_shrinking_steps() {
        let cfg = tiny_config();
        let mut p = JlvaeParams::<f64>::zeros(&cfg).unwrap();
        let mut g = p.zeros_like();
        g.set_flat(&vec![1.0; g.param_count()]).unwrap();
        let zero = p.zeros_like();
        let tc = TrainConfig::default();
        let mut st = AdamState::new(&p);
        adam_step(&mut st, &mut p, &g, &tc).unwrap();
        let mut prev = p.to_flat()[0];
        let mut last_delta = f64::INFINITY;
        for _ in 0..2 {
            adam_step(&mut st, &mut p, &zero, &tc).unwrap();
            let now = p.to_flat()[0];
            let delta = (now - prev).abs();
            assert!(delta > 0.0 && delta < last_delta);
            last_delta = delta;
            prev = now;
        }
    }

    #[test]
    fn batches_cover_rows_deterministically() {
        let b = minibatch_iter(1000, 200, 3, 1).unwrap();
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|x| x.len() == 200));
        let mut all = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(b, minibatch_iter(1000, 200, 3, 1).unwrap());
        assert_ne!(b, minibatch_iter(1000, 200, 3, 2).unwrap());
        assert_eq!(
            minibatch_iter(5, 200, 0, 1).unwrap(),
            vec![minibatch_iter(5, 200, 0, 1).unwrap()[0].clone()]
        );
        assert_eq!(minibatch_iter(5, 200, 0, 1).unwrap()[0].len(), 5);
        assert!(minibatch_iter(0, 200, 0, 1).is_err());
    }

    fn small_run(max_epochs: usize, patience: usize) -> (JlvaeParams<f64>, TrainHistory) {
        let (ds, _) = synth_generate(&SynthSpec::linear_small(), 11).unwrap();
        let cfg = tiny_config();
        let tc = TrainConfig {
            max_epochs,
            patience,
            batch_size: 64,
            seed: 4,
            ..Default::default()
        };
        train(&ds, &ds, &cfg, &tc).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (p, h) = small_run(0, 5);
        assert_eq!(p, JlvaeParams::init(&tiny_config(), 4).unwrap());
        assert!(h.epochs.is_empty());
        assert_eq!(h.best_epoch, None);
    }

    #[test]
    fn loss_descends_and_best_is_returned() {
        let (p, h) = small_run(50, 50);
        let last = h.epochs.last().unwrap();
        assert!(last.train.total < h.initial_train.total);
        let min_val = h
            .epochs
            .iter()
            .map(|r| r.val.total)
            .fold(h.initial_val.total, f64::min);
        assert_eq!(h.best_val_total(), min_val);
        let (ds, _) = synth_generate(&SynthSpec::linear_small(), 11).unwrap();
        let check = mean_loss(&p, &ds, &tiny_config()).unwrap();
        assert!((check.total - min_val).abs() < 1e-12);
        assert_eq!(h.to_csv().lines().count(), h.epochs.len() + 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (a, _) = small_run(3, 5);
        let (b, _) = small_run(3, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn patience_one_halts_on_first_non_improvement() {
        let (_, h) = small_run(200, 1);
        if h.stopped_early {
            let n = h.epochs.len();
            assert!(h.epochs[n - 1].val.total >= h.best_val_total());
            assert_eq!(h.best_epoch.unwrap_or(0), n - 1);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut tc = TrainConfig {
            adam_beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(tc.validate().is_err());
        tc = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(tc.validate().is_err());
        let err = serde_json::from_str::<TrainConfig>(r#"{"batch": 3}"#);
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_loss_reports_location() {
        let (mut ds, _) = synth_generate(&SynthSpec::linear_small(), 11).unwrap();
        let val = ds.clone();
        ds.x.set(0, 0, 1e200);
        let tc = TrainConfig {
            max_epochs: 1,
            batch_size: 1000,
            ..Default::default()
        };
        let err = train(&ds, &val, &tiny_config(), &tc);
        assert!(matches!(
            err,
            Err(Error::NonFiniteLoss {
                epoch: 0,
                batch: 0,
                ..
            })
        ));

        // divergence inside the loop is reported with its batch index
        let tc = TrainConfig {
            max_epochs: 3,
            batch_size: 16,
            learning_rate: 1e300,
            ..Default::default()
        };
        let err = train(&val, &val, &tiny_config(), &tc);
        assert!(
            matches!(err, Err(Error::NonFiniteLoss { epoch: 1.., .. })),
            "{err:?}"
        );
    }
}
