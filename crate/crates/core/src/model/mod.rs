//! The joint latent model.
//!
//! Two recognizers produce diagonal-Gaussian posteriors: `q(z_x | x)` from the
//! behavioural block and `q(z_c | x, c)` from both blocks. Two generators
//! reconstruct: `ĉ` from `z_c` alone, and `x̂` from `[z_x, z_c]`. Context can
//! therefore shape the behavioural reconstruction only through its latent.
//!
//! The objective per batch is the row mean of
//! `KL(q(z_x)‖N(0,I)) + KL(q(z_c)‖N(0,I)) + recon(x, x̂) + recon(c, ĉ)` plus
//! `λ Σ|w|` over all weights.

mod checkpoint;
mod config;
mod loss;
mod params;

pub use checkpoint::{Checkpoint, LayerRecord, FLOAT_ENCODING, FORMAT_VERSION};
pub use config::{ModelConfig, ReconLoss};
pub use loss::{
    decode_behavioral, decode_contextual, encode_behavioral, encode_contextual, kl_std_normal,
    loss_at_mean, loss_backward, loss_forward, reparameterize, GaussianLatent, LossBreakdown,
    LossCache, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use params::{JlvaeGrads, JlvaeParams, NET_NAMES};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, DenseMatrix};
    use crate::rng::Rng;

    type M = DenseMatrix<f64>;

    fn small_config(rng: &mut Rng) -> ModelConfig {
        let mut pick = |lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
        ModelConfig {
            dim_x: pick(1, 4),
            dim_c: pick(1, 4),
            latent_x: pick(1, 3),
            latent_c: pick(1, 3),
            recognizer_x_hidden: vec![pick(2, 5)],
            recognizer_c_hidden: vec![pick(2, 5)],
            generator_x_hidden: vec![pick(2, 5)],
            generator_c_hidden: vec![pick(2, 5)],
            l1_lambda: 0.0,
            mc_samples_train: 1,
            recon_loss: ReconLoss::L2Norm,
        }
    }

    fn noise(rng: &mut Rng, rows: usize, cols: usize) -> M {
        M::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn perturbed_params(cfg: &ModelConfig, seed: u64) -> JlvaeParams<f64> {
        let mut p = JlvaeParams::init(cfg, seed).unwrap();
        let mut rng = Rng::new(seed ^ 0xABCD);
        for t in p.tensors_mut() {
            for v in t {
                *v += 0.2 * rng.normal();
            }
        }
        p
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                if x.abs() < 1e-8 && y.abs() < 1e-8 {
                    0.0
                } else {
                    (x - y).abs() / x.abs().max(y.abs())
                }
            })
            .fold(0.0, f64::max)
    }

    fn gradcheck(cfg: &ModelConfig, seed: u64, batch: usize, samples: usize) -> f64 {
        let mut rng = Rng::new(seed);
        let params = perturbed_params(cfg, seed);
        let x = M::from_fn(batch, cfg.dim_x, |_, _| rng.uniform());
        let c = M::from_fn(batch, cfg.dim_c, |_, _| rng.uniform());
        let ex: Vec<M> = (0..samples)
            .map(|_| noise(&mut rng, batch, cfg.latent_x))
            .collect();
        let ec: Vec<M> = (0..samples)
            .map(|_| noise(&mut rng, batch, cfg.latent_c))
            .collect();
        let (_, cache) = loss_forward(&params, &x, &c, &ex, &ec, cfg).unwrap();
        let analytic = loss_backward(&params, &cache).unwrap().to_flat();
        let mut probe = params.clone();
        let numeric = finite_diff_grad(
            |p: &[f64]| {
                probe.set_flat(p).unwrap();
                loss_forward(&probe, &x, &c, &ex, &ec, cfg).unwrap().0.total
            },
            &params.to_flat(),
            1e-5,
        );
        max_rel_err(&analytic, &numeric)
    }

    #[test]
    fn full_gradcheck_dims_3222() {
        let mut cfg = small_config(&mut Rng::new(0));
        cfg.dim_x = 3;
        cfg.dim_c = 2;
        cfg.latent_x = 2;
        cfg.latent_c = 2;
        for recon in [ReconLoss::L2Norm, ReconLoss::SquaredL2] {
            for lambda in [0.0, 1e-5] {
                cfg.recon_loss = recon;
                cfg.l1_lambda = lambda;
                let err = gradcheck(&cfg, 17, 4, 1);
                assert!(err < 1e-4, "{recon:?} λ={lambda}: {err}");
            }
        }
    }

    #[test]
    fn gradcheck_random_configs_and_mc_samples() {
        let mut rng = Rng::new(99);
        for i in 0..8 {
            let mut cfg = small_config(&mut rng);
            cfg.recon_loss = if i % 2 == 0 {
                ReconLoss::L2Norm
            } else {
                ReconLoss::SquaredL2
            };
            cfg.l1_lambda = if i % 4 < 2 { 0.0 } else { 1e-5 };
            let samples = 1 + i % 3;
            let err = gradcheck(&cfg, 1000 + i as u64, 4, samples);
            assert!(err < 1e-4, "config {i}: {err}");
        }
    }

    #[test]
    fn encode_kdd_shapes_and_zero_params() {
        let cfg = ModelConfig::kdd99(65, 45);
        let p = JlvaeParams::<f64>::init(&cfg, 0).unwrap();
        let x = M::filled(200, 65, 0.5);
        let c = M::filled(200, 45, 0.5);
        let lx = encode_behavioral(&p, &x).unwrap();
        assert_eq!(lx.mu.shape(), (200, 4));
        assert_eq!(lx.log_var.shape(), (200, 4));
        assert_eq!(p.recognizer_c.input_width(), 110);
        assert_eq!(encode_contextual(&p, &x, &c).unwrap().mu.shape(), (200, 4));
        assert_eq!(decode_contextual(&p, &M::zeros(3, 4)).unwrap().cols(), 45);
        assert_eq!(p.generator_x.input_width(), 8);

        let z = JlvaeParams::<f64>::zeros(&cfg).unwrap();
        let lx = encode_behavioral(&z, &x).unwrap();
        assert!(lx
            .mu
            .as_slice()
            .iter()
            .chain(lx.log_var.as_slice())
            .all(|&v| v == 0.0));
        let lc = encode_contextual(&z, &x, &c).unwrap();
        assert!(lc
            .mu
            .as_slice()
            .iter()
            .chain(lc.log_var.as_slice())
            .all(|&v| v == 0.0));
        assert!(
            decode_behavioral(&z, &M::filled(2, 4, 1.0), &M::filled(2, 4, 1.0))
                .unwrap()
                .as_slice()
                .iter()
                .all(|&v| v == 0.0)
        );
    }

    #[test]
    fn encoders_are_row_wise() {
        let cfg = ModelConfig::plant_synth();
        let p = JlvaeParams::<f64>::init(&cfg, 3).unwrap();
        let mut rng = Rng::new(3);
        let x = M::from_fn(5, 28, |_, _| rng.uniform());
        let c = M::from_fn(5, 38, |_, _| rng.uniform());
        let perm = [3, 0, 4, 1, 1];
        let full = encode_contextual(&p, &x, &c).unwrap();
        let permuted = encode_contextual(&p, &x.select_rows(&perm), &c.select_rows(&perm)).unwrap();
        assert_eq!(permuted.mu, full.mu.select_rows(&perm));
        assert_eq!(permuted.log_var, full.log_var.select_rows(&perm));
        assert_eq!(permuted.mu.row(3), permuted.mu.row(4));
        assert!(encode_contextual(&p, &c, &x).is_err());
        assert!(encode_behavioral(&p, &c).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        let lat = GaussianLatent::new(
            M::from_rows(&[[0.5, -1.0]]).unwrap(),
            M::from_rows(&[[0.3, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(reparameterize(&lat, &M::zeros(1, 2)).unwrap(), lat.mu);
        let unit = GaussianLatent::new(lat.mu.clone(), M::zeros(1, 2)).unwrap();
        let e = M::from_rows(&[[0.25, 2.0]]).unwrap();
        assert_eq!(reparameterize(&unit, &e).unwrap().as_slice(), &[0.75, 1.0]);
        let three =
            GaussianLatent::new(M::zeros(1, 1), M::from_rows(&[[2.0 * 3f64.ln()]]).unwrap())
                .unwrap();
        let z = reparameterize(&three, &M::filled(1, 1, 1.0)).unwrap();
        assert!((z.get(0, 0) - 3.0).abs() < 1e-12);
        assert!(reparameterize(&three, &M::zeros(2, 1)).is_err());
    }

    #[test]
    fn cross_link_modulates_behavioral_output() {
        let mut cfg = ModelConfig::plant_synth();
        cfg.generator_x_hidden = vec![];
        let p = JlvaeParams::<f64>::init(&cfg, 12).unwrap();
        let z_x = M::filled(1, cfg.latent_x, 0.3);
        let a = decode_behavioral(&p, &z_x, &M::filled(1, cfg.latent_c, -1.0)).unwrap();
        let b = decode_behavioral(&p, &z_x, &M::filled(1, cfg.latent_c, 1.0)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn kl_examples() {
        let kl = |mu: f64, lv: f64| {
            kl_std_normal(&GaussianLatent::new(M::filled(1, 1, mu), M::filled(1, 1, lv)).unwrap())
        };
        assert_eq!(kl(0.0, 0.0), 0.0);
        assert!((kl(1.0, 0.0) - 0.5).abs() < 1e-15);
        let expected = 0.5 * (4.0 - 4f64.ln() - 1.0);
        assert!((kl(0.0, 4f64.ln()) - expected).abs() < 1e-12);
        assert!((expected - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = Rng::new(21);
        for _ in 0..5 {
            let k = 3;
            let mu: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            let lv: Vec<f64> = (0..k).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
            let lat = GaussianLatent::new(
                M::new(1, k, mu.clone()).unwrap(),
                M::new(1, k, lv.clone()).unwrap(),
            )
            .unwrap();
            let analytic = kl_std_normal(&lat);
            let draws = 100_000;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..draws {
                let mut log_ratio = 0.0;
                for j in 0..k {
                    let e = rng.normal();
                    let z = mu[j] + (0.5 * lv[j]).exp() * e;
                    // log q(z) − log p(z); normalising constants cancel
                    log_ratio += -0.5 * lv[j] - 0.5 * e * e + 0.5 * z * z;
                }
                sum += log_ratio;
                sum_sq += log_ratio * log_ratio;
            }
            let mean = sum / draws as f64;
            let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!(
                (mean - analytic).abs() < 3.0 * se,
                "{mean} vs {analytic} (se {se})"
            );
        }
    }

    #[test]
    fn loss_examples() {
        let mut cfg = ModelConfig::plant_synth();
        cfg.dim_x = 2;
        cfg.dim_c = 1;
        cfg.l1_lambda = 0.0;
        cfg.recon_loss = ReconLoss::L2Norm;
        let z = JlvaeParams::<f64>::zeros(&cfg).unwrap();
        let ex = [M::zeros(1, cfg.latent_x)];
        let ec = [M::zeros(1, cfg.latent_c)];
        let (lb, _) = loss_forward(&z, &M::zeros(1, 2), &M::zeros(1, 1), &ex, &ec, &cfg).unwrap();
        assert_eq!(lb.total, 0.0);

        let x = M::from_rows(&[[3.0, 4.0]]).unwrap();
        let (lb, _) = loss_forward(&z, &x, &M::zeros(1, 1), &ex, &ec, &cfg).unwrap();
        assert_eq!(lb.recon_x, 5.0);
        assert_eq!(lb.total, 5.0);

        let mut kdd = ModelConfig::kdd99(65, 45);
        assert_eq!(kdd.l1_lambda, 1e-5);
        let p = JlvaeParams::<f64>::init(&kdd, 2).unwrap();
        let x = M::filled(2, 65, 0.1);
        let c = M::filled(2, 45, 0.2);
        let ex = [M::zeros(2, 4)];
        let (lb, _) = loss_forward(&p, &x, &c, &ex, &ex, &kdd).unwrap();
        assert!((lb.l1 - 1e-5 * p.weight_l1()).abs() < 1e-18);
        let sum = lb.kl_zx + lb.kl_zc + lb.recon_x + lb.recon_c + lb.l1;
        assert!((lb.total - sum).abs() < 1e-10);
        kdd.dim_c = 44;
        assert!(loss_forward(&p, &x, &c, &ex, &ex, &kdd).is_ok());
        assert!(loss_forward(&p, &x, &x, &ex, &ex, &kdd).is_err());
    }

    #[test]
    fn l1_adds_sign_times_lambda() {
        let mut cfg = small_config(&mut Rng::new(5));
        let p = perturbed_params(&cfg, 5);
        let mut rng = Rng::new(6);
        let x = M::from_fn(3, cfg.dim_x, |_, _| rng.uniform());
        let c = M::from_fn(3, cfg.dim_c, |_, _| rng.uniform());
        let ex = [noise(&mut rng, 3, cfg.latent_x)];
        let ec = [noise(&mut rng, 3, cfg.latent_c)];
        let g0 = {
            let (_, cache) = loss_forward(&p, &x, &c, &ex, &ec, &cfg).unwrap();
            loss_backward(&p, &cache).unwrap()
        };
        cfg.l1_lambda = 0.01;
        let (_, cache) = loss_forward(&p, &x, &c, &ex, &ec, &cfg).unwrap();
        let g1 = loss_backward(&p, &cache).unwrap();
        for ((n0, n1), np) in g0.nets().iter().zip(g1.nets()).zip(p.nets()) {
            for ((l0, l1), lp) in n0.layers().iter().zip(n1.layers()).zip(np.layers()) {
                for ((a, b), w) in l0
                    .weights
                    .as_slice()
                    .iter()
                    .zip(l1.weights.as_slice())
                    .zip(lp.weights.as_slice())
                {
                    let expected = if *w > 0.0 {
                        0.01
                    } else if *w < 0.0 {
                        -0.01
                    } else {
                        0.0
                    };
                    assert!((b - a - expected).abs() < 1e-14);
                }
                assert_eq!(l0.bias, l1.bias);
            }
        }
    }

    #[test]
    fn cross_link_carries_gradient_into_contextual_recognizer() {
        let cfg = small_config(&mut Rng::new(8));
        let p = perturbed_params(&cfg, 8);
        let mut rng = Rng::new(9);
        let x = M::from_fn(4, cfg.dim_x, |_, _| rng.uniform());
        let ex = [noise(&mut rng, 4, cfg.latent_x)];
        let ec = [noise(&mut rng, 4, cfg.latent_c)];

        // Zeroing generator_c removes the recon_c path, so the remaining
        // recon_x signal into recognizer_c must come through the cross-link.
        let mut only_x = p.clone();
        for l in only_x.generator_c.layers_mut() {
            l.weights.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        }
        let c_zero = M::zeros(4, cfg.dim_c);
        let (_, cache) = loss_forward(&only_x, &x, &c_zero, &ex, &ec, &cfg).unwrap();
        let with_recon = loss_backward(&only_x, &cache).unwrap();
        let g = with_recon.recognizer_c.layers().last().unwrap();
        // the μ block of the head receives KL gradient plus recon_x gradient;
        // compare against a pure-KL reference
        let mut lat_only = only_x.clone();
        for l in lat_only.generator_x.layers_mut() {
            l.weights.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        }
        let (_, cache) = loss_forward(&lat_only, &x, &c_zero, &ex, &ec, &cfg).unwrap();
        let kl_only = loss_backward(&lat_only, &cache).unwrap();
        let h = kl_only.recognizer_c.layers().last().unwrap();
        assert_ne!(g.weights, h.weights);
    }

    #[test]
    fn severed_cross_link_leaves_only_contextual_paths() {
        let cfg = small_config(&mut Rng::new(31));
        let mut p = perturbed_params(&cfg, 31);
        // zero the z_c rows of generator_x's first weight matrix
        let w = &mut p.generator_x.layers_mut()[0].weights;
        for r in cfg.latent_x..cfg.latent_x + cfg.latent_c {
            w.row_mut(r).fill(0.0);
        }
        let mut rng = Rng::new(32);
        let x = M::from_fn(4, cfg.dim_x, |_, _| rng.uniform());
        let c = M::from_fn(4, cfg.dim_c, |_, _| rng.uniform());
        let ex = [noise(&mut rng, 4, cfg.latent_x)];
        let ec = [noise(&mut rng, 4, cfg.latent_c)];
        let (_, cache) = loss_forward(&p, &x, &c, &ex, &ec, &cfg).unwrap();
        let analytic = loss_backward(&p, &cache).unwrap();

        // finite differences of kl_zc + recon_c alone, w.r.t. recognizer_c
        let mut probe = p.clone();
        let start: usize = p.recognizer_x.param_count();
        let len = p.recognizer_c.param_count();
        let flat = p.to_flat();
        let numeric = finite_diff_grad(
            |q: &[f64]| {
                let mut full = flat.clone();
                full[start..start + len].copy_from_slice(q);
                probe.set_flat(&full).unwrap();
                let lb = loss_forward(&probe, &x, &c, &ex, &ec, &cfg).unwrap().0;
                lb.kl_zc + lb.recon_c
            },
            &flat[start..start + len],
            1e-5,
        );
        let got = &analytic.to_flat()[start..start + len];
        assert!(max_rel_err(got, &numeric) < 1e-4);
    }

    #[test]
    fn batch_loss_is_mean_of_row_losses() {
        let cfg = small_config(&mut Rng::new(41));
        let p = perturbed_params(&cfg, 41);
        let mut rng = Rng::new(42);
        let n = 5;
        let x = M::from_fn(n, cfg.dim_x, |_, _| rng.uniform());
        let c = M::from_fn(n, cfg.dim_c, |_, _| rng.uniform());
        let ex = noise(&mut rng, n, cfg.latent_x);
        let ec = noise(&mut rng, n, cfg.latent_c);
        let batch = loss_forward(
            &p,
            &x,
            &c,
            std::slice::from_ref(&ex),
            std::slice::from_ref(&ec),
            &cfg,
        )
        .unwrap()
        .0;
        let mut mean = 0.0;
        for r in 0..n {
            let pick = |m: &M| m.select_rows(&[r]);
            let row = loss_forward(&p, &pick(&x), &pick(&c), &[pick(&ex)], &[pick(&ec)], &cfg)
                .unwrap()
                .0;
            mean += row.total / n as f64;
        }
        assert!((batch.total - mean).abs() < 1e-10);
    }

    #[test]
    fn non_finite_loss_names_term() {
        let mut cfg = small_config(&mut Rng::new(1));
        cfg.l1_lambda = 0.0;
        let p = JlvaeParams::<f64>::zeros(&cfg).unwrap();
        let x = M::filled(1, cfg.dim_x, 1e200);
        let c = M::zeros(1, cfg.dim_c);
        let err = loss_forward(
            &p,
            &x,
            &c,
            &[M::zeros(1, cfg.latent_x)],
            &[M::zeros(1, cfg.latent_c)],
            &cfg,
        )
        .unwrap_err();
        assert!(
            matches!(err, crate::Error::NonFiniteTerm("recon_x")),
            "{err}"
        );
    }

    #[test]
    fn f32_model_runs() {
        let cfg = ModelConfig::plant_synth();
        let p = JlvaeParams::<f32>::init(&cfg, 1).unwrap();
        let x = DenseMatrix::<f32>::filled(3, 28, 0.5);
        let c = DenseMatrix::<f32>::filled(3, 38, 0.5);
        let lb = loss_at_mean(&p, &x, &c, &cfg).unwrap();
        assert!(lb.total.is_finite());
        let lb64 = loss_at_mean(&p.cast::<f64>(), &x.cast(), &c.cast(), &cfg).unwrap();
        assert!((lb.total as f64 - lb64.total).abs() < 1e-4 * lb64.total.abs().max(1.0));
    }
}
