use serde::{Deserialize, Serialize};

use super::{JlvaeGrads, JlvaeParams, ModelConfig, ReconLoss};
use crate::numerics::{DenseMatrix, ForwardCache, LayerGrad, Mlp, Scalar};
use crate::{Error, Result};

/// Bounds applied to emitted log-variances before exponentiation.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Diagonal-Gaussian posterior parameters for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent<T> {
    pub mu: DenseMatrix<T>,
    pub log_var: DenseMatrix<T>,
}

impl<T: Scalar> GaussianLatent<T> {
    pub fn new(mu: DenseMatrix<T>, log_var: DenseMatrix<T>) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::ShapeMismatch {
                op: "GaussianLatent::new",
                left: mu.shape(),
                right: log_var.shape(),
            });
        }
        Ok(Self { mu, log_var })
    }

    /// Splits a recognizer head `[μ | log σ²]` and clamps the log-variances.
    fn from_head(head: &DenseMatrix<T>) -> Self {
        let k = head.cols() / 2;
        let (mu, raw) = head.split_cols(k);
        let (lo, hi) = (T::of(LOG_VAR_MIN), T::of(LOG_VAR_MAX));
        let log_var = raw.map(|v| v.max(lo).min(hi));
        Self { mu, log_var }
    }

    pub fn rows(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }
}

/// The summands of the per-batch objective (row means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub kl_zx: T,
    pub kl_zc: T,
    pub recon_x: T,
    pub recon_c: T,
    pub l1: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    fn check_finite(&self) -> Result<()> {
        let terms = [
            ("kl_zx", self.kl_zx),
            ("kl_zc", self.kl_zc),
            ("recon_x", self.recon_x),
            ("recon_c", self.recon_c),
            ("l1", self.l1),
            ("total", self.total),
        ];
        match terms.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFiniteTerm(name)),
            None => Ok(()),
        }
    }

    /// The first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        match self.check_finite() {
            Err(Error::NonFiniteTerm(name)) => Some(name),
            _ => None,
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            kl_zx: self.kl_zx * k,
            kl_zc: self.kl_zc * k,
            recon_x: self.recon_x * k,
            recon_c: self.recon_c * k,
            l1: self.l1 * k,
            total: self.total * k,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            kl_zx: self.kl_zx + o.kl_zx,
            kl_zc: self.kl_zc + o.kl_zc,
            recon_x: self.recon_x + o.recon_x,
            recon_c: self.recon_c + o.recon_c,
            l1: self.l1 + o.l1,
            total: self.total + o.total,
        }
    }
}

fn head<T: Scalar>(
    net: &Mlp<T>,
    input: &DenseMatrix<T>,
    expected: usize,
) -> Result<DenseMatrix<T>> {
    if input.cols() != expected {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: input.shape(),
            right: (expected, net.output_width()),
        });
    }
    net.predict(input)
}

/// Posterior `q(z_x | x)`.
pub fn encode_behavioral<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
) -> Result<GaussianLatent<T>> {
    let h = head(&params.recognizer_x, x, params.dim_x())?;
    Ok(GaussianLatent::from_head(&h))
}

/// Posterior `q(z_c | x, c)`; the recognizer sees `[x, c]`.
pub fn encode_contextual<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
) -> Result<GaussianLatent<T>> {
    check_pair(params, x, c)?;
    let xc = x.hcat(c)?;
    let h = head(&params.recognizer_c, &xc, params.dim_x() + params.dim_c())?;
    Ok(GaussianLatent::from_head(&h))
}

/// `z = μ + exp(½ log σ²) ⊙ ε`.
pub fn reparameterize<T: Scalar>(
    latent: &GaussianLatent<T>,
    eps: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let half = T::of(0.5);
    let sigma = latent.log_var.map(|lv| (half * lv).exp());
    let noise = sigma.zip_map(eps, |s, e| s * e)?;
    latent.mu.zip_map(&noise, |m, n| m + n)
}

/// `ĉ` from `z_c`.
pub fn decode_contextual<T: Scalar>(
    params: &JlvaeParams<T>,
    z_c: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if z_c.cols() != params.latent_c() {
        return Err(Error::ShapeMismatch {
            op: "decode_contextual",
            left: z_c.shape(),
            right: (params.latent_c(), params.dim_c()),
        });
    }
    params.generator_c.predict(z_c)
}

/// `x̂` from the cross-linked latent `[z_x, z_c]`.
pub fn decode_behavioral<T: Scalar>(
    params: &JlvaeParams<T>,
    z_x: &DenseMatrix<T>,
    z_c: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if z_x.cols() != params.latent_x()
        || z_c.cols() != params.latent_c()
        || z_x.rows() != z_c.rows()
    {
        return Err(Error::ShapeMismatch {
            op: "decode_behavioral",
            left: z_x.shape(),
            right: z_c.shape(),
        });
    }
    params.generator_x.predict(&z_x.hcat(z_c)?)
}

/// Batch mean of `KL(q ‖ N(0, I))`.
pub fn kl_std_normal<T: Scalar>(latent: &GaussianLatent<T>) -> T {
    let n = latent.rows();
    if n == 0 {
        return T::zero();
    }
    let half = T::of(0.5);
    let mut total = T::zero();
    for (&m, &lv) in latent.mu.as_slice().iter().zip(latent.log_var.as_slice()) {
        total += half * (m * m + lv.exp() - T::one() - lv);
    }
    total / T::of(n as f64)
}

fn check_pair<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
) -> Result<()> {
    if x.rows() != c.rows() || x.cols() != params.dim_x() || c.cols() != params.dim_c() {
        return Err(Error::ShapeMismatch {
            op: "x/c batch",
            left: x.shape(),
            right: c.shape(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct SampleCache<T> {
    eps_x: DenseMatrix<T>,
    eps_c: DenseMatrix<T>,
    gen_x: ForwardCache<T>,
    gen_c: ForwardCache<T>,
    resid_x: DenseMatrix<T>,
    resid_c: DenseMatrix<T>,
    norms_x: Vec<T>,
    norms_c: Vec<T>,
}

/// Intermediate values kept by [`loss_forward`] for [`loss_backward`].
#[derive(Debug, Clone)]
pub struct LossCache<T> {
    rec_x: ForwardCache<T>,
    rec_c: ForwardCache<T>,
    head_x: DenseMatrix<T>,
    head_c: DenseMatrix<T>,
    latent_x: GaussianLatent<T>,
    latent_c: GaussianLatent<T>,
    samples: Vec<SampleCache<T>>,
    recon_loss: ReconLoss,
    l1_lambda: T,
    rows: usize,
}

fn recon_value<T: Scalar>(kind: ReconLoss, norm: T) -> T {
    match kind {
        ReconLoss::L2Norm => norm,
        ReconLoss::SquaredL2 => T::of(0.5) * norm * norm,
    }
}

/// Evaluates the joint objective on one batch.
///
/// `eps_x` and `eps_c` hold one noise matrix per Monte Carlo sample; both
/// lists must have the same non-zero length. Reductions are means over rows.
pub fn loss_forward<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    eps_x: &[DenseMatrix<T>],
    eps_c: &[DenseMatrix<T>],
    config: &ModelConfig,
) -> Result<(LossBreakdown<T>, LossCache<T>)> {
    check_pair(params, x, c)?;
    if eps_x.is_empty() || eps_x.len() != eps_c.len() {
        return Err(Error::InvalidConfig(format!(
            "need matching non-empty noise lists, got {} and {}",
            eps_x.len(),
            eps_c.len()
        )));
    }
    let n = x.rows();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }

    let (head_x, rec_x) = params.recognizer_x.forward(x)?;
    let (head_c, rec_c) = params.recognizer_c.forward(&x.hcat(c)?)?;
    let latent_x = GaussianLatent::from_head(&head_x);
    let latent_c = GaussianLatent::from_head(&head_c);

    let n_t = T::of(n as f64);
    let l_t = T::of(eps_x.len() as f64);
    let kind = config.recon_loss;
    let mut recon_x = T::zero();
    let mut recon_c = T::zero();
    let mut samples = Vec::with_capacity(eps_x.len());
    for (ex, ec) in eps_x.iter().zip(eps_c) {
        let z_x = reparameterize(&latent_x, ex)?;
        let z_c = reparameterize(&latent_c, ec)?;
        let (x_hat, gen_x) = params.generator_x.forward(&z_x.hcat(&z_c)?)?;
        let (c_hat, gen_c) = params.generator_c.forward(&z_c)?;
        let resid_x = x_hat.zip_map(x, |a, b| a - b)?;
        let resid_c = c_hat.zip_map(c, |a, b| a - b)?;
        let norms_x = resid_x.row_norms();
        let norms_c = resid_c.row_norms();
        recon_x += norms_x.iter().map(|&v| recon_value(kind, v)).sum::<T>();
        recon_c += norms_c.iter().map(|&v| recon_value(kind, v)).sum::<T>();
        samples.push(SampleCache {
            eps_x: ex.clone(),
            eps_c: ec.clone(),
            gen_x,
            gen_c,
            resid_x,
            resid_c,
            norms_x,
            norms_c,
        });
    }
    recon_x /= n_t * l_t;
    recon_c /= n_t * l_t;

    let lambda = T::of(config.l1_lambda);
    let kl_zx = kl_std_normal(&latent_x);
    let kl_zc = kl_std_normal(&latent_c);
    let l1 = lambda * params.weight_l1();
    let breakdown = LossBreakdown {
        kl_zx,
        kl_zc,
        recon_x,
        recon_c,
        l1,
        total: kl_zx + kl_zc + recon_x + recon_c + l1,
    };
    breakdown.check_finite()?;

    let cache = LossCache {
        rec_x,
        rec_c,
        head_x,
        head_c,
        latent_x,
        latent_c,
        samples,
        recon_loss: kind,
        l1_lambda: lambda,
        rows: n,
    };
    Ok((breakdown, cache))
}

/// d(recon)/d(v̂) for one sample's residuals, already divided by `N·L`.
fn recon_grad<T: Scalar>(
    kind: ReconLoss,
    resid: &DenseMatrix<T>,
    norms: &[T],
    scale: T,
) -> DenseMatrix<T> {
    let mut g = resid.clone();
    for (r, &norm) in norms.iter().enumerate() {
        let k = match kind {
            ReconLoss::L2Norm if norm > T::zero() => scale / norm,
            ReconLoss::L2Norm => T::zero(),
            ReconLoss::SquaredL2 => scale,
        };
        for v in g.row_mut(r) {
            *v *= k;
        }
    }
    g
}

fn add_layer_grads<T: Scalar>(acc: &mut Vec<LayerGrad<T>>, g: Vec<LayerGrad<T>>) -> Result<()> {
    if acc.is_empty() {
        *acc = g;
        return Ok(());
    }
    for (a, b) in acc.iter_mut().zip(g) {
        a.weights.add_assign(&b.weights)?;
        for (x, y) in a.bias.iter_mut().zip(b.bias) {
            *x += y;
        }
    }
    Ok(())
}

fn write_net<T: Scalar>(net: &mut Mlp<T>, grads: Vec<LayerGrad<T>>) {
    for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
        layer.weights = g.weights;
        layer.bias = g.bias;
    }
}

/// Gradient of the head `[μ | raw log σ²]` from gradients w.r.t. `μ` and
/// the clamped log-variance. The clamp passes gradient only inside its range.
fn head_grad<T: Scalar>(
    head: &DenseMatrix<T>,
    d_mu: &DenseMatrix<T>,
    d_lv: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let k = d_mu.cols();
    let (lo, hi) = (T::of(LOG_VAR_MIN), T::of(LOG_VAR_MAX));
    let mut d_lv = d_lv.clone();
    for r in 0..d_lv.rows() {
        for j in 0..k {
            let raw = head.get(r, k + j);
            if raw < lo || raw > hi {
                d_lv.set(r, j, T::zero());
            }
        }
    }
    d_mu.hcat(&d_lv)
}

/// Exact gradient of `LossBreakdown::total` with respect to every parameter.
pub fn loss_backward<T: Scalar>(
    params: &JlvaeParams<T>,
    cache: &LossCache<T>,
) -> Result<JlvaeGrads<T>> {
    let n = cache.rows;
    let lx = cache.latent_x.dim();
    let lc = cache.latent_c.dim();
    if lx != params.latent_x() || lc != params.latent_c() {
        return Err(Error::StaleCache);
    }
    let n_t = T::of(n as f64);
    let l_t = T::of(cache.samples.len() as f64);
    let half = T::of(0.5);
    let scale = T::one() / (n_t * l_t);

    // KL parts: d/dμ = μ/N, d/d(log σ²) = ½(σ² − 1)/N.
    let kl_mu = |lat: &GaussianLatent<T>| lat.mu.map(|m| m / n_t);
    let kl_lv = |lat: &GaussianLatent<T>| lat.log_var.map(|lv| half * (lv.exp() - T::one()) / n_t);
    let mut d_mu_x = kl_mu(&cache.latent_x);
    let mut d_lv_x = kl_lv(&cache.latent_x);
    let mut d_mu_c = kl_mu(&cache.latent_c);
    let mut d_lv_c = kl_lv(&cache.latent_c);

    let sigma_x = cache.latent_x.log_var.map(|lv| (half * lv).exp());
    let sigma_c = cache.latent_c.log_var.map(|lv| (half * lv).exp());

    let mut g_gen_x = Vec::new();
    let mut g_gen_c = Vec::new();
    for s in &cache.samples {
        let gx = recon_grad(cache.recon_loss, &s.resid_x, &s.norms_x, scale);
        let gc = recon_grad(cache.recon_loss, &s.resid_c, &s.norms_c, scale);
        let (wx, d_in_x) = params.generator_x.backward(&s.gen_x, &gx)?;
        let (wc, d_zc_from_c) = params.generator_c.backward(&s.gen_c, &gc)?;
        add_layer_grads(&mut g_gen_x, wx)?;
        add_layer_grads(&mut g_gen_c, wc)?;

        let (d_zx, d_zc_from_x) = d_in_x.split_cols(lx);
        let d_zc = d_zc_from_x.zip_map(&d_zc_from_c, |a, b| a + b)?;

        // z = μ + σ ε: dz/dμ = 1, dz/d(log σ²) = ½ σ ε.
        d_mu_x.add_assign(&d_zx)?;
        d_mu_c.add_assign(&d_zc)?;
        let dsx = sigma_x.zip_map(&s.eps_x, |sg, e| half * sg * e)?;
        let dsc = sigma_c.zip_map(&s.eps_c, |sg, e| half * sg * e)?;
        d_lv_x.add_assign(&d_zx.zip_map(&dsx, |a, b| a * b)?)?;
        d_lv_c.add_assign(&d_zc.zip_map(&dsc, |a, b| a * b)?)?;
    }

    let gh_x = head_grad(&cache.head_x, &d_mu_x, &d_lv_x)?;
    let gh_c = head_grad(&cache.head_c, &d_mu_c, &d_lv_c)?;
    let (g_rec_x, _) = params.recognizer_x.backward(&cache.rec_x, &gh_x)?;
    let (g_rec_c, _) = params.recognizer_c.backward(&cache.rec_c, &gh_c)?;

    let mut grads = params.zeros_like();
    write_net(&mut grads.recognizer_x, g_rec_x);
    write_net(&mut grads.recognizer_c, g_rec_c);
    write_net(&mut grads.generator_x, g_gen_x);
    write_net(&mut grads.generator_c, g_gen_c);

    let lambda = cache.l1_lambda;
    if lambda > T::zero() {
        for (gnet, pnet) in grads.nets_mut().into_iter().zip(params.nets()) {
            for (gl, pl) in gnet.layers_mut().iter_mut().zip(pnet.layers()) {
                for (g, &w) in gl
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(pl.weights.as_slice())
                {
                    if w > T::zero() {
                        *g += lambda;
                    } else if w < T::zero() {
                        *g -= lambda;
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// Deterministic objective with all noise set to zero (posterior means).
pub fn loss_at_mean<T: Scalar>(
    params: &JlvaeParams<T>,
    x: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    config: &ModelConfig,
) -> Result<LossBreakdown<T>> {
    let ex = DenseMatrix::zeros(x.rows(), params.latent_x());
    let ec = DenseMatrix::zeros(x.rows(), params.latent_c());
    Ok(loss_forward(params, x, c, &[ex], &[ec], config)?.0)
}
