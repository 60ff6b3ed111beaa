//! Dense matrices and small fully-connected networks with exact
//! reverse-mode gradients.

mod matrix;
mod mlp;
mod scalar;

pub use matrix::DenseMatrix;
pub use mlp::{affine_forward, Activation, ForwardCache, LayerGrad, Mlp, MlpLayer};
pub use scalar::Scalar;

/// Central-difference gradient estimate of `f` at `params`.
pub fn finite_diff_grad<T, F>(mut f: F, params: &[T], eps: T) -> Vec<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    assert!(eps > T::zero(), "finite_diff_grad: eps must be positive");
    let two = T::one() + T::one();
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        grad.push((up - down) / (two * eps));
    }
    grad
}
