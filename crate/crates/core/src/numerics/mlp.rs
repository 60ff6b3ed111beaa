use serde::{Deserialize, Serialize};

use super::{DenseMatrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::Linear => v,
        }
    }

    /// Derivative at the pre-activation `v`. The Relu subgradient at 0 is 0.
    #[inline]
    pub fn derivative<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }
}

/// Dense layer `act(x · W + b)` with `W` of shape `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer<T> {
    pub weights: DenseMatrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> MlpLayer<T> {
    pub fn new(weights: DenseMatrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::ShapeMismatch {
                op: "MlpLayer::new",
                left: weights.shape(),
                right: (1, bias.len()),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weights: DenseMatrix::zeros(fan_in, fan_out),
            bias: vec![T::zero(); fan_out],
            activation,
        }
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn pre_activation(&self, input: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if input.cols() != self.fan_in() {
            return Err(Error::ShapeMismatch {
                op: "affine_forward",
                left: input.shape(),
                right: self.weights.shape(),
            });
        }
        let mut z = input.matmul(&self.weights)?;
        for r in 0..z.rows() {
            for (v, &b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// `act(input · W + b)` for a whole batch.
pub fn affine_forward<T: Scalar>(
    input: &DenseMatrix<T>,
    layer: &MlpLayer<T>,
) -> Result<DenseMatrix<T>> {
    let act = layer.activation;
    Ok(layer.pre_activation(input)?.map(|v| act.apply(v)))
}

/// Feed-forward network with a fixed layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    layers: Vec<MlpLayer<T>>,
}

/// Activations recorded by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<DenseMatrix<T>>,
    pre_activations: Vec<DenseMatrix<T>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.rows())
    }
}

/// Gradient of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: DenseMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<MlpLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "an mlp needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::ShapeMismatch {
                    op: "Mlp::new",
                    left: pair[0].weights.shape(),
                    right: pair[1].weights.shape(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::ShapeMismatch {
                    op: "Mlp::new",
                    left: l.weights.shape(),
                    right: (1, l.bias.len()),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Zero-initialised network with the given unit counts; hidden layers
    /// use `hidden`, the last layer `output`.
    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig(
                "an mlp needs an input and an output width".into(),
            ));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                MlpLayer::zeros(widths[i], widths[i + 1], act)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[MlpLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [MlpLayer<T>] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Unit counts from input to output.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.fan_out()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Output only, without recording a cache.
    pub fn predict(&self, input: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut h = affine_forward(input, &self.layers[0])?;
        for layer in &self.layers[1..] {
            h = affine_forward(&h, layer)?;
        }
        Ok(h)
    }

    pub fn forward(&self, input: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&h)?;
            let act = layer.activation;
            let out = z.map(|v| act.apply(v));
            inputs.push(h);
            pre_activations.push(z);
            h = out;
        }
        let cache = ForwardCache {
            inputs,
            pre_activations,
            shapes: self.layers.iter().map(|l| l.weights.shape()).collect(),
        };
        Ok((h, cache))
    }

    /// Reverse-mode pass: gradients of `Σ ⟨grad_output, output⟩` with respect
    /// to every layer's parameters and to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &DenseMatrix<T>,
    ) -> Result<(Vec<LayerGrad<T>>, DenseMatrix<T>)> {
        let shapes_match = cache.shapes.len() == self.layers.len()
            && cache
                .shapes
                .iter()
                .zip(&self.layers)
                .all(|(&s, l)| s == l.weights.shape());
        if !shapes_match {
            return Err(Error::StaleCache);
        }
        let expected = (cache.batch_size(), self.output_width());
        if grad_output.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "mlp_backward",
                left: grad_output.shape(),
                right: expected,
            });
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Linear {
                delta = delta.zip_map(&cache.pre_activations[i], |g, z| g * act.derivative(z))?;
            }
            let gw = cache.inputs[i].t_matmul(&delta)?;
            let mut gb = vec![T::zero(); layer.fan_out()];
            for r in 0..delta.rows() {
                for (b, &d) in gb.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            delta = delta.matmul_t(&layer.weights)?;
            grads.push(LayerGrad {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        Ok((grads, delta))
    }
}
