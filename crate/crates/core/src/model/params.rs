use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::numerics::{Activation, Mlp, MlpLayer, Scalar};
use crate::rng::{streams, Rng};
use crate::{Error, Result};

/// Weights of the four networks.
///
/// The recognizers emit `[μ, log σ²]` blocks side by side; the behavioural
/// generator consumes `[z_x, z_c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlvaeParams<T> {
    pub recognizer_x: Mlp<T>,
    pub recognizer_c: Mlp<T>,
    pub generator_x: Mlp<T>,
    pub generator_c: Mlp<T>,
}

/// Gradients share the parameter layout.
pub type JlvaeGrads<T> = JlvaeParams<T>;

/// Stable names used in checkpoints, in the order of [`JlvaeParams::nets`].
pub const NET_NAMES: [&str; 4] = ["recognizer_x", "recognizer_c", "generator_x", "generator_c"];

impl<T: Scalar> JlvaeParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let build = |w: Vec<usize>| Mlp::zeros(&w, Activation::Relu, Activation::Linear);
        Ok(Self {
            recognizer_x: build(config.recognizer_x_widths())?,
            recognizer_c: build(config.recognizer_c_widths())?,
            generator_x: build(config.generator_x_widths())?,
            generator_c: build(config.generator_c_widths())?,
        })
    }

    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = Rng::with_stream(seed, streams::INIT);
        for net in params.nets_mut() {
            for layer in net.layers_mut() {
                let (fan_in, fan_out) = layer.weights.shape();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in layer.weights.as_mut_slice() {
                    *w = T::of(rng.uniform_range(-limit, limit));
                }
            }
        }
        Ok(params)
    }

    pub fn nets(&self) -> [&Mlp<T>; 4] {
        [
            &self.recognizer_x,
            &self.recognizer_c,
            &self.generator_x,
            &self.generator_c,
        ]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp<T>; 4] {
        [
            &mut self.recognizer_x,
            &mut self.recognizer_c,
            &mut self.generator_x,
            &mut self.generator_c,
        ]
    }

    /// Every weight matrix and bias vector, in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for net in self.nets() {
            for layer in net.layers() {
                out.push(layer.weights.as_slice());
                out.push(layer.bias.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for net in self.nets_mut() {
            for layer in net.layers_mut() {
                out.push(layer.weights.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
        }
        out
    }

    /// Zero-valued copy with identical shapes.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    /// All parameters concatenated in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                op: "JlvaeParams::set_flat",
                left: (self.param_count(), 1),
                right: (flat.len(), 1),
            });
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `Σ|w|` over weight matrices of all four networks; biases excluded.
    pub fn weight_l1(&self) -> T {
        self.nets()
            .iter()
            .flat_map(|n| n.layers())
            .map(|l| l.weights.sum_abs())
            .sum()
    }

    /// True when every network's shapes match what `config` prescribes.
    pub fn matches(&self, config: &ModelConfig) -> bool {
        self.recognizer_x.widths() == config.recognizer_x_widths()
            && self.recognizer_c.widths() == config.recognizer_c_widths()
            && self.generator_x.widths() == config.generator_x_widths()
            && self.generator_c.widths() == config.generator_c_widths()
    }

    pub fn latent_x(&self) -> usize {
        self.recognizer_x.output_width() / 2
    }

    pub fn latent_c(&self) -> usize {
        self.recognizer_c.output_width() / 2
    }

    pub fn dim_x(&self) -> usize {
        self.recognizer_x.input_width()
    }

    pub fn dim_c(&self) -> usize {
        self.generator_c.output_width()
    }

    pub fn cast<U: Scalar>(&self) -> JlvaeParams<U> {
        let cast_net = |m: &Mlp<T>| {
            let layers = m
                .layers()
                .iter()
                .map(|l| MlpLayer {
                    weights: l.weights.cast(),
                    bias: l.bias.iter().map(|&b| U::of(b.as_f64())).collect(),
                    activation: l.activation,
                })
                .collect();
            Mlp::new(layers).expect("shapes preserved by cast")
        };
        JlvaeParams {
            recognizer_x: cast_net(&self.recognizer_x),
            recognizer_c: cast_net(&self.recognizer_c),
            generator_x: cast_net(&self.generator_x),
            generator_c: cast_net(&self.generator_c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig::kdd99(65, 45);
        let a = JlvaeParams::<f64>::init(&cfg, 9).unwrap();
        let b = JlvaeParams::<f64>::init(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, JlvaeParams::<f64>::init(&cfg, 10).unwrap());
        for net in a.nets() {
            for l in net.layers() {
                assert!(l.bias.iter().all(|&b| b == 0.0));
                let (i, o) = l.weights.shape();
                let limit = (6.0 / (i + o) as f64).sqrt();
                assert!(l.weights.as_slice().iter().all(|w| w.abs() <= limit));
            }
        }
        assert_eq!(a.recognizer_x.widths(), vec![65, 58, 32, 8]);
        assert!(a.matches(&cfg));
    }

    #[test]
    fn layer_activations() {
        let p = JlvaeParams::<f64>::zeros(&ModelConfig::kdd99(10, 5)).unwrap();
        for net in p.nets() {
            let layers = net.layers();
            let (last, hidden) = layers.split_last().unwrap();
            assert_eq!(last.activation, Activation::Linear);
            assert!(hidden.iter().all(|l| l.activation == Activation::Relu));
        }
    }

    #[test]
    fn flat_round_trip() {
        let cfg = ModelConfig::plant_synth();
        let p = JlvaeParams::<f64>::init(&cfg, 1).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[1.0]).is_err());
    }
}
