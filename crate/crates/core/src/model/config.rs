use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-row reconstruction penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconLoss {
    /// Euclidean norm `‖v − v̂‖₂`.
    #[default]
    L2Norm,
    /// `½‖v − v̂‖₂²`, the unit-variance Gaussian negative log-likelihood up
    /// to a constant.
    SquaredL2,
}

/// Shape and objective hyperparameters of a joint latent model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim_x: usize,
    pub dim_c: usize,
    pub latent_x: usize,
    pub latent_c: usize,
    pub recognizer_x_hidden: Vec<usize>,
    pub recognizer_c_hidden: Vec<usize>,
    pub generator_x_hidden: Vec<usize>,
    pub generator_c_hidden: Vec<usize>,
    pub l1_lambda: f64,
    pub mc_samples_train: usize,
    #[serde(default)]
    pub recon_loss: ReconLoss,
}

impl ModelConfig {
    /// Network-intrusion layout: behavioural recognizer `dim_x → 58 → 32 → 2·4`,
    /// contextual recognizer `dim_x+dim_c → 40 → 22 → 2·4`, generators mirrored.
    pub fn kdd99(dim_x: usize, dim_c: usize) -> Self {
        Self {
            dim_x,
            dim_c,
            latent_x: 4,
            latent_c: 4,
            recognizer_x_hidden: vec![58, 32],
            recognizer_c_hidden: vec![40, 22],
            generator_x_hidden: vec![32, 58],
            generator_c_hidden: vec![22, 40],
            l1_lambda: 1e-5,
            mc_samples_train: 1,
            recon_loss: ReconLoss::L2Norm,
        }
    }

    /// Pump-station layout: 28 behavioural and 38 contextual attributes.
    /// Uses the squared loss; the plain norm lets the behavioural latent
    /// collapse on this data.
    pub fn plant_synth() -> Self {
        Self {
            dim_x: 28,
            dim_c: 38,
            latent_x: 5,
            latent_c: 2,
            recognizer_x_hidden: vec![20, 10],
            recognizer_c_hidden: vec![20, 10],
            generator_x_hidden: vec![10, 20],
            generator_c_hidden: vec![4, 7],
            l1_lambda: 1e-5,
            mc_samples_train: 1,
            recon_loss: ReconLoss::SquaredL2,
        }
    }

    /// Looks up a named preset; the kdd99 layout needs the data widths.
    pub fn preset(name: &str, dim_x: usize, dim_c: usize) -> Result<Self> {
        match name {
            "kdd99" => Ok(Self::kdd99(dim_x, dim_c)),
            "plant_synth" => {
                let mut cfg = Self::plant_synth();
                cfg.dim_x = dim_x;
                cfg.dim_c = dim_c;
                Ok(cfg)
            }
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim_x", self.dim_x),
            ("dim_c", self.dim_c),
            ("latent_x", self.latent_x),
            ("latent_c", self.latent_c),
            ("mc_samples_train", self.mc_samples_train),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let hidden = [
            &self.recognizer_x_hidden,
            &self.recognizer_c_hidden,
            &self.generator_x_hidden,
            &self.generator_c_hidden,
        ];
        if hidden.iter().any(|h| h.contains(&0)) {
            return Err(Error::InvalidConfig(
                "hidden widths must be at least 1".into(),
            ));
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return Err(Error::InvalidConfig(
                "l1_lambda must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn recognizer_x_widths(&self) -> Vec<usize> {
        widths(self.dim_x, &self.recognizer_x_hidden, 2 * self.latent_x)
    }

    pub(crate) fn recognizer_c_widths(&self) -> Vec<usize> {
        widths(
            self.dim_x + self.dim_c,
            &self.recognizer_c_hidden,
            2 * self.latent_c,
        )
    }

    pub(crate) fn generator_x_widths(&self) -> Vec<usize> {
        widths(
            self.latent_x + self.latent_c,
            &self.generator_x_hidden,
            self.dim_x,
        )
    }

    pub(crate) fn generator_c_widths(&self) -> Vec<usize> {
        widths(self.latent_c, &self.generator_c_hidden, self.dim_c)
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kdd_widths() {
        let cfg = ModelConfig::kdd99(65, 45);
        assert_eq!(cfg.recognizer_x_widths(), vec![65, 58, 32, 8]);
        assert_eq!(cfg.recognizer_c_widths(), vec![110, 40, 22, 8]);
        assert_eq!(cfg.generator_x_widths(), vec![8, 32, 58, 65]);
        assert_eq!(cfg.generator_c_widths(), vec![4, 22, 40, 45]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_zero_counts_and_negative_lambda() {
        let mut cfg = ModelConfig::kdd99(65, 45);
        cfg.latent_c = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::kdd99(65, 45);
        cfg.l1_lambda = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::kdd99(65, 45);
        cfg.generator_c_hidden = vec![3, 0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ModelConfig::plant_synth()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }
}
