//! JSON checkpoints.
//!
//! Floats are written as shortest round-trip decimals (the representation
//! that parses back to the identical `f64`), so save/load is value-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JlvaeParams, ModelConfig, NET_NAMES};
use crate::numerics::{Activation, DenseMatrix, Mlp, MlpLayer};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const FLOAT_ENCODING: &str = "shortest-roundtrip-decimal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub float_encoding: String,
    pub model_config: ModelConfig,
    pub preprocess_fingerprint: Option<String>,
    pub mlps: BTreeMap<String, Vec<LayerRecord>>,
}

impl Checkpoint {
    pub fn new(
        config: &ModelConfig,
        params: &JlvaeParams<f64>,
        preprocess_fingerprint: Option<String>,
    ) -> Self {
        let mlps = NET_NAMES
            .iter()
            .zip(params.nets())
            .map(|(name, net)| {
                let layers = net
                    .layers()
                    .iter()
                    .map(|l| LayerRecord {
                        rows: l.weights.rows(),
                        cols: l.weights.cols(),
                        weights: l.weights.as_slice().to_vec(),
                        bias: l.bias.clone(),
                        activation: l.activation,
                    })
                    .collect();
                (name.to_string(), layers)
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            float_encoding: FLOAT_ENCODING.to_string(),
            model_config: config.clone(),
            preprocess_fingerprint,
            mlps,
        }
    }

    pub fn params(&self) -> Result<JlvaeParams<f64>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let net = |name: &str| -> Result<Mlp<f64>> {
            let records = self
                .mlps
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks network `{name}`")))?;
            let layers = records
                .iter()
                .map(|r| {
                    let w = DenseMatrix::new(r.rows, r.cols, r.weights.clone())?;
                    MlpLayer::new(w, r.bias.clone(), r.activation)
                })
                .collect::<Result<Vec<_>>>()?;
            Mlp::new(layers)
        };
        let params = JlvaeParams {
            recognizer_x: net(NET_NAMES[0])?,
            recognizer_c: net(NET_NAMES[1])?,
            generator_x: net(NET_NAMES[2])?,
            generator_c: net(NET_NAMES[3])?,
        };
        if !params.matches(&self.model_config) {
            return Err(Error::Data(
                "checkpoint networks do not match its model_config".into(),
            ));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
