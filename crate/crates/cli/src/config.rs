//! Run configuration: one JSON document per run.
//!
//! Precedence, lowest first: built-in defaults for the preset, the `--config`
//! file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use jlvae::data::{SynthSpec, UnknownLabelPolicy};
use jlvae::model::ModelConfig;
use jlvae::robustness::CorruptionSpec;
use jlvae::scoring::ScoreMethod;
use jlvae::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[value(name = "kdd99")]
    Kdd99,
    #[default]
    #[value(name = "plant_synth")]
    PlantSynth,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Kdd99 => "kdd99",
            Preset::PlantSynth => "plant_synth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessOptions {
    pub unknown_labels: UnknownLabelPolicy,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            unknown_labels: UnknownLabelPolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreOptions {
    pub method: ScoreMethod,
    /// Monte Carlo draws for `recon_probability`.
    pub samples: usize,
    /// Calibrate a threshold flagging this share of rows; none leaves the
    /// flag column empty.
    pub target_rate: Option<f64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            method: ScoreMethod::ReconError,
            samples: 10,
            target_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub k_folds: usize,
    /// Stratified subsample drawn before folding; none uses every row.
    pub subsample: Option<usize>,
    pub iforest_trees: usize,
    pub iforest_subsample: usize,
    pub lof_k: usize,
    /// LOF runs on at most this many rows of each test fold.
    pub lof_max_rows: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k_folds: 5,
            subsample: None,
            iforest_trees: 100,
            iforest_subsample: 256,
            lof_k: 20,
            lof_max_rows: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessOptions {
    pub target_rate: f64,
    pub n_rows: usize,
    pub method: ScoreMethod,
    pub samples: usize,
    /// Custom suite; none runs the fifteen named specs.
    pub specs: Option<Vec<CorruptionSpec>>,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        Self {
            target_rate: 0.01,
            n_rows: 10_000,
            method: ScoreMethod::ReconError,
            samples: 10,
            specs: None,
        }
    }
}

/// Input locations; flags fill these when the file leaves them empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    /// Raw KDDCup99 CSV.
    pub input: Option<PathBuf>,
    /// Prepared dataset directory.
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Preset,
    /// Seeds every stage; `train.seed` is overwritten with it.
    pub seed: u64,
    /// Full layout; none derives the preset layout from the data widths.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    /// Share of the training rows held out for early stopping.
    pub val_fraction: f64,
    pub data: DataPaths,
    /// Generator settings for `synth`; none uses the preset's.
    pub synth: Option<SynthSpec>,
    /// Share of synthetic rows written to the `test` split.
    pub test_fraction: f64,
    pub preprocess: PreprocessOptions,
    pub score: ScoreOptions,
    pub eval: EvalOptions,
    pub robustness: RobustnessOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_preset(Preset::default())
    }
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let train = match preset {
            Preset::Kdd99 => TrainConfig::default(),
            Preset::PlantSynth => TrainConfig {
                max_epochs: 150,
                patience: 10,
                ..TrainConfig::default()
            },
        };
        Self {
            preset,
            seed: 0,
            model: None,
            train,
            val_fraction: 0.15,
            data: DataPaths::default(),
            synth: None,
            test_fraction: 0.2,
            preprocess: PreprocessOptions::default(),
            score: ScoreOptions::default(),
            eval: EvalOptions::default(),
            robustness: RobustnessOptions::default(),
        }
    }

    /// Builds the config for a run: preset defaults, overlaid by the file's
    /// keys, overlaid by the flags.
    pub fn resolve(file: Option<&Path>, preset: Option<Preset>, seed: Option<u64>) -> Result<Self> {
        let user = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let v: serde_json::Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                if !v.is_object() {
                    bail!("config {} must be a JSON object", p.display());
                }
                v
            }
            None => serde_json::Value::Object(Default::default()),
        };
        let file_preset = match user.get("preset") {
            Some(v) => {
                Some(serde_json::from_value::<Preset>(v.clone()).context("config key `preset`")?)
            }
            None => None,
        };
        let preset = preset.or(file_preset).unwrap_or_default();
        let mut merged = serde_json::to_value(Self::for_preset(preset))?;
        merge(&mut merged, user);
        let mut cfg: Self = serde_json::from_value(merged).context("invalid run config")?;
        cfg.preset = preset;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            bail!("val_fraction must lie in (0, 1), got {}", self.val_fraction);
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            bail!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            );
        }
        let rate_ok = |r: f64| r > 0.0 && r < 1.0;
        if !rate_ok(self.robustness.target_rate)
            || self.score.target_rate.is_some_and(|r| !rate_ok(r))
        {
            bail!("target rates must lie in (0, 1)");
        }
        if self.eval.k_folds < 2 {
            bail!("eval.k_folds must be at least 2");
        }
        if self.eval.iforest_trees == 0 || self.eval.iforest_subsample < 2 || self.eval.lof_k == 0 {
            bail!("eval: iforest_trees >= 1, iforest_subsample >= 2 and lof_k >= 1 required");
        }
        if self.score.samples == 0 || self.robustness.samples == 0 {
            bail!("Monte Carlo sample counts must be >= 1");
        }
        Ok(())
    }

    /// The model layout for data of the given widths.
    pub fn model_for(&self, dim_x: usize, dim_c: usize) -> Result<ModelConfig> {
        let cfg = match &self.model {
            Some(m) => m.clone(),
            None => ModelConfig::preset(self.preset.name(), dim_x, dim_c)?,
        };
        if (cfg.dim_x, cfg.dim_c) != (dim_x, dim_c) {
            bail!(
                "model expects {}+{} columns, data has {dim_x}+{dim_c}",
                cfg.dim_x,
                cfg.dim_c
            );
        }
        Ok(cfg)
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        match (&self.synth, self.preset) {
            (Some(s), _) => Ok(s.clone()),
            (None, Preset::PlantSynth) => Ok(SynthSpec::plant_synth()),
            (None, Preset::Kdd99) => {
                bail!("the kdd99 preset has no synthetic generator; set `synth` in the config")
            }
        }
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
