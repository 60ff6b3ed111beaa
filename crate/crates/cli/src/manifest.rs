use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use jlvae::data::PreparedDataset;
use serde::Serialize;

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Shape and content digest of one input dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetFingerprint {
    pub path: String,
    pub rows: usize,
    pub dim_x: usize,
    pub dim_c: usize,
    pub anomalies: Option<usize>,
    pub normals: Option<usize>,
    /// Digest of the prepared matrices and labels.
    pub digest: String,
}

impl DatasetFingerprint {
    pub fn of(path: &Path, ds: &PreparedDataset) -> Self {
        let mut bytes = Vec::with_capacity(8 * (ds.x.as_slice().len() + ds.c.as_slice().len()));
        for v in ds.x.as_slice().iter().chain(ds.c.as_slice()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &ds.labels {
            bytes.extend(l.iter().map(|&b| u8::from(b)));
        }
        let anomalies = ds.labels.as_ref().map(|_| ds.anomaly_count());
        Self {
            path: path.display().to_string(),
            rows: ds.len(),
            dim_x: ds.dim_x(),
            dim_c: ds.dim_c(),
            anomalies,
            normals: anomalies.map(|a| ds.len() - a),
            digest: jlvae::io::fingerprint(&bytes),
        }
    }
}

/// Everything needed to rerun a command, plus what it achieved. Only
/// `started_unix` and the `*_seconds` fields vary between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config: RunConfig,
    pub inputs: Vec<DatasetFingerprint>,
    pub outputs: Vec<String>,
    pub metrics: serde_json::Value,
    pub started_unix: f64,
    pub wall_seconds: f64,
    pub stage_seconds: serde_json::Map<String, serde_json::Value>,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().collect(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config: config.clone(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                metrics: serde_json::Value::Null,
                started_unix,
                wall_seconds: 0.0,
                stage_seconds: Default::default(),
            },
        }
    }

    pub fn input(&mut self, path: &Path, ds: &PreparedDataset) {
        self.manifest.inputs.push(DatasetFingerprint::of(path, ds));
    }

    pub fn output(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    pub fn stage(&mut self, name: &str, since: Instant) {
        self.manifest
            .stage_seconds
            .insert(name.to_string(), since.elapsed().as_secs_f64().into());
    }

    pub fn stage_values(&mut self, name: &str, seconds: Vec<f64>) {
        self.manifest
            .stage_seconds
            .insert(name.to_string(), seconds.into());
    }

    pub fn metrics(&mut self, value: serde_json::Value) {
        self.manifest.metrics = value;
    }

    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST_FILE);
        jlvae::io::write_json(&path, &self.manifest)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}
