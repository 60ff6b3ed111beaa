use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use jlvae::data::{
    apply_preprocess, filter_labels, fit_preprocess, load_dataset, parse_kdd_csv, save_dataset,
    synth_generate, train_val_split, DatasetManifest, PreparedDataset, Schema, KDD_PAPER_ANOMALIES,
    KDD_PAPER_NORMALS, KDD_PAPER_TOTAL,
};
use jlvae::io::write_atomic;
use jlvae::metrics::MetricSummary;
use jlvae::model::{Checkpoint, JlvaeParams, ModelConfig};
use jlvae::robustness::{paper_suite, run_protocol, table_to_csv, ProtocolConfig};
use jlvae::scoring::{
    calibrate_threshold, recon_error_score, recon_probability_score, ScoreMethod, ScoreReport,
};
use jlvae::training::{train, TrainHistory};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const EVAL_FILE: &str = "eval_report.json";
pub const ROBUSTNESS_TABLE: &str = "robustness_table.csv";
pub const ROBUSTNESS_FILE: &str = "robustness.json";

pub fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("missing {what}"))
}

pub fn load(dir: &Path) -> Result<(PreparedDataset, DatasetManifest)> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<(ModelConfig, JlvaeParams<f64>)> {
    let ck =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let params = ck.params()?;
    Ok((ck.model_config, params))
}

fn check_widths(cfg: &ModelConfig, ds: &PreparedDataset) -> Result<()> {
    if (cfg.dim_x, cfg.dim_c) != (ds.dim_x(), ds.dim_c()) {
        bail!(
            "checkpoint expects {}+{} columns, dataset has {}+{}",
            cfg.dim_x,
            cfg.dim_c,
            ds.dim_x(),
            ds.dim_c()
        );
    }
    Ok(())
}

pub fn score_with(
    params: &JlvaeParams<f64>,
    ds: &PreparedDataset,
    method: ScoreMethod,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(match method {
        ScoreMethod::ReconError => recon_error_score(params, &ds.x, &ds.c)?,
        ScoreMethod::ReconProbability => {
            recon_probability_score(params, &ds.x, &ds.c, samples, seed)?
        }
    })
}

/// Holds out `val_fraction` of the rows (stratified when labelled) and
/// trains on the rest.
pub fn fit_model(
    ds: &PreparedDataset,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(ModelConfig, JlvaeParams<f64>, TrainHistory)> {
    let model = cfg.model_for(ds.dim_x(), ds.dim_c())?;
    let labels = ds.labels.clone().unwrap_or_else(|| vec![false; ds.len()]);
    let (tr, va) = train_val_split(&labels, cfg.val_fraction, seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let (params, history) = train(&ds.select(&tr), &ds.select(&va), &model, &tc)?;
    Ok((model, params, history))
}

pub fn preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let mut mb = ManifestBuilder::start("preprocess", cfg);
    let t = Instant::now();
    let parsed = parse_kdd_csv(input)?;
    if parsed.records.is_empty() {
        bail!(
            "{}: no parsable records ({} malformed line(s))",
            input.display(),
            parsed.rejected.len()
        );
    }
    let rejected = parsed.rejected.len();
    let first_rejected = parsed.rejected.first().cloned();
    let filtered = filter_labels(parsed.records, cfg.preprocess.unknown_labels)?;
    if filtered.records.is_empty() {
        bail!("{}: no records left after label filtering", input.display());
    }
    let spec = fit_preprocess(&filtered.records, &Schema::kdd99())?;
    let ds = apply_preprocess(&spec, &filtered.records, Some(filtered.anomalies.clone()))?;
    mb.stage("prepare", t);

    let pct = |got: usize, want: usize| 100.0 * (got as f64 - want as f64) / want as f64;
    let counts = json!({
        "rows": ds.len(),
        "anomalies": filtered.anomaly_count(),
        "normals": filtered.normal_count(),
        "dim_x": ds.dim_x(),
        "dim_c": ds.dim_c(),
        "reference": {
            "rows": KDD_PAPER_TOTAL,
            "anomalies": KDD_PAPER_ANOMALIES,
            "normals": KDD_PAPER_NORMALS,
        },
        "deviation_pct": {
            "rows": pct(ds.len(), KDD_PAPER_TOTAL),
            "anomalies": pct(filtered.anomaly_count(), KDD_PAPER_ANOMALIES),
            "normals": pct(filtered.normal_count(), KDD_PAPER_NORMALS),
        },
    });
    let mut manifest = DatasetManifest::describe(&ds, "kdd99");
    manifest.preprocess = Some(spec);
    manifest.extra = json!({
        "input_file": input.file_name().map(|f| f.to_string_lossy().into_owned()),
        "malformed_lines": rejected,
        "first_malformed": first_rejected,
        "kept_per_label": filtered.kept_per_label,
        "dropped_per_label": filtered.dropped_per_label,
        "unknown_per_label": filtered.unknown_per_label,
        "counts": counts,
    });
    save_dataset(out, &ds, &manifest)?;
    log::info!(
        "prepared {} rows ({} anomalies), widths {}+{}",
        ds.len(),
        filtered.anomaly_count(),
        ds.dim_x(),
        ds.dim_c()
    );
    for f in ["manifest.json", "X.csv", "C.csv", "labels.csv"] {
        mb.output(f);
    }
    mb.metrics(counts);
    mb.finish(out)?;
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut mb = ManifestBuilder::start("synth", cfg);
    let spec = cfg.synth_spec()?;
    let (ds, _) = synth_generate(&spec, cfg.seed)?;
    let save = |dir: &Path, part: &PreparedDataset, split: &str| -> Result<()> {
        let mut m = DatasetManifest::describe(part, "synth");
        m.synth = Some(spec.clone());
        m.extra = json!({ "seed": cfg.seed, "split": split, "test_fraction": cfg.test_fraction });
        save_dataset(dir, part, &m)?;
        Ok(())
    };
    let mut splits = serde_json::Map::new();
    if cfg.test_fraction > 0.0 {
        let labels = ds.require_labels()?;
        let (tr, te) = train_val_split(labels, cfg.test_fraction, cfg.seed)?;
        for (name, idx) in [("train", tr), ("test", te)] {
            let part = ds.select(&idx);
            save(&out.join(name), &part, name)?;
            splits.insert(
                name.into(),
                json!({ "rows": part.len(), "anomalies": part.anomaly_count() }),
            );
            mb.output(name);
        }
    } else {
        save(out, &ds, "all")?;
        splits.insert(
            "all".into(),
            json!({ "rows": ds.len(), "anomalies": ds.anomaly_count() }),
        );
        mb.output("manifest.json");
    }
    mb.metrics(serde_json::Value::Object(splits));
    mb.finish(out)?;
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let mut mb = ManifestBuilder::start("train", cfg);
    let (ds, dm) = load(data)?;
    mb.input(data, &ds);
    let t = Instant::now();
    let (model, params, history) = fit_model(&ds, cfg, cfg.seed)?;
    mb.stage("train", t);
    mb.stage_values("epochs", history.epochs.iter().map(|e| e.seconds).collect());

    let fp = dm.preprocess.as_ref().map(|p| p.fingerprint());
    Checkpoint::new(&model, &params, fp).save(&out.join(CHECKPOINT_FILE))?;
    write_atomic(&out.join(HISTORY_FILE), history.to_csv().as_bytes())?;
    mb.output(CHECKPOINT_FILE);
    mb.output(HISTORY_FILE);
    mb.metrics(json!({
        "epochs_run": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "stopped_early": history.stopped_early,
        "best_val_total": history.best_val_total(),
        "initial_val": history.initial_val,
        "best_val": history.best_epoch.map(|e| history.epochs[e - 1].val),
    }));
    mb.finish(out)?;
    Ok(())
}

pub fn score(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut mb = ManifestBuilder::start("score", cfg);
    let (model, params) = load_checkpoint(checkpoint)?;
    let (ds, _) = load(data)?;
    check_widths(&model, &ds)?;
    mb.input(data, &ds);
    let opts = &cfg.score;
    let t = Instant::now();
    let scores = score_with(&params, &ds, opts.method, opts.samples, cfg.seed)?;
    mb.stage("score", t);
    let mut report = ScoreReport::new(opts.method, scores);
    if let Some(rate) = opts.target_rate {
        let th = calibrate_threshold(&report.scores, rate)?;
        report = report.with_threshold(th);
    }
    let (samples, seed) = match opts.method {
        ScoreMethod::ReconProbability => (Some(opts.samples), Some(cfg.seed)),
        ScoreMethod::ReconError => (None, None),
    };
    report.save(&out.join(SCORES_FILE), &ds.row_ids, samples, seed)?;
    mb.output(SCORES_FILE);
    mb.output("scores.json");
    let metrics = match &ds.labels {
        Some(l) if ds.anomaly_count() > 0 && ds.anomaly_count() < ds.len() => {
            serde_json::to_value(MetricSummary::evaluate(&report.scores, l)?)?
        }
        _ => serde_json::Value::Null,
    };
    mb.metrics(
        json!({ "flagged": report.flagged(), "threshold": report.threshold, "summary": metrics }),
    );
    mb.finish(out)?;
    Ok(())
}

pub fn robustness(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut mb = ManifestBuilder::start("robustness", cfg);
    let (model, params) = load_checkpoint(checkpoint)?;
    let (ds, _) = load(data)?;
    check_widths(&model, &ds)?;
    mb.input(data, &ds);
    let opts = &cfg.robustness;
    let specs = match &opts.specs {
        Some(s) => s.clone(),
        None => paper_suite(ds.dim_x(), ds.dim_c(), opts.n_rows, cfg.seed),
    };
    let protocol = ProtocolConfig {
        target_rate: opts.target_rate,
        method: opts.method,
        samples: opts.samples,
        seed: cfg.seed,
    };
    let t = Instant::now();
    let outcome = run_protocol(&params, &ds, &specs, &protocol)?;
    mb.stage("protocol", t);
    write_atomic(
        &out.join(ROBUSTNESS_TABLE),
        table_to_csv(&outcome.rows).as_bytes(),
    )?;
    jlvae::io::write_json(&out.join(ROBUSTNESS_FILE), &outcome)?;
    mb.output(ROBUSTNESS_TABLE);
    mb.output(ROBUSTNESS_FILE);
    mb.metrics(json!({
        "threshold": outcome.threshold,
        "test_flagged": outcome.test_flagged,
        "clean_sample_flagged": outcome.clean_sample_flagged,
    }));
    mb.finish(out)?;
    Ok(())
}
