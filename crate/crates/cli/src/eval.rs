//! Stratified k-fold comparison of the model's two scores against
//! Isolation Forest and LOF.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Result};
use jlvae::baselines::{iforest_fit, iforest_score, lof_score, LofConfig};
use jlvae::data::{
    apply_preprocess, filter_labels, fit_preprocess, parse_kdd_csv, stratified_kfold,
    stratified_subsample, PreparedDataset, RawRecord, Schema,
};
use jlvae::metrics::MetricSummary;
use jlvae::rng::derive_seed;
use jlvae::scoring::ScoreMethod;
use serde::Serialize;

use crate::commands::{fit_model, load, score_with, EVAL_FILE};
use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;

pub const METHODS: [&str; 4] = [
    "jlvae_recon_error",
    "jlvae_recon_probability",
    "iforest",
    "lof",
];

#[derive(Debug, Clone, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub test_anomalies: usize,
    /// Test rows LOF was run on.
    pub lof_rows: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub results: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub preset: String,
    /// `raw` when preprocessing was refit per fold, `prepared` otherwise.
    pub source: String,
    pub rows: usize,
    pub anomalies: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean: BTreeMap<String, MetricSummary>,
}

enum Source {
    Prepared(PreparedDataset),
    Raw(Vec<RawRecord>),
}

impl Source {
    /// Training and test sets for one fold. Raw records get preprocessing
    /// fitted on the training rows only.
    fn split(
        &self,
        labels: &[bool],
        train: &[usize],
        test: &[usize],
    ) -> Result<(PreparedDataset, PreparedDataset)> {
        match self {
            Source::Prepared(ds) => Ok((ds.select(train), ds.select(test))),
            Source::Raw(records) => {
                let pick = |idx: &[usize]| -> (Vec<RawRecord>, Vec<bool>) {
                    (
                        idx.iter().map(|&i| records[i].clone()).collect(),
                        idx.iter().map(|&i| labels[i]).collect(),
                    )
                };
                let (tr_rec, tr_lab) = pick(train);
                let (te_rec, te_lab) = pick(test);
                let spec = fit_preprocess(&tr_rec, &Schema::kdd99())?;
                let mut tr = apply_preprocess(&spec, &tr_rec, Some(tr_lab))?;
                let mut te = apply_preprocess(&spec, &te_rec, Some(te_lab))?;
                tr.row_ids = train.iter().map(|&i| i as u64).collect();
                te.row_ids = test.iter().map(|&i| i as u64).collect();
                Ok((tr, te))
            }
        }
    }
}

pub fn eval(
    cfg: &RunConfig,
    data: Option<&Path>,
    input: Option<&Path>,
    out: &Path,
) -> Result<EvalReport> {
    let mut mb = ManifestBuilder::start("eval", cfg);
    let opts = &cfg.eval;
    let (mut source, mut labels) = match (data, input) {
        (Some(dir), None) => {
            let (ds, _) = load(dir)?;
            mb.input(dir, &ds);
            let labels = ds.require_labels()?.to_vec();
            (Source::Prepared(ds), labels)
        }
        (None, Some(csv)) => {
            let parsed = parse_kdd_csv(csv)?;
            let f = filter_labels(parsed.records, cfg.preprocess.unknown_labels)?;
            (Source::Raw(f.records), f.anomalies)
        }
        _ => bail!("eval needs exactly one of --data (prepared dataset) or --input (raw KDD CSV)"),
    };
    if let Some(n) = opts.subsample {
        let idx = stratified_subsample(&labels, n, cfg.seed)?;
        source = match source {
            Source::Prepared(ds) => Source::Prepared(ds.select(&idx)),
            Source::Raw(r) => Source::Raw(idx.iter().map(|&i| r[i].clone()).collect()),
        };
        labels = idx.iter().map(|&i| labels[i]).collect();
    }
    let folds = stratified_kfold(&labels, opts.k_folds, cfg.seed)?;

    let mut reports = Vec::with_capacity(folds.len());
    let mut fold_seconds = Vec::new();
    for (f, test_idx) in folds.iter().enumerate() {
        let t = Instant::now();
        let train_idx: Vec<usize> = {
            let mut v: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, x)| x.iter().copied())
                .collect();
            v.sort_unstable();
            v
        };
        let seed = derive_seed(cfg.seed, f as u64);
        let (train_ds, test_ds) = source.split(&labels, &train_idx, test_idx)?;
        let test_labels = test_ds.require_labels()?.to_vec();
        let (_, params, history) = fit_model(&train_ds, cfg, seed)?;

        let mut results = BTreeMap::new();
        for (name, method) in [
            (METHODS[0], ScoreMethod::ReconError),
            (METHODS[1], ScoreMethod::ReconProbability),
        ] {
            let s = score_with(&params, &test_ds, method, cfg.score.samples, seed)?;
            results.insert(name.to_string(), MetricSummary::evaluate(&s, &test_labels)?);
        }

        let psi = opts.iforest_subsample.min(train_ds.len());
        let forest = iforest_fit(&train_ds.joined(), opts.iforest_trees, psi, seed)?;
        let s = iforest_score(&forest, &test_ds.joined());
        results.insert(
            METHODS[2].to_string(),
            MetricSummary::evaluate(&s, &test_labels)?,
        );

        let lof_idx: Vec<usize> = if test_ds.len() > opts.lof_max_rows {
            stratified_subsample(&test_labels, opts.lof_max_rows, seed)?
        } else {
            (0..test_ds.len()).collect()
        };
        let lof_set = test_ds.select(&lof_idx);
        let s = lof_score(&lof_set.joined(), &LofConfig { k: opts.lof_k })?;
        results.insert(
            METHODS[3].to_string(),
            MetricSummary::evaluate(&s, lof_set.require_labels()?)?,
        );

        log::info!(
            "fold {}: roc {:.4} prc {:.4} (recon error)",
            f + 1,
            results[METHODS[0]].roc_auc,
            results[METHODS[0]].prc_auc
        );
        reports.push(FoldReport {
            fold: f + 1,
            train_rows: train_ds.len(),
            test_rows: test_ds.len(),
            test_anomalies: test_ds.anomaly_count(),
            lof_rows: lof_idx.len(),
            epochs_run: history.epochs.len(),
            best_epoch: history.best_epoch,
            results,
        });
        fold_seconds.push(t.elapsed().as_secs_f64());
    }

    let mean = METHODS
        .iter()
        .map(|&m| {
            let rows: Vec<MetricSummary> = reports.iter().map(|r| r.results[m]).collect();
            (
                m.to_string(),
                MetricSummary::mean(&rows).expect("k >= 2 folds"),
            )
        })
        .collect();
    let report = EvalReport {
        preset: cfg.preset.name().to_string(),
        source: match source {
            Source::Prepared(_) => "prepared".into(),
            Source::Raw(_) => "raw".into(),
        },
        rows: labels.len(),
        anomalies: labels.iter().filter(|&&l| l).count(),
        k_folds: opts.k_folds,
        seed: cfg.seed,
        folds: reports,
        mean,
    };
    jlvae::io::write_json(&out.join(EVAL_FILE), &report)?;
    mb.output(EVAL_FILE);
    mb.stage_values("folds", fold_seconds);
    mb.metrics(serde_json::to_value(&report.mean)?);
    mb.finish(out)?;
    Ok(report)
}
