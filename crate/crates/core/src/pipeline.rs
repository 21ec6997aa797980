//! The end-to-end workflow behind the command-line tool.
//!
//! Every command reads and writes inside the run directory `out_dir`:
//!
//! ```text
//! config.toml                 resolved configuration
//! data/                       split CSVs + manifest.json            (generate)
//! models/<id>.json            model documents                        (train)
//! metrics/point_metrics.*     per model x split point metrics        (train)
//! selection.json              ranking, best model, failures          (train)
//! conformal/                  calibration summary, interval CSVs,
//!                             comparison of SCP / QR / CQR           (conformal)
//! evaluation.json             metric recomputation check             (evaluate)
//! report/                     tables and plot data                   (report)
//! ```
//!
//! Outputs contain no timestamps, so two runs with the same config are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ModelEntry, RunConfig, SelectionMetric};
use crate::conformal::{extended_floats, fit_cqr, write_intervals_csv, ConformalCalibrator, CoverageMode, CqrCalibrator, PredictionInterval};
use crate::dataset::{
    bundle_dir, ecdf_curve, generate_synthetic, ks_statistic, load_csv, split, BundleManifest, Dataset, SplitBundle,
};
use crate::error::{Error, Result};
use crate::metrics::{write_reports_csv, MetricReport};
use crate::models::{FittedModel, ModelDocument, Regressor};

/// Split used to rank the pool.
pub const SELECTION_SPLIT: &str = "calibration";

pub const DOUBLE_USE_NOTE: &str = "the calibration split ranks the pool and then calibrates the selected model; \
     the conformal guarantee assumes the calibration data played no part in choosing the model, so reported \
     coverage for the selected model may be slightly optimistic";

pub const NO_REFIT_NOTE: &str = "the selected model is not refit on train + calibration; calibration is only valid \
     for the exact model that produced the calibration scores";

const INTERVAL_SPLITS: [&str; 2] = ["test", "extrapolation"];

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self) -> PathBuf {
        bundle_dir(&self.root)
    }

    pub fn model(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.json"))
    }

    pub fn point_metrics(&self) -> PathBuf {
        self.root.join("metrics").join("point_metrics.json")
    }

    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn conformal_dir(&self) -> PathBuf {
        self.root.join("conformal")
    }

    pub fn conformal_summary(&self) -> PathBuf {
        self.conformal_dir().join("summary.json")
    }

    pub fn interval_metrics(&self) -> PathBuf {
        self.conformal_dir().join("interval_metrics.json")
    }

    pub fn cqr(&self) -> PathBuf {
        self.conformal_dir().join("cqr.json")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// `path` relative to the run directory, with '/' separators.
    fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: DeserializeOwned>(layout: &Layout, path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifacts(vec![layout.relative(path)]));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_config(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    write_text(&layout.config(), &cfg.to_toml()?)
}

/// Builds the split bundle described by the config without touching the run directory.
pub fn build_bundle(cfg: &RunConfig) -> Result<(SplitBundle, BundleManifest)> {
    match &cfg.data {
        DataSource::Synthetic(s) => {
            let bundle = generate_synthetic(s)?;
            let manifest = BundleManifest::describe(&bundle, "synthetic", s.seed, None, false);
            Ok((bundle, manifest))
        }
        DataSource::CsvSplits {
            n_inputs,
            train,
            calibration,
            test,
            extrapolation,
        } => {
            let train = load_csv(train, *n_inputs)?;
            let extrapolation = match extrapolation {
                Some(p) => load_csv(p, *n_inputs)?,
                None => train.empty_like(),
            };
            let bundle = SplitBundle::new(
                train,
                load_csv(calibration, *n_inputs)?,
                load_csv(test, *n_inputs)?,
                extrapolation,
            )?;
            let manifest = BundleManifest::describe(&bundle, "csv_splits", cfg.seed, None, false);
            Ok((bundle, manifest))
        }
        DataSource::CsvSingle {
            path,
            n_inputs,
            fractions,
            shuffle,
        } => {
            let all = load_csv(path, *n_inputs)?;
            let bundle = split(&all, *fractions, cfg.seed, *shuffle)?;
            let manifest = BundleManifest::describe(&bundle, "csv_single", cfg.seed, Some(*fractions), *shuffle);
            Ok((bundle, manifest))
        }
    }
}

/// Writes the four split CSVs and their manifest under `out_dir/data`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<SplitBundle> {
    let layout = Layout::new(&cfg.out_dir);
    let (bundle, manifest) = build_bundle(cfg)?;
    create_dir(layout.root())?;
    bundle.write_dir(layout.data(), &manifest)?;
    write_config(&layout, cfg)?;
    log::info!(
        "wrote {} train / {} calibration / {} test / {} extrapolation samples to {}",
        bundle.train.len(),
        bundle.calibration.len(),
        bundle.test.len(),
        bundle.extrapolation.len(),
        layout.data().display()
    );
    Ok(bundle)
}

pub fn load_bundle(layout: &Layout) -> Result<SplitBundle> {
    let manifest = layout.data().join("manifest.json");
    if !manifest.is_file() {
        return Err(Error::MissingArtifacts(vec![layout.relative(&manifest)]));
    }
    Ok(SplitBundle::read_dir(layout.data())?.0)
}

fn load_model(layout: &Layout, id: &str) -> Result<ModelDocument> {
    let path = layout.model(id);
    if !path.is_file() {
        return Err(Error::MissingArtifacts(vec![layout.relative(&path)]));
    }
    ModelDocument::load(path)
}

/// Point metrics of `model` on every nonempty split.
fn point_reports(model: &FittedModel, bundle: &SplitBundle) -> Result<Vec<MetricReport>> {
    let names = bundle.train.output_names();
    bundle
        .parts()
        .iter()
        .filter(|(_, d)| !d.is_empty())
        .map(|(split, d)| {
            let pred = model.predict_dataset(d)?;
            MetricReport::point(&model.id, model.spec.label(), split, names, &d.outputs(), &pred)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    pub method: String,
    /// Selection metric on the calibration split.
    pub value: f64,
    /// The same metric on the test split, for reference only.
    pub test_value: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub id: String,
    pub error: String,
}

/// The selection manifest written by [`cmd_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub metric: String,
    pub split: String,
    pub best: String,
    /// Successful models, best first.
    pub ranking: Vec<RankEntry>,
    pub failures: Vec<FitFailure>,
    pub notes: Vec<String>,
    pub config: RunConfig,
}

fn metric_value(r: &MetricReport, metric: SelectionMetric) -> f64 {
    match metric {
        SelectionMetric::Rmse => r.rmse,
        SelectionMetric::Mae => r.mae,
    }
}

/// Fits the pool, writes model documents and point metrics, and ranks the
/// models on the calibration split. A failing model is reported and skipped.
pub fn cmd_train(cfg: &RunConfig) -> Result<Selection> {
    let layout = Layout::new(&cfg.out_dir);
    let bundle = load_bundle(&layout)?;
    if bundle.calibration.is_empty() {
        return Err(Error::Data("model selection needs a nonempty calibration split".into()));
    }

    let fits: Vec<(&ModelEntry, Result<FittedModel>)> = cfg
        .models
        .par_iter()
        .map(|m| (m, FittedModel::fit(&m.id, &m.spec, &bundle.train, cfg.standardize)))
        .collect();

    create_dir(&layout.root().join("models"))?;
    let mut reports = Vec::new();
    let mut ranking = Vec::new();
    let mut failures = Vec::new();
    for (entry, fit) in fits {
        let model = match fit {
            Ok(m) => m,
            Err(e) => {
                log::error!("model {:?} failed to fit: {e}", entry.id);
                failures.push(FitFailure {
                    id: entry.id.clone(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        if !model.converged {
            log::warn!("model {:?} stopped before meeting its convergence tolerance", model.id);
        }
        let model_reports = point_reports(&model, &bundle)?;
        let find = |split: &str| model_reports.iter().find(|r| r.split == split);
        ranking.push(RankEntry {
            id: model.id.clone(),
            method: model.spec.label().to_string(),
            value: find(SELECTION_SPLIT).map(|r| metric_value(r, cfg.selection_metric)).unwrap_or(f64::NAN),
            test_value: find("test").map(|r| metric_value(r, cfg.selection_metric)),
            converged: model.converged,
        });
        let doc = ModelDocument::new(
            model,
            bundle.train.input_names().to_vec(),
            bundle.train.output_names().to_vec(),
        );
        doc.save(layout.model(&entry.id))?;
        reports.extend(model_reports);
    }
    if ranking.is_empty() {
        return Err(Error::Fit(format!("every model in the pool failed ({} models)", failures.len())));
    }
    ranking.sort_by(|a, b| a.value.total_cmp(&b.value));

    write_json(&layout.point_metrics(), &reports)?;
    write_reports_csv(layout.point_metrics().with_extension("csv"), &reports)?;
    let selection = Selection {
        metric: cfg.selection_metric.name().to_string(),
        split: SELECTION_SPLIT.to_string(),
        best: ranking[0].id.clone(),
        ranking,
        failures,
        notes: vec![DOUBLE_USE_NOTE.to_string(), NO_REFIT_NOTE.to_string()],
        config: cfg.clone(),
    };
    write_json(&layout.selection(), &selection)?;
    write_config(&layout, cfg)?;
    log::info!("selected {:?} by calibration {}", selection.best, selection.metric);
    Ok(selection)
}

/// Calibration summary written by [`cmd_conformal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalSummary {
    pub model_id: String,
    pub alpha: f64,
    pub mode: CoverageMode,
    pub n_cal: usize,
    /// Calibrated half-widths per output; "inf" when the calibration set is too small.
    #[serde(with = "extended_floats")]
    pub quantiles: Vec<f64>,
    pub unbounded: bool,
    #[serde(with = "extended_floats")]
    pub cqr_corrections: Vec<f64>,
    pub methods: Vec<String>,
    pub files: Vec<String>,
}

fn interval_reports(
    model_id: &str,
    method: &str,
    split: &str,
    d: &Dataset,
    intervals: &[PredictionInterval],
    alpha: f64,
) -> Result<MetricReport> {
    let centers: Vec<Vec<f64>> = intervals.iter().map(|iv| iv.center.clone()).collect();
    let truth = d.outputs();
    MetricReport::point(model_id, method, split, d.output_names(), &truth, &centers)?.with_intervals(&truth, intervals, alpha)
}

/// The interval sets of one method on the test and extrapolation splits.
type MethodIntervals = Vec<(&'static str, Vec<PredictionInterval>)>;

fn scp_intervals(doc: &ModelDocument, bundle: &SplitBundle) -> Result<MethodIntervals> {
    let cal = doc
        .calibrator
        .as_ref()
        .ok_or_else(|| Error::Calibration(format!("model {:?} has no calibrator", doc.model.id)))?;
    INTERVAL_SPLITS
        .iter()
        .filter_map(|s| bundle.get(s).filter(|d| !d.is_empty()).map(|d| (*s, d)))
        .map(|(s, d)| Ok((s, cal.predict_intervals(&doc.model, d)?)))
        .collect()
}

fn cqr_intervals(cqr: &CqrCalibrator, bundle: &SplitBundle, raw: bool) -> Result<MethodIntervals> {
    INTERVAL_SPLITS
        .iter()
        .filter_map(|s| bundle.get(s).filter(|d| !d.is_empty()).map(|d| (*s, d)))
        .map(|(s, d)| {
            let ivs = if raw {
                cqr.predict_raw_intervals(d)?
            } else {
                cqr.predict_intervals(d)?
            };
            Ok((s, ivs))
        })
        .collect()
}

/// Interval reports for every method, in SCP, QR, CQR order.
fn all_interval_reports(
    layout: &Layout,
    bundle: &SplitBundle,
    model_id: &str,
    alpha: f64,
    with_quantile: bool,
) -> Result<(Vec<MetricReport>, Vec<(String, MethodIntervals)>)> {
    let doc = load_model(layout, model_id)?;
    let mut methods = vec![("SCP".to_string(), model_id.to_string(), scp_intervals(&doc, bundle)?)];
    if with_quantile {
        let cqr: CqrCalibrator = read_json(layout, &layout.cqr())?;
        methods.push(("QR".into(), "qr".into(), cqr_intervals(&cqr, bundle, true)?));
        methods.push(("CQR".into(), "cqr".into(), cqr_intervals(&cqr, bundle, false)?));
    }
    let mut reports = Vec::new();
    for (method, id, sets) in &methods {
        for (split, ivs) in sets {
            let d = bundle.get(split).expect("interval split");
            reports.push(interval_reports(id, method, split, d, ivs, alpha)?);
        }
    }
    Ok((reports, methods.into_iter().map(|(m, _, s)| (m, s)).collect()))
}

/// Calibrates `model_id` (the selected model by default) with split conformal
/// prediction, stores the calibrator in its model document, and writes interval
/// CSVs and metrics. With `compare_quantile`, raw QR and CQR runs are added.
pub fn cmd_conformal(cfg: &RunConfig, model_id: Option<&str>) -> Result<ConformalSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let bundle = load_bundle(&layout)?;
    let id = match model_id {
        Some(id) => id.to_string(),
        None => read_json::<Selection>(&layout, &layout.selection())?.best,
    };
    let mut doc = load_model(&layout, &id)?;
    if bundle.calibration.is_empty() {
        return Err(Error::Calibration("calibration split is empty".into()));
    }
    let calibrator = ConformalCalibrator::calibrate_with_mode(&doc.model, &bundle.calibration, cfg.alpha, cfg.conformal_mode)?;
    let quantiles = calibrator.quantiles().to_vec();
    let n_cal = calibrator.n_cal();
    doc.calibrator = Some(calibrator);
    doc.save(layout.model(&id))?;

    let dir = layout.conformal_dir();
    create_dir(&dir)?;
    let mut cqr_corrections = Vec::new();
    if cfg.compare_quantile {
        let cqr = fit_cqr(&bundle.train, &bundle.calibration, cfg.alpha, &cfg.quantile, cfg.standardize)?;
        cqr_corrections = cqr.corrections().to_vec();
        write_json(&layout.cqr(), &cqr)?;
    }

    let (reports, methods) = all_interval_reports(&layout, &bundle, &id, cfg.alpha, cfg.compare_quantile)?;
    let mut files = Vec::new();
    for (method, sets) in &methods {
        for (split, ivs) in sets {
            let path = dir.join(format!("{}_{split}_intervals.csv", method.to_lowercase()));
            write_intervals_csv(&path, bundle.train.output_names(), ivs, bundle.get(split))?;
            files.push(layout.relative(&path));
        }
    }
    write_json(&layout.interval_metrics(), &reports)?;
    let comparison = dir.join("comparison.csv");
    write_reports_csv(&comparison, &reports)?;
    files.push(layout.relative(&layout.interval_metrics()));
    files.push(layout.relative(&comparison));
    if cfg.compare_quantile {
        files.push(layout.relative(&layout.cqr()));
    }

    let summary = ConformalSummary {
        model_id: id,
        alpha: cfg.alpha,
        mode: cfg.conformal_mode,
        n_cal,
        unbounded: quantiles.iter().any(|q| q.is_infinite()),
        quantiles,
        cqr_corrections,
        methods: methods.iter().map(|(m, _)| m.clone()).collect(),
        files,
    };
    write_json(&layout.conformal_summary(), &summary)?;
    for r in &reports {
        if let Some(iv) = &r.intervals {
            log::info!("{} {}: coverage {:.4}, mean Winkler {:.4}", r.method, r.split, iv.coverage, iv.mean_winkler);
        }
    }
    Ok(summary)
}

/// Result of recomputing stored metrics from the serialized models and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

fn compare_reports(kind: &str, stored: &[MetricReport], fresh: &[MetricReport], out: &mut Vec<String>) -> usize {
    for r in stored {
        let found = fresh
            .iter()
            .find(|f| f.model_id == r.model_id && f.method == r.method && f.split == r.split);
        match found {
            Some(f) if f == r => {}
            Some(_) => out.push(format!("{kind} {} {} {}: values differ", r.method, r.model_id, r.split)),
            None => out.push(format!("{kind} {} {} {}: could not be recomputed", r.method, r.model_id, r.split)),
        }
    }
    stored.len()
}

/// Recomputes every stored metric and checks it matches exactly.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    let layout = Layout::new(&cfg.out_dir);
    let bundle = load_bundle(&layout)?;
    let stored: Vec<MetricReport> = read_json(&layout, &layout.point_metrics())?;
    let selection: Selection = read_json(&layout, &layout.selection())?;

    let mut fresh = Vec::new();
    for entry in &selection.ranking {
        let doc = load_model(&layout, &entry.id)?;
        fresh.extend(point_reports(&doc.model, &bundle)?);
    }
    let mut mismatches = Vec::new();
    let mut checked = compare_reports("point", &stored, &fresh, &mut mismatches);

    if layout.conformal_summary().is_file() {
        let summary: ConformalSummary = read_json(&layout, &layout.conformal_summary())?;
        let stored: Vec<MetricReport> = read_json(&layout, &layout.interval_metrics())?;
        let with_quantile = summary.methods.iter().any(|m| m == "CQR");
        let (fresh, _) = all_interval_reports(&layout, &bundle, &summary.model_id, summary.alpha, with_quantile)?;
        checked += compare_reports("interval", &stored, &fresh, &mut mismatches);
    }

    let evaluation = Evaluation { checked, mismatches };
    write_json(&layout.evaluation(), &evaluation)?;
    if !evaluation.mismatches.is_empty() {
        return Err(Error::Data(format!(
            "{} of {} stored metrics do not recompute: {}",
            evaluation.mismatches.len(),
            checked,
            evaluation.mismatches.join("; ")
        )));
    }
    log::info!("{checked} stored metrics recomputed exactly");
    Ok(evaluation)
}

/// Consolidated report written by [`cmd_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub selected: String,
    pub selection_metric: String,
    pub alpha: f64,
    pub point_metrics: Vec<MetricReport>,
    pub interval_metrics: Vec<MetricReport>,
    /// Two-sample KS statistic between the training inputs and each other split, per input.
    pub ks_vs_train: BTreeMap<String, BTreeMap<String, f64>>,
    pub notes: Vec<String>,
    pub files: Vec<String>,
}

fn write_ecdf_csv(path: &Path, bundle: &SplitBundle, j: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split", "value", "ecdf"])?;
    for (name, d) in bundle.parts() {
        if d.is_empty() {
            continue;
        }
        for (v, f) in ecdf_curve(&d.input_column(j))? {
            w.write_record([name.to_string(), format!("{v:?}"), format!("{f:?}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_positions_csv(path: &Path, d: &Dataset, models: &[(String, Vec<Vec<f64>>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    for name in d.output_names() {
        header.push(format!("{name}_truth"));
        for (id, _) in models {
            header.push(format!("{name}_{id}"));
        }
    }
    w.write_record(&header)?;
    for (i, s) in d.samples().iter().enumerate() {
        let mut row = vec![i.to_string()];
        for (k, x) in s.x.iter().enumerate() {
            row.push(format!("{x:?}"));
            for (_, pred) in models {
                row.push(format!("{:?}", pred[i][k]));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the table CSVs, plot data and `report/report.json`.
/// Fails with a list of every missing upstream artifact.
pub fn cmd_report(cfg: &RunConfig) -> Result<Report> {
    let layout = Layout::new(&cfg.out_dir);
    let required = [
        layout.data().join("manifest.json"),
        layout.selection(),
        layout.point_metrics(),
        layout.conformal_summary(),
        layout.interval_metrics(),
    ];
    let missing: Vec<String> = required.iter().filter(|p| !p.is_file()).map(|p| layout.relative(p)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let bundle = load_bundle(&layout)?;
    let selection: Selection = read_json(&layout, &layout.selection())?;
    let point_metrics: Vec<MetricReport> = read_json(&layout, &layout.point_metrics())?;
    let interval_metrics: Vec<MetricReport> = read_json(&layout, &layout.interval_metrics())?;
    let summary: ConformalSummary = read_json(&layout, &layout.conformal_summary())?;
    let model_files: Vec<PathBuf> = selection.ranking.iter().map(|r| layout.model(&r.id)).collect();
    let missing: Vec<String> = model_files.iter().filter(|p| !p.is_file()).map(|p| layout.relative(p)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }

    let dir = layout.report_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();

    let point_table = dir.join("table_point_metrics.csv");
    write_reports_csv(&point_table, &point_metrics)?;
    files.push(point_table);
    let interval_table = dir.join("table_intervals.csv");
    write_reports_csv(&interval_table, &interval_metrics)?;
    files.push(interval_table);

    let mut ks_vs_train = BTreeMap::new();
    for (j, input) in bundle.train.input_names().iter().enumerate() {
        let path = dir.join(format!("ecdf_{input}.csv"));
        write_ecdf_csv(&path, &bundle, j)?;
        files.push(path);
        let train = bundle.train.input_column(j);
        let mut row = BTreeMap::new();
        for (name, d) in bundle.parts().into_iter().skip(1).filter(|(_, d)| !d.is_empty()) {
            row.insert(name.to_string(), ks_statistic(&train, &d.input_column(j))?);
        }
        ks_vs_train.insert(input.clone(), row);
    }

    let docs = selection
        .ranking
        .iter()
        .map(|r| load_model(&layout, &r.id))
        .collect::<Result<Vec<_>>>()?;
    let selected = load_model(&layout, &summary.model_id)?;
    let scp = scp_intervals(&selected, &bundle)?;
    for split in INTERVAL_SPLITS {
        let Some(d) = bundle.get(split).filter(|d| !d.is_empty()) else {
            continue;
        };
        let preds = docs
            .iter()
            .map(|doc| Ok((doc.model.id.clone(), doc.model.predict_dataset(d)?)))
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(format!("positions_{split}.csv"));
        write_positions_csv(&path, d, &preds)?;
        files.push(path);
        if let Some((_, ivs)) = scp.iter().find(|(s, _)| *s == split) {
            let path = dir.join(format!("bands_{split}.csv"));
            write_intervals_csv(&path, d.output_names(), ivs, Some(d))?;
            files.push(path);
        }
    }

    let report_path = dir.join("report.json");
    let mut file_names: Vec<String> = files.iter().map(|p| layout.relative(p)).collect();
    file_names.push(layout.relative(&report_path));
    let report = Report {
        selected: selection.best.clone(),
        selection_metric: selection.metric.clone(),
        alpha: summary.alpha,
        point_metrics,
        interval_metrics,
        ks_vs_train,
        notes: selection.notes.clone(),
        files: file_names,
    };
    write_json(&report_path, &report)?;
    Ok(report)
}

/// Runs generate, train, conformal, evaluate and report in sequence.
pub fn run_all(cfg: &RunConfig) -> Result<Report> {
    cmd_generate(cfg)?;
    cmd_train(cfg)?;
    cmd_conformal(cfg, None)?;
    cmd_evaluate(cfg)?;
    cmd_report(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_pool, Overrides};
    use crate::dataset::{SplitSizes, SynthConfig};
    use crate::models::{BoostParams, ForestParams, ModelSpec};

    fn small_config(out: &Path) -> RunConfig {
        let synth = SynthConfig {
            sizes: SplitSizes {
                train: 120,
                calibration: 60,
                test: 40,
                extrapolation: 40,
            },
            ..Default::default()
        };
        let mut models = default_pool();
        for m in &mut models {
            match &mut m.spec {
                ModelSpec::Forest(p) => *p = ForestParams { n_trees: 10, ..p.clone() },
                ModelSpec::Boosted(p) => *p = BoostParams { n_trees: 30, ..p.clone() },
                _ => {}
            }
        }
        RunConfig {
            out_dir: out.to_path_buf(),
            data: DataSource::Synthetic(synth),
            models,
            quantile: BoostParams { n_trees: 30, ..Default::default() },
            ..Default::default()
        }
        .resolve(&Overrides::default())
        .unwrap()
    }

    #[test]
    fn full_run_writes_every_listed_file() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        let report = run_all(&cfg).unwrap();
        for f in &report.files {
            assert!(tmp.path().join(f).is_file(), "{f}");
        }
        let methods: Vec<&str> = report.interval_metrics.iter().map(|r| r.method.as_str()).collect();
        for m in ["SCP", "QR", "CQR"] {
            assert!(methods.contains(&m));
        }
        assert_eq!(report.point_metrics.len(), 4 * 4);
    }

    #[test]
    fn report_lists_missing_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        match cmd_report(&cfg).unwrap_err() {
            Error::MissingArtifacts(list) => {
                assert!(list.contains(&"data/manifest.json".to_string()));
                assert!(list.contains(&"selection.json".to_string()));
                assert_eq!(list.len(), 5);
            }
            other => panic!("{other:?}"),
        }
        cmd_generate(&cfg).unwrap();
        match cmd_report(&cfg).unwrap_err() {
            Error::MissingArtifacts(list) => assert_eq!(list.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failing_model_does_not_abort_pool() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small_config(tmp.path());
        // a leaf size larger than half the training set cannot be fitted
        cfg.models.push(ModelEntry::new(
            "huge_leaf",
            ModelSpec::Forest(ForestParams { n_trees: 2, min_samples_leaf: 1000, ..Default::default() }),
        ));
        cmd_generate(&cfg).unwrap();
        let sel = cmd_train(&cfg).unwrap();
        assert_eq!(sel.failures.len(), 1);
        assert_eq!(sel.failures[0].id, "huge_leaf");
        assert_eq!(sel.ranking.len(), 4);
        assert!(!layout_has_model(tmp.path(), "huge_leaf"));
    }

    fn layout_has_model(root: &Path, id: &str) -> bool {
        Layout::new(root).model(id).is_file()
    }

    #[test]
    fn conformal_needs_a_trained_model() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        cmd_generate(&cfg).unwrap();
        assert!(matches!(cmd_conformal(&cfg, Some("gb")), Err(Error::MissingArtifacts(_))));
    }

    #[test]
    fn tampered_metrics_fail_evaluation() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        cmd_generate(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        let layout = Layout::new(tmp.path());
        assert!(cmd_evaluate(&cfg).unwrap().mismatches.is_empty());
        let mut stored: Vec<MetricReport> = read_json(&layout, &layout.point_metrics()).unwrap();
        stored[0].rmse += 1e-9;
        write_json(&layout.point_metrics(), &stored).unwrap();
        let err = cmd_evaluate(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn relative_paths_use_forward_slashes() {
        let layout = Layout::new("/tmp/run");
        assert_eq!(layout.relative(&layout.model("gb")), "models/gb.json");
    }
}
