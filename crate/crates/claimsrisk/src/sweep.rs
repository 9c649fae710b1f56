//! The window × model × strategy experiment grid.
//!
//! Each cell runs cohort → features → stratified split → scaler fit on the
//! training rows → resampling of the training rows → training → evaluation
//! on the untouched test rows. Cells draw every random number from seeds
//! derived from the master seed and their own coordinates, so the report
//! does not depend on scheduling or on the order cells are listed in.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use claimsrisk_core::cohort::FunnelCounts;
use claimsrisk_core::eval::{best_f1_threshold, stratified_split, EvalReport};
use claimsrisk_core::features::ComorbidityMode;
use claimsrisk_core::models::{Hyperparams, ModelKind, TrainedModel};
use claimsrisk_core::rng::derive_seed;
use claimsrisk_core::sampling::{ResampleReport, SamplingConfig, Strategy};
use claimsrisk_core::synth::{generate_synthetic, SynthConfig};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AppError, AppResult};
use crate::io::Dataset;
use crate::output::{write_atomic, write_bytes, write_json};
use crate::pipeline::{load_store, prepare, score, train_model, window_data, TrainSpec, WindowData};
use crate::svg::metric_chart;

/// A resampling strategy, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Resampling(pub Option<Strategy>);

impl Resampling {
    pub const NONE: Resampling = Resampling(None);

    /// `none`, then SM1..SM8.
    pub fn all() -> Vec<Resampling> {
        std::iter::once(Self::NONE).chain(Strategy::ALL.iter().map(|s| Resampling(Some(*s)))).collect()
    }

    pub fn index(self) -> u64 {
        match self.0 {
            None => 0,
            Some(s) => 1 + Strategy::ALL.iter().position(|t| *t == s).unwrap_or(0) as u64,
        }
    }

    pub fn name(self) -> &'static str {
        self.0.map_or("none", Strategy::as_str)
    }
}

impl fmt::Display for Resampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Resampling {
    type Err = AppError;

    fn from_str(s: &str) -> AppResult<Self> {
        if s.trim().eq_ignore_ascii_case("none") {
            return Ok(Self::NONE);
        }
        s.parse::<Strategy>().map(|s| Resampling(Some(s))).map_err(|_| AppError::Usage(format!("unknown strategy {s:?} (expected SM1..SM8 or none)")))
    }
}

impl Serialize for Resampling {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Resampling {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory. The generator seed is derived from the master
    /// seed; any `rng_seed` given here is replaced.
    Synthetic(SynthConfig),
    /// A directory with `claims.csv` and `demographics.csv`.
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Fixed(f64),
    /// Holds out 15% of the training split, trains on the rest, and uses the
    /// threshold maximizing F1 on the held-out rows.
    BestF1Validation,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Fixed(0.5)
    }
}

fn default_windows() -> Vec<u32> {
    vec![6, 12, 18, 24, 30]
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_strategies() -> Vec<Resampling> {
    Resampling::all()
}

fn default_split() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_windows")]
    pub windows: Vec<u32>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Resampling>,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Partial overrides; missing fields keep their defaults.
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub comorbidity_mode: ComorbidityMode,
    #[serde(default)]
    pub threshold: ThresholdRule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> AppResult<()> {
        if self.windows.is_empty() || self.models.is_empty() || self.strategies.is_empty() {
            return Err(AppError::Usage("windows, models and strategies must be non-empty".into()));
        }
        if self.windows.contains(&0) {
            return Err(AppError::Usage("window months must be positive".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(AppError::Usage(format!("split ratio {} must lie in (0, 1)", self.split_ratio)));
        }
        if let ThresholdRule::Fixed(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(AppError::Usage(format!("threshold {t} must lie in [0, 1]")));
            }
        }
        self.hyperparams.sequence.validate()?;
        Ok(())
    }

    /// Cells in canonical order: window ascending, then model kind, then
    /// strategy (none first), duplicates removed.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut windows = self.windows.clone();
        windows.sort_unstable();
        windows.dedup();
        let mut models = self.models.clone();
        models.sort_by_key(|m| model_index(*m));
        models.dedup();
        let mut strategies = self.strategies.clone();
        strategies.sort_by_key(|s| s.index());
        strategies.dedup();
        let mut out = Vec::new();
        for &w in &windows {
            for &m in &models {
                for &s in &strategies {
                    out.push(CellKey { window_months: w, model: m, strategy: s });
                }
            }
        }
        out
    }
}

fn model_index(k: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|m| *m == k).unwrap_or(0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub window_months: u32,
    pub model: ModelKind,
    pub strategy: Resampling,
}

impl CellKey {
    pub fn seed(&self, master: u64) -> u64 {
        derive_seed(master, &[0xCE11, self.window_months as u64, model_index(self.model), self.strategy.index()])
    }
}

/// Seed of the train/test split shared by every cell of a window, so models
/// and strategies are compared on the same test rows.
pub fn split_seed(master: u64, window_months: u32) -> u64 {
    derive_seed(master, &[0x5917, window_months as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok {
        report: EvalReport,
        resample: Option<ResampleReport>,
        train_rows: usize,
        /// Rows after resampling (and after any threshold carve-out).
        fitted_rows: usize,
        test_rows: usize,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub key: CellKey,
    pub seed: u64,
    pub outcome: CellStatus,
}

impl CellResult {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            CellStatus::Ok { report, .. } => Some(report),
            CellStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_months: u32,
    pub funnel: Option<FunnelCounts>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub metric: String,
    #[serde(flatten)]
    pub key: CellKey,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub master_seed: u64,
    pub split_ratio: f64,
    pub threshold: ThresholdRule,
    pub windows: Vec<WindowSummary>,
    pub cells: Vec<CellResult>,
    /// Highest AUROC and highest F1 over successful cells; ties go to the
    /// earlier cell in canonical order.
    pub best: Vec<BestCell>,
}

/// What one cell produced, kept for inspection.
pub struct CellRun {
    pub status: CellStatus,
    pub test: Dataset,
    pub model: TrainedModel,
}

/// Runs one cell on a window's dataset (static or sequence, matching the
/// model kind).
pub fn run_cell_on(ds: &Dataset, key: &CellKey, config: &ExperimentConfig) -> AppResult<CellRun> {
    let seed = key.seed(config.master_seed);
    let (train_idx, test_idx) = stratified_split(&ds.y, config.split_ratio, split_seed(config.master_seed, key.window_months))?;
    let train = ds.select(&train_idx);
    let test = ds.select(&test_idx);
    let spec = TrainSpec { kind: key.model, strategy: key.strategy.0, sampling: config.sampling, hyperparams: config.hyperparams.clone(), seed };
    let (outcome, threshold) = match config.threshold {
        ThresholdRule::Fixed(t) => (train_model(&train, &spec)?, t),
        ThresholdRule::BestF1Validation => {
            let (fit_idx, val_idx) = stratified_split(&train.y, 0.85, derive_seed(seed, &[0x7E5]))?;
            let val = train.select(&val_idx);
            let o = train_model(&train.select(&fit_idx), &spec)?;
            let p = o.model.predict_many(&val.x)?;
            (o, best_f1_threshold(&p, &val.y)?)
        }
    };
    let scored = score(&outcome.model, &test, threshold)?;
    let c = scored.confusion;
    let report = EvalReport {
        auroc: scored.auroc,
        f1: c.f1(),
        precision: c.precision(),
        recall: c.recall(),
        confusion: c,
        threshold,
        model: key.model.as_str().into(),
        strategy: key.strategy.name().into(),
        window_months: key.window_months,
        seed,
    };
    let status = CellStatus::Ok { report, resample: outcome.resample, train_rows: train.len(), fitted_rows: outcome.fitted_rows, test_rows: test.len() };
    Ok(CellRun { status, test, model: outcome.model })
}

fn run_cell(wd: &Result<WindowData, String>, key: &CellKey, config: &ExperimentConfig) -> CellResult {
    let outcome = (|| -> AppResult<CellStatus> {
        let wd = wd.as_ref().map_err(|e| AppError::Data(e.clone()))?;
        let ds = if key.model.is_sequence() {
            match &wd.sequence_ds {
                Some(Ok(ds)) => ds,
                Some(Err(e)) => return Err(AppError::Data(e.clone())),
                None => return Err(AppError::Internal("sequence features were not built".into())),
            }
        } else {
            &wd.static_ds
        };
        Ok(run_cell_on(ds, key, config)?.status)
    })();
    let outcome = outcome.unwrap_or_else(|e| CellStatus::Failed { reason: e.to_string() });
    CellResult { key: *key, seed: key.seed(config.master_seed), outcome }
}

/// Claims for the configured data source.
fn load_data(config: &ExperimentConfig) -> AppResult<crate::pipeline::Prepared> {
    match &config.data {
        DataSource::Synthetic(sc) => {
            let sc = SynthConfig { rng_seed: derive_seed(config.master_seed, &[0xDA7A]), ..sc.clone() };
            let data = generate_synthetic(&sc)?;
            prepare(data.claims, &data.demographics)
        }
        DataSource::Directory(dir) => {
            let store = load_store(dir)?;
            prepare(store.claims, &store.demographics)
        }
    }
}

/// Runs the whole grid on a pool of `jobs` threads (all cores when `None`).
pub fn run_sweep(config: &ExperimentConfig, jobs: Option<usize>) -> AppResult<SweepReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| AppError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| {
        let prepared = load_data(config)?;
        let cells = config.cells();
        let mut windows: Vec<u32> = cells.iter().map(|c| c.window_months).collect();
        windows.dedup();
        let want_seq = cells.iter().any(|c| c.model.is_sequence());
        let data: Vec<Result<WindowData, String>> = windows
            .par_iter()
            .map(|&w| window_data(&prepared.timelines, w, config.comorbidity_mode, want_seq).map_err(|e| e.to_string()))
            .collect();
        let results: Vec<CellResult> = cells
            .par_iter()
            .map(|k| {
                let wi = windows.iter().position(|w| *w == k.window_months).unwrap_or(0);
                let r = run_cell(&data[wi], k, config);
                log::info!("cell {} {} {}: {}", k.window_months, k.model, k.strategy, r.report().map_or("failed".into(), |e| format!("auroc {:.4}", e.auroc)));
                r
            })
            .collect();
        let summaries = windows
            .iter()
            .zip(&data)
            .map(|(&w, d)| match d {
                Ok(d) => WindowSummary { window_months: w, funnel: Some(d.funnel), error: None },
                Err(e) => WindowSummary { window_months: w, funnel: None, error: Some(e.clone()) },
            })
            .collect();
        let best = best_cells(&results);
        Ok(SweepReport { master_seed: config.master_seed, split_ratio: config.split_ratio, threshold: config.threshold, windows: summaries, cells: results, best })
    })
}

fn best_cells(cells: &[CellResult]) -> Vec<BestCell> {
    let mut out = Vec::new();
    for (metric, get) in [("auroc", (|r: &EvalReport| r.auroc) as fn(&EvalReport) -> f64), ("f1", |r: &EvalReport| r.f1)] {
        let mut best: Option<(&CellResult, f64)> = None;
        for c in cells {
            if let Some(r) = c.report() {
                let v = get(r);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
        }
        if let Some((c, v)) = best {
            out.push(BestCell { metric: metric.into(), key: c.key, value: v });
        }
    }
    out
}

pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes `sweep.json`, `sweep.csv`, window-by-model tables and one AUROC
/// and one F1 chart per strategy. Returns the paths written.
pub fn write_sweep_outputs(report: &SweepReport, out_dir: &Path) -> AppResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let json = out_dir.join(SWEEP_JSON);
    write_json(&json, report)?;
    written.push(json);

    let csv_path = out_dir.join(SWEEP_CSV);
    write_atomic(&csv_path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "window_months", "model", "strategy", "seed", "status", "auroc", "f1", "precision", "recall", "tp", "fp", "tn", "fn", "threshold", "train_rows",
            "fitted_rows", "test_rows", "created", "removed", "best", "failure_reason",
        ])?;
        for c in &report.cells {
            let marks: Vec<&str> = report.best.iter().filter(|b| b.key == c.key).map(|b| b.metric.as_str()).collect();
            let mut rec = vec![c.key.window_months.to_string(), c.key.model.to_string(), c.key.strategy.to_string(), c.seed.to_string()];
            match &c.outcome {
                CellStatus::Ok { report: r, resample, train_rows, fitted_rows, test_rows } => {
                    let k = &r.confusion;
                    rec.extend([
                        "ok".into(),
                        r.auroc.to_string(),
                        r.f1.to_string(),
                        r.precision.to_string(),
                        r.recall.to_string(),
                        k.tp.to_string(),
                        k.fp.to_string(),
                        k.tn.to_string(),
                        k.fn_.to_string(),
                        r.threshold.to_string(),
                        train_rows.to_string(),
                        fitted_rows.to_string(),
                        test_rows.to_string(),
                        resample.as_ref().map_or("0".into(), |s| s.created.to_string()),
                        resample.as_ref().map_or("0".into(), |s| s.removed.to_string()),
                        marks.join(";"),
                        String::new(),
                    ]);
                }
                CellStatus::Failed { reason } => {
                    rec.push("failed".into());
                    rec.extend(std::iter::repeat_n(String::new(), 15));
                    rec.push(reason.clone());
                }
            }
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| AppError::io(&csv_path, e))?;
        Ok(())
    })?;
    written.push(csv_path.clone());

    let mut windows: Vec<u32> = report.cells.iter().map(|c| c.key.window_months).collect();
    windows.dedup();
    let mut models: Vec<ModelKind> = Vec::new();
    let mut strategies: Vec<Resampling> = Vec::new();
    for c in &report.cells {
        if !models.contains(&c.key.model) {
            models.push(c.key.model);
        }
        if !strategies.contains(&c.key.strategy) {
            strategies.push(c.key.strategy);
        }
    }
    let lookup = |w: u32, m: ModelKind, s: Resampling| report.cells.iter().find(|c| c.key == CellKey { window_months: w, model: m, strategy: s }).and_then(|c| c.report());

    type Metric = fn(&EvalReport) -> f64;
    let metrics: [(&str, &str, Metric); 2] = [("auroc", "AUROC", |r| r.auroc), ("f1", "F1", |r| r.f1)];
    for (slug, label, get) in metrics {
        // Rows model x strategy, columns windows.
        let table = out_dir.join(format!("table_{slug}.csv"));
        write_atomic(&table, |w| {
            let mut wr = csv::Writer::from_writer(w);
            let mut header = vec!["model".to_string(), "strategy".into()];
            header.extend(windows.iter().map(|w| format!("{w}_months")));
            wr.write_record(&header)?;
            for &m in &models {
                for &s in &strategies {
                    let mut rec = vec![m.to_string(), s.to_string()];
                    rec.extend(windows.iter().map(|&w| opt(lookup(w, m, s).map(get))));
                    wr.write_record(&rec)?;
                }
            }
            wr.flush().map_err(|e| AppError::io(&table, e))?;
            Ok(())
        })?;
        written.push(table);
        for &s in &strategies {
            let series: Vec<(String, Vec<Option<f64>>)> =
                models.iter().map(|&m| (m.to_string(), windows.iter().map(|&w| lookup(w, m, s).map(get)).collect())).collect();
            let svg = metric_chart(&format!("{label} by observation window (strategy {s})"), label, &windows, &series);
            let path = out_dir.join("plots").join(format!("{slug}_{s}.svg"));
            write_bytes(&path, svg.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
