//! The `claimsrisk` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use clap::{Args, Parser, Subcommand, ValueEnum};
use claimsrisk_core::claims::{clean, deduplicate, PatientId};
use claimsrisk_core::cohort::identify_cohort;
use claimsrisk_core::eval::{descriptive_tables, format_p, stratified_split, EvalReport};
use claimsrisk_core::explain::{kernel_explain, mean_abs_shap, render_force_plot, sample_background, tree_shap, KernelConfig, ShapExplanation};
use claimsrisk_core::features::{sequence_dataset, static_dataset, ComorbidityMode, Scaler};
use claimsrisk_core::matrix::Matrix;
use claimsrisk_core::models::{Hyperparams, ModelKind, TrainedModel};
use claimsrisk_core::rng::derive_seed;
use claimsrisk_core::sampling::{apply_strategy, EnnMode, SamplingConfig};
use claimsrisk_core::synth::{generate_synthetic, SynthConfig};
use serde::Serialize;

use crate::error::{AppError, AppResult};
use crate::io::{self, Dataset, FunnelExport};
use crate::manifest::ManifestBuilder;
use crate::model_file::{load_model, save_model, ModelFile, Provenance};
use crate::output::{ensure_dir, read_to_string, write_atomic, write_bytes, write_json};
use crate::pipeline::{self, load_store, prepare, score, train_model, TrainSpec};
use crate::sweep::{run_sweep, write_sweep_outputs, ExperimentConfig, Resampling};

#[derive(Debug, Parser)]
#[command(name = "claimsrisk", version, about = "ESRD risk prediction from administrative claims", propagate_version = true)]
pub struct Cli {
    /// Worker threads; defaults to every available core. Results do not
    /// depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic claims cohort.
    Generate(GenerateArgs),
    /// Read external claims, map codes, deduplicate and clean.
    Ingest(IngestArgs),
    /// Apply the cohort funnel for one observation window.
    Cohort(CohortArgs),
    /// Export static features or sequence tensors for one window.
    Features(FeaturesArgs),
    /// Rebalance a feature file with one of SM1..SM8.
    Resample(ResampleArgs),
    /// Split a feature file, train a model and save it.
    Train(TrainArgs),
    /// Score a saved model on a test file.
    Evaluate(EvaluateArgs),
    /// SHAP force plot for one patient, or a mean |SHAP| summary.
    Explain(ExplainArgs),
    /// Descriptive tables with Welch and chi-squared tests.
    Stats(StatsArgs),
    /// Run the window x model x strategy grid from a config file.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator settings as JSON; omitted fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_patients: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub demographics: PathBuf,
    /// JSON object mapping external codes to event names; canonical names
    /// map to themselves when omitted.
    #[arg(long)]
    pub code_map: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    /// Directory with claims.csv and demographics.csv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub window: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ComorbidityArg {
    CarryForward,
    RawOccurrence,
}

impl From<ComorbidityArg> for ComorbidityMode {
    fn from(a: ComorbidityArg) -> Self {
        match a {
            ComorbidityArg::CarryForward => ComorbidityMode::CarryForward,
            ComorbidityArg::RawOccurrence => ComorbidityMode::RawOccurrence,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("kind").required(true).args(["static_features", "sequence"])))]
pub struct FeaturesArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub window: u32,
    /// CM1..CM10 and CL1..CL17 per patient.
    #[arg(long = "static")]
    pub static_features: bool,
    /// Quarterly tensors for the sequence models.
    #[arg(long)]
    pub sequence: bool,
    #[arg(long, value_enum, default_value = "carry-forward")]
    pub comorbidity_mode: ComorbidityArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnnModeArg {
    MajorityOnly,
    Classic,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// SM1..SM8 or none.
    #[arg(long, default_value = "none")]
    pub strategy: Resampling,
    #[arg(long, default_value_t = 5)]
    pub smote_k: usize,
    #[arg(long, default_value_t = 3)]
    pub enn_k: usize,
    #[arg(long, value_enum, default_value = "majority-only")]
    pub enn_mode: EnnModeArg,
}

impl SamplingArgs {
    fn config(&self) -> SamplingConfig {
        SamplingConfig {
            smote_k: self.smote_k,
            enn_k: self.enn_k,
            enn_mode: match self.enn_mode {
                EnnModeArg::MajorityOnly => EnnMode::MajorityOnly,
                EnnModeArg::Classic => EnnMode::Classic,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    /// Feature CSV or sequence JSONL.
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV (LR, RF, GBT) or sequence JSONL (CNN, RNN, LSTM, GRU, TCN).
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: ModelKind,
    /// Hyperparameter overrides as JSON.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Fraction of each class kept for training.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Observation window the features came from, recorded for reports.
    #[arg(long)]
    pub window: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub test_file: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExplainMethod {
    /// TreeSHAP for RF and GBT, KernelSHAP otherwise.
    Auto,
    Tree,
    Kernel,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("what").required(true).multiple(true).args(["patient_id", "summary"])))]
pub struct ExplainArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Rows to explain (same format the model was trained on).
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub patient_id: Option<String>,
    /// Also write mean |SHAP| per feature over the feature file.
    #[arg(long)]
    pub summary: bool,
    /// Cap on rows used for the summary, drawn with the seed.
    #[arg(long)]
    pub summary_size: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: ExplainMethod,
    /// KernelSHAP background rows; defaults to the feature file.
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub background_size: usize,
    /// Coalitions sampled when a model has more than 12 features.
    #[arg(long, default_value_t = 2048)]
    pub kernel_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .try_init();
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli, args))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            eprintln!("internal error: {msg}");
            3
        }
    }
}

pub fn run(cli: Cli, args: Vec<String>) -> AppResult<()> {
    if let Some(j) = cli.jobs {
        // Fails harmlessly when a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j as usize).build_global();
    }
    let jobs = cli.jobs.map(|j| j as usize);
    match cli.command {
        Command::Generate(a) => generate(a, args),
        Command::Ingest(a) => ingest(a, args),
        Command::Cohort(a) => cohort(a, args),
        Command::Features(a) => features(a, args),
        Command::Resample(a) => resample(a, args),
        Command::Train(a) => train(a, args),
        Command::Evaluate(a) => evaluate(a, args),
        Command::Explain(a) => explain(a, args),
        Command::Stats(a) => stats(a, args),
        Command::Sweep(a) => sweep(a, args, jobs),
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    let canon = |p: &Path| -> Option<PathBuf> {
        if let Ok(c) = p.canonicalize() {
            return Some(c);
        }
        let parent = p.parent().filter(|q| !q.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Some(parent.canonicalize().ok()?.join(p.file_name()?))
    };
    matches!((canon(a), canon(b)), (Some(x), Some(y)) if x == y)
}

/// Refuses runs whose outputs would overwrite one of their inputs.
fn check_no_clobber(inputs: &[&Path], outputs: &[PathBuf]) -> AppResult<()> {
    for o in outputs {
        if let Some(i) = inputs.iter().find(|i| same_file(i, o)) {
            return Err(AppError::Usage(format!("output {} would overwrite input {}", o.display(), i.display())));
        }
    }
    Ok(())
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> AppResult<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
}

fn generate(a: GenerateArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("generate", args, Some(a.seed));
    let mut config: SynthConfig = match &a.config {
        Some(p) => {
            m.input(p);
            read_json_file(p)?
        }
        None => SynthConfig::default(),
    };
    config.rng_seed = a.seed;
    if let Some(n) = a.n_patients {
        config.n_patients = n;
    }
    m.config(&config);
    let data = generate_synthetic(&config)?;
    ensure_dir(&a.out)?;
    let claims = a.out.join(pipeline::CLAIMS_FILE);
    let demo = a.out.join(pipeline::DEMOGRAPHICS_FILE);
    let map = a.out.join(pipeline::CODE_MAP_FILE);
    let strata = a.out.join("strata.csv");
    let summary = a.out.join("summary.json");
    check_no_clobber(&a.config.iter().map(|p| p.as_path()).collect::<Vec<_>>(), &[claims.clone(), demo.clone(), map.clone(), strata.clone(), summary.clone()])?;
    io::write_claims(&claims, &data.claims)?;
    io::write_demographics(&demo, &data.demographics)?;
    io::write_code_map(&map, &io::identity_code_map())?;
    write_atomic(&strata, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["patient_id", "stratum"])?;
        for (d, s) in data.demographics.iter().zip(&data.strata) {
            let s = serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            wr.write_record([d.patient_id.as_str(), &s])?;
        }
        wr.flush().map_err(|e| AppError::io(&strata, e))?;
        Ok(())
    })?;
    write_json(&summary, &data.summary)?;
    for p in [&claims, &demo, &map, &strata, &summary] {
        m.output(p);
    }
    m.finish(&a.out)?;
    log::info!("generated {} patients and {} claims", data.summary.patients, data.summary.claims);
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    rows: usize,
    accepted: usize,
    rejected: usize,
    unmapped_codes: std::collections::BTreeMap<String, usize>,
    duplicates_removed: usize,
    clean: claimsrisk_core::claims::CleanReport,
    patients_in: usize,
    patients_out: usize,
}

fn ingest(a: IngestArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("ingest", args, None);
    let map = match &a.code_map {
        Some(p) => io::read_code_map(p)?,
        None => io::identity_code_map(),
    };
    let outs: Vec<PathBuf> = [pipeline::CLAIMS_FILE, pipeline::DEMOGRAPHICS_FILE, pipeline::CODE_MAP_FILE, "rejections.csv", "ingest_report.json"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    let mut inputs: Vec<&Path> = vec![&a.claims, &a.demographics];
    if let Some(p) = &a.code_map {
        inputs.push(p);
    }
    check_no_clobber(&inputs, &outs)?;
    let file = io::read_claims(&a.claims, &map)?;
    let demographics = io::read_demographics(&a.demographics)?;
    let (claims, dedup) = deduplicate(file.claims);
    let accepted = dedup.input;
    let cleaned = clean(claims, &demographics);
    m.config(&serde_json::json!({ "code_map_entries": map.len() }));
    ensure_dir(&a.out)?;
    io::write_claims(&outs[0], &cleaned.claims)?;
    io::write_demographics(&outs[1], &cleaned.demographics)?;
    io::write_code_map(&outs[2], &io::identity_code_map())?;
    io::write_rejections(&outs[3], &file.rejections)?;
    let report = IngestReport {
        rows: file.rows,
        accepted,
        rejected: file.rejections.len(),
        unmapped_codes: file.unmapped_codes,
        duplicates_removed: dedup.removed,
        clean: cleaned.report,
        patients_in: demographics.len(),
        patients_out: cleaned.demographics.len(),
    };
    write_json(&outs[4], &report)?;
    for p in inputs {
        m.input(p);
    }
    for p in &outs {
        m.output(p);
    }
    m.finish(&a.out)?;
    Ok(())
}

fn cohort(a: CohortArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("cohort", args, None);
    let store = load_store(&a.data)?;
    let prepared = prepare(store.claims, &store.demographics)?;
    let c = identify_cohort(&prepared.timelines, a.window)?;
    let csv_path = a.out.join("cohort.csv");
    let funnel = a.out.join("funnel.json");
    check_no_clobber(&store.inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &[csv_path.clone(), funnel.clone()])?;
    ensure_dir(&a.out)?;
    io::write_cohort(&csv_path, &c)?;
    write_json(&funnel, &FunnelExport::new(&c))?;
    m.config(&serde_json::json!({ "window_months": a.window }));
    store.inputs.iter().for_each(|p| m.input(p));
    m.output(&csv_path);
    m.output(&funnel);
    m.finish(&a.out)?;
    Ok(())
}

fn features(a: FeaturesArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("features", args, None);
    let store = load_store(&a.data)?;
    let prepared = prepare(store.claims, &store.demographics)?;
    let c = identify_cohort(&prepared.timelines, a.window)?;
    let mode: ComorbidityMode = a.comorbidity_mode.into();
    let ds = if a.sequence { Dataset::from_sequence(&sequence_dataset(&c, mode)?) } else { Dataset::from_static(&static_dataset(&c)?) };
    let path = a.out.join(io::dataset_file_name(if a.sequence { "sequences" } else { "features" }, &ds));
    check_no_clobber(&store.inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>(), std::slice::from_ref(&path))?;
    ensure_dir(&a.out)?;
    io::write_dataset(&path, &ds)?;
    m.config(&serde_json::json!({ "window_months": a.window, "sequence": a.sequence, "comorbidity_mode": mode }));
    store.inputs.iter().for_each(|p| m.input(p));
    m.output(&path);
    m.finish(&a.out)?;
    Ok(())
}

fn row_key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

fn resample(a: ResampleArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("resample", args, Some(a.seed));
    let ds = io::read_dataset(&a.features)?;
    let strategy = a.sampling.strategy.0.ok_or_else(|| AppError::Usage("resample needs --strategy SM1..SM8".into()))?;
    let cfg = a.sampling.config();
    let (mask, period) = ds.numeric_mask();
    let scaler = Scaler::fit(&ds.x, &mask, period)?;
    let mut xs = ds.x.clone();
    scaler.transform(&mut xs)?;
    let r = apply_strategy(strategy, &xs, &ds.y, &cfg, derive_seed(a.seed, &[0x5A3B]))?;

    // Rows that survive unchanged keep their id and exact raw values;
    // synthetic rows are mapped back through the scaler.
    let mut originals: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for i in (0..ds.len()).rev() {
        originals.entry(row_key(xs.row(i))).or_default().push(i);
    }
    let (mut ids, mut data) = (Vec::new(), Vec::new());
    let mut synthetic = 0;
    for i in 0..r.x.rows() {
        let z = r.x.row(i);
        match originals.get_mut(&row_key(z)).and_then(|v| v.pop()) {
            Some(k) => {
                ids.push(ds.ids[k].clone());
                data.extend_from_slice(ds.x.row(k));
            }
            None => {
                synthetic += 1;
                ids.push(PatientId::new(&format!("synthetic-{synthetic:06}")));
                data.extend(z.iter().enumerate().map(|(j, v)| scaler.inverse_value(j, *v)));
            }
        }
    }
    let out_ds = Dataset { x: Matrix::new(ids.len(), ds.x.cols(), data)?, ids, feature_names: ds.feature_names.clone(), y: r.y.clone(), steps: ds.steps };
    let path = a.out.join(io::dataset_file_name("resampled", &out_ds));
    let report_path = a.out.join("resample_report.json");
    check_no_clobber(&[&a.features], &[path.clone(), report_path.clone()])?;
    ensure_dir(&a.out)?;
    io::write_dataset(&path, &out_ds)?;
    write_json(&report_path, &r.report)?;
    m.config(&serde_json::json!({ "strategy": strategy, "sampling": cfg }));
    m.input(&a.features);
    m.output(&path);
    m.output(&report_path);
    m.finish(&a.out)?;
    Ok(())
}

fn train(a: TrainArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("train", args, Some(a.seed));
    let hyperparams: Hyperparams = match &a.hyper {
        Some(p) => {
            m.input(p);
            read_json_file(p)?
        }
        None => Hyperparams::default(),
    };
    hyperparams.sequence.validate()?;
    let ds = io::read_dataset(&a.features)?;
    pipeline::check_kind_matches(a.model, &ds)?;
    let (tr, te) = stratified_split(&ds.y, a.split, derive_seed(a.seed, &[0x5917]))?;
    let (train_ds, test_ds) = (ds.select(&tr), ds.select(&te));
    let spec = TrainSpec { kind: a.model, strategy: a.sampling.strategy.0, sampling: a.sampling.config(), hyperparams, seed: a.seed };
    let outs = [
        a.out.join("model.json"),
        a.out.join(io::dataset_file_name("train", &ds)),
        a.out.join(io::dataset_file_name("test", &ds)),
        a.out.join("predictions.csv"),
        a.out.join("resample_report.json"),
    ];
    let mut inputs: Vec<&Path> = vec![&a.features];
    if let Some(h) = &a.hyper {
        inputs.push(h);
    }
    check_no_clobber(&inputs, &outs)?;
    let outcome = train_model(&train_ds, &spec)?;
    let p = outcome.model.predict_many(&test_ds.x)?;
    ensure_dir(&a.out)?;
    let prov = Provenance { strategy: a.sampling.strategy.name().into(), window_months: a.window, train_rows: train_ds.len() };
    save_model(&outs[0], &ModelFile::new(outcome.model, prov))?;
    io::write_dataset(&outs[1], &train_ds)?;
    io::write_dataset(&outs[2], &test_ds)?;
    io::write_predictions(&outs[3], &test_ds.ids, &test_ds.y, &p)?;
    m.input(&a.features);
    for o in &outs[..4] {
        m.output(o);
    }
    if let Some(r) = &outcome.resample {
        write_json(&outs[4], r)?;
        m.output(&outs[4]);
    }
    m.config(&serde_json::json!({ "spec": spec, "split": a.split, "window_months": a.window }));
    m.finish(&a.out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("evaluate", args, None);
    let mf = load_model(&a.model_file)?;
    let test = io::read_dataset(&a.test_file)?;
    pipeline::check_kind_matches(mf.model.kind, &test)?;
    let s = score(&mf.model, &test, a.threshold)?;
    let c = s.confusion;
    let report = EvalReport {
        auroc: s.auroc,
        f1: c.f1(),
        precision: c.precision(),
        recall: c.recall(),
        confusion: c,
        threshold: a.threshold,
        model: mf.model.kind.as_str().into(),
        strategy: mf.provenance.strategy.clone(),
        window_months: mf.provenance.window_months.unwrap_or(0),
        seed: mf.model.meta.seed,
    };
    let eval_path = a.out.join("eval.json");
    let pred_path = a.out.join("predictions.csv");
    check_no_clobber(&[&a.model_file, &a.test_file], &[eval_path.clone(), pred_path.clone()])?;
    ensure_dir(&a.out)?;
    write_json(&eval_path, &report)?;
    io::write_predictions(&pred_path, &test.ids, &test.y, &s.probabilities)?;
    m.config(&serde_json::json!({ "threshold": a.threshold }));
    m.input(&a.model_file);
    m.input(&a.test_file);
    m.output(&eval_path);
    m.output(&pred_path);
    m.finish(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct ForceExport<'a> {
    patient_id: &'a str,
    model: ModelKind,
    method: &'a str,
    #[serde(flatten)]
    payload: &'a claimsrisk_core::explain::plot::ForcePayload,
}

fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

struct Explainer<'a> {
    model: &'a TrainedModel,
    tree: bool,
    background: Option<Matrix>,
    cfg: KernelConfig,
    seed: u64,
}

impl Explainer<'_> {
    fn explain(&self, raw: &[f64]) -> AppResult<ShapExplanation> {
        Ok(match &self.background {
            _ if self.tree => tree_shap(self.model, raw)?,
            Some(bg) => kernel_explain(self.model, raw, bg, &self.cfg, self.seed)?,
            None => return Err(AppError::Internal("no background for KernelSHAP".into())),
        })
    }
}

fn explain(a: ExplainArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("explain", args, Some(a.seed));
    let mf = load_model(&a.model_file)?;
    let model = &mf.model;
    let ds = io::read_dataset(&a.features)?;
    pipeline::check_kind_matches(model.kind, &ds)?;
    let tree = match a.method {
        ExplainMethod::Auto => model.kind.is_tree(),
        ExplainMethod::Tree if !model.kind.is_tree() => return Err(AppError::Usage(format!("TreeSHAP needs RF or GBT, not {}", model.kind))),
        ExplainMethod::Tree => true,
        ExplainMethod::Kernel => false,
    };
    // Validate the patient before anything is computed or written.
    let row = match &a.patient_id {
        Some(id) => Some(ds.row_of(id).ok_or_else(|| AppError::Data(format!("unknown patient {id} in {}", a.features.display())))?),
        None => None,
    };
    let mut inputs: Vec<&Path> = vec![&a.model_file, &a.features];
    let background = if tree {
        None
    } else {
        let bg = match &a.background {
            Some(p) => {
                inputs.push(p);
                io::read_dataset(p)?
            }
            None => ds.clone(),
        };
        if bg.x.cols() != ds.x.cols() {
            return Err(AppError::Data("background rows do not match the feature file".into()));
        }
        Some(sample_background(&bg.x, a.background_size, derive_seed(a.seed, &[0xB6])))
    };
    let ex = Explainer { model, tree, background, cfg: KernelConfig { n_samples: a.kernel_samples, ..KernelConfig::default() }, seed: a.seed };

    let mut outputs: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if let (Some(id), Some(i)) = (&a.patient_id, row) {
        let e = ex.explain(ds.x.row(i))?;
        let plot = render_force_plot(&e, None);
        let export = ForceExport { patient_id: id, model: model.kind, method: &e.method, payload: &plot.payload };
        let mut json = serde_json::to_string_pretty(&export).map_err(|e| AppError::Internal(e.to_string()))?;
        json.push('\n');
        let stem = format!("force_{}", safe_name(id));
        outputs.push((a.out.join(format!("{stem}.svg")), plot.svg.into_bytes()));
        outputs.push((a.out.join(format!("{stem}.json")), json.into_bytes()));
    }
    if a.summary {
        let n = a.summary_size.unwrap_or(ds.len()).min(ds.len());
        let idx = if n < ds.len() {
            let pick = sample_background(&Matrix::new(ds.len(), 1, (0..ds.len()).map(|i| i as f64).collect())?, n, derive_seed(a.seed, &[0x5C]));
            pick.as_slice().iter().map(|v| *v as usize).collect()
        } else {
            (0..ds.len()).collect::<Vec<_>>()
        };
        let expl: Vec<ShapExplanation> =
            idx.par_iter().map(|&i| ex.explain(ds.x.row(i))).collect::<AppResult<Vec<_>>>()?;
        let ranking = mean_abs_shap(&expl)?;
        let mut text = String::from("rank,feature,mean_abs_shap\n");
        // Raw means, not the normalized shares of the ranking.
        let n_expl = expl.len() as f64;
        for (r, entry) in ranking.entries.iter().enumerate() {
            let raw: f64 = expl.iter().map(|e| e.contributions[entry.index].abs()).sum::<f64>() / n_expl;
            text.push_str(&format!("{},{},{}\n", r + 1, entry.feature, raw));
        }
        outputs.push((a.out.join("mean_abs_shap.csv"), text.into_bytes()));
    }
    let paths: Vec<PathBuf> = outputs.iter().map(|(p, _)| p.clone()).collect();
    check_no_clobber(&inputs, &paths)?;
    ensure_dir(&a.out)?;
    for (p, bytes) in &outputs {
        write_bytes(p, bytes)?;
        m.output(p);
    }
    inputs.iter().for_each(|p| m.input(p));
    m.config(&serde_json::json!({
        "patient_id": a.patient_id, "summary": a.summary, "summary_size": a.summary_size, "tree_shap": tree,
        "background_size": a.background_size, "kernel_samples": a.kernel_samples,
    }));
    m.finish(&a.out)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn stats(a: StatsArgs, args: Vec<String>) -> AppResult<()> {
    let mut m = ManifestBuilder::new("stats", args, None);
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(AppError::Usage(format!("alpha {} must lie in (0, 1)", a.alpha)));
    }
    let ds = io::read_dataset(&a.features)?;
    if ds.steps.is_some() {
        return Err(AppError::Usage("stats works on static feature files".into()));
    }
    let (mask, _) = ds.numeric_mask();
    let names: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    let t = descriptive_tables(&ds.x, &ds.y, &names, &mask, a.alpha)?;
    let t1 = a.out.join("table1.csv");
    let t2 = a.out.join("table2.csv");
    let js = a.out.join("stats.json");
    check_no_clobber(&[&a.features], &[t1.clone(), t2.clone(), js.clone()])?;
    ensure_dir(&a.out)?;
    let mut s1 = String::from("feature,overall_mean,overall_sd,esrd_mean,esrd_sd,non_esrd_mean,non_esrd_sd,t,df,p_value,p_display,significant,skipped\n");
    for r in &t.numeric {
        let ms = |x: &Option<claimsrisk_core::eval::MeanSd>| (opt(x.map(|v| v.mean)), opt(x.map(|v| v.sd)));
        let (om, osd) = ms(&r.overall);
        let (pm, psd) = ms(&r.positive);
        let (nm, nsd) = ms(&r.negative);
        let (st, df, p, pd) = r.test.map_or(Default::default(), |x| (x.statistic.to_string(), x.df.to_string(), x.p_value.to_string(), format_p(x.p_value)));
        let sk = r.skipped.clone().unwrap_or_default().replace(',', ";");
        s1.push_str(&format!("{},{om},{osd},{pm},{psd},{nm},{nsd},{st},{df},{p},{pd},{},{sk}\n", r.feature, r.significant));
    }
    let mut s2 = String::from("feature,esrd_share,non_esrd_share,chi2,p_value,p_display,significant,skipped\n");
    for r in &t.categorical {
        let (st, p, pd) = r.test.map_or(Default::default(), |x| (x.statistic.to_string(), x.p_value.to_string(), format_p(x.p_value)));
        let sk = r.skipped.clone().unwrap_or_default().replace(',', ";");
        s2.push_str(&format!("{},{},{},{st},{p},{pd},{},{sk}\n", r.feature, r.positive_share, r.negative_share, r.significant));
    }
    write_bytes(&t1, s1.as_bytes())?;
    write_bytes(&t2, s2.as_bytes())?;
    write_json(&js, &t)?;
    m.config(&serde_json::json!({ "alpha": a.alpha }));
    m.input(&a.features);
    for p in [&t1, &t2, &js] {
        m.output(p);
    }
    m.finish(&a.out)?;
    Ok(())
}

fn sweep(a: SweepArgs, args: Vec<String>, jobs: Option<usize>) -> AppResult<()> {
    let mut config: ExperimentConfig = read_json_file(&a.config)?;
    if let Some(s) = a.seed {
        config.master_seed = s;
    }
    let mut m = ManifestBuilder::new("sweep", args, Some(config.master_seed));
    m.config(&config);
    m.input(&a.config);
    if let crate::sweep::DataSource::Directory(d) = &config.data {
        for f in [pipeline::CLAIMS_FILE, pipeline::DEMOGRAPHICS_FILE] {
            m.input(&d.join(f));
        }
    }
    let report = run_sweep(&config, jobs)?;
    ensure_dir(&a.out)?;
    let written = write_sweep_outputs(&report, &a.out)?;
    check_no_clobber(&[&a.config], &written)?;
    written.iter().for_each(|p| m.output(p));
    m.finish(&a.out)?;
    let failed = report.cells.iter().filter(|c| c.report().is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed; see the failure_reason column", report.cells.len());
    }
    Ok(())
}
