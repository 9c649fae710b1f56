//! Stages shared by the subcommands and the sweep: loading a claims store,
//! building cohorts and datasets, and training or scoring one model.

use std::path::{Path, PathBuf};

use claimsrisk_core::claims::{clean, deduplicate, CleanReport, ClaimRecord, DedupReport, PatientDemographics};
use claimsrisk_core::cohort::{build_timelines, identify_cohort, FunnelCounts, PatientTimeline};
use claimsrisk_core::eval::Confusion;
use claimsrisk_core::features::{sequence_dataset, static_dataset, ComorbidityMode, Scaler};
use claimsrisk_core::models::{fit, Hyperparams, ModelKind, TrainedModel};
use claimsrisk_core::rng::derive_seed;
use claimsrisk_core::sampling::{apply_strategy, ResampleReport, SamplingConfig, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io::{identity_code_map, read_claims, read_code_map, read_demographics, Dataset};

pub const CLAIMS_FILE: &str = "claims.csv";
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";
pub const CODE_MAP_FILE: &str = "code_map.json";

/// Claims and demographics as read from a data directory.
pub struct Store {
    pub claims: Vec<ClaimRecord>,
    pub demographics: Vec<PatientDemographics>,
    /// Files that were read.
    pub inputs: Vec<PathBuf>,
}

/// Reads `claims.csv` and `demographics.csv` from `dir`, mapping codes with
/// `code_map.json` when present and canonical names otherwise.
pub fn load_store(dir: &Path) -> AppResult<Store> {
    let claims_path = dir.join(CLAIMS_FILE);
    let demo_path = dir.join(DEMOGRAPHICS_FILE);
    let map_path = dir.join(CODE_MAP_FILE);
    let mut inputs = vec![claims_path.clone(), demo_path.clone()];
    let map = if map_path.exists() {
        inputs.push(map_path.clone());
        read_code_map(&map_path)?
    } else {
        identity_code_map()
    };
    let file = read_claims(&claims_path, &map)?;
    if !file.rejections.is_empty() {
        log::warn!("{}: {} malformed rows skipped; run `ingest` for a rejection report", claims_path.display(), file.rejections.len());
    }
    let demographics = read_demographics(&demo_path)?;
    Ok(Store { claims: file.claims, demographics, inputs })
}

pub struct Prepared {
    pub timelines: Vec<PatientTimeline>,
    pub dedup: DedupReport,
    pub clean: CleanReport,
}

/// Deduplicates, cleans and groups claims into per-patient timelines. Both
/// cleaning steps are idempotent, so already-cleaned stores pass unchanged.
pub fn prepare(claims: Vec<ClaimRecord>, demographics: &[PatientDemographics]) -> AppResult<Prepared> {
    let (claims, dedup) = deduplicate(claims);
    let cleaned = clean(claims, demographics);
    let timelines = build_timelines(cleaned.claims, &cleaned.demographics)?;
    Ok(Prepared { timelines, dedup, clean: cleaned.report })
}

/// Cohort and datasets for one observation window.
pub struct WindowData {
    pub window_months: u32,
    pub funnel: FunnelCounts,
    pub static_ds: Dataset,
    pub sequence_ds: Option<Result<Dataset, String>>,
}

/// Builds the window's static dataset and, when asked, its sequence dataset.
/// A sequence failure (window too short for two steps, say) is kept as an
/// error so static models can still run.
pub fn window_data(timelines: &[PatientTimeline], months: u32, mode: ComorbidityMode, want_sequence: bool) -> AppResult<WindowData> {
    let cohort = identify_cohort(timelines, months)?;
    let static_ds = Dataset::from_static(&static_dataset(&cohort)?);
    let sequence_ds = want_sequence.then(|| sequence_dataset(&cohort, mode).map(|s| Dataset::from_sequence(&s)).map_err(|e| e.to_string()));
    Ok(WindowData { window_months: months, funnel: cohort.funnel, static_ds, sequence_ds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub kind: ModelKind,
    pub strategy: Option<Strategy>,
    pub sampling: SamplingConfig,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub resample: Option<ResampleReport>,
    /// Rows the model saw, after resampling.
    pub fitted_rows: usize,
}

pub fn check_kind_matches(kind: ModelKind, ds: &Dataset) -> AppResult<()> {
    match (kind.is_sequence(), ds.steps.is_some()) {
        (true, false) => Err(AppError::Usage(format!("{kind} needs sequence features (features --sequence)"))),
        (false, true) => Err(AppError::Usage(format!("{kind} needs static features (features --static)"))),
        _ => Ok(()),
    }
}

/// Fits the scaler on `train`, resamples in standardized space, and trains.
/// Nothing outside `train` is touched.
pub fn train_model(train: &Dataset, spec: &TrainSpec) -> AppResult<TrainOutcome> {
    check_kind_matches(spec.kind, train)?;
    let (mask, period) = train.numeric_mask();
    let scaler = Scaler::fit(&train.x, &mask, period)?;
    let mut xs = train.x.clone();
    scaler.transform(&mut xs)?;
    let (xs, y, resample) = match spec.strategy {
        Some(s) => {
            let r = apply_strategy(s, &xs, &train.y, &spec.sampling, derive_seed(spec.seed, &[0x5A3B]))?;
            (r.x, r.y, Some(r.report))
        }
        None => (xs, train.y.clone(), None),
    };
    let model = fit(spec.kind, &xs, &y, train.steps, &spec.hyperparams, derive_seed(spec.seed, &[0x3F17]), Some(scaler), train.feature_names.clone())?;
    Ok(TrainOutcome { model, resample, fitted_rows: y.len() })
}

pub struct Scored {
    pub probabilities: Vec<f64>,
    pub auroc: f64,
    pub confusion: Confusion,
}

pub fn score(model: &TrainedModel, test: &Dataset, threshold: f64) -> AppResult<Scored> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AppError::Usage(format!("threshold {threshold} must lie in [0, 1]")));
    }
    let p = model.predict_many(&test.x)?;
    let (auroc, confusion) = claimsrisk_core::eval::evaluate(&p, &test.y, threshold)?;
    Ok(Scored { probabilities: p, auroc, confusion })
}
