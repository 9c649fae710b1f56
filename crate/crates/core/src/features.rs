//! Static features (CM1..CM10, CL1..CL17), 3-month sequence tensors and the
//! z-score scaler.

use alloc::format;
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::claims::{ClaimRecord, ClaimType, EventCode, Gender, PatientId};
use crate::cohort::{add_months, CohortResult, ObservationWindow, PatientTimeline};
use crate::error::{Error, Result};
use crate::math::{sqrt, KahanSum};
use crate::matrix::Matrix;

pub const STATIC_DIM: usize = 27;

pub const STATIC_NAMES: [&str; STATIC_DIM] = [
    "CM1", "CM2", "CM3", "CM4", "CM5", "CM6", "CM7", "CM8", "CM9", "CM10", "CL1", "CL2", "CL3", "CL4",
    "CL5", "CL6", "CL7", "CL8", "CL9", "CL10", "CL11", "CL12", "CL13", "CL14", "CL15", "CL16", "CL17",
];

/// CM1..CM10 and CL1..CL3 are numeric; CL4..CL17 are 0/1 flags.
pub const STATIC_NUMERIC: usize = 13;

pub const CL1: usize = 10;
pub const CL2: usize = 11;
pub const CL5: usize = 14;
pub const CL6: usize = 15;

pub fn static_numeric_mask() -> Vec<bool> {
    (0..STATIC_DIM).map(|i| i < STATIC_NUMERIC).collect()
}

pub fn static_index(name: &str) -> Option<usize> {
    STATIC_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub patient_id: PatientId,
    pub values: [f64; STATIC_DIM],
    pub label: bool,
}

fn in_window<'a>(tl: &'a PatientTimeline, lo: NaiveDate, hi: NaiveDate) -> &'a [ClaimRecord] {
    let a = tl.claims.partition_point(|c| c.service_date < lo);
    let b = tl.claims.partition_point(|c| c.service_date <= hi);
    &tl.claims[a..b.max(a)]
}

fn check_window(window: &ObservationWindow) -> Result<()> {
    if window.end < window.anchor {
        return Err(Error::Window(format!("window end {} precedes anchor {}", window.end, window.anchor)));
    }
    Ok(())
}

fn type_slot(t: ClaimType) -> Option<usize> {
    match t {
        ClaimType::Pharmacy => Some(0),
        ClaimType::Inpatient => Some(1),
        ClaimType::Outpatient => Some(2),
        ClaimType::Professional => Some(3),
        ClaimType::Vision => None,
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn extract_static(tl: &PatientTimeline, window: &ObservationWindow, label: bool) -> Result<FeatureVector> {
    check_window(window)?;
    let claims = in_window(tl, window.anchor, window.end);
    let mut v = [0.0; STATIC_DIM];

    let mut costs = [KahanSum::default(); 4];
    let mut total = KahanSum::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ed = 0usize;
    for c in claims {
        if let Some(s) = type_slot(c.claim_type) {
            v[s] += 1.0;
            costs[s].add(c.cost);
        }
        total.add(c.cost);
        lo = lo.min(c.cost);
        hi = hi.max(c.cost);
        ed += c.is_ed_visit() as usize;
    }
    for s in 0..4 {
        v[4 + s] = costs[s].value();
    }
    if claims.len() >= 2 {
        let n = claims.len() as f64;
        let mean = total.value() / n;
        let mut ss = KahanSum::default();
        for c in claims {
            ss.add((c.cost - mean) * (c.cost - mean));
        }
        v[8] = hi - lo;
        v[9] = sqrt(ss.value() / n);
    }

    v[CL1] = window.anchor.years_since(tl.birth_date).unwrap_or(0) as f64;
    let progressed = [tl.first_ckd4, tl.first_ckd5]
        .into_iter()
        .flatten()
        .fold(window.end, |acc, d| acc.min(d));
    v[CL2] = (progressed - window.anchor).num_days().max(0) as f64;
    v[12] = ed as f64;
    v[13] = flag(tl.gender == Gender::Male);
    v[CL5] = flag(tl.first_ckd4.is_some_and(|d| d <= window.end));
    v[CL6] = flag(tl.first_ckd5.is_some_and(|d| d <= window.end));
    for (k, code) in EventCode::COMORBIDITIES.iter().enumerate() {
        v[16 + k] = flag(tl.first_occurrence(*code).is_some_and(|d| d <= window.end));
    }
    Ok(FeatureVector { patient_id: tl.patient_id.clone(), values: v, label })
}

/// Static features for every cohort member, in member order.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticDataset {
    pub ids: Vec<PatientId>,
    pub x: Matrix,
    pub y: Vec<bool>,
}

pub fn static_dataset(cohort: &CohortResult<'_>) -> Result<StaticDataset> {
    let vecs = crate::par::map_range(cohort.members.len(), |i| {
        let m = &cohort.members[i];
        extract_static(m.timeline, &m.window, m.label)
    });
    let mut ids = Vec::with_capacity(vecs.len());
    let mut data = Vec::with_capacity(vecs.len() * STATIC_DIM);
    let mut y = Vec::with_capacity(vecs.len());
    for fv in vecs {
        let fv = fv?;
        data.extend_from_slice(&fv.values);
        ids.push(fv.patient_id);
        y.push(fv.label);
    }
    Ok(StaticDataset { x: Matrix::new(ids.len(), STATIC_DIM, data)?, ids, y })
}

pub const SEQ_CHANNELS: usize = 24;

pub const SEQ_CHANNEL_NAMES: [&str; SEQ_CHANNELS] = [
    "pharmacy_count",
    "inpatient_count",
    "outpatient_count",
    "professional_count",
    "pharmacy_cost",
    "inpatient_cost",
    "outpatient_cost",
    "professional_cost",
    "ed_visits",
    "mean_age",
    "ed_flag",
    "stage4_flag",
    "stage5_flag",
    "diabetes",
    "anemia",
    "metabolic_acidosis",
    "proteinuria",
    "sec_hyperparathyroidism",
    "phosphatemia",
    "atherosclerosis",
    "heart_failure",
    "stroke",
    "conduction_dysrhythmia",
    "hypertension",
];

/// Channels 0..10 are numeric; the rest are 0/1 flags.
pub const SEQ_NUMERIC: usize = 10;

pub fn sequence_numeric_mask() -> Vec<bool> {
    (0..SEQ_CHANNELS).map(|i| i < SEQ_NUMERIC).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComorbidityMode {
    /// 1 from the first occurrence onwards, including pre-window history.
    #[default]
    CarryForward,
    /// 1 only in buckets where the code occurs.
    RawOccurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTensor {
    pub patient_id: PatientId,
    pub steps: usize,
    /// Row-major `steps x SEQ_CHANNELS`.
    pub data: Vec<f64>,
    pub label: bool,
}

impl SequenceTensor {
    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * SEQ_CHANNELS..(t + 1) * SEQ_CHANNELS]
    }
}

/// Bucket `b` spans `[anchor + 3b months, anchor + 3(b+1) months)`; the last
/// bucket also includes the window end.
pub fn bucket_bounds(window: &ObservationWindow) -> Result<Vec<(NaiveDate, NaiveDate)>> {
    check_window(window)?;
    if window.months % 3 != 0 {
        return Err(Error::Window(format!("{} months is not a multiple of 3", window.months)));
    }
    let steps = (window.months / 3) as usize;
    if steps < 2 {
        return Err(Error::Window(format!("{} months gives fewer than 2 steps", window.months)));
    }
    let mut out = Vec::with_capacity(steps);
    for b in 0..steps as u32 {
        let start = add_months(window.anchor, 3 * b)?;
        let next = add_months(window.anchor, 3 * (b + 1))?;
        // Inclusive last day.
        let last = if b as usize + 1 == steps { window.end } else { next - Days::new(1) };
        out.push((start, last));
    }
    Ok(out)
}

pub fn extract_sequence(
    tl: &PatientTimeline,
    window: &ObservationWindow,
    label: bool,
    mode: ComorbidityMode,
) -> Result<SequenceTensor> {
    let bounds = bucket_bounds(window)?;
    let steps = bounds.len();
    let mut data = alloc::vec![0.0; steps * SEQ_CHANNELS];
    let mut costs = alloc::vec![[KahanSum::default(); 4]; steps];

    let mut b = 0;
    for c in in_window(tl, window.anchor, window.end) {
        while c.service_date > bounds[b].1 {
            b += 1;
        }
        let row = &mut data[b * SEQ_CHANNELS..(b + 1) * SEQ_CHANNELS];
        if let Some(s) = type_slot(c.claim_type) {
            row[s] += 1.0;
            costs[b][s].add(c.cost);
        }
        if c.is_ed_visit() {
            row[8] += 1.0;
            row[10] = 1.0;
        }
        if c.event_codes.contains(EventCode::Ckd4) {
            row[11] = 1.0;
        }
        if c.event_codes.contains(EventCode::Ckd5) {
            row[12] = 1.0;
        }
        if mode == ComorbidityMode::RawOccurrence {
            for (k, code) in EventCode::COMORBIDITIES.iter().enumerate() {
                if c.event_codes.contains(*code) {
                    row[13 + k] = 1.0;
                }
            }
        }
    }
    // Stage 4/5 diagnosed before the anchor count as present in bucket 0.
    if tl.first_ckd4.is_some_and(|d| d < window.anchor) {
        data[11] = 1.0;
    }
    if tl.first_ckd5.is_some_and(|d| d < window.anchor) {
        data[12] = 1.0;
    }
    for (b, &(start, last)) in bounds.iter().enumerate() {
        let row = &mut data[b * SEQ_CHANNELS..(b + 1) * SEQ_CHANNELS];
        for s in 0..4 {
            row[4 + s] = costs[b][s].value();
        }
        let mid = start + Days::new(((last - start).num_days() / 2) as u64);
        row[9] = (mid - tl.birth_date).num_days() as f64 / 365.2425;
        if mode == ComorbidityMode::CarryForward {
            for (k, code) in EventCode::COMORBIDITIES.iter().enumerate() {
                row[13 + k] = flag(tl.first_occurrence(*code).is_some_and(|d| d <= last));
            }
        }
    }
    Ok(SequenceTensor { patient_id: tl.patient_id.clone(), steps, data, label })
}

/// Sequence tensors flattened to rows of `steps * SEQ_CHANNELS`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub ids: Vec<PatientId>,
    pub steps: usize,
    pub x: Matrix,
    pub y: Vec<bool>,
}

pub fn sequence_dataset(cohort: &CohortResult<'_>, mode: ComorbidityMode) -> Result<SequenceDataset> {
    let tensors = crate::par::map_range(cohort.members.len(), |i| {
        let m = &cohort.members[i];
        extract_sequence(m.timeline, &m.window, m.label, mode)
    });
    let steps = (cohort.window_months / 3) as usize;
    let mut ids = Vec::with_capacity(tensors.len());
    let mut data = Vec::with_capacity(tensors.len() * steps * SEQ_CHANNELS);
    let mut y = Vec::with_capacity(tensors.len());
    for t in tensors {
        let t = t?;
        data.extend_from_slice(&t.data);
        ids.push(t.patient_id);
        y.push(t.label);
    }
    Ok(SequenceDataset { x: Matrix::new(ids.len(), steps * SEQ_CHANNELS, data)?, steps, ids, y })
}

/// Per-feature z-score with population SD. Non-numeric features pass through
/// and zero-variance features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub numeric: Vec<bool>,
}

impl Scaler {
    /// Fits on the rows of `x`. With `period = Some(p)`, column `j` uses the
    /// statistics of `j % p`, so a flattened `T x F` tensor is scaled per
    /// channel across all steps.
    pub fn fit(x: &Matrix, numeric: &[bool], period: Option<usize>) -> Result<Self> {
        let width = period.unwrap_or(x.cols());
        if numeric.len() != width || (width == 0 && x.cols() > 0) || x.cols() % width.max(1) != 0 {
            return Err(Error::Shape(format!("mask of {} for {} columns", numeric.len(), x.cols())));
        }
        let reps = x.cols() / width.max(1);
        let n = x.rows() * reps;
        if n < 2 {
            return Err(Error::InsufficientData("scaler needs at least 2 training rows".into()));
        }
        let mut sums = alloc::vec![KahanSum::default(); width];
        for r in x.iter_rows() {
            for (j, v) in r.iter().enumerate() {
                sums[j % width].add(*v);
            }
        }
        let mean: Vec<f64> = sums.iter().map(|s| s.value() / n as f64).collect();
        let mut ss = alloc::vec![KahanSum::default(); width];
        for r in x.iter_rows() {
            for (j, v) in r.iter().enumerate() {
                let d = v - mean[j % width];
                ss[j % width].add(d * d);
            }
        }
        let sd = ss.iter().map(|s| sqrt(s.value() / n as f64)).collect();
        Ok(Self { mean, sd, numeric: numeric.to_vec() })
    }

    fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        let w = self.width();
        for (j, v) in row.iter_mut().enumerate() {
            let k = j % w;
            if !self.numeric[k] {
                continue;
            }
            let sd = self.sd[k];
            *v = if sd > 1e-12 * self.mean[k].abs().max(1.0) { (*v - self.mean[k]) / sd } else { 0.0 };
        }
    }

    pub fn transform(&self, x: &mut Matrix) -> Result<()> {
        if x.cols() % self.width().max(1) != 0 {
            return Err(Error::Shape(format!("{} columns for a {}-wide scaler", x.cols(), self.width())));
        }
        for i in 0..x.rows() {
            self.transform_row(x.row_mut(i));
        }
        Ok(())
    }

    /// Inverse of `transform_row` for display purposes.
    pub fn inverse_value(&self, j: usize, z: f64) -> f64 {
        let k = j % self.width();
        if self.numeric[k] {
            self.mean[k] + z * self.sd[k]
        } else {
            z
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::{ClaimId, EventSet, PatientDemographics};
    use crate::cohort::build_timelines;
    use alloc::vec;
    use EventCode::*;

    fn anchor() -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 1, 1).unwrap()
    }

    fn claim(seq: u32, day: i64, t: ClaimType, cost: f64, codes: &[EventCode]) -> ClaimRecord {
        ClaimRecord {
            patient_id: PatientId::new("p"),
            claim_id: ClaimId::new(&format!("p-{seq:05}")),
            claim_type: t,
            service_date: anchor() + chrono::Duration::days(day),
            cost,
            event_codes: EventSet::from_codes(codes.iter().copied()),
            ed_visit: false,
        }
    }

    fn timeline(claims: Vec<ClaimRecord>) -> PatientTimeline {
        let demo = PatientDemographics {
            patient_id: PatientId::new("p"),
            gender: Gender::Male,
            birth_date: NaiveDate::from_ymd_opt(1940, 6, 30).unwrap(),
        };
        build_timelines(claims, &[demo]).unwrap().pop().unwrap()
    }

    #[test]
    fn no_progression_gives_full_window_duration() {
        let tl = timeline(vec![claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3])]);
        let w = ObservationWindow::new(anchor(), 24).unwrap();
        let f = extract_static(&tl, &w, false).unwrap();
        assert_eq!(f.values[CL2], w.days() as f64);
        assert_eq!(f.values[CL5], 0.0);
        assert_eq!(f.values[CL1], 71.0);
        assert_eq!(f.values[13], 1.0);
    }

    #[test]
    fn stage4_four_days_after_anchor() {
        let tl = timeline(vec![
            claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3]),
            claim(2, 4, ClaimType::Professional, 10.0, &[Ckd4]),
        ]);
        let w = ObservationWindow::new(anchor(), 24).unwrap();
        let f = extract_static(&tl, &w, true).unwrap();
        assert_eq!(f.values[CL2], 4.0);
        assert_eq!(f.values[CL5], 1.0);
    }

    #[test]
    fn cost_range_and_population_sd() {
        let tl = timeline(vec![
            claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3]),
            claim(2, 5, ClaimType::Pharmacy, 25.0, &[]),
            claim(3, 6, ClaimType::Vision, 25.0, &[]),
            claim(4, 9, ClaimType::Inpatient, 100.0, &[]),
            claim(5, 900, ClaimType::Inpatient, 1e6, &[]),
        ]);
        let w = ObservationWindow::new(anchor(), 12).unwrap();
        let f = extract_static(&tl, &w, false).unwrap();
        let xs = [10.0, 25.0, 25.0, 100.0];
        let mean = xs.iter().sum::<f64>() / 4.0;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0).sqrt();
        assert_eq!(f.values[8], 90.0);
        assert!((f.values[9] - sd).abs() < 1e-12);
        assert_eq!(&f.values[0..4], &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(&f.values[4..8], &[25.0, 100.0, 0.0, 10.0]);
    }

    #[test]
    fn single_claim_has_zero_spread() {
        let tl = timeline(vec![claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3])]);
        let f = extract_static(&tl, &ObservationWindow::new(anchor(), 6).unwrap(), false).unwrap();
        assert_eq!((f.values[8], f.values[9]), (0.0, 0.0));
    }

    #[test]
    fn eighteen_months_gives_six_steps() {
        let tl = timeline(vec![claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3])]);
        let w = ObservationWindow::new(anchor(), 18).unwrap();
        let s = extract_sequence(&tl, &w, false, ComorbidityMode::CarryForward).unwrap();
        assert_eq!(s.steps, 6);
        assert!(extract_sequence(&tl, &ObservationWindow::new(anchor(), 7).unwrap(), false, ComorbidityMode::CarryForward)
            .is_err());
        assert!(extract_sequence(&tl, &ObservationWindow::new(anchor(), 3).unwrap(), false, ComorbidityMode::CarryForward)
            .is_err());
    }

    #[test]
    fn pre_existing_condition_is_set_in_every_bucket() {
        let tl = timeline(vec![
            claim(1, -30, ClaimType::Professional, 10.0, &[Diabetes]),
            claim(2, 0, ClaimType::Professional, 10.0, &[Ckd3]),
        ]);
        let w = ObservationWindow::new(anchor(), 12).unwrap();
        let s = extract_sequence(&tl, &w, false, ComorbidityMode::CarryForward).unwrap();
        assert!((0..4).all(|t| s.step(t)[13] == 1.0));
        let raw = extract_sequence(&tl, &w, false, ComorbidityMode::RawOccurrence).unwrap();
        assert!((0..4).all(|t| raw.step(t)[13] == 0.0));
    }

    #[test]
    fn pharmacy_claims_land_in_their_buckets() {
        let tl = timeline(vec![
            claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3]),
            claim(2, 5, ClaimType::Pharmacy, 1.0, &[]),
            claim(3, 100, ClaimType::Pharmacy, 1.0, &[]),
        ]);
        let w = ObservationWindow::new(anchor(), 12).unwrap();
        let bounds = bucket_bounds(&w).unwrap();
        // Oracle: locate each date by scanning the inclusive bounds.
        let mut expected = [0.0; 4];
        for day in [5, 100] {
            let d = anchor() + chrono::Duration::days(day);
            let b = bounds.iter().position(|(s, e)| *s <= d && d <= *e).unwrap();
            expected[b] += 1.0;
        }
        assert_eq!(expected, [1.0, 1.0, 0.0, 0.0]);
        let s = extract_sequence(&tl, &w, false, ComorbidityMode::CarryForward).unwrap();
        let got: Vec<f64> = (0..4).map(|t| s.step(t)[0]).collect();
        assert_eq!(got, expected.to_vec());
    }

    #[test]
    fn claim_on_window_end_lands_in_last_bucket() {
        let w = ObservationWindow::new(anchor(), 6).unwrap();
        let tl = timeline(vec![
            claim(1, 0, ClaimType::Professional, 10.0, &[Ckd3]),
            claim(2, w.days(), ClaimType::Inpatient, 5.0, &[Ckd4]),
        ]);
        let s = extract_sequence(&tl, &w, false, ComorbidityMode::CarryForward).unwrap();
        assert_eq!(s.step(1)[1], 1.0);
        assert_eq!(s.step(1)[11], 1.0);
        let f = extract_static(&tl, &w, false).unwrap();
        assert_eq!(f.values[CL5], 1.0);
    }

    #[test]
    fn scaler_closed_form() {
        let x = Matrix::from_rows(&[[1.0, 5.0, 1.0], [2.0, 5.0, 0.0], [3.0, 5.0, 1.0]]).unwrap();
        let s = Scaler::fit(&x, &[true, true, false], None).unwrap();
        let mut t = x.clone();
        s.transform(&mut t).unwrap();
        let z = (1.5f64).sqrt();
        assert!((t.get(0, 0) + z).abs() < 1e-12);
        assert_eq!(t.get(1, 0), 0.0);
        assert!((t.get(2, 0) - z).abs() < 1e-12);
        assert!(t.column(1).iter().all(|v| *v == 0.0));
        assert_eq!(t.column(2), vec![1.0, 0.0, 1.0]);
        // A second application is not the identity.
        let mut tt = t.clone();
        s.transform(&mut tt).unwrap();
        assert_ne!(tt, t);
        assert!(Scaler::fit(&Matrix::zeros(1, 3), &[true; 3], None).is_err());
    }

    #[test]
    fn periodic_scaler_pools_steps() {
        let x = Matrix::from_rows(&[[1.0, 3.0], [5.0, 7.0]]).unwrap();
        let s = Scaler::fit(&x, &[true], Some(1)).unwrap();
        assert_eq!(s.mean, vec![4.0]);
        assert!((s.sd[0] - 5.0f64.sqrt()).abs() < 1e-12);
    }
}
