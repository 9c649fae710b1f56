//! Synthetic claims generator with planted per-stratum effects.
//!
//! Each CKD stage-3 patient belongs to the ESRD or non-ESRD stratum. Within a
//! reference window after the first stage-3 diagnosis the generator plants:
//!
//! * claim counts per type as Poisson draws with a Gamma-distributed patient
//!   rate, matching the configured mean and SD;
//! * per-type cost sums as a compound Gamma model (patient multiplier times
//!   per-claim Gamma amounts), again matching mean and SD;
//! * stage-3 duration as a mixture of "no progression" (the full window) and
//!   a scaled Beta progression time, matching mean, SD and stage-4 rate;
//! * age as a truncated Gaussian and comorbidities as Bernoulli flags.
//!
//! ESRD patients additionally get a utilization ramp (claims concentrate
//! towards the end of the window) and a dialysis or transplant event after it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::claims::{ClaimId, ClaimRecord, ClaimType, EventCode, EventSet, Gender, PatientDemographics, PatientId};
use crate::cohort::add_months;
use crate::error::{Error, Result};
use crate::math::{exp, floor, log1p, round};
use crate::rng::{derive_seed, shuffle, stream, StreamRng};

/// Mean and standard deviation of a planted feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

const fn m(mean: f64, sd: f64) -> Moments {
    Moments { mean, sd }
}

/// Planted targets for one stratum, measured at the reference window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumProfile {
    pub pharmacy_count: Moments,
    pub inpatient_count: Moments,
    pub outpatient_count: Moments,
    pub professional_count: Moments,
    pub pharmacy_cost: Moments,
    pub inpatient_cost: Moments,
    pub outpatient_cost: Moments,
    pub professional_cost: Moments,
    /// Age in whole years at the first stage-3 diagnosis.
    pub age: Moments,
    /// Days from first stage 3 to first stage 4/5, or the window length.
    pub stage3_days: Moments,
    pub ed_visits: Moments,
    pub male: f64,
    pub stage4: f64,
    /// Must not exceed `stage4`: stage-5 patients are drawn from stage-4 ones.
    pub stage5: f64,
    /// Prevalence in `EventCode::COMORBIDITIES` order.
    pub comorbidities: [f64; 11],
}

impl StratumProfile {
    pub fn esrd_default() -> Self {
        Self {
            pharmacy_count: m(120.0, 94.0),
            inpatient_count: m(3.75, 3.43),
            outpatient_count: m(27.78, 28.75),
            professional_count: m(105.37, 77.46),
            pharmacy_cost: m(12053.0, 17596.0),
            inpatient_cost: m(33909.0, 53540.0),
            outpatient_cost: m(9354.0, 17522.0),
            professional_cost: m(15512.0, 18657.0),
            age: m(70.13, 10.37),
            stage3_days: m(543.0, 250.0),
            ed_visits: m(2.18, 2.63),
            male: 0.60,
            stage4: 0.43,
            stage5: 0.05,
            comorbidities: [0.73, 0.64, 0.25, 0.13, 0.33, 0.05, 0.06, 0.05, 0.01, 0.05, 0.99],
        }
    }

    pub fn non_esrd_default() -> Self {
        Self {
            pharmacy_count: m(109.0, 87.0),
            inpatient_count: m(3.74, 3.87),
            outpatient_count: m(23.09, 20.83),
            professional_count: m(87.43, 68.01),
            pharmacy_cost: m(10440.0, 20662.0),
            inpatient_cost: m(29440.0, 32541.0),
            outpatient_cost: m(8554.0, 17492.0),
            professional_cost: m(11640.0, 12748.0),
            age: m(73.04, 11.0),
            stage3_days: m(677.0, 160.0),
            ed_visits: m(2.01, 2.99),
            male: 0.52,
            stage4: 0.12,
            stage5: 0.01,
            comorbidities: [0.59, 0.62, 0.18, 0.17, 0.18, 0.03, 0.14, 0.11, 0.03, 0.16, 0.97],
        }
    }

    fn count_targets(&self) -> [Moments; 4] {
        [self.pharmacy_count, self.inpatient_count, self.outpatient_count, self.professional_count]
    }

    fn cost_targets(&self) -> [Moments; 4] {
        [self.pharmacy_cost, self.inpatient_cost, self.outpatient_cost, self.professional_cost]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub stage3_fraction: f64,
    pub esrd_fraction_of_stage3: f64,
    pub esrd: StratumProfile,
    pub non_esrd: StratumProfile,
    /// Window (months after first stage 3) at which the targets hold.
    pub reference_window_months: u32,
    pub horizon_years: u32,
    pub start_date: NaiveDate,
    /// Strength of the ESRD utilization ramp; 0 disables it.
    pub esrd_ramp: f64,
    pub duplicate_rate: f64,
    pub reversal_rate: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 7129,
            stage3_fraction: 5518.0 / 7129.0,
            esrd_fraction_of_stage3: 1100.0 / 5518.0,
            esrd: StratumProfile::esrd_default(),
            non_esrd: StratumProfile::non_esrd_default(),
            reference_window_months: 24,
            horizon_years: 10,
            start_date: NaiveDate::from_ymd_opt(2009, 1, 1).unwrap(),
            esrd_ramp: 0.5,
            duplicate_rate: 0.005,
            reversal_rate: 0.002,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    /// `(stage-3 patients, ESRD patients)` implied by the fractions.
    pub fn stratum_sizes(&self) -> Result<(usize, usize)> {
        check_fraction("stage3_fraction", self.stage3_fraction)?;
        check_fraction("esrd_fraction_of_stage3", self.esrd_fraction_of_stage3)?;
        let n3 = round(self.n_patients as f64 * self.stage3_fraction) as usize;
        let ne = round(n3 as f64 * self.esrd_fraction_of_stage3) as usize;
        Ok((n3, ne))
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Infeasible(format!("{name} = {v} is outside [0, 1]")));
    }
    Ok(())
}

fn check_moments(name: &str, mo: Moments) -> Result<()> {
    if !(mo.mean.is_finite() && mo.sd.is_finite()) || mo.mean < 0.0 || mo.sd < 0.0 {
        return Err(Error::Infeasible(format!("{name}: mean and SD must be finite and >= 0")));
    }
    Ok(())
}

/// Negative-binomial count: Poisson with a Gamma(shape, 1/shape) rate factor.
#[derive(Debug, Clone, Copy)]
struct CountPlan {
    mean: f64,
    shape: Option<f64>,
}

impl CountPlan {
    fn new(name: &str, mo: Moments) -> Result<Self> {
        check_moments(name, mo)?;
        let var = mo.sd * mo.sd;
        if mo.mean == 0.0 {
            return Ok(Self { mean: 0.0, shape: None });
        }
        if var + 1e-12 < mo.mean {
            return Err(Error::Infeasible(format!(
                "{name}: variance {var} below mean {} cannot be reached by a Poisson mixture",
                mo.mean
            )));
        }
        let excess = var - mo.mean;
        let shape = (excess > 1e-12).then(|| mo.mean * mo.mean / excess);
        Ok(Self { mean: mo.mean, shape })
    }

    fn rate<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.shape {
            Some(a) => self.mean * Gamma::new(a, 1.0 / a).unwrap().sample(rng),
            None => self.mean,
        }
    }
}

/// Cost sum = patient multiplier (Gamma, mean 1, var `w`) times a sum of
/// per-claim Gamma amounts with squared CV `c`.
#[derive(Debug, Clone, Copy)]
struct CostPlan {
    per_claim_mean: f64,
    claim_shape: f64,
    patient_shape: Option<f64>,
}

impl CostPlan {
    /// Per-claim squared coefficient of variation tried first.
    const CLAIM_CV2: f64 = 1.0;

    fn new(name: &str, count_mean: f64, count_var: f64, target: Moments) -> Result<Self> {
        check_moments(name, target)?;
        if target.mean == 0.0 || count_mean == 0.0 {
            return Ok(Self { per_claim_mean: 0.0, claim_shape: 1.0, patient_shape: None });
        }
        let mu = target.mean / count_mean;
        // E[S^2] / mu^2 = (1 + w) * (m c + v + m^2) must equal V / mu^2 + m^2.
        let r = target.sd * target.sd / (mu * mu) + count_mean * count_mean;
        let base = count_var + count_mean * count_mean;
        let with_default = count_mean * Self::CLAIM_CV2 + base;
        let (c, w) = if r >= with_default {
            (Self::CLAIM_CV2, r / with_default - 1.0)
        } else {
            ((r - base) / count_mean, 0.0)
        };
        if c <= 1e-9 {
            return Err(Error::Infeasible(format!(
                "{name}: cost SD {} is too small for the count dispersion",
                target.sd
            )));
        }
        Ok(Self {
            per_claim_mean: mu,
            claim_shape: 1.0 / c,
            patient_shape: (w > 1e-12).then(|| 1.0 / w),
        })
    }

    fn multiplier<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.patient_shape {
            Some(a) => Gamma::new(a, 1.0 / a).unwrap().sample(rng),
            None => 1.0,
        }
    }

    fn claim<R: Rng>(&self, multiplier: f64, rng: &mut R) -> f64 {
        if self.per_claim_mean == 0.0 {
            return 0.0;
        }
        let k = self.claim_shape;
        multiplier * Gamma::new(k, self.per_claim_mean / k).unwrap().sample(rng)
    }
}

/// Stage-3 duration: progression with probability `p4` at `W * Beta(a, b)`.
#[derive(Debug, Clone, Copy)]
struct ProgressionPlan {
    p4: f64,
    p5_given_4: f64,
    beta: Option<(f64, f64)>,
}

impl ProgressionPlan {
    fn new(name: &str, profile: &StratumProfile, window_days: f64) -> Result<Self> {
        check_moments(name, profile.stage3_days)?;
        check_fraction("stage4", profile.stage4)?;
        check_fraction("stage5", profile.stage5)?;
        if profile.stage5 > profile.stage4 {
            return Err(Error::Infeasible(format!(
                "{name}: stage-5 rate {} exceeds stage-4 rate {}",
                profile.stage5, profile.stage4
            )));
        }
        let p4 = profile.stage4;
        let p5_given_4 = if p4 > 0.0 { profile.stage5 / p4 } else { 0.0 };
        if p4 == 0.0 {
            return Ok(Self { p4, p5_given_4, beta: None });
        }
        let w = window_days;
        let mo = profile.stage3_days;
        let mp = (mo.mean - (1.0 - p4) * w) / p4;
        let second = (mo.sd * mo.sd + mo.mean * mo.mean - (1.0 - p4) * w * w) / p4;
        let vp = second - mp * mp;
        let (mb, vb) = (mp / w, vp / (w * w));
        if !(mb > 0.0 && mb < 1.0 && vb > 0.0 && vb < mb * (1.0 - mb)) {
            return Err(Error::Infeasible(format!(
                "{name}: stage-3 duration {:?} is unreachable with stage-4 rate {p4} in a {w:.0}-day window",
                mo
            )));
        }
        let nu = mb * (1.0 - mb) / vb - 1.0;
        Ok(Self { p4, p5_given_4, beta: Some((mb * nu, (1.0 - mb) * nu)) })
    }
}

#[derive(Debug, Clone)]
struct StratumPlan {
    counts: [CountPlan; 4],
    outpatient_background: CountPlan,
    ed: CountPlan,
    costs: [CostPlan; 4],
    progression: ProgressionPlan,
    age: Moments,
    male: f64,
    comorbidities: [f64; 11],
}

/// Claim types in feature order (CM1..CM4).
pub const COUNTED_TYPES: [ClaimType; 4] =
    [ClaimType::Pharmacy, ClaimType::Inpatient, ClaimType::Outpatient, ClaimType::Professional];

const NAMES: [&str; 4] = ["pharmacy", "inpatient", "outpatient", "professional"];

impl StratumPlan {
    fn new(label: &str, p: &StratumProfile, window_days: f64) -> Result<Self> {
        let mut counts = [CountPlan { mean: 0.0, shape: None }; 4];
        let mut costs = [CostPlan { per_claim_mean: 0.0, claim_shape: 1.0, patient_shape: None }; 4];
        let ct = p.count_targets();
        let cs = p.cost_targets();
        for i in 0..4 {
            counts[i] = CountPlan::new(&format!("{label} {} count", NAMES[i]), ct[i])?;
            costs[i] = CostPlan::new(
                &format!("{label} {} cost", NAMES[i]),
                ct[i].mean,
                ct[i].sd * ct[i].sd,
                cs[i],
            )?;
        }
        let ed = CountPlan::new(&format!("{label} ED visits"), p.ed_visits)?;
        let out = p.outpatient_count;
        let bg = Moments {
            mean: out.mean - p.ed_visits.mean,
            sd: libm::sqrt((out.sd * out.sd - p.ed_visits.sd * p.ed_visits.sd).max(0.0)),
        };
        if bg.mean < 0.0 {
            return Err(Error::Infeasible(format!("{label}: ED visits exceed outpatient claims")));
        }
        let outpatient_background = CountPlan::new(&format!("{label} non-ED outpatient count"), bg)?;
        check_moments(&format!("{label} age"), p.age)?;
        check_fraction("male", p.male)?;
        for (i, &c) in p.comorbidities.iter().enumerate() {
            check_fraction(EventCode::COMORBIDITIES[i].as_str(), c)?;
        }
        Ok(Self {
            counts,
            outpatient_background,
            ed,
            costs,
            progression: ProgressionPlan::new(label, p, window_days)?,
            age: p.age,
            male: p.male,
            comorbidities: p.comorbidities,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Esrd,
    NonEsrd,
    /// No stage-3 diagnosis; removed at the first funnel step.
    NoStage3,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub patients: usize,
    pub stage3: usize,
    pub esrd: usize,
    pub non_esrd: usize,
    pub claims: usize,
    pub duplicates_injected: usize,
    pub reversals_injected: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Sorted by patient id, then service date, then claim id.
    pub claims: Vec<ClaimRecord>,
    pub demographics: Vec<PatientDemographics>,
    /// Stratum of each entry in `demographics`.
    pub strata: Vec<Stratum>,
    pub summary: SynthSummary,
}

/// Mean length in days of the reference window, used for calibration.
fn mean_window_days(months: u32) -> f64 {
    months as f64 * 365.2425 / 12.0
}

/// Validates `config` and precomputes per-stratum sampling parameters.
fn calibrate(config: &SynthConfig) -> Result<(StratumPlan, StratumPlan)> {
    if config.reference_window_months < 3 {
        return Err(Error::InvalidConfig("reference_window_months must be >= 3".into()));
    }
    for (name, v) in [("duplicate_rate", config.duplicate_rate), ("reversal_rate", config.reversal_rate)] {
        check_fraction(name, v)?;
    }
    if !config.esrd_ramp.is_finite() || config.esrd_ramp < 0.0 {
        return Err(Error::InvalidConfig("esrd_ramp must be finite and >= 0".into()));
    }
    let w = mean_window_days(config.reference_window_months);
    Ok((StratumPlan::new("ESRD", &config.esrd, w)?, StratumPlan::new("non-ESRD", &config.non_esrd, w)?))
}

/// Density proportional to `exp(kappa * t / len)`.
#[derive(Debug, Clone, Copy)]
struct Ramp {
    kappa: f64,
    len: f64,
}

impl Ramp {
    fn is_flat(&self) -> bool {
        self.kappa.abs() < 1e-9
    }

    fn mass(&self, a: f64, b: f64) -> f64 {
        if self.is_flat() {
            return b - a;
        }
        let s = self.kappa / self.len;
        (exp(s * b) - exp(s * a)) / s
    }

    /// Inverse-CDF draw on `[a, b)`.
    fn sample<R: Rng>(&self, a: f64, b: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if self.is_flat() {
            return a + u * (b - a);
        }
        let s = self.kappa / self.len;
        a + log1p(u * (exp(s * (b - a)) - 1.0)) / s
    }
}

fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 || !lambda.is_finite() {
        return 0;
    }
    Poisson::new(lambda).unwrap().sample(rng) as u64
}

fn cents(x: f64) -> f64 {
    round(x * 100.0) / 100.0
}

/// A claim under construction, dated in days relative to the anchor.
#[derive(Debug, Clone)]
struct Draft {
    day: i64,
    claim_type: ClaimType,
    cost: f64,
    codes: EventSet,
    ed: bool,
}

struct PatientOut {
    claims: Vec<ClaimRecord>,
    demographics: PatientDemographics,
    duplicates: usize,
    reversals: usize,
}

/// Share of comorbidity onsets that precede the first stage-3 diagnosis.
const PRE_ANCHOR_ONSET: f64 = 0.6;
/// Tail utilization relative to the window rate.
const TAIL_RATE: f64 = 0.25;
const VISION_PER_YEAR: f64 = 1.0;
const VISION_MEAN_COST: f64 = 150.0;

struct Ctx<'a> {
    config: &'a SynthConfig,
    anchor_spread: i64,
    horizon_end: NaiveDate,
}

impl Ctx<'_> {
    fn draw_age<R: Rng>(&self, mo: Moments, rng: &mut R) -> f64 {
        // +0.5 so that the floored age has the target mean.
        let normal = Normal::new(mo.mean + 0.5, mo.sd).unwrap();
        for _ in 0..1000 {
            let a = normal.sample(rng);
            if (18.0..110.0).contains(&a) {
                return a;
            }
        }
        (mo.mean + 0.5).clamp(18.0, 109.0)
    }

    fn anchor<R: Rng>(&self, rng: &mut R) -> NaiveDate {
        let offset = 730 + rng.random_range(0..=self.anchor_spread) as u64;
        self.config.start_date + Days::new(offset)
    }

    fn birth_date(anchor: NaiveDate, age: f64) -> NaiveDate {
        anchor - Days::new(round(age * 365.2425) as u64)
    }

    fn stage3_patient(&self, pid: &PatientId, plan: &StratumPlan, esrd: bool, rng: &mut StreamRng) -> PatientOut {
        let cfg = self.config;
        let age = self.draw_age(plan.age, rng);
        let gender = if rng.random_bool(plan.male) { Gender::Male } else { Gender::Female };
        let anchor = self.anchor(rng);
        let birth_date = Self::birth_date(anchor, age);
        let ref_end = add_months(anchor, cfg.reference_window_months).unwrap();
        let dense_end = add_months(anchor, cfg.reference_window_months + 6).unwrap();
        let w = (ref_end - anchor).num_days();
        let w2 = (dense_end - anchor).num_days();
        let horizon = (self.horizon_end - anchor).num_days();

        // Progression and outcome, as day offsets from the anchor.
        let prog = plan.progression;
        let mut stage4 = None;
        let mut stage5 = None;
        if rng.random_bool(prog.p4) {
            let (a, b) = prog.beta.unwrap();
            let x: f64 = Beta::new(a, b).unwrap().sample(rng);
            let d = (round(x * w as f64) as i64).clamp(0, w);
            stage4 = Some(d);
            if rng.random_bool(prog.p5_given_4.min(1.0)) {
                stage5 = Some(d + (floor(rng.random::<f64>() * (w - d + 1) as f64) as i64).min(w - d));
            }
        }
        let esrd_day = esrd.then(|| {
            let gap: f64 = Gamma::new(2.0, 180.0).unwrap().sample(rng);
            (w + 1 + round(gap) as i64).min(horizon - 1)
        });
        let follow_up = match esrd_day {
            Some(e) => (e + rng.random_range(60..=720)).min(horizon),
            None => {
                let tail: f64 = Gamma::new(1.0, 720.0).unwrap().sample(rng);
                (w + 1 + round(tail) as i64).min(horizon)
            }
        };
        if esrd && stage4.is_none() && rng.random_bool(0.8) {
            let e = esrd_day.unwrap();
            stage4 = Some(w + 1 + rng.random_range(0..(e - w).max(1)));
        }

        let ramp = Ramp { kappa: if esrd { cfg.esrd_ramp } else { 0.0 }, len: (w + 1) as f64 };
        let window_mass = ramp.mass(0.0, (w + 1) as f64);
        let dense_stop = w2.min(follow_up - 1);
        let mut drafts: Vec<Draft> = Vec::with_capacity(320);

        let emit = |drafts: &mut Vec<Draft>, claim_type: ClaimType, rate: f64, cost: &CostPlan, mult: f64, ed: bool, rng: &mut StreamRng| {
            let mut push = |day: i64, rng: &mut StreamRng| {
                let mut codes = EventSet::EMPTY;
                if ed {
                    codes.insert(EventCode::EdVisit);
                }
                drafts.push(Draft { day, claim_type, cost: cents(cost.claim(mult, rng)), codes, ed });
            };
            let (a, b) = (0.0, (w + 1) as f64);
            for _ in 0..poisson(rate, rng) {
                let t = ramp.sample(a, b, rng);
                push((floor(t) as i64).min(w), rng);
            }
            if dense_stop > w {
                let (a, b) = ((w + 1) as f64, (dense_stop + 1) as f64);
                for _ in 0..poisson(rate * ramp.mass(a, b) / window_mass, rng) {
                    let t = ramp.sample(a, b, rng);
                    push((floor(t) as i64).clamp(w + 1, dense_stop), rng);
                }
            }
            if follow_up - 1 > dense_stop {
                let (a, b) = ((dense_stop + 1) as f64, follow_up as f64);
                let lambda = TAIL_RATE * rate / (w + 1) as f64 * (b - a);
                for _ in 0..poisson(lambda, rng) {
                    let t = a + rng.random::<f64>() * (b - a);
                    push((floor(t) as i64).clamp(dense_stop + 1, follow_up - 1), rng);
                }
            }
        };

        for (i, &t) in COUNTED_TYPES.iter().enumerate() {
            let mult = plan.costs[i].multiplier(rng);
            if t == ClaimType::Outpatient {
                let bg = plan.outpatient_background.rate(rng);
                let ed = plan.ed.rate(rng);
                emit(&mut drafts, t, bg, &plan.costs[i], mult, false, rng);
                emit(&mut drafts, t, ed, &plan.costs[i], mult, true, rng);
            } else {
                let rate = plan.counts[i].rate(rng);
                emit(&mut drafts, t, rate, &plan.costs[i], mult, false, rng);
            }
        }
        let vision = CostPlan { per_claim_mean: VISION_MEAN_COST, claim_shape: 1.0, patient_shape: None };
        for _ in 0..poisson(VISION_PER_YEAR * follow_up as f64 / 365.2425, rng) {
            let day = rng.random_range(0..follow_up);
            drafts.push(Draft {
                day,
                claim_type: ClaimType::Vision,
                cost: cents(vision.claim(1.0, rng)),
                codes: EventSet::EMPTY,
                ed: false,
            });
        }

        // Diagnosis events.
        let prof = plan.costs[3];
        let prof_mult = 1.0;
        let diag = |drafts: &mut Vec<Draft>, day: i64, code: EventCode, rng: &mut StreamRng| {
            if (0..=w).contains(&day) {
                // Re-date the nearest uncoded in-window professional claim.
                let best = drafts
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| {
                        d.claim_type == ClaimType::Professional && d.codes.is_empty() && (0..=w).contains(&d.day)
                    })
                    .min_by_key(|(i, d)| ((d.day - day).abs(), *i))
                    .map(|(i, _)| i);
                if let Some(i) = best {
                    drafts[i].day = day;
                    drafts[i].codes.insert(code);
                    return;
                }
            }
            drafts.push(Draft {
                day,
                claim_type: ClaimType::Professional,
                cost: cents(prof.claim(prof_mult, rng)),
                codes: EventSet::from_codes([code]),
                ed: false,
            });
        };

        diag(&mut drafts, 0, EventCode::Ckd3, rng);
        if let Some(d) = stage4 {
            diag(&mut drafts, d, EventCode::Ckd4, rng);
        }
        if let Some(d) = stage5 {
            diag(&mut drafts, d, EventCode::Ckd5, rng);
        }
        for (k, &p) in plan.comorbidities.iter().enumerate() {
            if rng.random_bool(p) {
                let day = if rng.random_bool(PRE_ANCHOR_ONSET) {
                    -rng.random_range(1..=730)
                } else {
                    rng.random_range(0..=w)
                };
                diag(&mut drafts, day, EventCode::COMORBIDITIES[k], rng);
            }
        }
        if let Some(e) = esrd_day {
            let transplant = rng.random_bool(0.1);
            let (code, t) = if transplant {
                (EventCode::Transplant, ClaimType::Inpatient)
            } else {
                (EventCode::Dialysis, ClaimType::Outpatient)
            };
            let idx = if transplant { 1 } else { 2 };
            drafts.push(Draft {
                day: e,
                claim_type: t,
                cost: cents(plan.costs[idx].claim(1.0, rng)),
                codes: EventSet::from_codes([code]),
                ed: false,
            });
            if !transplant {
                let mut d = e + 30;
                while d < follow_up {
                    drafts.push(Draft {
                        day: d,
                        claim_type: ClaimType::Outpatient,
                        cost: cents(plan.costs[2].claim(1.0, rng)),
                        codes: EventSet::from_codes([EventCode::Dialysis]),
                        ed: false,
                    });
                    d += 30;
                }
            }
        }
        // Final contact closes the follow-up period.
        drafts.push(Draft {
            day: follow_up,
            claim_type: ClaimType::Pharmacy,
            cost: cents(plan.costs[0].claim(1.0, rng)),
            codes: EventSet::EMPTY,
            ed: false,
        });

        self.finish(pid, anchor, gender, birth_date, drafts, rng)
    }

    fn no_stage3_patient(&self, pid: &PatientId, rng: &mut StreamRng) -> PatientOut {
        let age = self.draw_age(m(72.0, 11.0), rng);
        let gender = if rng.random_bool(0.55) { Gender::Male } else { Gender::Female };
        let anchor = self.anchor(rng);
        let birth_date = Self::birth_date(anchor, age);
        let horizon = (self.horizon_end - anchor).num_days();
        let pharm = CostPlan { per_claim_mean: 90.0, claim_shape: 1.0, patient_shape: None };
        let prof = CostPlan { per_claim_mean: 140.0, claim_shape: 1.0, patient_shape: None };
        let span = 730.min(horizon);
        let mut drafts = alloc::vec![Draft {
            day: 0,
            claim_type: ClaimType::Professional,
            cost: cents(prof.claim(1.0, rng)),
            codes: EventSet::from_codes([EventCode::Ckd4]),
            ed: false,
        }];
        if rng.random_bool(0.3) {
            drafts.push(Draft {
                day: rng.random_range(1..=span),
                claim_type: ClaimType::Professional,
                cost: cents(prof.claim(1.0, rng)),
                codes: EventSet::from_codes([EventCode::Ckd5]),
                ed: false,
            });
        }
        for _ in 0..rng.random_range(3..=15) {
            let t = if rng.random_bool(0.6) { ClaimType::Pharmacy } else { ClaimType::Professional };
            let plan = if t == ClaimType::Pharmacy { &pharm } else { &prof };
            drafts.push(Draft {
                day: rng.random_range(0..=span),
                claim_type: t,
                cost: cents(plan.claim(1.0, rng)),
                codes: EventSet::EMPTY,
                ed: false,
            });
        }
        self.finish(pid, anchor, gender, birth_date, drafts, rng)
    }

    fn finish(
        &self,
        pid: &PatientId,
        anchor: NaiveDate,
        gender: Gender,
        birth_date: NaiveDate,
        mut drafts: Vec<Draft>,
        rng: &mut StreamRng,
    ) -> PatientOut {
        let cfg = self.config;
        drafts.sort_by_key(|d| d.day);
        let mut claims = Vec::with_capacity(drafts.len() + 4);
        let (mut duplicates, mut reversals) = (0, 0);
        let mut seq = 0u32;
        let next_id = |seq: &mut u32| {
            *seq += 1;
            ClaimId::new(&format!("{pid}-{:05}", *seq))
        };
        for d in drafts {
            let date = if d.day >= 0 {
                anchor + Days::new(d.day as u64)
            } else {
                anchor - Days::new(d.day.unsigned_abs())
            };
            let rec = ClaimRecord {
                patient_id: pid.clone(),
                claim_id: next_id(&mut seq),
                claim_type: d.claim_type,
                service_date: date,
                cost: d.cost,
                event_codes: d.codes,
                ed_visit: d.ed,
            };
            let dup = rng.random_bool(cfg.duplicate_rate);
            let rev = rng.random_bool(cfg.reversal_rate);
            if dup {
                let mut c = rec.clone();
                c.claim_id = next_id(&mut seq);
                claims.push(c);
                duplicates += 1;
            }
            if rev && rec.cost > 0.0 {
                let mut c = rec.clone();
                c.claim_id = next_id(&mut seq);
                c.cost = -rec.cost;
                c.event_codes = EventSet::EMPTY;
                c.ed_visit = false;
                claims.push(c);
                reversals += 1;
            }
            claims.push(rec);
        }
        claims.sort_by(|a, b| a.service_date.cmp(&b.service_date).then_with(|| a.claim_id.cmp(&b.claim_id)));
        PatientOut {
            claims,
            demographics: PatientDemographics { patient_id: pid.clone(), gender, birth_date },
            duplicates,
            reversals,
        }
    }
}

/// Patient id for the `index`-th generated patient (0-based).
pub fn patient_id(index: usize) -> PatientId {
    PatientId(smol_str::format_smolstr!("P{:07}", index + 1))
}

/// Generates a synthetic claims extract. Output is a pure function of the
/// configuration (including `rng_seed`), independent of thread count.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    let (n3, ne) = config.stratum_sizes()?;
    let (esrd_plan, non_plan) = calibrate(config)?;
    let horizon_end = add_months(config.start_date, config.horizon_years.saturating_mul(12))?;
    let horizon_days = (horizon_end - config.start_date).num_days();
    let longest = mean_window_days(config.reference_window_months + 6) as i64 + 4;
    let anchor_spread = (horizon_days - 730 - longest - 60).min(1095);
    if anchor_spread < 0 {
        return Err(Error::Infeasible(format!(
            "horizon of {} years is too short for a {}-month reference window",
            config.horizon_years, config.reference_window_months
        )));
    }

    let n = config.n_patients;
    let mut strata: Vec<Stratum> = (0..n)
        .map(|i| {
            if i < ne {
                Stratum::Esrd
            } else if i < n3 {
                Stratum::NonEsrd
            } else {
                Stratum::NoStage3
            }
        })
        .collect();
    let mut perm_rng = stream(derive_seed(config.rng_seed, &[0]), 0);
    shuffle(&mut strata, &mut perm_rng);

    let ctx = Ctx { config, anchor_spread, horizon_end };
    let outs = crate::par::map_range(n, |i| {
        let pid = patient_id(i);
        let mut rng = stream(derive_seed(config.rng_seed, &[1, i as u64]), 0);
        match strata[i] {
            Stratum::Esrd => ctx.stage3_patient(&pid, &esrd_plan, true, &mut rng),
            Stratum::NonEsrd => ctx.stage3_patient(&pid, &non_plan, false, &mut rng),
            Stratum::NoStage3 => ctx.no_stage3_patient(&pid, &mut rng),
        }
    });

    let mut summary = SynthSummary { patients: n, stage3: n3, esrd: ne, non_esrd: n3 - ne, ..Default::default() };
    let total: usize = outs.iter().map(|o| o.claims.len()).sum();
    let mut claims = Vec::with_capacity(total);
    let mut demographics = Vec::with_capacity(n);
    for o in outs {
        summary.duplicates_injected += o.duplicates;
        summary.reversals_injected += o.reversals;
        claims.extend(o.claims);
        demographics.push(o.demographics);
    }
    summary.claims = claims.len();
    Ok(SyntheticData { claims, demographics, strata, summary })
}

/// Human-readable description of an infeasible profile, if any.
pub fn validate(config: &SynthConfig) -> core::result::Result<(), String> {
    config.stratum_sizes().and_then(|_| calibrate(config)).map(|_| ()).map_err(|e| format!("{e}"))
}
