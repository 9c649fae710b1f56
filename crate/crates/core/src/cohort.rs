//! Per-patient timelines, observation windows and the four-step cohort funnel.

use alloc::format;
use alloc::vec::Vec;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::claims::{ClaimRecord, EventCode, Gender, PatientDemographics, PatientId};
use crate::error::{Error, Result};

/// `date` plus `months` calendar months, with the day clamped to the length of
/// the target month (Jan 31 + 1 month = Feb 28/29).
pub fn add_months(date: NaiveDate, months: u32) -> Result<NaiveDate> {
    date.checked_add_months(Months::new(months))
        .ok_or_else(|| Error::Window(format!("{date} + {months} months overflows")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientTimeline {
    pub patient_id: PatientId,
    pub gender: Gender,
    pub birth_date: NaiveDate,
    /// Sorted by `(service_date, claim_id)`.
    pub claims: Vec<ClaimRecord>,
    pub first_ckd3: Option<NaiveDate>,
    pub first_ckd4: Option<NaiveDate>,
    pub first_ckd5: Option<NaiveDate>,
    /// Earliest DIALYSIS or TRANSPLANT.
    pub first_esrd: Option<NaiveDate>,
    pub last_record: NaiveDate,
    first_code: [Option<NaiveDate>; EventCode::COUNT],
}

impl PatientTimeline {
    fn from_claims(demo: &PatientDemographics, mut claims: Vec<ClaimRecord>) -> Self {
        claims.sort_by(|a, b| {
            a.service_date
                .cmp(&b.service_date)
                .then_with(|| a.claim_id.cmp(&b.claim_id))
        });
        let mut first_code = [None; EventCode::COUNT];
        for c in &claims {
            for code in c.event_codes.iter() {
                let slot = &mut first_code[code.index()];
                if slot.is_none() {
                    *slot = Some(c.service_date);
                }
            }
        }
        let first_esrd = match (
            first_code[EventCode::Dialysis.index()],
            first_code[EventCode::Transplant.index()],
        ) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let last_record = claims.last().map(|c| c.service_date).unwrap_or(NaiveDate::MIN);
        PatientTimeline {
            patient_id: demo.patient_id.clone(),
            gender: demo.gender,
            birth_date: demo.birth_date,
            first_ckd3: first_code[EventCode::Ckd3.index()],
            first_ckd4: first_code[EventCode::Ckd4.index()],
            first_ckd5: first_code[EventCode::Ckd5.index()],
            first_esrd,
            last_record,
            claims,
            first_code,
        }
    }

    /// Earliest service date carrying `code`.
    pub fn first_occurrence(&self, code: EventCode) -> Option<NaiveDate> {
        self.first_code[code.index()]
    }
}

/// Groups cleaned claims by patient. Timelines come back sorted by patient id.
pub fn build_timelines(
    claims: Vec<ClaimRecord>,
    demographics: &[PatientDemographics],
) -> Result<Vec<PatientTimeline>> {
    let mut demo: Vec<&PatientDemographics> = demographics.iter().collect();
    demo.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    let mut claims = claims;
    claims.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    let mut out = Vec::new();
    let mut iter = claims.into_iter().peekable();
    while let Some(first) = iter.next() {
        let pid = first.patient_id.clone();
        let mut group = alloc::vec![first];
        while iter.peek().is_some_and(|c| c.patient_id == pid) {
            group.push(iter.next().unwrap());
        }
        let d = demo
            .binary_search_by(|d| d.patient_id.cmp(&pid))
            .map(|i| demo[i])
            .map_err(|_| Error::MissingDemographics(pid.as_str().into()))?;
        out.push(PatientTimeline::from_claims(d, group));
    }
    Ok(out)
}

/// `[anchor, end]` with `end = anchor + months` calendar months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub months: u32,
    pub anchor: NaiveDate,
    pub end: NaiveDate,
}

impl ObservationWindow {
    pub fn new(anchor: NaiveDate, months: u32) -> Result<Self> {
        if months == 0 {
            return Err(Error::Window("window months must be positive".into()));
        }
        let end = add_months(anchor, months)?;
        Ok(Self { months, anchor, end })
    }

    /// Day count from anchor to end.
    pub fn days(&self) -> i64 {
        (self.end - self.anchor).num_days()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.anchor && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NoCkd3,
    InsufficientFollowUp,
    EsrdInWindow,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::NoCkd3 => "no_ckd3",
            ExclusionReason::InsufficientFollowUp => "insufficient_follow_up",
            ExclusionReason::EsrdInWindow => "esrd_in_window",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: PatientId,
    pub reason: ExclusionReason,
    /// Window bounds, when the patient had an anchor.
    pub window: Option<ObservationWindow>,
}

/// Patients remaining after each funnel step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelCounts {
    pub total: usize,
    pub with_ckd3: usize,
    pub follow_up_beyond_window: usize,
    pub no_esrd_in_window: usize,
    pub labeled: usize,
    pub positives: usize,
}

impl FunnelCounts {
    pub fn steps(&self) -> [usize; 4] {
        [self.with_ckd3, self.follow_up_beyond_window, self.no_esrd_in_window, self.labeled]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CohortMember<'a> {
    pub timeline: &'a PatientTimeline,
    pub window: ObservationWindow,
    /// ESRD after the window end.
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct CohortResult<'a> {
    pub window_months: u32,
    pub members: Vec<CohortMember<'a>>,
    pub funnel: FunnelCounts,
    pub exclusions: Vec<Exclusion>,
}

pub fn identify_cohort(timelines: &[PatientTimeline], window_months: u32) -> Result<CohortResult<'_>> {
    if window_months == 0 {
        return Err(Error::Window("window months must be positive".into()));
    }
    let mut funnel = FunnelCounts { total: timelines.len(), ..FunnelCounts::default() };
    let mut members = Vec::new();
    let mut exclusions = Vec::new();

    for tl in timelines {
        let Some(anchor) = tl.first_ckd3 else {
            exclusions.push(Exclusion {
                patient_id: tl.patient_id.clone(),
                reason: ExclusionReason::NoCkd3,
                window: None,
            });
            continue;
        };
        funnel.with_ckd3 += 1;
        let window = ObservationWindow::new(anchor, window_months)?;
        if tl.last_record <= window.end {
            exclusions.push(Exclusion {
                patient_id: tl.patient_id.clone(),
                reason: ExclusionReason::InsufficientFollowUp,
                window: Some(window),
            });
            continue;
        }
        funnel.follow_up_beyond_window += 1;
        if tl.first_esrd.is_some_and(|d| d <= window.end) {
            exclusions.push(Exclusion {
                patient_id: tl.patient_id.clone(),
                reason: ExclusionReason::EsrdInWindow,
                window: Some(window),
            });
            continue;
        }
        funnel.no_esrd_in_window += 1;
        let label = tl.first_esrd.is_some();
        funnel.labeled += 1;
        funnel.positives += label as usize;
        members.push(CohortMember { timeline: tl, window, label });
    }
    members.sort_by(|a, b| a.timeline.patient_id.cmp(&b.timeline.patient_id));
    exclusions.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(CohortResult { window_months, members, funnel, exclusions })
}
