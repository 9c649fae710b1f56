//! Claims data model plus the two cleaning passes (duplicate removal and
//! negative-cost / non-CKD exclusion).

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use smol_str::SmolStr;

use crate::error::{Error, Result};

/// Opaque patient identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub SmolStr);

impl PatientId {
    pub fn new(s: &str) -> Self {
        Self(SmolStr::new(s))
    }

    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Opaque claim identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClaimId(pub SmolStr);

impl ClaimId {
    pub fn new(s: &str) -> Self {
        Self(SmolStr::new(s))
    }

    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }
}

impl fmt::Display for ClaimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimType {
    Inpatient,
    Outpatient,
    Professional,
    Pharmacy,
    Vision,
}

impl ClaimType {
    pub const ALL: [ClaimType; 5] = [
        ClaimType::Inpatient,
        ClaimType::Outpatient,
        ClaimType::Professional,
        ClaimType::Pharmacy,
        ClaimType::Vision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimType::Inpatient => "inpatient",
            ClaimType::Outpatient => "outpatient",
            ClaimType::Professional => "professional",
            ClaimType::Pharmacy => "pharmacy",
            ClaimType::Vision => "vision",
        }
    }
}

impl fmt::Display for ClaimType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClaimType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        ClaimType::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Parse(alloc::format!("unknown claim type {t:?}")))
    }
}

/// Canonical event vocabulary. External coding systems are mapped onto
/// these through a code map; the core never sees ICD or CPT codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum EventCode {
    Ckd3 = 0,
    Ckd4,
    Ckd5,
    Dialysis,
    Transplant,
    Diabetes,
    Anemia,
    MetabolicAcidosis,
    Proteinuria,
    SecHyperparathyroidism,
    Phosphatemia,
    Atherosclerosis,
    HeartFailure,
    Stroke,
    ConductionDysrhythmia,
    Hypertension,
    EdVisit,
}

impl EventCode {
    pub const COUNT: usize = 17;

    pub const ALL: [EventCode; Self::COUNT] = [
        EventCode::Ckd3,
        EventCode::Ckd4,
        EventCode::Ckd5,
        EventCode::Dialysis,
        EventCode::Transplant,
        EventCode::Diabetes,
        EventCode::Anemia,
        EventCode::MetabolicAcidosis,
        EventCode::Proteinuria,
        EventCode::SecHyperparathyroidism,
        EventCode::Phosphatemia,
        EventCode::Atherosclerosis,
        EventCode::HeartFailure,
        EventCode::Stroke,
        EventCode::ConductionDysrhythmia,
        EventCode::Hypertension,
        EventCode::EdVisit,
    ];

    /// Comorbidities in CL7..CL17 order.
    pub const COMORBIDITIES: [EventCode; 11] = [
        EventCode::Diabetes,
        EventCode::Anemia,
        EventCode::MetabolicAcidosis,
        EventCode::Proteinuria,
        EventCode::SecHyperparathyroidism,
        EventCode::Phosphatemia,
        EventCode::Atherosclerosis,
        EventCode::HeartFailure,
        EventCode::Stroke,
        EventCode::ConductionDysrhythmia,
        EventCode::Hypertension,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventCode::Ckd3 => "CKD3",
            EventCode::Ckd4 => "CKD4",
            EventCode::Ckd5 => "CKD5",
            EventCode::Dialysis => "DIALYSIS",
            EventCode::Transplant => "TRANSPLANT",
            EventCode::Diabetes => "DIABETES",
            EventCode::Anemia => "ANEMIA",
            EventCode::MetabolicAcidosis => "METABOLIC_ACIDOSIS",
            EventCode::Proteinuria => "PROTEINURIA",
            EventCode::SecHyperparathyroidism => "SEC_HYPERPARATHYROIDISM",
            EventCode::Phosphatemia => "PHOSPHATEMIA",
            EventCode::Atherosclerosis => "ATHEROSCLEROSIS",
            EventCode::HeartFailure => "HEART_FAILURE",
            EventCode::Stroke => "STROKE",
            EventCode::ConductionDysrhythmia => "CONDUCTION_DYSRHYTHMIA",
            EventCode::Hypertension => "HYPERTENSION",
            EventCode::EdVisit => "ED_VISIT",
        }
    }

    pub fn is_ckd_stage(self) -> bool {
        matches!(self, EventCode::Ckd3 | EventCode::Ckd4 | EventCode::Ckd5)
    }

    pub fn is_esrd(self) -> bool {
        matches!(self, EventCode::Dialysis | EventCode::Transplant)
    }
}

impl fmt::Display for EventCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        EventCode::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Parse(alloc::format!("unknown event code {t:?}")))
    }
}

/// Set of [`EventCode`]s packed into a bitmask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventSet(u32);

impl EventSet {
    pub const EMPTY: EventSet = EventSet(0);

    pub fn from_codes<I: IntoIterator<Item = EventCode>>(codes: I) -> Self {
        let mut s = EventSet::EMPTY;
        for c in codes {
            s.insert(c);
        }
        s
    }

    #[inline]
    pub fn insert(&mut self, code: EventCode) {
        self.0 |= 1 << code.index();
    }

    #[inline]
    pub fn contains(self, code: EventCode) -> bool {
        self.0 & (1 << code.index()) != 0
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = EventCode> {
        EventCode::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    pub fn has_ckd_stage(self) -> bool {
        self.contains(EventCode::Ckd3) || self.contains(EventCode::Ckd4) || self.contains(EventCode::Ckd5)
    }
}

impl Serialize for EventSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for EventSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let codes = Vec::<EventCode>::deserialize(d)?;
        Ok(EventSet::from_codes(codes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub patient_id: PatientId,
    pub claim_id: ClaimId,
    pub claim_type: ClaimType,
    pub service_date: NaiveDate,
    /// Currency amount. May be negative before cleaning.
    pub cost: f64,
    pub event_codes: EventSet,
    pub ed_visit: bool,
}

impl ClaimRecord {
    /// An emergency-department visit is flagged either on the claim or by the
    /// ED_VISIT event code.
    pub fn is_ed_visit(&self) -> bool {
        self.ed_visit || self.event_codes.contains(EventCode::EdVisit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Gender::Male),
            "F" | "f" => Ok(Gender::Female),
            other => Err(Error::Parse(alloc::format!("unknown gender {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientDemographics {
    pub patient_id: PatientId,
    pub gender: Gender,
    pub birth_date: NaiveDate,
}

/// Collapses repeated demographics rows, rejecting conflicting duplicates.
pub fn merge_demographics(rows: Vec<PatientDemographics>) -> Result<Vec<PatientDemographics>> {
    let mut rows = rows;
    rows.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let mut out: Vec<PatientDemographics> = Vec::with_capacity(rows.len());
    for row in rows {
        match out.last() {
            Some(prev) if prev.patient_id == row.patient_id => {
                if prev != &row {
                    return Err(Error::ConflictingDemographics(String::from(row.patient_id.as_str())));
                }
            }
            _ => out.push(row),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub input: usize,
    pub removed: usize,
}

/// Key used to detect duplicate claims. The claim identifier is not part of
/// it: resubmitted claims carry fresh identifiers.
fn dedup_key(c: &ClaimRecord) -> (&PatientId, ClaimType, NaiveDate, u64, EventSet) {
    // -0.0 and 0.0 compare equal as amounts.
    let cost = if c.cost == 0.0 { 0.0f64 } else { c.cost };
    (&c.patient_id, c.claim_type, c.service_date, cost.to_bits(), c.event_codes)
}

/// Keeps the first occurrence (in input order) of every dedup key.
pub fn deduplicate(claims: Vec<ClaimRecord>) -> (Vec<ClaimRecord>, DedupReport) {
    let n = claims.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        dedup_key(&claims[a as usize])
            .cmp(&dedup_key(&claims[b as usize]))
            .then(a.cmp(&b))
    });
    let mut keep = alloc::vec![false; n];
    let mut prev: Option<u32> = None;
    for &i in &order {
        let first = match prev {
            Some(p) => dedup_key(&claims[p as usize]) != dedup_key(&claims[i as usize]),
            None => true,
        };
        if first {
            keep[i as usize] = true;
            prev = Some(i);
        }
    }
    let out: Vec<ClaimRecord> = claims
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect();
    let report = DedupReport { input: n, removed: n - out.len() };
    (out, report)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input_claims: usize,
    pub negative_cost_removed: usize,
    pub no_ckd_claims_removed: usize,
    pub no_ckd_patients_removed: usize,
}

#[derive(Debug, Clone)]
pub struct Cleaned {
    pub claims: Vec<ClaimRecord>,
    pub demographics: Vec<PatientDemographics>,
    pub report: CleanReport,
}

/// Drops negative-cost claims, then every claim of patients left without any
/// CKD stage 3/4/5 code. Demographics are restricted to surviving patients.
pub fn clean(claims: Vec<ClaimRecord>, demographics: &[PatientDemographics]) -> Cleaned {
    let input_claims = claims.len();
    let mut claims: Vec<ClaimRecord> = claims.into_iter().filter(|c| c.cost >= 0.0).collect();
    let negative_cost_removed = input_claims - claims.len();

    let all_patients: BTreeSet<&PatientId> = claims.iter().map(|c| &c.patient_id).collect();
    let with_ckd: BTreeSet<PatientId> = claims
        .iter()
        .filter(|c| c.event_codes.has_ckd_stage())
        .map(|c| c.patient_id.clone())
        .collect();
    let no_ckd_patients_removed = all_patients.len() - with_ckd.len();

    let before = claims.len();
    claims.retain(|c| with_ckd.contains(&c.patient_id));
    let no_ckd_claims_removed = before - claims.len();

    let demographics = demographics
        .iter()
        .filter(|d| with_ckd.contains(&d.patient_id))
        .cloned()
        .collect();

    Cleaned {
        claims,
        demographics,
        report: CleanReport {
            input_claims,
            negative_cost_removed,
            no_ckd_claims_removed,
            no_ckd_patients_removed,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 1, 1).unwrap() + chrono::Days::new(day as u64)
    }

    fn claim(pid: &str, cid: &str, t: ClaimType, day: u32, cost: f64, codes: &[EventCode]) -> ClaimRecord {
        ClaimRecord {
            patient_id: PatientId::new(pid),
            claim_id: ClaimId::new(cid),
            claim_type: t,
            service_date: d(day),
            cost,
            event_codes: EventSet::from_codes(codes.iter().copied()),
            ed_visit: false,
        }
    }

    #[test]
    fn event_codes_round_trip_names() {
        for c in EventCode::ALL {
            assert_eq!(c.as_str().parse::<EventCode>().unwrap(), c);
        }
        let set = EventSet::from_codes([EventCode::Ckd3, EventCode::EdVisit]);
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![EventCode::Ckd3, EventCode::EdVisit]);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn dedup_identity_without_equal_keys() {
        let claims = vec![
            claim("a", "1", ClaimType::Pharmacy, 1, 10.0, &[]),
            claim("a", "2", ClaimType::Pharmacy, 2, 10.0, &[]),
            claim("b", "3", ClaimType::Pharmacy, 1, 10.0, &[]),
        ];
        let (out, rep) = deduplicate(claims.clone());
        assert_eq!(out, claims);
        assert_eq!(rep.removed, 0);
    }

    #[test]
    fn dedup_keeps_first_of_identical_rows() {
        let c = claim("a", "1", ClaimType::Inpatient, 3, 99.5, &[EventCode::Ckd3]);
        let (out, rep) = deduplicate(vec![c.clone(), c.clone()]);
        assert_eq!(out, vec![c]);
        assert_eq!(rep.removed, 1);
    }

    #[test]
    fn dedup_five_row_fixture_against_grouping_oracle() {
        let claims = vec![
            claim("a", "1", ClaimType::Pharmacy, 1, 10.0, &[EventCode::Ckd3]),
            claim("a", "2", ClaimType::Pharmacy, 1, 10.0, &[EventCode::Ckd3]),
            claim("a", "3", ClaimType::Pharmacy, 1, 10.0, &[]),
            claim("b", "4", ClaimType::Outpatient, 5, 3.0, &[]),
            claim("b", "5", ClaimType::Outpatient, 5, 3.0, &[]),
        ];
        // Oracle: quadratic scan keeping rows whose key has not been seen.
        let mut seen: Vec<&ClaimRecord> = Vec::new();
        let mut expected = Vec::new();
        for c in &claims {
            let dup = seen.iter().any(|s| {
                s.patient_id == c.patient_id
                    && s.claim_type == c.claim_type
                    && s.service_date == c.service_date
                    && s.cost == c.cost
                    && s.event_codes == c.event_codes
            });
            if !dup {
                seen.push(c);
                expected.push(c.clone());
            }
        }
        let (out, rep) = deduplicate(claims.clone());
        assert_eq!(out, expected);
        assert_eq!(out.len(), 3);
        assert_eq!(rep.removed, 2);
    }

    #[test]
    fn clean_removes_negative_costs_and_non_ckd_patients() {
        let claims = vec![
            claim("a", "1", ClaimType::Pharmacy, 1, -50.0, &[]),
            claim("a", "2", ClaimType::Professional, 2, 80.0, &[EventCode::Ckd3]),
            claim("b", "3", ClaimType::Professional, 2, 80.0, &[EventCode::Diabetes]),
            claim("b", "4", ClaimType::Pharmacy, 3, 12.0, &[]),
        ];
        let out = clean(claims, &[]);
        assert_eq!(out.claims.len(), 1);
        assert_eq!(out.claims[0].claim_id.as_str(), "2");
        assert_eq!(out.report.negative_cost_removed, 1);
        assert_eq!(out.report.no_ckd_claims_removed, 2);
        assert_eq!(out.report.no_ckd_patients_removed, 1);
    }

    #[test]
    fn clean_ten_claim_fixture_against_two_pass_oracle() {
        use EventCode::*;
        let claims = vec![
            claim("p1", "1", ClaimType::Professional, 1, 100.0, &[Ckd3]),
            claim("p1", "2", ClaimType::Pharmacy, 2, -5.0, &[]),
            claim("p1", "3", ClaimType::Vision, 3, 40.0, &[]),
            claim("p2", "4", ClaimType::Professional, 1, -100.0, &[Ckd4]),
            claim("p2", "5", ClaimType::Pharmacy, 2, 7.0, &[Diabetes]),
            claim("p3", "6", ClaimType::Inpatient, 9, 9000.0, &[Ckd5, Dialysis]),
            claim("p3", "7", ClaimType::Outpatient, 10, 0.0, &[]),
            claim("p4", "8", ClaimType::Professional, 4, 50.0, &[Hypertension]),
            claim("p4", "9", ClaimType::Pharmacy, 5, 20.0, &[]),
            claim("p5", "10", ClaimType::Professional, 6, 60.0, &[Ckd3, Anemia]),
        ];
        // Pass 1: non-negative costs. Pass 2: patients with a CKD stage code.
        let pass1: Vec<ClaimRecord> = claims.iter().filter(|c| c.cost >= 0.0).cloned().collect();
        let keep: Vec<&str> = ["p1", "p2", "p3", "p4", "p5"]
            .into_iter()
            .filter(|p| pass1.iter().any(|c| c.patient_id.as_str() == *p && c.event_codes.has_ckd_stage()))
            .collect();
        let expected: Vec<ClaimRecord> =
            pass1.into_iter().filter(|c| keep.contains(&c.patient_id.as_str())).collect();
        let out = clean(claims, &[]);
        assert_eq!(out.claims, expected);
        let ids: Vec<&str> = out.claims.iter().map(|c| c.claim_id.as_str()).collect();
        assert_eq!(ids, vec!["1", "3", "6", "7", "10"]);
    }

    #[test]
    fn conflicting_demographics_are_rejected() {
        let a = PatientDemographics { patient_id: PatientId::new("x"), gender: Gender::Male, birth_date: d(0) };
        let mut b = a.clone();
        assert_eq!(merge_demographics(vec![a.clone(), b.clone()]).unwrap().len(), 1);
        b.gender = Gender::Female;
        assert_eq!(
            merge_demographics(vec![a, b]),
            Err(Error::ConflictingDemographics("x".into()))
        );
    }
}
