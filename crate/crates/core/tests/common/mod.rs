#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use claimsrisk_core::claims::{ClaimId, ClaimRecord, ClaimType, EventCode, EventSet, Gender, PatientDemographics, PatientId};
use proptest::prelude::*;

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn claim(pid: &str, cid: &str, t: ClaimType, day: NaiveDate, cost: f64, codes: &[EventCode]) -> ClaimRecord {
    ClaimRecord {
        patient_id: PatientId::new(pid),
        claim_id: ClaimId::new(cid),
        claim_type: t,
        service_date: day,
        cost,
        event_codes: EventSet::from_codes(codes.iter().copied()),
        ed_visit: false,
    }
}

pub fn demo(pid: &str, gender: Gender, birth: NaiveDate) -> PatientDemographics {
    PatientDemographics { patient_id: PatientId::new(pid), gender, birth_date: birth }
}

/// Codes weighted toward the CKD stages so that cohorts are non-trivial.
fn arb_codes() -> impl Strategy<Value = EventSet> {
    prop::collection::vec(
        prop_oneof![
            3 => Just(EventCode::Ckd3),
            1 => Just(EventCode::Ckd4),
            1 => Just(EventCode::Ckd5),
            1 => prop_oneof![Just(EventCode::Dialysis), Just(EventCode::Transplant)],
            4 => prop::sample::select(EventCode::COMORBIDITIES.to_vec()),
        ],
        0..3,
    )
    .prop_map(EventSet::from_codes)
}

fn arb_claim(pid: String, n: usize) -> impl Strategy<Value = ClaimRecord> {
    (prop::sample::select(ClaimType::ALL.to_vec()), 0u64..1500, -5000i64..300_000, arb_codes(), any::<bool>()).prop_map(
        move |(t, day, cents, codes, ed)| ClaimRecord {
            patient_id: PatientId::new(&pid),
            claim_id: ClaimId::new(&format!("{pid}-{n}")),
            claim_type: t,
            service_date: date(2016, 1, 1) + Days::new(day),
            cost: cents as f64 / 100.0,
            event_codes: codes,
            ed_visit: ed,
        },
    )
}

/// Up to `max_patients` patients with a handful of claims each, plus their
/// demographics. Some claims are repeated verbatim to exercise dedup.
pub fn arb_store(max_patients: usize) -> impl Strategy<Value = (Vec<ClaimRecord>, Vec<PatientDemographics>)> {
    prop::collection::vec((0usize..30, any::<bool>(), 1930i32..1970, 0usize..3), 1..=max_patients).prop_flat_map(|patients| {
        let demos: Vec<PatientDemographics> = patients
            .iter()
            .enumerate()
            .map(|(i, &(_, male, year, _))| demo(&format!("P{i:03}"), if male { Gender::Male } else { Gender::Female }, date(year, 6, 15)))
            .collect();
        let claims: Vec<_> = patients
            .iter()
            .enumerate()
            .map(|(i, &(n, _, _, dups))| {
                let pid = format!("P{i:03}");
                (prop::collection::vec(arb_claim(pid.clone(), i), n..=n), Just(dups))
                    .prop_map(|(mut cs, dups)| {
                        for (k, c) in cs.iter_mut().enumerate() {
                            c.claim_id = ClaimId::new(&format!("{}-{k}", c.patient_id));
                        }
                        let extra: Vec<ClaimRecord> = cs.iter().take(dups).cloned().collect();
                        cs.extend(extra);
                        cs
                    })
            })
            .collect();
        (claims, Just(demos)).prop_map(|(groups, demos)| (groups.into_iter().flatten().collect(), demos))
    })
}

/// Static features of the 24-month cohort drawn from the default synthetic
/// population with generator seed `seed`.
pub fn planted_static(seed: u64) -> claimsrisk_core::features::StaticDataset {
    use claimsrisk_core::synth::{generate_synthetic, SynthConfig};
    let data = generate_synthetic(&SynthConfig { rng_seed: seed, ..SynthConfig::default() }).unwrap();
    let (claims, _) = claimsrisk_core::claims::deduplicate(data.claims);
    let c = claimsrisk_core::claims::clean(claims, &data.demographics);
    let t = claimsrisk_core::cohort::build_timelines(c.claims, &c.demographics).unwrap();
    let cohort = claimsrisk_core::cohort::identify_cohort(&t, 24).unwrap();
    claimsrisk_core::features::static_dataset(&cohort).unwrap()
}
