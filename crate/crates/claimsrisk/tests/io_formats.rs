use std::fs;
use std::path::Path;

use chrono::{Days, NaiveDate};
use claimsrisk::error::AppError;
use claimsrisk::io::{identity_code_map, read_claims, read_demographics, write_claims, write_demographics};
use claimsrisk_core::claims::{ClaimId, ClaimRecord, ClaimType, EventCode, EventSet, Gender, PatientDemographics, PatientId};
use proptest::prelude::*;

const HEADER: &str = "patient_id,claim_id,claim_type,service_date,cost,event_codes,ed_visit\n";

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn header_only_file_is_empty_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = read_claims(&write(dir.path(), "c.csv", HEADER), &identity_code_map()).unwrap();
    assert!(f.claims.is_empty() && f.rejections.is_empty());
    assert_eq!(f.rows, 0);
}

#[test]
fn a_row_without_a_date_is_rejected_by_line_and_negative_costs_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{HEADER}P1,C1,outpatient,2019-01-05,120.5,CKD3,0\nP1,C2,inpatient,,40,CKD3,0\nP2,C3,pharmacy,2019-02-01,-15.25,,1\n"
    );
    let f = read_claims(&write(dir.path(), "c.csv", &body), &identity_code_map()).unwrap();
    assert_eq!(f.rows, 3);
    assert_eq!(f.claims.len(), 2);
    assert_eq!(f.rejections.len(), 1);
    assert_eq!(f.rejections[0].line_number, 3);
    assert!(f.rejections[0].reason.contains("service_date"), "{}", f.rejections[0].reason);
    assert_eq!(f.claims[1].cost, -15.25);
    assert!(f.claims[1].ed_visit);
    assert!(f.claims[0].event_codes.contains(EventCode::Ckd3));
}

#[test]
fn missing_column_and_missing_file_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.csv", "patient_id,claim_id,claim_type,service_date,event_codes,ed_visit\n");
    match read_claims(&p, &identity_code_map()) {
        Err(AppError::Data(m)) => assert!(m.contains("missing column cost"), "{m}"),
        other => panic!("expected a data error, got {other:?}"),
    }
    let gone = dir.path().join("nope.csv");
    let e = read_claims(&gone, &identity_code_map()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("missing file"));
    assert_eq!(read_demographics(&gone).unwrap_err().exit_code(), 2);
}

#[test]
fn conflicting_demographics_name_the_patient() {
    let dir = tempfile::tempdir().unwrap();
    let body = "patient_id,gender,birth_date\nP7,M,1950-03-01\nP8,F,1960-01-01\nP7,F,1950-03-01\n";
    let e = read_demographics(&write(dir.path(), "d.csv", body)).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("P7"), "{e}");
    // An exact repeat is merged, not rejected.
    let ok = "patient_id,gender,birth_date\nP7,M,1950-03-01\nP7,M,1950-03-01\n";
    assert_eq!(read_demographics(&write(dir.path(), "d2.csv", ok)).unwrap().len(), 1);
}

fn arb_claim() -> impl Strategy<Value = ClaimRecord> {
    (
        "[A-Z][0-9]{1,4}",
        "[a-z0-9-]{1,8}",
        prop::sample::select(ClaimType::ALL.to_vec()),
        0u64..5000,
        prop_oneof![any::<f64>().prop_filter("finite", |c| c.is_finite()), -1e4f64..1e6],
        prop::collection::vec(prop::sample::select(EventCode::ALL.to_vec()), 0..4),
        any::<bool>(),
    )
        .prop_map(|(pid, cid, t, day, cost, codes, ed)| ClaimRecord {
            patient_id: PatientId::new(&pid),
            claim_id: ClaimId::new(&cid),
            claim_type: t,
            service_date: NaiveDate::from_ymd_opt(2008, 1, 1).unwrap() + Days::new(day),
            cost,
            event_codes: EventSet::from_codes(codes),
            ed_visit: ed,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn claims_and_demographics_round_trip(claims in prop::collection::vec(arb_claim(), 0..30), births in prop::collection::vec((0i32..80, any::<bool>()), 0..10)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("claims.csv");
        write_claims(&p, &claims).unwrap();
        let back = read_claims(&p, &identity_code_map()).unwrap();
        prop_assert!(back.rejections.is_empty());
        prop_assert_eq!(back.claims, claims);

        let demos: Vec<PatientDemographics> = births
            .iter()
            .enumerate()
            .map(|(i, &(y, m))| PatientDemographics {
                patient_id: PatientId::new(&format!("P{i:02}")),
                gender: if m { Gender::Male } else { Gender::Female },
                birth_date: NaiveDate::from_ymd_opt(1920 + y, 2, 28).unwrap(),
            })
            .collect();
        let d = dir.path().join("demographics.csv");
        write_demographics(&d, &demos).unwrap();
        prop_assert_eq!(read_demographics(&d).unwrap(), demos);
    }
}
