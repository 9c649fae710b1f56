mod common;

use std::collections::HashSet;

use claimsrisk_core::claims::{clean, deduplicate};
use common::arb_store;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn clean_is_idempotent((claims, demos) in arb_store(8)) {
        let (claims, _) = deduplicate(claims);
        let once = clean(claims, &demos);
        let twice = clean(once.claims.clone(), &once.demographics);
        prop_assert_eq!(&twice.claims, &once.claims);
        prop_assert_eq!(&twice.demographics, &once.demographics);
        prop_assert_eq!(twice.report.negative_cost_removed + twice.report.no_ckd_claims_removed, 0);
    }

    #[test]
    fn cleaned_claims_are_non_negative_and_ckd_anchored((claims, demos) in arb_store(8)) {
        let out = clean(claims, &demos);
        prop_assert!(out.claims.iter().all(|c| c.cost >= 0.0));
        let with_ckd: HashSet<_> = out.claims.iter().filter(|c| c.event_codes.has_ckd_stage()).map(|c| c.patient_id.clone()).collect();
        prop_assert!(out.claims.iter().all(|c| with_ckd.contains(&c.patient_id)));
        prop_assert!(out.demographics.iter().all(|d| with_ckd.contains(&d.patient_id)));
    }

    #[test]
    fn dedup_leaves_unique_keys_and_is_idempotent((claims, _demos) in arb_store(6)) {
        let n = claims.len();
        let (once, report) = deduplicate(claims.clone());
        prop_assert_eq!(report.input, n);
        prop_assert_eq!(report.removed, n - once.len());
        let key = |c: &claimsrisk_core::claims::ClaimRecord| (c.patient_id.clone(), c.claim_type, c.service_date, c.cost.to_bits(), c.event_codes);
        let keys: HashSet<_> = once.iter().map(key).collect();
        prop_assert_eq!(keys.len(), once.len());
        // Every input key survives.
        prop_assert!(claims.iter().all(|c| keys.contains(&key(c))));
        let (twice, r2) = deduplicate(once.clone());
        prop_assert_eq!(twice, once);
        prop_assert_eq!(r2.removed, 0);
    }
}
