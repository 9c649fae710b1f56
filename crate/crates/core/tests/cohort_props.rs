mod common;

use std::collections::BTreeSet;

use claimsrisk_core::claims::{clean, deduplicate, PatientId};
use claimsrisk_core::cohort::{build_timelines, identify_cohort, CohortResult, ExclusionReason, PatientTimeline};
use common::arb_store;
use proptest::prelude::*;

fn timelines(store: (Vec<claimsrisk_core::claims::ClaimRecord>, Vec<claimsrisk_core::claims::PatientDemographics>)) -> Vec<PatientTimeline> {
    let (claims, demos) = store;
    let (claims, _) = deduplicate(claims);
    let c = clean(claims, &demos);
    build_timelines(c.claims, &c.demographics).unwrap()
}

fn excluded_at(c: &CohortResult<'_>, reason: ExclusionReason) -> BTreeSet<PatientId> {
    c.exclusions.iter().filter(|e| e.reason == reason).map(|e| e.patient_id.clone()).collect()
}

/// Survivor sets after each funnel step.
fn steps(t: &[PatientTimeline], c: &CohortResult<'_>) -> [BTreeSet<PatientId>; 4] {
    let all: BTreeSet<PatientId> = t.iter().map(|t| t.patient_id.clone()).collect();
    let s1: BTreeSet<_> = all.difference(&excluded_at(c, ExclusionReason::NoCkd3)).cloned().collect();
    let s2: BTreeSet<_> = s1.difference(&excluded_at(c, ExclusionReason::InsufficientFollowUp)).cloned().collect();
    let s3: BTreeSet<_> = s2.difference(&excluded_at(c, ExclusionReason::EsrdInWindow)).cloned().collect();
    [all, s1, s2, s3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn funnel_steps_are_nested(store in arb_store(10), w in prop::sample::select(vec![3u32, 6, 12, 18, 24, 30])) {
        let t = timelines(store);
        let c = identify_cohort(&t, w).unwrap();
        let s = steps(&t, &c);
        for k in 1..4 {
            prop_assert!(s[k].is_subset(&s[k - 1]));
        }
        prop_assert_eq!(c.funnel.total, s[0].len());
        prop_assert_eq!(c.funnel.steps(), [s[1].len(), s[2].len(), s[3].len(), c.members.len()]);
        let members: BTreeSet<_> = c.members.iter().map(|m| m.timeline.patient_id.clone()).collect();
        prop_assert_eq!(&members, &s[3]);
        prop_assert_eq!(c.funnel.positives, c.members.iter().filter(|m| m.label).count());
    }

    #[test]
    fn labels_are_sound(store in arb_store(10), w in prop::sample::select(vec![6u32, 12, 24])) {
        let t = timelines(store);
        let c = identify_cohort(&t, w).unwrap();
        for m in &c.members {
            let tl = m.timeline;
            prop_assert!(tl.last_record > m.window.end);
            match tl.first_esrd {
                Some(d) => {
                    prop_assert!(m.label);
                    prop_assert!(d > m.window.end);
                }
                None => prop_assert!(!m.label),
            }
        }
    }

    #[test]
    fn longer_windows_keep_fewer_patients(store in arb_store(10), a in 1u32..=10, b in 1u32..=10) {
        let (short, long) = (3 * a.min(b), 3 * a.max(b));
        let t = timelines(store);
        let cs = identify_cohort(&t, short).unwrap();
        let cl = identify_cohort(&t, long).unwrap();
        prop_assert!(steps(&t, &cl)[2].is_subset(&steps(&t, &cs)[2]));
    }
}
