mod common;

use claimsrisk_core::claims::{clean, deduplicate};
use claimsrisk_core::cohort::{build_timelines, ObservationWindow, PatientTimeline};
use claimsrisk_core::features::{extract_sequence, extract_static, ComorbidityMode, SEQ_CHANNELS, CL2, CL5, CL6, STATIC_DIM};
use common::arb_store;
use proptest::prelude::*;

fn anchored(store: (Vec<claimsrisk_core::claims::ClaimRecord>, Vec<claimsrisk_core::claims::PatientDemographics>)) -> Vec<PatientTimeline> {
    let (claims, demos) = store;
    let (claims, _) = deduplicate(claims);
    let c = clean(claims, &demos);
    build_timelines(c.claims, &c.demographics).unwrap().into_iter().filter(|t| t.first_ckd3.is_some()).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn bucket_channels_add_up_to_static_sums(store in arb_store(6), q in 2u32..=10, carry in any::<bool>()) {
        let mode = if carry { ComorbidityMode::CarryForward } else { ComorbidityMode::RawOccurrence };
        for tl in anchored(store) {
            let w = ObservationWindow::new(tl.first_ckd3.unwrap(), 3 * q).unwrap();
            let s = extract_static(&tl, &w, false).unwrap();
            let seq = extract_sequence(&tl, &w, false, mode).unwrap();
            for ch in 0..8 {
                let total: f64 = (0..seq.steps).map(|t| seq.step(t)[ch]).sum();
                prop_assert!(close(total, s.values[ch]), "channel {} sums to {} vs {}", ch, total, s.values[ch]);
            }
            // Stage-4 flags across buckets agree with CL5.
            let any4 = (0..seq.steps).any(|t| seq.step(t)[11] == 1.0);
            prop_assert_eq!(any4, s.values[CL5] == 1.0);
            prop_assert_eq!(seq.data.len(), seq.steps * SEQ_CHANNELS);
        }
    }

    #[test]
    fn no_progression_means_full_window(store in arb_store(6), months in 1u32..=30) {
        for tl in anchored(store) {
            let w = ObservationWindow::new(tl.first_ckd3.unwrap(), months).unwrap();
            let s = extract_static(&tl, &w, false).unwrap();
            prop_assert!(s.values[CL2] >= 0.0 && s.values[CL2] <= w.days() as f64);
            if s.values[CL5] == 0.0 && s.values[CL6] == 0.0 {
                prop_assert_eq!(s.values[CL2], w.days() as f64);
            }
            for j in 13..STATIC_DIM {
                prop_assert!(s.values[j] == 0.0 || s.values[j] == 1.0);
            }
            prop_assert!(s.values[..10].iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn longer_windows_never_lose_counts_or_flags(store in arb_store(6), a in 1u32..=30, b in 1u32..=30) {
        let (short, long) = (a.min(b), a.max(b));
        for tl in anchored(store) {
            let anchor = tl.first_ckd3.unwrap();
            let s = extract_static(&tl, &ObservationWindow::new(anchor, short).unwrap(), false).unwrap();
            let l = extract_static(&tl, &ObservationWindow::new(anchor, long).unwrap(), false).unwrap();
            for j in (0..8).chain(14..STATIC_DIM) {
                prop_assert!(l.values[j] >= s.values[j], "feature {} dropped from {} to {}", j, s.values[j], l.values[j]);
            }
        }
    }
}
