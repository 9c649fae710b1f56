use std::time::Instant;

use claimsrisk_core::claims::{clean, deduplicate};
use claimsrisk_core::cohort::{build_timelines, identify_cohort};
use claimsrisk_core::eval::{auroc, stratified_split};
use claimsrisk_core::features::{sequence_dataset, sequence_numeric_mask, static_dataset, static_numeric_mask, ComorbidityMode, Scaler, SEQ_CHANNELS};
use claimsrisk_core::models::{fit, Hyperparams, ModelKind};
use claimsrisk_core::synth::{generate_synthetic, SynthConfig};

#[test]
#[ignore = "diagnostic: per-model AUROC and timing on the planted cohort"]
fn probe_models() {
    let seed: u64 = std::env::var("PROBE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(1);
    let ramp: f64 = std::env::var("PROBE_RAMP").ok().and_then(|s| s.parse().ok()).unwrap_or(SynthConfig::default().esrd_ramp);
    let kinds: Vec<ModelKind> = std::env::var("PROBE_KINDS")
        .map(|s| s.split(',').map(|k| k.parse().unwrap()).collect())
        .unwrap_or_else(|_| ModelKind::ALL.to_vec());
    let config = SynthConfig { rng_seed: seed, esrd_ramp: ramp, ..SynthConfig::default() };
    let data = generate_synthetic(&config).unwrap();
    let (claims, _) = deduplicate(data.claims);
    let cleaned = clean(claims, &data.demographics);
    let timelines = build_timelines(cleaned.claims, &cleaned.demographics).unwrap();
    let cohort = identify_cohort(&timelines, 24).unwrap();
    let st = static_dataset(&cohort).unwrap();
    let sq = sequence_dataset(&cohort, ComorbidityMode::CarryForward).unwrap();
    assert_eq!(st.ids, sq.ids);
    let (train, test) = stratified_split(&st.y, 0.8, seed).unwrap();
    let ytr: Vec<bool> = train.iter().map(|&i| st.y[i]).collect();
    let yte: Vec<bool> = test.iter().map(|&i| st.y[i]).collect();
    let mut hp = Hyperparams::default();
    if let Ok(v) = std::env::var("PROBE_LR") {
        hp.sequence.learning_rate = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("PROBE_EPOCHS") {
        hp.sequence.epochs = v.parse().unwrap();
    }
    for kind in kinds {
        let t0 = Instant::now();
        let (x, steps, scaler) = if kind.is_sequence() {
            let xtr = sq.x.select(&train);
            let s = Scaler::fit(&xtr, &sequence_numeric_mask(), Some(SEQ_CHANNELS)).unwrap();
            (xtr, Some(sq.steps), s)
        } else {
            let xtr = st.x.select(&train);
            let s = Scaler::fit(&xtr, &static_numeric_mask(), None).unwrap();
            (xtr, None, s)
        };
        let mut xs = x.clone();
        scaler.transform(&mut xs).unwrap();
        let m = fit(kind, &xs, &ytr, steps, &hp, seed, Some(scaler), Vec::new()).unwrap();
        let xte = if kind.is_sequence() { sq.x.select(&test) } else { st.x.select(&test) };
        let p = m.predict_many(&xte).unwrap();
        let extra = match &m.params {
            claimsrisk_core::models::ModelParams::Sequence(n) => format!("{:?}", n.trace.as_ref().map(|t| (t.epochs_run, t.best_epoch, t.best_val_auroc))),
            _ => String::new(),
        };
        println!("{kind:5} auroc {:.4}  {:?} {extra}", auroc(&p, &yte).unwrap(), t0.elapsed());
    }
}

#[test]
#[ignore = "diagnostic: per-step channel means by label"]
fn probe_sequence_means() {
    use claimsrisk_core::features::SEQ_CHANNEL_NAMES;
    let config = SynthConfig { rng_seed: 1, ..SynthConfig::default() };
    let data = generate_synthetic(&config).unwrap();
    let (claims, _) = deduplicate(data.claims);
    let cleaned = clean(claims, &data.demographics);
    let timelines = build_timelines(cleaned.claims, &cleaned.demographics).unwrap();
    let cohort = identify_cohort(&timelines, 24).unwrap();
    let sq = sequence_dataset(&cohort, ComorbidityMode::CarryForward).unwrap();
    for c in 0..SEQ_CHANNELS {
        let mut line = format!("{:10}", SEQ_CHANNEL_NAMES[c]);
        for t in 0..sq.steps {
            let mean = |lab: bool| {
                let v: Vec<f64> = (0..sq.x.rows()).filter(|&i| sq.y[i] == lab).map(|i| sq.x.get(i, t * SEQ_CHANNELS + c)).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            line += &format!(" {:8.2}/{:<8.2}", mean(true), mean(false));
        }
        println!("{line}");
    }
}
