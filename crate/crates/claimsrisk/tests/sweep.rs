use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use claimsrisk::pipeline::{prepare, window_data};
use claimsrisk::sweep::{run_cell_on, run_sweep, write_sweep_outputs, CellKey, CellStatus, ExperimentConfig, Resampling};
use claimsrisk_core::models::ModelKind;
use claimsrisk_core::rng::derive_seed;
use claimsrisk_core::sampling::Strategy;
use claimsrisk_core::synth::{generate_synthetic, SynthConfig};

fn config(json: &str) -> ExperimentConfig {
    let c: ExperimentConfig = serde_json::from_str(json).unwrap();
    c.validate().unwrap();
    c
}

const SMALL: &str = r#""hyperparams": {"forest": {"n_trees": 10}, "boost": {"rounds": 10}, "sequence": {"hidden": 4, "epochs": 2}}"#;

fn small(rest: &str) -> ExperimentConfig {
    config(&format!(r#"{{"data": {{"synthetic": {{"n_patients": 700}}}}, {SMALL}, {rest}}}"#))
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn outputs(c: &ExperimentConfig) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    write_sweep_outputs(&run_sweep(c, Some(2)).unwrap(), dir.path()).unwrap();
    files(dir.path())
}

#[test]
fn a_single_cell_config_runs_one_cell() {
    let c = small(r#""windows": [18], "models": ["RF"], "strategies": ["SM3"], "master_seed": 9"#);
    let r = run_sweep(&c, Some(1)).unwrap();
    assert_eq!(r.cells.len(), 1);
    let cell = &r.cells[0];
    assert_eq!(cell.key, CellKey { window_months: 18, model: ModelKind::Rf, strategy: Resampling(Some(Strategy::SM3)) });
    assert_eq!(cell.seed, derive_seed(9, &[0xCE11, 18, 1, 3]));
    match &cell.outcome {
        CellStatus::Ok { report, resample, train_rows, fitted_rows, .. } => {
            assert!((0.0..=1.0).contains(&report.auroc));
            let rs = resample.as_ref().unwrap();
            assert_eq!(rs.created, 0);
            assert_eq!(*fitted_rows, train_rows - rs.removed);
        }
        CellStatus::Failed { reason } => panic!("cell failed: {reason}"),
    }
    assert_eq!(r.best.len(), 2);
}

#[test]
fn cell_order_in_the_config_does_not_change_any_byte() {
    let a = small(r#""windows": [12, 24], "models": ["LR", "RF", "GBT"], "strategies": ["none", "SM1", "SM4"], "master_seed": 3"#);
    let b = small(r#""windows": [24, 12, 12], "models": ["GBT", "LR", "RF"], "strategies": ["SM4", "none", "SM1"], "master_seed": 3"#);
    assert_eq!(a.cells(), b.cells());
    assert_eq!(outputs(&a), outputs(&b));
}

#[test]
fn a_cell_alone_matches_the_same_cell_inside_a_grid() {
    let c = small(r#""windows": [12], "models": ["LR", "RF", "GBT"], "strategies": ["none", "SM2", "SM6"], "master_seed": 21"#);
    let grid = run_sweep(&c, Some(4)).unwrap();
    let sc = SynthConfig { n_patients: 700, rng_seed: derive_seed(21, &[0xDA7A]), ..SynthConfig::default() };
    let data = generate_synthetic(&sc).unwrap();
    let prepared = prepare(data.claims, &data.demographics).unwrap();
    let wd = window_data(&prepared.timelines, 12, c.comorbidity_mode, false).unwrap();
    for cell in &grid.cells {
        let alone = run_cell_on(&wd.static_ds, &cell.key, &c).unwrap();
        assert_eq!(alone.status, cell.outcome, "{:?}", cell.key);
    }
}

#[test]
fn a_failing_cell_is_recorded_in_place() {
    // Three months give a single sequence step, which sequence models reject.
    let c = small(r#""windows": [3, 12], "models": ["RF", "GRU"], "strategies": ["none"], "master_seed": 5"#);
    let r = run_sweep(&c, Some(2)).unwrap();
    let keys: Vec<(u32, ModelKind)> = r.cells.iter().map(|c| (c.key.window_months, c.key.model)).collect();
    assert_eq!(keys, vec![(3, ModelKind::Rf), (3, ModelKind::Gru), (12, ModelKind::Rf), (12, ModelKind::Gru)]);
    match &r.cells[1].outcome {
        CellStatus::Failed { reason } => assert!(reason.contains("2 steps"), "{reason}"),
        other => panic!("expected a failure, got {other:?}"),
    }
    for i in [0, 2, 3] {
        assert!(r.cells[i].report().is_some(), "cell {i} should succeed");
    }
    let dir = tempfile::tempdir().unwrap();
    write_sweep_outputs(&r, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let line = csv.lines().nth(2).unwrap();
    assert!(line.starts_with("3,GRU,none,") && line.contains(",failed,"), "{line}");
    // The chart and table leave the failed cell blank.
    let table = fs::read_to_string(dir.path().join("table_auroc.csv")).unwrap();
    let gru = table.lines().find(|l| l.starts_with("GRU,")).unwrap();
    assert!(gru.starts_with("GRU,none,,"), "{gru}");
}

#[test]
fn the_full_window_by_model_grid_has_the_reported_shape() {
    let c = small(r#""strategies": ["none"], "master_seed": 1"#);
    let r = run_sweep(&c, None).unwrap();
    assert_eq!(r.cells.len(), 5 * 8);
    assert_eq!(r.windows.iter().map(|w| w.window_months).collect::<Vec<_>>(), vec![6, 12, 18, 24, 30]);
    let failed: Vec<_> = r.cells.iter().filter(|c| c.report().is_none()).map(|c| c.key).collect();
    assert!(failed.is_empty(), "{failed:?}");
    let dir = tempfile::tempdir().unwrap();
    write_sweep_outputs(&r, dir.path()).unwrap();
    let table = fs::read_to_string(dir.path().join("table_auroc.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,strategy,6_months,12_months,18_months,24_months,30_months");
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 7 && !l.contains(",,")));
    assert!(dir.path().join("plots/auroc_none.svg").exists() && dir.path().join("plots/f1_none.svg").exists());
}

#[test]
fn master_seeds_give_distinct_but_reproducible_sweeps() {
    let grid = r#""windows": [12], "models": ["LR", "RF"], "strategies": ["none", "SM1"]"#;
    let one = small(&format!(r#"{grid}, "master_seed": 1"#));
    let two = small(&format!(r#"{grid}, "master_seed": 2"#));
    let a = outputs(&one);
    assert_eq!(a, outputs(&one));
    assert_ne!(a["sweep.json"], outputs(&two)["sweep.json"]);
}
