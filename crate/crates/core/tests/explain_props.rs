mod common;

use claimsrisk_core::explain::plot::Side;
use claimsrisk_core::explain::tree_shap::tree_shap_into;
use claimsrisk_core::explain::{
    feature_importance, kernel_shap, mean_abs_shap, render_force_plot, tree_shap, KernelConfig, OutputSpace, ShapExplanation,
};
use claimsrisk_core::features::{STATIC_NAMES, CL2, CL5};
use claimsrisk_core::matrix::Matrix;
use claimsrisk_core::models::tree::{Node, Split, Tree};
use claimsrisk_core::models::{fit, BoostParams, ForestParams, Hyperparams, ModelKind, TrainedModel};
use proptest::prelude::*;

fn random_model(kind: ModelKind, rows: &[Vec<f64>], y: &[bool], seed: u64) -> TrainedModel {
    let x = Matrix::from_rows(rows).unwrap();
    let hp = Hyperparams {
        forest: ForestParams { n_trees: 10, min_leaf: 1, ..ForestParams::default() },
        boost: BoostParams { rounds: 10, ..BoostParams::default() },
        ..Hyperparams::default()
    };
    fit(kind, &x, y, None, &hp, seed, None, Vec::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_shap_is_additive(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 12..40),
        flips in prop::collection::vec(any::<bool>(), 40),
        kind in prop::sample::select(vec![ModelKind::Rf, ModelKind::Gbt]),
        seed in any::<u64>(),
        probe in prop::collection::vec(-6.0f64..6.0, 4),
    ) {
        let mut y: Vec<bool> = rows.iter().zip(&flips).map(|(r, f)| (r[0] + r[1] > 0.0) ^ f).collect();
        y[0] = true;
        y[1] = false;
        let m = random_model(kind, &rows, &y, seed);
        for r in rows.iter().map(Vec::as_slice).chain(std::iter::once(probe.as_slice())) {
            let e = tree_shap(&m, r).unwrap();
            prop_assert!(e.additivity_gap() < 1e-9, "gap {}", e.additivity_gap());
            let want_space = if kind == ModelKind::Rf { OutputSpace::Probability } else { OutputSpace::Margin };
            prop_assert_eq!(e.space, want_space);
        }
    }

    #[test]
    fn importances_are_normalized_and_sorted(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 5), 20..40),
        kind in prop::sample::select(vec![ModelKind::Lr, ModelKind::Rf, ModelKind::Gbt]),
        seed in any::<u64>(),
    ) {
        let mut y: Vec<bool> = rows.iter().map(|r| r[2] > 0.5).collect();
        y[0] = true;
        y[1] = false;
        let m = random_model(kind, &rows, &y, seed);
        let mut rankings = vec![feature_importance(&m).unwrap()];
        if kind.is_tree() {
            let ex: Vec<ShapExplanation> = rows.iter().map(|r| tree_shap(&m, r).unwrap()).collect();
            rankings.push(mean_abs_shap(&ex).unwrap());
        }
        for r in rankings {
            let total: f64 = r.entries.iter().map(|e| e.importance).sum();
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-12, "sum {}", total);
            prop_assert!(r.entries.windows(2).all(|w| w[0].importance >= w[1].importance));
            prop_assert!(r.entries.iter().all(|e| e.importance >= 0.0));
        }
    }
}

/// Root on x0, left child on x1, right child on x2, with covers equal to the
/// number of grid rows reaching each node.
fn depth_two_tree(grid: &Matrix) -> Tree {
    let (t0, t1, t2) = (0.5, 1.5, 0.5);
    let count = |f: &dyn Fn(&[f64]) -> bool| grid.iter_rows().filter(|r| f(r)).count() as f64;
    let leaf = |value, cover| Node { split: None, value, cover };
    let split = |feature, threshold, left, right| Some(Split { feature, threshold, left, right, gain: 1.0 });
    Tree {
        nodes: vec![
            Node { split: split(0, t0, 1, 2), value: 0.0, cover: grid.rows() as f64 },
            Node { split: split(1, t1, 3, 4), value: 0.0, cover: count(&|r| r[0] <= t0) },
            Node { split: split(2, t2, 5, 6), value: 0.0, cover: count(&|r| r[0] > t0) },
            leaf(0.1, count(&|r| r[0] <= t0 && r[1] <= t1)),
            leaf(0.7, count(&|r| r[0] <= t0 && r[1] > t1)),
            leaf(-0.4, count(&|r| r[0] > t0 && r[2] <= t2)),
            leaf(1.3, count(&|r| r[0] > t0 && r[2] > t2)),
        ],
    }
}

#[test]
fn exhaustive_kernel_agrees_with_tree_shap_on_a_product_background() {
    // With a product-grid background, cover-weighted expectations equal
    // interventional ones, so both methods target the same Shapley values.
    let vals = [0.0, 1.0, 2.0];
    let mut rows = Vec::new();
    for a in vals {
        for b in vals {
            for c in vals {
                rows.push([a, b, c]);
            }
        }
    }
    let grid = Matrix::from_rows(&rows).unwrap();
    let tree = depth_two_tree(&grid);
    let cfg = KernelConfig::default();
    for x in [[0.0, 2.0, 1.0], [2.0, 0.0, 0.0], [1.0, 1.0, 2.0], [0.3, -1.0, 9.0]] {
        let mut phi = vec![0.0; 3];
        let base = tree_shap_into(&tree, &x, &mut phi);
        let k = kernel_shap(|r| tree.predict(r), &x, &grid, None, &cfg, 0).unwrap();
        assert!(k.exhaustive);
        assert!((k.base_value - base).abs() < 1e-6, "base {} vs {}", k.base_value, base);
        for j in 0..3 {
            assert!((k.phi[j] - phi[j]).abs() < 1e-6, "x={x:?} phi{j}: kernel {} vs tree {}", k.phi[j], phi[j]);
        }
    }
}

#[test]
fn force_plot_puts_dominant_positives_on_the_increasing_side() {
    let names: Vec<String> = STATIC_NAMES.iter().map(|s| s.to_string()).collect();
    let mut phi = vec![0.0; names.len()];
    let mut display = vec![0.0; names.len()];
    let idx = |n: &str| STATIC_NAMES.iter().position(|s| *s == n).unwrap();
    for (n, p, v) in [("CL2", 0.21, 317.0), ("CL5", 0.17, 1.0), ("CL11", 0.09, 1.0), ("CM1", -0.03, 12.0), ("CL1", -0.02, 64.0)] {
        phi[idx(n)] = p;
        display[idx(n)] = v;
    }
    let base = 0.2;
    let e = ShapExplanation {
        base_value: base,
        model_output: base + phi.iter().sum::<f64>(),
        contributions: phi,
        feature_names: names,
        display_values: display,
        space: OutputSpace::Probability,
        method: "tree_shap".into(),
    };
    let plot = render_force_plot(&e, None);
    let p = &plot.payload;
    for label in ["CL2=317", "CL5=1", "CL11=1"] {
        let s = p.segments.iter().find(|s| s.label == label).unwrap_or_else(|| panic!("{label} missing"));
        assert_eq!(s.side, Side::Increase, "{label}");
        assert!(s.end <= e.model_output + 1e-12 && s.x0 < s.x1);
        assert!(plot.svg.contains(label));
    }
    for label in ["CM1=12", "CL1=64"] {
        let s = p.segments.iter().find(|s| s.label == label).unwrap();
        assert_eq!(s.side, Side::Decrease);
        assert!(s.start >= e.model_output - 1e-12);
    }
    // Increasing bands tile [output - sum(pos), output] with the largest nearest the output.
    let inc: Vec<_> = p.segments.iter().filter(|s| s.side == Side::Increase).collect();
    assert_eq!(inc[0].label, "CL2=317");
    assert!((inc.last().unwrap().start - (e.model_output - 0.47)).abs() < 1e-12);
}

#[test]
fn stage_four_and_short_stage_three_push_risk_up() {
    let ds = common::planted_static(1);
    let hp = Hyperparams { forest: ForestParams { n_trees: 100, ..ForestParams::default() }, ..Hyperparams::default() };
    let names = STATIC_NAMES.iter().map(|s| s.to_string()).collect();
    let m = fit(ModelKind::Rf, &ds.x, &ds.y, None, &hp, 7, None, names).unwrap();
    // Members with a stage-4 diagnosis in the window, shortest stage 3 first.
    let mut cand: Vec<usize> = (0..ds.y.len()).filter(|&i| ds.x.get(i, CL5) == 1.0).collect();
    assert!(cand.len() >= 20, "only {} stage-4 members", cand.len());
    cand.sort_by(|&a, &b| ds.x.get(a, CL2).total_cmp(&ds.x.get(b, CL2)));
    let shortest = cand[0];
    let e = tree_shap(&m, ds.x.row(shortest)).unwrap();
    assert!(e.contributions[CL5] > 0.0, "CL5 phi {}", e.contributions[CL5]);
    assert!(e.contributions[CL2] > 0.0, "CL2 phi {} at CL2={}", e.contributions[CL2], ds.x.get(shortest, CL2));
    // The direction holds across the shortest tenth, not only at the extreme.
    let tenth = &cand[..cand.len() / 10];
    let both = tenth
        .iter()
        .filter(|&&i| {
            let e = tree_shap(&m, ds.x.row(i)).unwrap();
            e.contributions[CL5] > 0.0 && e.contributions[CL2] > 0.0
        })
        .count();
    assert!(both * 10 >= tenth.len() * 9, "{both} of {}", tenth.len());
}
