//! Exact path-dependent TreeSHAP.
//!
//! The value of a coalition `S` is the tree's expected output when features
//! in `S` follow the instance and every other split is averaged over its
//! children in proportion to training cover. The polynomial-time recursion
//! tracks, for each unique feature on the current root-to-leaf path, the
//! fraction of "zero" (feature absent) and "one" (feature present) paths, and
//! the permutation weights of every subset size.

use alloc::vec::Vec;

use crate::models::tree::Tree;

#[derive(Clone, Copy)]
struct PathEl {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

const ROOT: usize = usize::MAX;

fn extend(path: &mut Vec<PathEl>, zero: f64, one: f64, feature: usize) {
    let depth = path.len();
    path.push(PathEl { feature, zero, one, weight: if depth == 0 { 1.0 } else { 0.0 } });
    let d = depth as f64;
    for i in (0..depth).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one * w * (i + 1) as f64 / (d + 1.0);
        path[i].weight = zero * w * (d - i as f64) / (d + 1.0);
    }
}

fn unwind(path: &mut Vec<PathEl>, idx: usize) {
    let depth = path.len() - 1;
    let d = depth as f64;
    let (one, zero) = (path[idx].one, path[idx].zero);
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1.0) / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in idx..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathEl], idx: usize) -> f64 {
    let depth = path.len() - 1;
    let d = depth as f64;
    let (one, zero) = (path[idx].one, path[idx].zero);
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1.0) / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * ((d - i as f64) / (d + 1.0));
        } else {
            total += (path[i].weight / zero) / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

fn recurse(tree: &Tree, x: &[f64], phi: &mut [f64], node: usize, parent: &[PathEl], zero: f64, one: f64, feature: usize) {
    let mut path = parent.to_vec();
    extend(&mut path, zero, one, feature);
    let n = &tree.nodes[node];
    match n.split {
        None => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                phi[el.feature] += w * (el.one - el.zero) * n.value;
            }
        }
        Some(s) => {
            let (hot, cold) = if x[s.feature] <= s.threshold { (s.left, s.right) } else { (s.right, s.left) };
            let (hot, cold) = (hot as usize, cold as usize);
            let cover = n.cover;
            let hot_zero = if cover > 0.0 { tree.nodes[hot].cover / cover } else { 0.0 };
            let cold_zero = if cover > 0.0 { tree.nodes[cold].cover / cover } else { 0.0 };
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|e| e.feature == s.feature) {
                in_zero = path[k].zero;
                in_one = path[k].one;
                unwind(&mut path, k);
            }
            recurse(tree, x, phi, hot, &path, hot_zero * in_zero, in_one, s.feature);
            recurse(tree, x, phi, cold, &path, cold_zero * in_zero, 0.0, s.feature);
        }
    }
}

/// Cover-weighted mean output of the subtree at `node`.
pub fn expected_value(tree: &Tree, node: usize) -> f64 {
    let n = &tree.nodes[node];
    match n.split {
        None => n.value,
        Some(s) => {
            let (l, r) = (&tree.nodes[s.left as usize], &tree.nodes[s.right as usize]);
            if n.cover <= 0.0 {
                return 0.5 * (expected_value(tree, s.left as usize) + expected_value(tree, s.right as usize));
            }
            (l.cover * expected_value(tree, s.left as usize) + r.cover * expected_value(tree, s.right as usize)) / n.cover
        }
    }
}

/// Adds the Shapley values of `tree` at `x` to `phi` and returns the
/// tree's expected value.
pub fn tree_shap_into(tree: &Tree, x: &[f64], phi: &mut [f64]) -> f64 {
    if tree.nodes[0].split.is_some() {
        recurse(tree, x, phi, 0, &[], 1.0, 1.0, ROOT);
    }
    expected_value(tree, 0)
}

/// Expected tree output when only the features flagged in `known` follow
/// `x`; the coalition value function that TreeSHAP attributes.
pub fn conditional_expectation(tree: &Tree, x: &[f64], known: &[bool]) -> f64 {
    fn go(tree: &Tree, x: &[f64], known: &[bool], node: usize) -> f64 {
        let n = &tree.nodes[node];
        match n.split {
            None => n.value,
            Some(s) => {
                if known[s.feature] {
                    let next = if x[s.feature] <= s.threshold { s.left } else { s.right };
                    go(tree, x, known, next as usize)
                } else {
                    let (l, r) = (&tree.nodes[s.left as usize], &tree.nodes[s.right as usize]);
                    (l.cover * go(tree, x, known, s.left as usize) + r.cover * go(tree, x, known, s.right as usize)) / n.cover
                }
            }
        }
    }
    go(tree, x, known, 0)
}

/// Shapley values of an arbitrary coalition game by enumerating all `2^m`
/// subsets. Exponential; intended as a reference for small `m`.
pub fn brute_force_shapley(m: usize, value: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    assert!(m < 25, "enumeration over 2^{m} subsets");
    let mut fact = alloc::vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let vals: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            let known: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
            value(&known)
        })
        .collect();
    let mut phi = alloc::vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << m {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[m - s - 1] / fact[m];
            *p += w * (vals[mask | 1 << i] - vals[mask]);
        }
    }
    phi
}
