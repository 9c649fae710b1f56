//! Binary decision trees and a level-wise exact-greedy builder shared by the
//! random forest (Gini) and gradient boosting (second-order gain).
//!
//! Splits route `x[feature] <= threshold` to the left child, where the
//! threshold is the largest left-hand training value. Split selection only
//! depends on the order of feature values, so a strictly increasing transform
//! of a feature leaves the fitted partition unchanged.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Criterion improvement of this split.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    /// Leaf output; for internal nodes the output they would have as a leaf.
    pub value: f64,
    /// Training weight reaching the node (sample weight for Gini trees,
    /// hessian sum for boosted trees).
    pub cover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self { nodes: alloc::vec![Node { split: None, value, cover }] }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            i = if x[s.feature] <= s.threshold { s.left as usize } else { s.right as usize };
        }
        i
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].split {
                Some(s) => 1 + go(t, s.left as usize).max(go(t, s.right as usize)),
                None => 0,
            }
        }
        go(self, 0)
    }

    /// Adds each split's gain to `out[feature]`.
    pub fn accumulate_gain(&self, out: &mut [f64]) {
        for n in &self.nodes {
            if let Some(s) = n.split {
                out[s.feature] += s.gain;
            }
        }
    }
}

/// Row indices sorted by each feature (ties by row index).
pub(crate) fn sorted_columns(x: &Matrix) -> Vec<Vec<u32>> {
    crate::par::map_range(x.cols(), |f| {
        let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
        idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
        idx
    })
}

/// Sufficient statistics: `s[0]` is the cover (weight or hessian), `s[1]`
/// the weighted label or gradient sum.
pub(crate) type Stats = [f64; 2];

pub(crate) trait Criterion {
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> Option<f64>;
    fn leaf_value(&self, s: Stats) -> f64;
}

pub(crate) struct Gini {
    pub min_leaf: f64,
}

#[inline]
fn gini_impurity(s: Stats) -> f64 {
    if s[0] <= 0.0 {
        return 0.0;
    }
    // Weighted impurity n * 2p(1-p).
    2.0 * s[1] * (s[0] - s[1]) / s[0]
}

impl Criterion for Gini {
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> Option<f64> {
        if left[0] < self.min_leaf || right[0] < self.min_leaf {
            return None;
        }
        let g = gini_impurity(parent) - gini_impurity(left) - gini_impurity(right);
        (g > 1e-12).then_some(g)
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        if s[0] > 0.0 {
            s[1] / s[0]
        } else {
            0.0
        }
    }
}

pub(crate) struct Newton {
    pub lambda: f64,
    pub min_child_weight: f64,
    pub eta: f64,
}

impl Criterion for Newton {
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> Option<f64> {
        if left[0] < self.min_child_weight || right[0] < self.min_child_weight {
            return None;
        }
        let score = |s: Stats| s[1] * s[1] / (s[0] + self.lambda);
        let g = 0.5 * (score(left) + score(right) - score(parent));
        (g > 0.0).then_some(g)
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        -self.eta * s[1] / (s[0] + self.lambda)
    }
}

/// Per-node feature sampling hook; `None` means every feature is eligible.
pub(crate) trait FeatureSampler {
    fn draw(&mut self, n_features: usize) -> Option<Vec<bool>>;
}

pub(crate) struct AllFeatures;

impl FeatureSampler for AllFeatures {
    fn draw(&mut self, _: usize) -> Option<Vec<bool>> {
        None
    }
}

const NONE: u32 = u32::MAX;

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree. `stats[r]` is row `r`'s contribution; rows with a zero
/// cover and zero label part never enter the tree (used for bootstrap).
pub(crate) fn grow<C: Criterion, S: FeatureSampler>(
    x: &Matrix,
    sorted: &[Vec<u32>],
    stats: &[Stats],
    active_rows: &[bool],
    max_depth: Option<usize>,
    crit: &C,
    sampler: &mut S,
) -> Tree {
    let n_feat = x.cols();
    let mut node_of: Vec<u32> = (0..x.rows()).map(|r| if active_rows[r] { 0 } else { NONE }).collect();
    let mut root = [0.0; 2];
    for r in 0..x.rows() {
        if active_rows[r] {
            root[0] += stats[r][0];
            root[1] += stats[r][1];
        }
    }
    let mut nodes = alloc::vec![Node { split: None, value: crit.leaf_value(root), cover: root[0] }];
    let mut totals: Vec<Stats> = alloc::vec![root];
    // Nodes eligible for splitting at the current depth.
    let mut frontier: Vec<u32> = alloc::vec![0];
    let mut depth = 0;
    // Slot of each node in `frontier`, NONE otherwise.
    let mut slot: Vec<u32> = alloc::vec![0];

    while !frontier.is_empty() && max_depth.is_none_or(|d| depth < d) {
        let masks: Vec<Option<Vec<bool>>> = frontier.iter().map(|_| sampler.draw(n_feat)).collect();
        let mut best: Vec<Option<Candidate>> = frontier.iter().map(|_| None).collect();
        let mut acc: Vec<Stats> = alloc::vec![[0.0; 2]; frontier.len()];
        let mut last: Vec<f64> = alloc::vec![f64::NAN; frontier.len()];
        let mut seen: Vec<bool> = alloc::vec![false; frontier.len()];

        for f in 0..n_feat {
            acc.iter_mut().for_each(|a| *a = [0.0; 2]);
            seen.iter_mut().for_each(|s| *s = false);
            for &r in &sorted[f] {
                let r = r as usize;
                let node = node_of[r];
                if node == NONE {
                    continue;
                }
                let k = slot[node as usize];
                if k == NONE {
                    continue;
                }
                let k = k as usize;
                if masks[k].as_ref().is_some_and(|m| !m[f]) {
                    continue;
                }
                let v = x.get(r, f);
                if seen[k] && v > last[k] {
                    let total = totals[frontier[k] as usize];
                    let left = acc[k];
                    let right = [total[0] - left[0], total[1] - left[1]];
                    if let Some(g) = crit.gain(total, left, right) {
                        if best[k].as_ref().is_none_or(|b| g > b.gain) {
                            best[k] = Some(Candidate { gain: g, feature: f, threshold: last[k] });
                        }
                    }
                }
                acc[k][0] += stats[r][0];
                acc[k][1] += stats[r][1];
                last[k] = v;
                seen[k] = true;
            }
        }

        // Materialize children in frontier order.
        let mut next = Vec::new();
        for (k, cand) in best.into_iter().enumerate() {
            let Some(c) = cand else { continue };
            let id = frontier[k] as usize;
            let left = nodes.len() as u32;
            nodes[id].split = Some(Split { feature: c.feature, threshold: c.threshold, left, right: left + 1, gain: c.gain });
            nodes.push(Node { split: None, value: 0.0, cover: 0.0 });
            nodes.push(Node { split: None, value: 0.0, cover: 0.0 });
            totals.push([0.0; 2]);
            totals.push([0.0; 2]);
            next.push(left);
            next.push(left + 1);
        }
        for r in 0..x.rows() {
            let node = node_of[r];
            if node == NONE {
                continue;
            }
            if let Some(s) = nodes[node as usize].split {
                let child = if x.get(r, s.feature) <= s.threshold { s.left } else { s.right };
                node_of[r] = child;
                totals[child as usize][0] += stats[r][0];
                totals[child as usize][1] += stats[r][1];
            } else {
                // Finished leaf: drop from further scans.
                node_of[r] = NONE;
            }
        }
        for &c in &next {
            let t = totals[c as usize];
            nodes[c as usize].value = crit.leaf_value(t);
            nodes[c as usize].cover = t[0];
        }
        slot = alloc::vec![NONE; nodes.len()];
        for (k, &c) in next.iter().enumerate() {
            slot[c as usize] = k as u32;
        }
        frontier = next;
        depth += 1;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_on_separable_feature() {
        let x = Matrix::from_rows(&[[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let y = [0.0, 0.0, 1.0, 1.0];
        let stats: Vec<Stats> = y.iter().map(|&v| [1.0, v]).collect();
        let sorted = sorted_columns(&x);
        let t = grow(&x, &sorted, &stats, &[true; 4], None, &Gini { min_leaf: 1.0 }, &mut AllFeatures);
        let s = t.nodes[0].split.unwrap();
        assert_eq!((s.feature, s.threshold), (0, 1.0));
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.predict(&[0.5, 0.0]), 0.0);
        assert_eq!(t.predict(&[2.5, 0.0]), 1.0);
        assert!((s.gain - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_rows_are_ignored() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let stats = [[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let sorted = sorted_columns(&x);
        let t = grow(&x, &sorted, &stats, &[false, true, true], None, &Gini { min_leaf: 1.0 }, &mut AllFeatures);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, 1.0);
        assert_eq!(t.nodes[0].cover, 2.0);
    }
}
