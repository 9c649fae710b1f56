//! Second-order gradient-boosted trees with logistic loss.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tree::{grow, sorted_columns, AllFeatures, Newton, Stats, Tree};
use super::{check_training_data, BoostParams};
use crate::math::{logit, sigmoid, softplus};
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub n_features: usize,
    /// Margin before any tree, the log-odds of the training base rate.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Mean training log-loss after each round (index 0 is the base model).
    pub train_loss: Vec<f64>,
}

impl BoostedTrees {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    /// Total split gain per feature (unnormalized).
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.n_features];
        for t in &self.trees {
            t.accumulate_gain(&mut out);
        }
        out
    }
}

fn log_loss(margins: &[f64], y: &[bool]) -> f64 {
    // -log sigmoid(m) = softplus(-m); -log(1 - sigmoid(m)) = softplus(m).
    let s = crate::math::compensated_sum(margins.iter().zip(y).map(|(&m, &t)| if t { softplus(-m) } else { softplus(m) }));
    s / margins.len() as f64
}

pub fn train_gbt(x: &Matrix, y: &[bool], hp: &BoostParams) -> Result<BoostedTrees> {
    check_training_data(x, y)?;
    if !(hp.lambda >= 0.0) || !(hp.learning_rate > 0.0) || !(hp.min_child_weight >= 0.0) {
        return Err(Error::InvalidConfig("lambda and min_child_weight must be non-negative, learning rate positive".into()));
    }
    if hp.max_depth == 0 {
        return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
    }
    let n = x.rows();
    let pos = y.iter().filter(|&&v| v).count() as f64;
    let base_score = logit(pos / n as f64);
    let sorted = sorted_columns(x);
    let mut margins = alloc::vec![base_score; n];
    let mut train_loss = alloc::vec![log_loss(&margins, y)];
    let mut trees = Vec::with_capacity(hp.rounds);
    let crit = Newton { lambda: hp.lambda, min_child_weight: hp.min_child_weight, eta: hp.learning_rate };
    let active = alloc::vec![true; n];
    for _ in 0..hp.rounds {
        let stats: Vec<Stats> = margins
            .iter()
            .zip(y)
            .map(|(&m, &t)| {
                let p = sigmoid(m);
                [p * (1.0 - p), p - if t { 1.0 } else { 0.0 }]
            })
            .collect();
        let tree = grow(x, &sorted, &stats, &active, Some(hp.max_depth), &crit, &mut AllFeatures);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(x.row(i));
        }
        train_loss.push(log_loss(&margins, y));
        trees.push(tree);
    }
    Ok(BoostedTrees { n_features: x.cols(), base_score, trees, train_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rounds_predicts_base_rate() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0], [4.0]]).unwrap();
        let y = [true, false, false, true, false];
        let m = train_gbt(&x, &y, &BoostParams { rounds: 0, ..BoostParams::default() }).unwrap();
        for i in 0..5 {
            assert!((m.predict(x.row(i)) - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_one_round_matches_hand_newton_step() {
        // Base rate 1/2, so p = 0.5, g = p - y = -0.5 or 0.5 and h = 0.25.
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap();
        let y = [false, false, true, true];
        let hp = BoostParams { rounds: 1, max_depth: 1, learning_rate: 1.0, lambda: 1.0, min_child_weight: 0.0 };
        let m = train_gbt(&x, &y, &hp).unwrap();
        let t = &m.trees[0];
        let s = t.nodes[0].split.unwrap();
        assert_eq!(s.threshold, 2.0);
        // Left: G = 1.0, H = 0.5 -> w = -1 / 1.5. Right is the mirror image.
        assert!((t.nodes[s.left as usize].value - (-1.0 / 1.5)).abs() < 1e-15);
        assert!((t.nodes[s.right as usize].value - (1.0 / 1.5)).abs() < 1e-15);
        // Gain = 1/2 [1/1.5 + 1/1.5 - 0/2].
        assert!((s.gain - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_lambda() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let hp = BoostParams { lambda: -1.0, ..BoostParams::default() };
        assert!(train_gbt(&x, &[true, false], &hp).is_err());
    }
}
