//! Random forest of Gini CART trees on bootstrap samples.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, sorted_columns, FeatureSampler, Gini, Stats, Tree};
use super::{check_training_data, ForestParams};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (s / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    /// Total impurity decrease per feature (unnormalized).
    pub fn impurity_importance(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.n_features];
        for t in &self.trees {
            t.accumulate_gain(&mut out);
        }
        out
    }
}

struct Subset {
    rng: StreamRng,
    mtry: usize,
}

impl FeatureSampler for Subset {
    fn draw(&mut self, n: usize) -> Option<Vec<bool>> {
        if self.mtry >= n {
            return None;
        }
        // Partial Fisher-Yates over feature indices.
        let mut idx: Vec<usize> = (0..n).collect();
        let mut mask = alloc::vec![false; n];
        for i in 0..self.mtry {
            let j = self.rng.random_range(i..n);
            idx.swap(i, j);
            mask[idx[i]] = true;
        }
        Some(mask)
    }
}

pub fn train_random_forest(x: &Matrix, y: &[bool], hp: &ForestParams, seed: u64) -> Result<RandomForest> {
    check_training_data(x, y)?;
    if hp.max_depth == Some(0) {
        return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
    }
    if hp.n_trees == 0 || hp.min_leaf == 0 {
        return Err(Error::InvalidConfig("n_trees and min_leaf must be positive".into()));
    }
    let n = x.rows();
    let f = x.cols();
    let mtry = hp.max_features.unwrap_or_else(|| (crate::math::sqrt(f as f64) as usize).max(1)).clamp(1, f);
    let sorted = sorted_columns(x);
    let trees = crate::par::map_range(hp.n_trees, |t| {
        let mut rng = stream(derive_seed(seed, &[t as u64]), 0);
        let mut counts = alloc::vec![0u32; n];
        if hp.bootstrap {
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        } else {
            counts.iter_mut().for_each(|c| *c = 1);
        }
        let stats: Vec<Stats> = (0..n).map(|i| [counts[i] as f64, if y[i] { counts[i] as f64 } else { 0.0 }]).collect();
        let active: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let mut sampler = Subset { rng: stream(derive_seed(seed, &[t as u64]), 1), mtry };
        let crit = Gini { min_leaf: hp.min_leaf as f64 };
        grow(x, &sorted, &stats, &active, hp.max_depth, &crit, &mut sampler)
    });
    Ok(RandomForest { n_features: f, trees })
}
