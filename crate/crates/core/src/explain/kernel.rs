//! Model-agnostic KernelSHAP.
//!
//! Coalition values replace absent features by background rows and average
//! the score. Shapley values solve a weighted least-squares regression of
//! coalition values on membership indicators, constrained so the attributions
//! sum to `f(x) - E[f]`. With every coalition enumerated and the Shapley
//! kernel as weights the solution is exact.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::solve_linear;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Enumerate all coalitions when there are at most this many features.
    pub max_exhaustive: usize,
    /// Coalitions drawn (in complementary pairs) above that size.
    pub n_samples: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { max_exhaustive: 12, n_samples: 2048 }
    }
}

/// Result of [`kernel_shap`] in the scorer's output space.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelResult {
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub output: f64,
    pub exhaustive: bool,
}

/// Draws `n` background rows without replacement (all rows if fewer).
pub fn sample_background(x: &Matrix, n: usize, seed: u64) -> Matrix {
    if n >= x.rows() {
        return x.clone();
    }
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    let mut rng = stream(derive_seed(seed, &[0xBAC6]), 0);
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    x.select(&chosen)
}

fn binom(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Explains `score` at `x`. `groups`, when given, maps each explained
/// feature to the input columns it controls (for example one sequence channel
/// across all steps); otherwise each column is its own feature.
pub fn kernel_shap<F>(score: F, x: &[f64], background: &Matrix, groups: Option<&[Vec<usize>]>, cfg: &KernelConfig, seed: u64) -> Result<KernelResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if background.rows() == 0 {
        return Err(Error::InsufficientData("background set is empty".into()));
    }
    if background.cols() != x.len() {
        return Err(Error::Shape(format!("instance has {} columns, background {}", x.len(), background.cols())));
    }
    let singletons: Vec<Vec<usize>>;
    let groups: &[Vec<usize>] = match groups {
        Some(g) => g,
        None => {
            singletons = (0..x.len()).map(|j| alloc::vec![j]).collect();
            &singletons
        }
    };
    if groups.iter().flatten().any(|&j| j >= x.len()) {
        return Err(Error::Shape("feature group refers to a column outside the row".into()));
    }
    let m = groups.len();

    let value = |known: &[bool]| -> f64 {
        let mut row = alloc::vec![0.0; x.len()];
        let mut acc = 0.0;
        for b in background.iter_rows() {
            row.copy_from_slice(b);
            for (g, cols) in groups.iter().enumerate() {
                if known[g] {
                    for &j in cols {
                        row[j] = x[j];
                    }
                }
            }
            acc += score(&row);
        }
        acc / background.rows() as f64
    };

    let output = score(x);
    let base_value = value(&alloc::vec![false; m]);
    if !output.is_finite() || !base_value.is_finite() {
        return Err(Error::NonFinite("score function returned a non-finite value".into()));
    }
    let full = value(&alloc::vec![true; m]);
    let delta = full - base_value;
    if m == 0 {
        return Ok(KernelResult { base_value, phi: Vec::new(), output, exhaustive: true });
    }
    if m == 1 {
        return Ok(KernelResult { base_value, phi: alloc::vec![delta], output, exhaustive: true });
    }

    // Coalitions with their regression weights.
    let exhaustive = m <= cfg.max_exhaustive;
    let coalitions: Vec<(Vec<bool>, f64)> = if exhaustive {
        (1..(1usize << m) - 1)
            .map(|mask| {
                let z: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
                let s = mask.count_ones() as usize;
                let w = (m - 1) as f64 / (binom(m, s) * s as f64 * (m - s) as f64);
                (z, w)
            })
            .collect()
    } else {
        // Sizes drawn from the kernel's marginal over |S|; within a size the
        // kernel is uniform, so sampled coalitions carry equal weight.
        let size_w: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
        let total: f64 = size_w.iter().sum();
        let mut rng = stream(derive_seed(seed, &[0x5A4B]), 0);
        let mut out = Vec::with_capacity(cfg.n_samples);
        let mut idx: Vec<usize> = (0..m).collect();
        for _ in 0..cfg.n_samples.div_ceil(2).max(1) {
            let mut u = rng.random::<f64>() * total;
            let mut s = 1;
            for (k, w) in size_w.iter().enumerate() {
                s = k + 1;
                if u < *w {
                    break;
                }
                u -= w;
            }
            for i in 0..s {
                let j = rng.random_range(i..m);
                idx.swap(i, j);
            }
            let mut z = alloc::vec![false; m];
            for &i in &idx[..s] {
                z[i] = true;
            }
            let comp: Vec<bool> = z.iter().map(|b| !b).collect();
            out.push((z, 1.0));
            out.push((comp, 1.0));
        }
        out
    };

    let values = crate::par::map_range(coalitions.len(), |c| value(&coalitions[c].0));
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score function returned a non-finite value".into()));
    }

    // Eliminate the last feature through the efficiency constraint.
    let k = m - 1;
    let mut a = alloc::vec![0.0; k * k];
    let mut b = alloc::vec![0.0; k];
    let mut reg = alloc::vec![0.0; k];
    for ((z, w), v) in coalitions.iter().zip(&values) {
        let zm = if z[k] { 1.0 } else { 0.0 };
        let target = v - base_value - zm * delta;
        for i in 0..k {
            reg[i] = (if z[i] { 1.0 } else { 0.0 }) - zm;
        }
        for i in 0..k {
            if reg[i] == 0.0 {
                continue;
            }
            b[i] += w * reg[i] * target;
            for j in 0..k {
                a[i * k + j] += w * reg[i] * reg[j];
            }
        }
    }
    solve_linear(&mut a, &mut b, k).ok_or_else(|| Error::InsufficientData("coalition design is singular; add samples".into()))?;
    let mut phi = b;
    let last = delta - phi.iter().sum::<f64>();
    phi.push(last);
    Ok(KernelResult { base_value, phi, output, exhaustive })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scorer_has_no_attribution() {
        let bg = Matrix::from_rows(&[[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]).unwrap();
        let r = kernel_shap(|_| 0.3, &[1.0, 1.0, 1.0], &bg, None, &KernelConfig::default(), 0).unwrap();
        assert!(r.phi.iter().all(|p| p.abs() < 1e-12));
        assert!((r.base_value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn linear_scorer_has_closed_form_values() {
        let w = [0.5, -2.0, 1.5, 3.0];
        let bg = Matrix::from_rows(&[[1.0, 0.0, 2.0, -1.0], [0.0, 2.0, 1.0, 1.0], [3.0, 1.0, 0.0, 0.5]]).unwrap();
        let x = [2.0, -1.0, 0.5, 2.0];
        let f = |r: &[f64]| 0.7 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let res = kernel_shap(f, &x, &bg, None, &KernelConfig::default(), 0).unwrap();
        for j in 0..4 {
            let mean = bg.column(j).iter().sum::<f64>() / 3.0;
            assert!((res.phi[j] - w[j] * (x[j] - mean)).abs() < 1e-8);
        }
    }

    #[test]
    fn sampled_regression_keeps_efficiency() {
        let m = 16;
        let bg = Matrix::from_rows(&[alloc::vec![0.0; m], alloc::vec![1.0; m]]).unwrap();
        let x: Vec<f64> = (0..m).map(|i| i as f64 / 4.0).collect();
        let f = |r: &[f64]| r[0] * r[1] + r.iter().sum::<f64>();
        let res = kernel_shap(f, &x, &bg, None, &KernelConfig { max_exhaustive: 12, n_samples: 512 }, 3).unwrap();
        assert!(!res.exhaustive);
        assert!((res.base_value + res.phi.iter().sum::<f64>() - res.output).abs() < 1e-8);
    }

    #[test]
    fn background_sample_is_deterministic() {
        let x = Matrix::from_rows(&(0..50).map(|i| [i as f64]).collect::<Vec<_>>()).unwrap();
        let a = sample_background(&x, 10, 4);
        assert_eq!(a, sample_background(&x, 10, 4));
        assert_eq!(a.rows(), 10);
    }
}
