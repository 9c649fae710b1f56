//! L2-regularized logistic regression fitted by gradient descent with
//! Armijo backtracking. The intercept is not penalized. Steps are scaled per
//! coordinate by the inverse of a curvature bound (`n/4` for the intercept,
//! `sum x^2 / 4 + l2` for a weight), which keeps very strong penalties from
//! stalling the unpenalized intercept.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_training_data, LogisticParams};
use crate::math::{sigmoid, softplus, sqrt};
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

struct Problem<'a> {
    x: &'a Matrix,
    y: &'a [bool],
    l2: f64,
}

impl Problem<'_> {
    /// `theta = [w.., b]`.
    fn margin(&self, theta: &[f64], i: usize) -> f64 {
        let d = self.x.cols();
        theta[d] + self.x.row(i).iter().zip(theta).map(|(v, w)| v * w).sum::<f64>()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let d = self.x.cols();
        let nll = crate::math::compensated_sum((0..self.x.rows()).map(|i| {
            let m = self.margin(theta, i);
            if self.y[i] {
                softplus(-m)
            } else {
                softplus(m)
            }
        }));
        nll + 0.5 * self.l2 * theta[..d].iter().map(|w| w * w).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64], grad: &mut [f64]) {
        let d = self.x.cols();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..self.x.rows() {
            let r = sigmoid(self.margin(theta, i)) - if self.y[i] { 1.0 } else { 0.0 };
            for (g, v) in grad.iter_mut().zip(self.x.row(i)) {
                *g += r * v;
            }
            grad[d] += r;
        }
        for j in 0..d {
            grad[j] += self.l2 * theta[j];
        }
    }
}

pub fn train_logistic(x: &Matrix, y: &[bool], hp: &LogisticParams) -> Result<LogisticModel> {
    check_training_data(x, y)?;
    if !(hp.l2 >= 0.0 && hp.learning_rate > 0.0 && hp.tol > 0.0) {
        return Err(Error::InvalidConfig("l2 must be non-negative; learning rate and tol positive".into()));
    }
    let d = x.cols();
    let p = Problem { x, y, l2: hp.l2 };
    let mut theta = alloc::vec![0.0; d + 1];
    let mut grad = alloc::vec![0.0; d + 1];
    let mut trial = alloc::vec![0.0; d + 1];
    let mut precond: Vec<f64> = (0..d).map(|j| 0.25 * x.column(j).iter().map(|v| v * v).sum::<f64>() + hp.l2).collect();
    precond.push(0.25 * x.rows() as f64);
    for c in &mut precond {
        *c = 1.0 / c.max(1e-12);
    }
    let mut f = p.objective(&theta);
    let mut step = hp.learning_rate;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < hp.max_iters {
        p.gradient(&theta, &mut grad);
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if sqrt(g2) < hp.tol {
            converged = true;
            break;
        }
        // Directional derivative along the scaled descent direction.
        let slope: f64 = grad.iter().zip(&precond).map(|(g, c)| g * g * c).sum();
        if slope <= 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        // Warm-started backtracking: try twice the last accepted step.
        step = (step * 2.0).min(hp.learning_rate);
        loop {
            for k in 0..=d {
                trial[k] = theta[k] - step * precond[k] * grad[k];
            }
            let ft = p.objective(&trial);
            if ft <= f - 1e-4 * step * slope {
                f = ft;
                core::mem::swap(&mut theta, &mut trial);
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // No further descent is representable.
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }
    let intercept = theta.pop().unwrap_or(0.0);
    if !intercept.is_finite() || theta.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("logistic regression diverged".into()));
    }
    Ok(LogisticModel { coefficients: theta, intercept, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auroc;

    #[test]
    fn separable_data_ranks_perfectly() {
        let rows: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 / 10.0 - 1.0]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = train_logistic(&x, &y, &LogisticParams::default()).unwrap();
        let s: Vec<f64> = (0..20).map(|i| m.predict(x.row(i))).collect();
        assert_eq!(auroc(&s, &y).unwrap(), 1.0);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn heavy_penalty_shrinks_to_base_rate() {
        let rows: Vec<[f64; 2]> = (0..30).map(|i| [(i % 7) as f64 - 3.0, (i % 5) as f64 - 2.0]).collect();
        let y: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let hp = LogisticParams { l2: 1e9, ..LogisticParams::default() };
        let m = train_logistic(&x, &y, &hp).unwrap();
        assert!(m.coefficients.iter().all(|w| w.abs() < 1e-6));
        for i in 0..30 {
            assert!((m.predict(x.row(i)) - 10.0 / 30.0).abs() < 1e-5);
        }
    }
}
