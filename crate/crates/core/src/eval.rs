//! Metrics, hypothesis tests, descriptive tables and the stratified split.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp, fabs, lgamma, log, round, sqrt};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, shuffle, stream};

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from rank sums
/// in integer arithmetic, so the only rounding is the final division.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum over positives of twice their (mid)rank.
    let mut doubled: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        let p = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled += p * twice_mid;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let numerator = doubled - p * (p + 1);
    Ok(numerator as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Predicted positive iff `score >= threshold`.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        check_scores(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// 0 when there are no predicted positives or no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

pub fn f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(Confusion::at(scores, labels, threshold)?.f1())
}

/// Threshold in `scores` maximizing F1 (ties: the lowest such threshold).
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (0.5, -1.0);
    for t in cands {
        let f = Confusion::at(scores, labels, t)?.f1();
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(best.0.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
    pub threshold: f64,
    pub model: String,
    pub strategy: String,
    pub window_months: u32,
    pub seed: u64,
}

pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, Confusion)> {
    let a = auroc(scores, labels)?;
    let c = Confusion::at(scores, labels, threshold)?;
    Ok((a, c))
}

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log(1.0 - x);
    let front = exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_front = -x + a * log(x) - lgamma(a);
    if x < a + 1.0 {
        // Series for P.
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if fabs(del) < fabs(sum) * EPS {
                break;
            }
        }
        1.0 - sum * exp(ln_front)
    } else {
        // Continued fraction for Q.
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if fabs(d) < TINY {
                d = TINY;
            }
            c = b + an / c;
            if fabs(c) < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if fabs(del - 1.0) < EPS {
                break;
            }
        }
        exp(ln_front) * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    ChiSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = crate::math::compensated_sum(xs.iter().copied()) / n;
    let ss = crate::math::compensated_sum(xs.iter().map(|x| (x - m) * (x - m)));
    (m, ss / (n - 1.0))
}

/// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("Welch test needs at least 2 values per sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Welch test input".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(Error::InsufficientData("both samples have zero variance".into()));
    }
    let t = (ma - mb) / sqrt(se2);
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Ok(StatTestResult { kind: TestKind::WelchT, statistic: t, df, p_value: p })
}

/// Pearson chi-squared test of independence on a 2x2 table, no continuity
/// correction.
pub fn chi_squared_independence(table: [[f64; 2]; 2]) -> Result<StatTestResult> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let n = rows[0] + rows[1];
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            if !(e > 0.0) {
                return Err(Error::InsufficientData(format!("zero expected count in cell ({i}, {j})")));
            }
            let d = table[i][j] - e;
            chi2 += d * d / e;
        }
    }
    let p = gamma_q(0.5, chi2 / 2.0).clamp(0.0, 1.0);
    Ok(StatTestResult { kind: TestKind::ChiSquared, statistic: chi2, df: 1.0, p_value: p })
}

/// Three decimals; anything below 0.0005 prints as "0.000".
pub fn format_p(p: f64) -> String {
    if p < 0.0005 {
        return "0.000".into();
    }
    format!("{:.3}", round(p * 1000.0) / 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

fn mean_sd(xs: &[f64]) -> Option<MeanSd> {
    if xs.len() < 2 {
        return None;
    }
    let (m, v) = mean_var(xs);
    Some(MeanSd { mean: m, sd: sqrt(v), n: xs.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericRow {
    pub feature: String,
    pub overall: Option<MeanSd>,
    pub positive: Option<MeanSd>,
    pub negative: Option<MeanSd>,
    pub test: Option<StatTestResult>,
    pub skipped: Option<String>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalRow {
    pub feature: String,
    /// Share of positives (label 1) with the flag set.
    pub positive_share: f64,
    pub negative_share: f64,
    pub test: Option<StatTestResult>,
    pub skipped: Option<String>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTables {
    pub alpha: f64,
    pub numeric: Vec<NumericRow>,
    pub categorical: Vec<CategoricalRow>,
}

/// Per-stratum summaries: Welch tests for numeric columns and chi-squared
/// tests for 0/1 columns.
pub fn descriptive_tables(x: &Matrix, y: &[bool], names: &[&str], numeric: &[bool], alpha: f64) -> Result<DescriptiveTables> {
    if x.rows() == 0 {
        return Err(Error::InsufficientData("empty feature matrix".into()));
    }
    if y.len() != x.rows() || names.len() != x.cols() || numeric.len() != x.cols() {
        return Err(Error::Shape("labels, names and mask must match the matrix".into()));
    }
    let mut out = DescriptiveTables { alpha, numeric: Vec::new(), categorical: Vec::new() };
    for j in 0..x.cols() {
        let col = x.column(j);
        let pos: Vec<f64> = col.iter().zip(y).filter(|(_, &l)| l).map(|(v, _)| *v).collect();
        let neg: Vec<f64> = col.iter().zip(y).filter(|(_, &l)| !l).map(|(v, _)| *v).collect();
        if numeric[j] {
            let (test, skipped) = match welch_t_test(&pos, &neg) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(format!("{e}"))),
            };
            out.numeric.push(NumericRow {
                feature: names[j].into(),
                overall: mean_sd(&col),
                positive: mean_sd(&pos),
                negative: mean_sd(&neg),
                significant: test.is_some_and(|t| t.p_value < alpha),
                test,
                skipped,
            });
        } else {
            let ones = |v: &[f64]| v.iter().filter(|&&x| x != 0.0).count() as f64;
            let (p1, n1) = (ones(&pos), ones(&neg));
            let table = [[p1, pos.len() as f64 - p1], [n1, neg.len() as f64 - n1]];
            let (test, skipped) = match chi_squared_independence(table) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(format!("{e}"))),
            };
            let share = |k: f64, n: usize| if n == 0 { 0.0 } else { k / n as f64 };
            out.categorical.push(CategoricalRow {
                feature: names[j].into(),
                positive_share: share(p1, pos.len()),
                negative_share: share(n1, neg.len()),
                significant: test.is_some_and(|t| t.p_value < alpha),
                test,
                skipped,
            });
        }
    }
    Ok(out)
}

/// Stratified split. Each class contributes `round(n_c * ratio)` training
/// rows, clamped to `[1, n_c - 1]`. Returns sorted `(train, test)` indices.
pub fn stratified_split(labels: &[bool], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (tag, class) in [(0u64, false), (1, true)] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!("class {class} has fewer than 2 members")));
        }
        let n_train = (round(idx.len() as f64 * ratio) as usize).clamp(1, idx.len() - 1);
        let mut rng = stream(derive_seed(seed, &[0x5D17, tag]), 0);
        shuffle(&mut idx, &mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_edge_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auroc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    #[test]
    fn auroc_ten_point_fixture_matches_pairwise_count() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.4, 0.7, 0.2, 0.9, 0.4, 0.05];
        let l = [false, true, false, true, false, true, false, false, true, true];
        let (mut num, mut np, mut nn) = (0u64, 0u64, 0u64);
        for i in 0..10 {
            if l[i] {
                np += 1;
            } else {
                nn += 1;
            }
        }
        for i in 0..10 {
            for j in 0..10 {
                if l[i] && !l[j] {
                    num += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
                }
            }
        }
        assert_eq!(auroc(&s, &l).unwrap(), num as f64 / (2 * np * nn) as f64);
    }

    #[test]
    fn f1_fixtures() {
        assert_eq!(f1(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(f1(&[0.1, 0.1], &[true, false], 0.5).unwrap(), 0.0);
        // TP=3, FP=1, FN=2.
        let s = [0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1];
        let l = [true, true, true, false, true, true, false];
        let c = Confusion::at(&s, &l, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 2, 1));
        let expected = 2.0 * (0.75 * 0.6) / (0.75 + 0.6);
        assert!((c.f1() - expected).abs() < 1e-12);
        assert!(f1(&s, &l, 1.5).is_err());
    }

    #[test]
    fn welch_identical_samples() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn chi_squared_independence_and_guards() {
        let r = chi_squared_independence([[10.0, 20.0], [30.0, 60.0]]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(chi_squared_independence([[0.0, 5.0], [0.0, 7.0]]).is_err());
    }

    #[test]
    fn incomplete_functions_known_values() {
        // I_0.5(a, a) = 0.5 by symmetry; Q(0.5, x) = erfc(sqrt(x)).
        assert!((inc_beta(3.5, 3.5, 0.5) - 0.5).abs() < 1e-14);
        for x in [0.01, 0.5, 2.0, 9.0, 40.0] {
            assert!((gamma_q(0.5, x) - libm::erfc(x.sqrt())).abs() < 1e-13);
        }
        // I_x(1, b) = 1 - (1-x)^b.
        assert!((inc_beta(1.0, 4.0, 0.3) - (1.0 - 0.7f64.powi(4))).abs() < 1e-14);
    }

    #[test]
    fn p_value_formatting() {
        assert_eq!(format_p(0.0004), "0.000");
        assert_eq!(format_p(0.0094), "0.009");
        assert_eq!(format_p(0.035), "0.035");
        assert_eq!(format_p(1.0), "1.000");
    }

    #[test]
    fn split_counts() {
        let y: Vec<bool> = (0..100).map(|i| i % 5 == 0).collect();
        let (tr, te) = stratified_split(&y, 0.8, 3).unwrap();
        let pos = |v: &[usize]| v.iter().filter(|&&i| y[i]).count();
        assert_eq!((te.len() - pos(&te), pos(&te)), (16, 4));
        assert_eq!(tr.len(), 80);
        assert_eq!(stratified_split(&y, 0.8, 3).unwrap(), (tr, te));
        assert!(stratified_split(&y, 1.0, 3).is_err());
        assert!(stratified_split(&[true, false, false], 0.5, 3).is_err());
    }

    #[test]
    fn descriptive_guards() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]]).unwrap();
        let t = descriptive_tables(&x, &[true, false, false], &["a", "b"], &[true, false], 0.05).unwrap();
        assert!(t.numeric[0].positive.is_none());
        assert!(t.numeric[0].skipped.is_some());
        assert!(t.categorical[0].skipped.as_deref().unwrap().contains("zero expected"));
    }
}
