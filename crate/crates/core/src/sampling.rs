//! Class rebalancing: SMOTE, ADASYN, ENN, OSS and the composed strategies
//! SM1..SM8. All distances are squared Euclidean on the given rows, which are
//! expected to be standardized.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::round;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream};

const TAG_SMOTE: u64 = 0x5130;
const TAG_ADASYN: u64 = 0xADA5;
const TAG_OSS: u64 = 0x0555;

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest rows of `x` among `pool` to `query`, skipping the pool
/// entry equal to `skip`. Ties break on the smaller row index.
pub fn nearest(x: &Matrix, pool: &[usize], query: &[f64], skip: Option<usize>, k: usize) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for &j in pool {
        if Some(j) == skip {
            continue;
        }
        let d = dist2(query, x.row(j));
        if best.len() == k {
            let last = best[k - 1];
            if (d, j) >= last {
                continue;
            }
            best.pop();
        }
        let pos = best.partition_point(|&(bd, bj)| (bd, bj) < (d, j));
        best.insert(pos, (d, j));
    }
    best.into_iter().map(|(_, j)| j).collect()
}

/// k-nearest-neighbour lists for every row in `queries`, searched in `pool`.
pub fn knn_lists(x: &Matrix, queries: &[usize], pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    crate::par::map_range(queries.len(), |q| {
        let i = queries[q];
        nearest(x, pool, x.row(i), Some(i), k)
    })
}

fn class_counts(y: &[bool]) -> (usize, usize) {
    let pos = y.iter().filter(|&&v| v).count();
    (y.len() - pos, pos)
}

/// Label of the smaller class (ties: positive).
fn minority_label(y: &[bool]) -> bool {
    let (neg, pos) = class_counts(y);
    pos <= neg
}

fn interpolate(a: &[f64], b: &[f64], lambda: f64, out: &mut Vec<f64>) {
    out.extend(a.iter().zip(b).map(|(x, y)| x + lambda * (y - x)));
}

/// `n_new` synthetic rows. Row `s` draws from its own stream: a base row
/// uniformly, one of its `k` nearest minority neighbours uniformly, then
/// `lambda` in `[0, 1)`.
pub fn smote(minority: &Matrix, k: usize, n_new: usize, seed: u64) -> Result<Matrix> {
    let m = minority.rows();
    if k == 0 || m <= k {
        return Err(Error::InsufficientData(format!("SMOTE needs more than k={k} minority rows, got {m}")));
    }
    let all: Vec<usize> = (0..m).collect();
    let nn = knn_lists(minority, &all, &all, k);
    let rows = crate::par::map_range(n_new, |s| {
        let mut rng = stream(derive_seed(seed, &[TAG_SMOTE, s as u64]), 0);
        let base = rng.random_range(0..m);
        let other = nn[base][rng.random_range(0..k)];
        let lambda: f64 = rng.random();
        let mut row = Vec::with_capacity(minority.cols());
        interpolate(minority.row(base), minority.row(other), lambda, &mut row);
        row
    });
    Matrix::new(n_new, minority.cols(), rows.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdasynAllocation {
    /// Majority share among each minority row's k neighbours.
    pub ratios: Vec<f64>,
    /// Synthetics generated per minority row.
    pub counts: Vec<usize>,
    /// Majority minus minority count.
    pub g_total: usize,
    pub uniform_fallback: bool,
}

/// ADASYN allocation: `g_i = round(r_i / sum(r) * G)`.
pub fn adasyn_allocation(x: &Matrix, y: &[bool], k: usize) -> Result<(Vec<usize>, AdasynAllocation)> {
    if y.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let min_label = minority_label(y);
    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == min_label).collect();
    let majority = y.len() - minority.len();
    if minority.is_empty() || majority == 0 {
        return Err(Error::SingleClass("ADASYN needs both classes".into()));
    }
    if k == 0 || minority.len() <= k {
        return Err(Error::InsufficientData(format!(
            "ADASYN needs more than k={k} minority rows, got {}",
            minority.len()
        )));
    }
    let g_total = majority - minority.len();
    let all: Vec<usize> = (0..y.len()).collect();
    let nn = knn_lists(x, &minority, &all, k);
    let ratios: Vec<f64> =
        nn.iter().map(|l| l.iter().filter(|&&j| y[j] != min_label).count() as f64 / k as f64).collect();
    let total: f64 = ratios.iter().sum();
    let m = minority.len();
    let (counts, uniform_fallback) = if total == 0.0 {
        ((0..m).map(|i| g_total / m + usize::from(i < g_total % m)).collect(), g_total > 0)
    } else {
        (ratios.iter().map(|r| round(r / total * g_total as f64) as usize).collect(), false)
    };
    Ok((minority, AdasynAllocation { ratios, counts, g_total, uniform_fallback }))
}

/// ADASYN synthetics (all of the minority label), plus the allocation used.
pub fn adasyn(x: &Matrix, y: &[bool], k: usize, seed: u64) -> Result<(Matrix, AdasynAllocation)> {
    let (minority, alloc_) = adasyn_allocation(x, y, k)?;
    let mx = x.select(&minority);
    let local: Vec<usize> = (0..minority.len()).collect();
    let nn = knn_lists(&mx, &local, &local, k);
    let rows = crate::par::map_range(minority.len(), |i| {
        let mut out = Vec::with_capacity(alloc_.counts[i] * x.cols());
        for j in 0..alloc_.counts[i] {
            let mut rng = stream(derive_seed(seed, &[TAG_ADASYN, i as u64, j as u64]), 0);
            let other = nn[i][rng.random_range(0..k)];
            let lambda: f64 = rng.random();
            interpolate(mx.row(i), mx.row(other), lambda, &mut out);
        }
        out
    });
    let n: usize = alloc_.counts.iter().sum();
    Ok((Matrix::new(n, x.cols(), rows.concat())?, alloc_))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnnMode {
    /// Only rows of `majority` may be removed.
    #[default]
    MajorityOnly,
    /// Any row whose neighbourhood disagrees is removed.
    Classic,
}

/// Retained row indices (ascending). A candidate row is removed when more
/// than half of its `k` nearest neighbours carry the other label.
pub fn enn(x: &Matrix, y: &[bool], k: usize, majority: bool, mode: EnnMode) -> Result<Vec<usize>> {
    if y.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    if k == 0 || y.len() < k + 1 {
        return Err(Error::InsufficientData(format!("ENN needs at least k+1={} rows", k + 1)));
    }
    let all: Vec<usize> = (0..y.len()).collect();
    let candidates: Vec<usize> = match mode {
        EnnMode::MajorityOnly => all.iter().copied().filter(|&i| y[i] == majority).collect(),
        EnnMode::Classic => all.clone(),
    };
    let nn = knn_lists(x, &candidates, &all, k);
    let mut keep = alloc::vec![true; y.len()];
    for (q, &i) in candidates.iter().enumerate() {
        let other = nn[q].iter().filter(|&&j| y[j] != y[i]).count();
        if 2 * other > k {
            keep[i] = false;
        }
    }
    Ok(all.into_iter().filter(|&i| keep[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OssOutcome {
    pub retained: Vec<usize>,
    /// Majority rows added during condensation (excluding the seed row).
    pub condensed_added: Vec<usize>,
    pub tomek_removed: Vec<usize>,
    pub seed_row: usize,
}

/// One-sided selection. Condensation keeps every minority row, one random
/// majority row, and each other majority row that 1-NN against that initial
/// set misclassifies; then majority members of Tomek links are dropped.
pub fn oss(x: &Matrix, y: &[bool], majority: bool, seed: u64) -> Result<OssOutcome> {
    if y.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let maj: Vec<usize> = (0..y.len()).filter(|&i| y[i] == majority).collect();
    let min: Vec<usize> = (0..y.len()).filter(|&i| y[i] != majority).collect();
    if maj.is_empty() || min.is_empty() {
        return Err(Error::SingleClass("OSS needs both classes".into()));
    }
    let mut rng = stream(derive_seed(seed, &[TAG_OSS]), 0);
    let seed_row = maj[rng.random_range(0..maj.len())];
    let mut initial = min.clone();
    initial.push(seed_row);
    initial.sort_unstable();

    let rest: Vec<usize> = maj.iter().copied().filter(|&i| i != seed_row).collect();
    let nn1 = knn_lists(x, &rest, &initial, 1);
    let condensed_added: Vec<usize> =
        rest.iter().zip(&nn1).filter(|(_, l)| y[l[0]] != majority).map(|(&i, _)| i).collect();

    let mut c = initial;
    c.extend_from_slice(&condensed_added);
    c.sort_unstable();
    let nn = knn_lists(x, &c, &c, 1);
    let pos_in_c = |i: usize| c.binary_search(&i).unwrap();
    let mut tomek_removed = Vec::new();
    for (a_pos, &a) in c.iter().enumerate() {
        if y[a] != majority {
            continue;
        }
        let Some(&b) = nn[a_pos].first() else { continue };
        if y[b] != majority && nn[pos_in_c(b)].first() == Some(&a) {
            tomek_removed.push(a);
        }
    }
    let retained = c.into_iter().filter(|i| tomek_removed.binary_search(i).is_err()).collect();
    Ok(OssOutcome { retained, condensed_added, tomek_removed, seed_row })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    SM1,
    SM2,
    SM3,
    SM4,
    SM5,
    SM6,
    SM7,
    SM8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Over {
    Smote,
    Adasyn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Under {
    Enn,
    Oss,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::SM1,
        Strategy::SM2,
        Strategy::SM3,
        Strategy::SM4,
        Strategy::SM5,
        Strategy::SM6,
        Strategy::SM7,
        Strategy::SM8,
    ];

    fn parts(self) -> (Option<Over>, Option<Under>) {
        use Strategy::*;
        match self {
            SM1 => (Some(Over::Smote), None),
            SM2 => (Some(Over::Adasyn), None),
            SM3 => (None, Some(Under::Enn)),
            SM4 => (None, Some(Under::Oss)),
            SM5 => (Some(Over::Smote), Some(Under::Enn)),
            SM6 => (Some(Over::Smote), Some(Under::Oss)),
            SM7 => (Some(Over::Adasyn), Some(Under::Enn)),
            SM8 => (Some(Over::Adasyn), Some(Under::Oss)),
        }
    }

    pub fn description(self) -> &'static str {
        use Strategy::*;
        match self {
            SM1 => "SMOTE",
            SM2 => "ADASYN",
            SM3 => "ENN",
            SM4 => "OSS",
            SM5 => "SMOTE+ENN",
            SM6 => "SMOTE+OSS",
            SM7 => "ADASYN+ENN",
            SM8 => "ADASYN+OSS",
        }
    }

    pub fn as_str(self) -> &'static str {
        use Strategy::*;
        match self {
            SM1 => "SM1",
            SM2 => "SM2",
            SM3 => "SM3",
            SM4 => "SM4",
            SM5 => "SM5",
            SM6 => "SM6",
            SM7 => "SM7",
            SM8 => "SM8",
        }
    }

    pub fn is_pure_undersampling(self) -> bool {
        self.parts().0.is_none()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown strategy {s:?} (expected SM1..SM8)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub smote_k: usize,
    pub enn_k: usize,
    pub enn_mode: EnnMode,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { smote_k: 5, enn_k: 3, enn_mode: EnnMode::MajorityOnly }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub strategy: Strategy,
    pub seed: u64,
    /// `(negatives, positives)` before resampling.
    pub before: (usize, usize),
    pub after: (usize, usize),
    pub created: usize,
    pub removed: usize,
    pub adasyn_uniform_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub x: Matrix,
    pub y: Vec<bool>,
    pub report: ResampleReport,
}

/// Rebalances a training split. Oversamplers bring the minority to parity
/// (ADASYN up to rounding); cleaners then run on the augmented set with the
/// majority class fixed by the original labels.
pub fn apply_strategy(strategy: Strategy, x: &Matrix, y: &[bool], cfg: &SamplingConfig, seed: u64) -> Result<Resampled> {
    if y.len() != x.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let before = class_counts(y);
    if before.0 == 0 || before.1 == 0 {
        return Err(Error::SingleClass(format!("{strategy} needs both classes in the training split")));
    }
    let min_label = minority_label(y);
    let maj_label = !min_label;
    let (over, under) = strategy.parts();

    let mut cur_x = x.clone();
    let mut cur_y = y.to_vec();
    let mut created = 0;
    let mut fallback = false;
    match over {
        Some(Over::Smote) => {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == min_label).collect();
            let n_new = y.len() - 2 * idx.len();
            let syn = smote(&x.select(&idx), cfg.smote_k, n_new, derive_seed(seed, &[1]))?;
            created = syn.rows();
            cur_x = cur_x.vstack(&syn)?;
            cur_y.extend(core::iter::repeat_n(min_label, created));
        }
        Some(Over::Adasyn) => {
            let (syn, a) = adasyn(x, y, cfg.smote_k, derive_seed(seed, &[2]))?;
            created = syn.rows();
            fallback = a.uniform_fallback;
            cur_x = cur_x.vstack(&syn)?;
            cur_y.extend(core::iter::repeat_n(min_label, created));
        }
        None => {}
    }
    let keep = match under {
        Some(Under::Enn) => Some(enn(&cur_x, &cur_y, cfg.enn_k, maj_label, cfg.enn_mode)?),
        Some(Under::Oss) => Some(oss(&cur_x, &cur_y, maj_label, derive_seed(seed, &[3]))?.retained),
        None => None,
    };
    let mut removed = 0;
    if let Some(keep) = keep {
        removed = cur_y.len() - keep.len();
        cur_x = cur_x.select(&keep);
        cur_y = keep.iter().map(|&i| cur_y[i]).collect();
    }
    let report = ResampleReport {
        strategy,
        seed,
        before,
        after: class_counts(&cur_y),
        created,
        removed,
        adasyn_uniform_fallback: fallback,
    };
    Ok(Resampled { x: cur_x, y: cur_y, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn m(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn nearest_breaks_ties_by_index() {
        let x = m(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);
        let pool = [0, 1, 2, 3];
        assert_eq!(nearest(&x, &pool, x.row(0), Some(0), 2), vec![1, 2]);
        assert_eq!(nearest(&x, &pool, x.row(0), Some(0), 3), vec![1, 2, 3]);
    }

    #[test]
    fn smote_degenerate_and_segment_cases() {
        let same = m(&[[2.0, 3.0], [2.0, 3.0]]);
        let s = smote(&same, 1, 20, 4).unwrap();
        assert!(s.iter_rows().all(|r| r == [2.0, 3.0]));
        let seg = m(&[[0.0, 0.0], [1.0, 1.0]]);
        let s = smote(&seg, 1, 50, 4).unwrap();
        assert!(s.iter_rows().all(|r| r[0] == r[1] && (0.0..=1.0).contains(&r[0])));
        assert!(smote(&seg, 2, 1, 0).is_err());
    }

    #[test]
    fn adasyn_balanced_input_creates_nothing() {
        let x = m(&[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]]);
        let (syn, a) = adasyn(&x, &[true, true, false, false], 1, 0).unwrap();
        assert_eq!(syn.rows(), 0);
        assert_eq!(a.g_total, 0);
    }

    #[test]
    fn enn_separated_clusters_and_intruder() {
        let mut rows = vec![];
        for i in 0..5 {
            rows.push([i as f64 * 0.1, 0.0]);
        }
        for i in 0..5 {
            rows.push([10.0 + i as f64 * 0.1, 0.0]);
        }
        let x = m(&rows);
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        assert_eq!(enn(&x, &y, 3, false, EnnMode::MajorityOnly).unwrap(), (0..10).collect::<Vec<_>>());
        // A majority row inside the minority cluster.
        rows.push([10.2, 0.01]);
        let x = m(&rows);
        let mut y = y;
        y.push(false);
        let kept = enn(&x, &y, 3, false, EnnMode::MajorityOnly).unwrap();
        assert!(!kept.contains(&10));
        assert_eq!(kept.len(), 10);
    }

    #[test]
    fn oss_separable_and_tomek() {
        let x = m(&[[0.0, 0.0], [0.2, 0.0], [0.4, 0.0], [10.0, 0.0], [10.2, 0.0]]);
        let y = [false, false, false, true, true];
        let out = oss(&x, &y, false, 9).unwrap();
        assert_eq!(out.retained.len(), 3);
        assert!(out.retained.contains(&out.seed_row));
        assert!(out.tomek_removed.is_empty());

        // Majority row 2 sits next to minority row 3: a Tomek link.
        let x = m(&[[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.05, 0.0], [9.0, 0.0]]);
        let y = [false, false, false, true, true];
        for seed in 0..10 {
            let out = oss(&x, &y, false, seed).unwrap();
            assert!(!out.retained.contains(&2));
            assert!(out.retained.contains(&3) && out.retained.contains(&4));
        }
    }

    #[test]
    fn strategies_parse_and_classify() {
        assert_eq!("sm5".parse::<Strategy>().unwrap(), Strategy::SM5);
        assert!("SM9".parse::<Strategy>().is_err());
        assert!(Strategy::SM3.is_pure_undersampling() && Strategy::SM4.is_pure_undersampling());
        assert_eq!(Strategy::ALL.iter().filter(|s| s.is_pure_undersampling()).count(), 2);
    }

    #[test]
    fn single_class_split_is_rejected() {
        let x = m(&[[0.0, 0.0], [1.0, 0.0]]);
        let err = apply_strategy(Strategy::SM1, &x, &[true, true], &SamplingConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::SingleClass(_)));
    }
}
