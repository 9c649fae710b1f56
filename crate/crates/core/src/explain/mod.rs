//! Shapley attributions, global importance rankings and force-plot exports.

pub mod kernel;
pub mod plot;
pub mod tree_shap;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use kernel::{kernel_shap, sample_background, KernelConfig, KernelResult};
pub use plot::{render_force_plot, ForcePlot};

use crate::math::fabs;
use crate::matrix::Matrix;
use crate::models::{ModelKind, ModelParams, TrainedModel};
use crate::{Error, Result};

/// Space in which contributions add up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpace {
    Probability,
    /// Pre-sigmoid log-odds.
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub contributions: Vec<f64>,
    pub model_output: f64,
    pub feature_names: Vec<String>,
    /// Unscaled feature values for labels.
    pub display_values: Vec<f64>,
    pub space: OutputSpace,
    pub method: String,
}

impl ShapExplanation {
    /// `|base + sum(phi) - output|`.
    pub fn additivity_gap(&self) -> f64 {
        fabs(self.base_value + self.contributions.iter().sum::<f64>() - self.model_output)
    }
}

fn names_or_default(model: &TrainedModel, m: usize) -> Vec<String> {
    if model.meta.feature_names.len() == m {
        model.meta.feature_names.clone()
    } else {
        (0..m).map(|i| alloc::format!("x{i}")).collect()
    }
}

/// Exact TreeSHAP of a forest (probability space) or boosted ensemble
/// (margin space) at a raw feature row.
pub fn tree_shap(model: &TrainedModel, raw: &[f64]) -> Result<ShapExplanation> {
    let x = model.prepare(raw)?;
    let m = x.len();
    let mut phi = alloc::vec![0.0; m];
    let (base, output, space) = match &model.params {
        ModelParams::Forest(rf) => {
            let mut base = 0.0;
            for t in &rf.trees {
                base += tree_shap::tree_shap_into(t, &x, &mut phi);
            }
            let n = rf.trees.len().max(1) as f64;
            phi.iter_mut().for_each(|p| *p /= n);
            (base / n, rf.predict(&x), OutputSpace::Probability)
        }
        ModelParams::Boosted(gb) => {
            let mut base = gb.base_score;
            for t in &gb.trees {
                base += tree_shap::tree_shap_into(t, &x, &mut phi);
            }
            (base, gb.margin(&x), OutputSpace::Margin)
        }
        _ => return Err(Error::UnsupportedModel(alloc::format!("tree_shap needs RF or GBT, got {}", model.kind))),
    };
    Ok(ShapExplanation {
        base_value: base,
        contributions: phi,
        model_output: output,
        feature_names: names_or_default(model, m),
        display_values: raw.to_vec(),
        space,
        method: "tree_shap".to_string(),
    })
}

/// KernelSHAP of any trained model at a raw row, explaining the model-space
/// score (log-odds, or probability for RF). `background_raw` holds raw rows.
/// Sequence models are explained per channel, grouping a channel's values
/// across all steps into one feature.
pub fn kernel_explain(model: &TrainedModel, raw: &[f64], background_raw: &Matrix, cfg: &KernelConfig, seed: u64) -> Result<ShapExplanation> {
    let x = model.prepare(raw)?;
    let mut bg = background_raw.clone();
    if let Some(s) = &model.scaler {
        s.transform(&mut bg)?;
    }
    let groups: Option<Vec<Vec<usize>>> = model.meta.steps.map(|t| {
        let f = x.len() / t;
        (0..f).map(|c| (0..t).map(|s| s * f + c).collect()).collect()
    });
    let r = kernel_shap(|row| model.score_scaled(row).unwrap_or(f64::NAN), &x, &bg, groups.as_deref(), cfg, seed)?;
    let m = r.phi.len();
    let display = match model.meta.steps {
        // Last-step value of each channel.
        Some(t) => raw[(t - 1) * m..t * m].to_vec(),
        None => raw.to_vec(),
    };
    Ok(ShapExplanation {
        base_value: r.base_value,
        contributions: r.phi,
        model_output: r.output,
        feature_names: names_or_default(model, m),
        display_values: display,
        space: if model.kind == ModelKind::Rf { OutputSpace::Probability } else { OutputSpace::Margin },
        method: if r.exhaustive { "kernel_shap_exhaustive" } else { "kernel_shap_sampled" }.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Impurity,
    Gain,
    AbsCoefficient,
    MeanAbsShap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub index: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub method: ImportanceMethod,
    /// Non-increasing importance; ties keep feature order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceRanking {
    /// Normalizes `raw` to sum 1 (left at zero when every score is zero) and
    /// sorts.
    pub fn from_scores(method: ImportanceMethod, names: &[String], raw: &[f64]) -> Self {
        let total: f64 = raw.iter().sum();
        let mut entries: Vec<ImportanceEntry> = raw
            .iter()
            .enumerate()
            .map(|(i, &v)| ImportanceEntry {
                feature: names.get(i).cloned().unwrap_or_else(|| alloc::format!("x{i}")),
                index: i,
                importance: if total > 0.0 { v / total } else { 0.0 },
            })
            .collect();
        entries.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.index.cmp(&b.index)));
        Self { method, entries }
    }

    /// Position of `feature` in the ranking (0 = most important).
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.feature == feature)
    }

    /// Importances in original feature order.
    pub fn by_index(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.entries.len()];
        for e in &self.entries {
            out[e.index] = e.importance;
        }
        out
    }
}

/// Impurity decrease (RF), total gain (GBT) or absolute standardized
/// coefficient (LR).
pub fn feature_importance(model: &TrainedModel) -> Result<ImportanceRanking> {
    let (method, raw) = match &model.params {
        ModelParams::Forest(rf) => (ImportanceMethod::Impurity, rf.impurity_importance()),
        ModelParams::Boosted(gb) => (ImportanceMethod::Gain, gb.gain_importance()),
        ModelParams::Logistic(lr) => (ImportanceMethod::AbsCoefficient, lr.coefficients.iter().map(|w| fabs(*w)).collect()),
        ModelParams::Sequence(_) => {
            return Err(Error::UnsupportedModel(alloc::format!(
                "{} has no intrinsic importance; rank by mean |SHAP| over a probe set instead",
                model.kind
            )))
        }
    };
    Ok(ImportanceRanking::from_scores(method, &names_or_default(model, raw.len()), &raw))
}

/// Mean absolute contribution per feature over a set of explanations.
pub fn mean_abs_shap(explanations: &[ShapExplanation]) -> Result<ImportanceRanking> {
    let first = explanations.first().ok_or_else(|| Error::InsufficientData("no explanations to summarize".into()))?;
    let m = first.contributions.len();
    let mut acc = alloc::vec![0.0; m];
    for e in explanations {
        if e.contributions.len() != m {
            return Err(Error::Shape("explanations disagree on feature count".into()));
        }
        for (a, p) in acc.iter_mut().zip(&e.contributions) {
            *a += fabs(*p);
        }
    }
    let n = explanations.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ImportanceRanking::from_scores(ImportanceMethod::MeanAbsShap, &first.feature_names, &acc))
}
