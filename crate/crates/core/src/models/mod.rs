//! Trainers and predictors: logistic regression, random forest, gradient
//! boosted trees and five sequence architectures.
//!
//! Models are trained on already-scaled inputs. A [`TrainedModel`] carries the
//! fitted [`Scaler`] so that [`TrainedModel::predict_proba`] accepts raw
//! feature rows.

pub mod boost;
pub mod forest;
pub mod logistic;
pub mod seq;
pub mod tree;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boost::{train_gbt, BoostedTrees};
pub use forest::{train_random_forest, RandomForest};
pub use logistic::{train_logistic, LogisticModel};
pub use seq::{train_sequence, SeqArch, SequenceNet};

use crate::features::Scaler;
use crate::math::sigmoid;
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub l2: f64,
    /// Largest (preconditioned) step tried by the line search.
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { l2: 1.0, learning_rate: 1.0, max_iters: 2000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    /// Minimum (bootstrap-weighted) samples per leaf.
    pub min_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(F))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: Some(12), min_leaf: 5, max_features: None, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self { rounds: 200, max_depth: 4, learning_rate: 0.1, lambda: 1.0, min_child_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceParams {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub patience: usize,
    /// Share of the training rows held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for SequenceParams {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 1,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            patience: 10,
            validation_fraction: 0.15,
        }
    }
}

impl SequenceParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("hidden, layers, batch size and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("learning rate and clip norm must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation fraction must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub logistic: LogisticParams,
    pub forest: ForestParams,
    pub boost: BoostParams,
    pub sequence: SequenceParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Lr,
    Rf,
    Gbt,
    Cnn,
    Rnn,
    Lstm,
    Gru,
    Tcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] =
        [ModelKind::Lr, ModelKind::Rf, ModelKind::Gbt, ModelKind::Cnn, ModelKind::Rnn, ModelKind::Lstm, ModelKind::Gru, ModelKind::Tcn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::Rf => "RF",
            ModelKind::Gbt => "GBT",
            ModelKind::Cnn => "CNN",
            ModelKind::Rnn => "RNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
            ModelKind::Tcn => "TCN",
        }
    }

    pub fn seq_arch(self) -> Option<SeqArch> {
        match self {
            ModelKind::Cnn => Some(SeqArch::Cnn),
            ModelKind::Rnn => Some(SeqArch::Rnn),
            ModelKind::Lstm => Some(SeqArch::Lstm),
            ModelKind::Gru => Some(SeqArch::Gru),
            ModelKind::Tcn => Some(SeqArch::Tcn),
            _ => None,
        }
    }

    pub fn is_sequence(self) -> bool {
        self.seq_arch().is_some()
    }

    pub fn is_tree(self) -> bool {
        matches!(self, ModelKind::Rf | ModelKind::Gbt)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let u = s.trim().to_ascii_uppercase();
        let u = if u == "XGBOOST" { String::from("GBT") } else { u };
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == u)
            .ok_or_else(|| Error::UnsupportedModel(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic(LogisticModel),
    Forest(RandomForest),
    Boosted(BoostedTrees),
    Sequence(SequenceNet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub hyperparams: Hyperparams,
    pub seed: u64,
    /// Width of a raw input row.
    pub n_inputs: usize,
    pub feature_names: Vec<String>,
    /// Sequence steps for sequence kinds.
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub params: ModelParams,
    /// Applied to raw rows before scoring.
    pub scaler: Option<Scaler>,
    pub meta: ModelMeta,
}

pub(crate) fn check_training_data(x: &Matrix, y: &[bool]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if x.cols() == 0 {
        return Err(Error::Shape("no feature columns".into()));
    }
    x.check_finite()?;
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass("training labels contain a single class".into()));
    }
    Ok(())
}

/// Trains `kind` on scaled rows `x`. `steps` is required for sequence kinds.
pub fn fit(
    kind: ModelKind,
    x: &Matrix,
    y: &[bool],
    steps: Option<usize>,
    hp: &Hyperparams,
    seed: u64,
    scaler: Option<Scaler>,
    feature_names: Vec<String>,
) -> Result<TrainedModel> {
    let params = match kind {
        ModelKind::Lr => ModelParams::Logistic(train_logistic(x, y, &hp.logistic)?),
        ModelKind::Rf => ModelParams::Forest(train_random_forest(x, y, &hp.forest, seed)?),
        ModelKind::Gbt => ModelParams::Boosted(train_gbt(x, y, &hp.boost)?),
        _ => {
            let arch = kind.seq_arch().unwrap_or(SeqArch::Lstm);
            let t = steps.ok_or_else(|| Error::Shape(format!("{kind} needs the number of sequence steps")))?;
            ModelParams::Sequence(train_sequence(arch, x, t, y, &hp.sequence, seed)?)
        }
    };
    if let Some(s) = &scaler {
        if x.cols() % s.mean.len().max(1) != 0 {
            return Err(Error::Shape("scaler width does not divide the input width".into()));
        }
    }
    Ok(TrainedModel {
        kind,
        params,
        scaler,
        meta: ModelMeta { hyperparams: hp.clone(), seed, n_inputs: x.cols(), feature_names, steps: if kind.is_sequence() { steps } else { None } },
    })
}

impl TrainedModel {
    /// Scales a raw input row with the stored scaler.
    pub fn prepare(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.meta.n_inputs {
            return Err(Error::Shape(format!("{} model expects {} inputs, got {}", self.kind, self.meta.n_inputs, raw.len())));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input row contains non-finite values".into()));
        }
        let mut row = raw.to_vec();
        if let Some(s) = &self.scaler {
            s.transform_row(&mut row);
        }
        Ok(row)
    }

    /// Raw score in model space: log-odds for LR, GBT and sequence models,
    /// probability for RF.
    pub fn score_scaled(&self, row: &[f64]) -> Result<f64> {
        Ok(match &self.params {
            ModelParams::Logistic(m) => m.margin(row),
            ModelParams::Forest(m) => m.predict(row),
            ModelParams::Boosted(m) => m.margin(row),
            ModelParams::Sequence(m) => m.logit(row)?,
        })
    }

    /// Probability from a scaled row.
    pub fn proba_scaled(&self, row: &[f64]) -> Result<f64> {
        let s = self.score_scaled(row)?;
        Ok(match self.params {
            ModelParams::Forest(_) => s,
            _ => sigmoid(s),
        })
    }

    pub fn predict_proba(&self, raw: &[f64]) -> Result<f64> {
        self.proba_scaled(&self.prepare(raw)?)
    }

    /// Probabilities for every row of a raw matrix, in row order.
    pub fn predict_many(&self, x: &Matrix) -> Result<Vec<f64>> {
        crate::par::map_range(x.rows(), |i| self.predict_proba(x.row(i))).into_iter().collect()
    }
}
