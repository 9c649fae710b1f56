//! Versioned JSON model files.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so a saved model predicts bit-identically after loading.

use std::path::Path;

use claimsrisk_core::models::TrainedModel;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::output::{read_to_string, write_json};

pub const MODEL_FORMAT: &str = "claimsrisk-model";
pub const MODEL_VERSION: u32 = 1;

/// Training context recorded next to the model for reporting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Resampling strategy name, or "none".
    pub strategy: String,
    pub window_months: Option<u32>,
    pub train_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(model: TrainedModel, provenance: Provenance) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, provenance, model }
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> AppResult<()> {
    write_json(path, file)
}

/// Parses a model file, rejecting other formats and versions before looking
/// at the payload.
pub fn parse_model(text: &str) -> Result<ModelFile, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    match v.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        Some(other) => return Err(format!("not a model file (format {other:?})")),
        None => return Err("not a model file (no format field)".into()),
    }
    match v.get("version").and_then(|f| f.as_u64()) {
        Some(n) if n == MODEL_VERSION as u64 => {}
        Some(n) => return Err(format!("unsupported model file version {n}; this build reads version {MODEL_VERSION}")),
        None => return Err("model file has no version".into()),
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}

pub fn load_model(path: &Path) -> AppResult<ModelFile> {
    parse_model(&read_to_string(path)?).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}
