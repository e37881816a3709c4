//! Lossless text encodings shared by checkpoints, datasets, and reports.

use serde::{Deserialize, Serialize};

/// Decimal scientific notation with 17 significant digits; parses back to
/// the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Identifies the inputs and code that produced an output document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset_hash: String,
    pub code_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, dataset_hash: impl Into<String>) -> Self {
        Provenance {
            config_hash: config_hash.into(),
            dataset_hash: dataset_hash.into(),
            code_version: code_version(),
        }
    }
}

pub fn code_version() -> String {
    concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string()
}
