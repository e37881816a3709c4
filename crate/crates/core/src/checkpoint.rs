//! `famr-ckpt-v1` checkpoint documents.
//!
//! A checkpoint is a JSON object with `format_version`, `model_spec`,
//! `seed`, `spec_fingerprint`, optional `provenance`, and `params`, the
//! flat parameter array written with 17 significant digits so that
//! reading it back reproduces every value bit for bit.

use serde::Deserialize;

use crate::error::{FamrError, Result};
use crate::format::{fmt_f64, Provenance};
use crate::model::{ModelSpec, ParamVector};

pub const FORMAT_VERSION: &str = "famr-ckpt-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub params: ParamVector,
    pub provenance: Option<Provenance>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheckpoint {
    format_version: String,
    model_spec: ModelSpec,
    seed: u64,
    spec_fingerprint: String,
    #[serde(default)]
    provenance: Option<Provenance>,
    params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, seed: u64, params: ParamVector) -> Result<Self> {
        params.check_spec(&spec)?;
        Ok(Checkpoint {
            spec,
            seed,
            params,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn to_text(&self) -> String {
        let spec = serde_json::to_string(&self.spec).expect("model spec serializes");
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"format_version\": \"{FORMAT_VERSION}\",\n"));
        out.push_str(&format!("  \"model_spec\": {spec},\n"));
        out.push_str(&format!("  \"seed\": {},\n", self.seed));
        out.push_str(&format!("  \"spec_fingerprint\": \"{:016x}\",\n", self.spec.fingerprint()));
        if let Some(p) = &self.provenance {
            let p = serde_json::to_string(p).expect("provenance serializes");
            out.push_str(&format!("  \"provenance\": {p},\n"));
        }
        out.push_str("  \"params\": [");
        for (i, v) in self.params.values().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("\n    ");
            out.push_str(&fmt_f64(*v));
        }
        out.push_str("\n  ]\n}\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw: RawCheckpoint =
            serde_json::from_str(text).map_err(|e| FamrError::Format(format!("checkpoint: {e}")))?;
        if raw.format_version != FORMAT_VERSION {
            return Err(FamrError::Format(format!(
                "unsupported checkpoint version {:?}",
                raw.format_version
            )));
        }
        let expected = format!("{:016x}", raw.model_spec.fingerprint());
        if raw.spec_fingerprint != expected {
            return Err(FamrError::Format(format!(
                "checkpoint fingerprint {} does not match its model spec ({expected})",
                raw.spec_fingerprint
            )));
        }
        let params = ParamVector::new(&raw.model_spec, raw.params)?;
        Ok(Checkpoint {
            spec: raw.model_spec,
            seed: raw.seed,
            params,
            provenance: raw.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::nn::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ModelSpec::new(vec![4, 7, 3], Activation::Relu, Some(0)).unwrap();
        let params = init_params(&spec, 99);
        let ckpt = Checkpoint::new(spec, 99, params)
            .unwrap()
            .with_provenance(Provenance::new("abc", "def"));
        let text = ckpt.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        for (a, b) in back.params.values().iter().zip(ckpt.params.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, ckpt);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn rejects_tampering() {
        let spec = ModelSpec::linear(2, 2).unwrap();
        let ckpt = Checkpoint::new(spec, 1, init_params(&ModelSpec::linear(2, 2).unwrap(), 1)).unwrap();
        let text = ckpt.to_text();
        assert!(Checkpoint::from_text(&text.replace("famr-ckpt-v1", "famr-ckpt-v0")).is_err());
        let widened = text.replace("[2,2]", "[2,3]");
        assert!(Checkpoint::from_text(&widened).is_err());
        assert!(Checkpoint::from_text("{").is_err());
    }
}
