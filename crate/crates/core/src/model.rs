//! Model descriptors and the flat parameter representation.
//!
//! Parameters are laid out layer by layer: the weight matrix of a layer
//! (`fan_out x fan_in`, row-major) followed by its bias vector, then the
//! next layer. The layout is part of the checkpoint contract.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_finite, check_len, FamrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
    #[serde(default)]
    phi_layer_index: Option<usize>,
    #[serde(default = "default_true")]
    use_bias: bool,
}

fn default_true() -> bool {
    true
}

/// Architecture of a dense classifier.
///
/// `layer_widths` is `[input, hidden..., classes]`. The hidden layer at
/// `phi_layer_index` provides the feature vector used by the style loss;
/// a model without hidden layers has no such feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
    phi_layer_index: Option<usize>,
    use_bias: bool,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = FamrError;

    fn try_from(raw: RawModelSpec) -> Result<Self> {
        let spec = ModelSpec {
            layer_widths: raw.layer_widths,
            activation: raw.activation,
            phi_layer_index: raw.phi_layer_index,
            use_bias: raw.use_bias,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(spec: ModelSpec) -> Self {
        RawModelSpec {
            layer_widths: spec.layer_widths,
            activation: spec.activation,
            phi_layer_index: spec.phi_layer_index,
            use_bias: spec.use_bias,
        }
    }
}

impl ModelSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        phi_layer_index: Option<usize>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            layer_widths,
            activation,
            phi_layer_index,
            use_bias: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Softmax-linear model `z = Wx + b` with no hidden layers.
    pub fn linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![input_dim, num_classes], Activation::Tanh, None)
    }

    pub fn without_bias(mut self) -> Self {
        self.use_bias = false;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(FamrError::InvalidSpec(format!(
                "need at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(FamrError::InvalidSpec(format!(
                "all widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        if let Some(phi) = self.phi_layer_index {
            if phi >= self.num_hidden() {
                return Err(FamrError::InvalidSpec(format!(
                    "phi_layer_index {phi} out of range for {} hidden layers",
                    self.num_hidden()
                )));
            }
        }
        Ok(())
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn phi_layer_index(&self) -> Option<usize> {
        self.phi_layer_index
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_widths.len() - 2
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Width of the feature vector φ, if the architecture defines one.
    pub fn phi_dim(&self) -> Option<usize> {
        self.phi_layer_index.map(|h| self.layer_widths[h + 1])
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    /// Offsets of each layer's weight and bias blocks in the flat vector.
    pub fn layers(&self) -> impl Iterator<Item = LayerLayout> + '_ {
        let use_bias = self.use_bias;
        let mut offset = 0;
        self.layer_widths.windows(2).map(move |w| {
            let layout = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                weight_offset: offset,
                bias_offset: if use_bias {
                    Some(offset + w[0] * w[1])
                } else {
                    None
                },
            };
            offset += layout.param_count();
            layout
        })
    }

    /// Stable 64-bit identifier of this architecture.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("model spec serializes");
        let digest = Sha256::digest(&canonical);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_be_bytes(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl LayerLayout {
    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias_offset.is_some() { self.fan_out } else { 0 }
    }

    #[inline]
    pub fn weight_index(&self, row: usize, col: usize) -> usize {
        self.weight_offset + row * self.fan_in + col
    }
}

/// Flat parameter state of a model, tagged with the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec_fingerprint: u64,
}

impl ParamVector {
    pub fn new(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", spec.param_count(), values.len())?;
        check_finite("parameter", &values)?;
        Ok(ParamVector {
            values,
            spec_fingerprint: spec.fingerprint(),
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count()],
            spec_fingerprint: spec.fingerprint(),
        }
    }

    /// New vector for the same spec.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", self.values.len(), values.len())?;
        check_finite("parameter", &values)?;
        Ok(ParamVector {
            values,
            spec_fingerprint: self.spec_fingerprint,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec_fingerprint(&self) -> u64 {
        self.spec_fingerprint
    }

    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.spec_fingerprint != spec.fingerprint() || self.values.len() != spec.param_count() {
            return Err(FamrError::InvalidArgument(format!(
                "parameter vector (fingerprint {:016x}, {} values) does not match model spec \
                 (fingerprint {:016x}, {} parameters)",
                self.spec_fingerprint,
                self.values.len(),
                spec.fingerprint(),
                spec.param_count()
            )));
        }
        Ok(())
    }
}

/// Gradient with the same layout as the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
}

impl GradVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite("gradient", &values)?;
        Ok(GradVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.values)
    }
}
