//! Forgetting objectives: uniform-KL, Gram-matrix style loss, their
//! weighted combination, and the anchored total objective.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, FamrError, Result};
use crate::linalg;
use crate::model::{ModelSpec, ParamVector};
use crate::nn::{self, LossKind, Sample};

/// Probabilities are clamped to at least this value before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weights `α` (uniform-KL) and `β` (style) of the combined forget loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) || alpha + beta <= 0.0 {
            return Err(FamrError::InvalidArgument(format!(
                "loss weights need alpha, beta >= 0 with alpha + beta > 0, got ({alpha}, {beta})"
            )));
        }
        Ok(LossWeights { alpha, beta })
    }

    pub fn kl_only() -> Self {
        LossWeights { alpha: 1.0, beta: 0.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl TryFrom<(f64, f64)> for LossWeights {
    type Error = FamrError;
    fn try_from((a, b): (f64, f64)) -> Result<Self> {
        LossWeights::new(a, b)
    }
}

impl From<LossWeights> for (f64, f64) {
    fn from(w: LossWeights) -> Self {
        (w.alpha, w.beta)
    }
}

/// Reference Gram matrix the style loss pulls features toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStyleTarget", into = "RawStyleTarget")]
pub struct StyleTarget {
    dim: usize,
    /// Row-major `dim x dim`.
    gram: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStyleTarget {
    dim: usize,
    gram: Vec<f64>,
}

impl TryFrom<RawStyleTarget> for StyleTarget {
    type Error = FamrError;
    fn try_from(raw: RawStyleTarget) -> Result<Self> {
        StyleTarget::new(raw.dim, raw.gram)
    }
}

impl From<StyleTarget> for RawStyleTarget {
    fn from(t: StyleTarget) -> Self {
        RawStyleTarget { dim: t.dim, gram: t.gram }
    }
}

impl StyleTarget {
    /// Validates symmetry (1e-12) and positive semidefiniteness (eigenvalues ≥ −1e-10).
    pub fn new(dim: usize, gram: Vec<f64>) -> Result<Self> {
        check_len("style target entries", dim * dim, gram.len())?;
        check_finite("style target", &gram)?;
        for i in 0..dim {
            for j in 0..i {
                if (gram[i * dim + j] - gram[j * dim + i]).abs() > 1e-12 {
                    return Err(FamrError::InvalidArgument(format!(
                        "style target not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if dim > 0 {
            let m = nalgebra::DMatrix::from_row_slice(dim, dim, &gram);
            let min = linalg::jacobi_eigen(&m)?.min();
            if min < -1e-10 {
                return Err(FamrError::InvalidArgument(format!(
                    "style target not positive semidefinite (eigenvalue {min:e})"
                )));
            }
        }
        Ok(StyleTarget { dim, gram })
    }

    pub fn zeros(dim: usize) -> Self {
        StyleTarget {
            dim,
            gram: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.dim + j]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.gram
    }
}

/// `KL(u ‖ p) = −ln C − (1/C) Σ_c ln p_c` with clamped probabilities.
pub fn kl_uniform_loss(probs: &[f64], num_classes: usize) -> Result<f64> {
    check_len("probability vector", num_classes, probs.len())?;
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(FamrError::InvalidArgument(format!(
            "not a probability vector (sum {total})"
        )));
    }
    let c = num_classes as f64;
    let log_sum: f64 = probs.iter().map(|p| p.max(PROB_FLOOR).ln()).sum();
    Ok((-c.ln() - log_sum / c).max(0.0))
}

/// Outer product `φφᵀ`, row-major.
pub fn gram_matrix(phi: &[f64]) -> Vec<f64> {
    phi.iter()
        .flat_map(|&a| phi.iter().map(move |&b| a * b))
        .collect()
}

/// Squared Frobenius distance `‖φφᵀ − G_target‖_F²`.
pub fn style_loss(phi: &[f64], target: &StyleTarget) -> Result<f64> {
    check_len("style target", target.dim(), phi.len())?;
    Ok(gram_matrix(phi)
        .iter()
        .zip(target.as_row_major())
        .map(|(g, t)| (g - t) * (g - t))
        .sum())
}

/// Element-wise mean Gram matrix of φ(x) over `inputs`.
pub fn style_target_from_set(params: &ParamVector, spec: &ModelSpec, inputs: &[Vec<f64>]) -> Result<StyleTarget> {
    if inputs.is_empty() {
        return Err(FamrError::Empty("style reference set"));
    }
    let dim = spec
        .phi_dim()
        .ok_or_else(|| FamrError::InvalidArgument("model spec has no phi layer".into()))?;
    let mut sum = vec![0.0; dim * dim];
    for x in inputs {
        let phi = nn::forward(params, spec, x)?.phi.expect("phi layer present");
        for (s, g) in sum.iter_mut().zip(gram_matrix(&phi)) {
            *s += g;
        }
    }
    let n = inputs.len() as f64;
    StyleTarget::new(dim, sum.into_iter().map(|s| s / n).collect())
}

/// `α · mean KL(u ‖ p) + β · mean style loss` over the batch.
pub fn combined_forget_loss(
    params: &ParamVector,
    spec: &ModelSpec,
    forget_batch: &[Sample],
    weights: LossWeights,
    target: Option<&StyleTarget>,
) -> Result<f64> {
    let loss = LossKind::combined(weights, target.cloned())?;
    nn::batch_loss(params, spec, forget_batch, &loss)
}

/// `(λ/2)‖θ − θ₀‖²`.
pub fn anchor_penalty(theta: &[f64], theta0: &[f64], lambda: f64) -> Result<f64> {
    check_len("anchor", theta0.len(), theta.len())?;
    let d = linalg::distance(theta, theta0);
    Ok(0.5 * lambda * d * d)
}

/// Total anchored objective `L_forget(θ) + (λ/2)‖θ − θ₀‖²`.
pub fn famr_objective(
    params: &ParamVector,
    theta0: &ParamVector,
    spec: &ModelSpec,
    forget_batch: &[Sample],
    weights: LossWeights,
    target: Option<&StyleTarget>,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(FamrError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let anchor = anchor_penalty(params.values(), theta0.values(), lambda)?;
    Ok(combined_forget_loss(params, spec, forget_batch, weights, target)? + anchor)
}
