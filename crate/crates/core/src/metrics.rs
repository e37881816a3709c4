//! Evaluation metrics for a forgetting run, in nats and fractions.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{FamrError, Result};
use crate::losses::PROB_FLOOR;
use crate::model::{ModelSpec, ParamVector};
use crate::nn;
use crate::theory::BoundReport;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p_pre ‖ p_post)`.
    #[default]
    PreToPost,
    /// `KL(p_post ‖ p_pre)`.
    PostToPre,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ret_acc: f64,
    pub for_acc: f64,
    pub ce_forget: f64,
    pub entropy_forget: f64,
    pub kl_pre_post: f64,
    pub n_retain: usize,
    pub n_forget: usize,
    pub bound: Option<BoundReport>,
}

fn nonempty(data: &Dataset, what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(FamrError::Empty(what));
    }
    Ok(())
}

fn probabilities(params: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.inputs()
        .iter()
        .map(|x| nn::forward(params, spec, x).map(|o| o.probs()))
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(params: &ParamVector, spec: &ModelSpec, subset: &Dataset) -> Result<f64> {
    nonempty(subset, "accuracy subset")?;
    let mut correct = 0usize;
    for (x, &y) in subset.inputs().iter().zip(subset.labels()) {
        if argmax(&nn::forward(params, spec, x)?.logits) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / subset.len() as f64)
}

/// Mean `−ln p(y | x)` with probabilities clamped below at [`PROB_FLOOR`].
pub fn cross_entropy_forget(params: &ParamVector, spec: &ModelSpec, forget_set: &Dataset) -> Result<f64> {
    nonempty(forget_set, "forget set")?;
    let probs = probabilities(params, spec, forget_set)?;
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(forget_set.labels()) {
        let py = p.get(y).copied().ok_or_else(|| {
            FamrError::InvalidArgument(format!("label {y} out of range for {} classes", p.len()))
        })?;
        total -= py.max(PROB_FLOOR).ln();
    }
    Ok(total / forget_set.len() as f64)
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&pc| pc * pc.max(PROB_FLOOR).ln()).sum::<f64>()
}

/// Mean Shannon entropy of the softmax output.
pub fn mean_entropy(params: &ParamVector, spec: &ModelSpec, subset: &Dataset) -> Result<f64> {
    nonempty(subset, "entropy subset")?;
    let probs = probabilities(params, spec, subset)?;
    Ok(probs.iter().map(|p| entropy(p)).sum::<f64>() / subset.len() as f64)
}

/// `Σ_c p_c (ln p_c − ln q_c)` with both sides clamped inside the logarithm.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pc, &qc)| pc * (pc.max(PROB_FLOOR).ln() - qc.max(PROB_FLOOR).ln()))
        .sum()
}

/// Mean KL divergence between the softmax outputs of two models.
pub fn kl_pre_post(
    params_pre: &ParamVector,
    params_post: &ParamVector,
    spec: &ModelSpec,
    subset: &Dataset,
    direction: KlDirection,
) -> Result<f64> {
    params_pre.check_spec(spec)?;
    params_post.check_spec(spec)?;
    nonempty(subset, "divergence subset")?;
    let pre = probabilities(params_pre, spec, subset)?;
    let post = probabilities(params_post, spec, subset)?;
    let total: f64 = pre
        .iter()
        .zip(&post)
        .map(|(a, b)| match direction {
            KlDirection::PreToPost => kl_divergence(a, b),
            KlDirection::PostToPre => kl_divergence(b, a),
        })
        .sum();
    Ok(total / subset.len() as f64)
}

/// Every metric for a pre/post model pair on a retain/forget split.
pub fn assemble_report(
    pre: &ParamVector,
    post: &ParamVector,
    spec: &ModelSpec,
    retain_set: &Dataset,
    forget_set: &Dataset,
    bound: Option<BoundReport>,
    direction: KlDirection,
) -> Result<MetricsReport> {
    nonempty(retain_set, "retain set")?;
    nonempty(forget_set, "forget set")?;
    Ok(MetricsReport {
        ret_acc: accuracy(post, spec, retain_set)?,
        for_acc: accuracy(post, spec, forget_set)?,
        ce_forget: cross_entropy_forget(post, spec, forget_set)?,
        entropy_forget: mean_entropy(post, spec, forget_set)?,
        kl_pre_post: kl_pre_post(pre, post, spec, forget_set, direction)?,
        n_retain: retain_set.len(),
        n_forget: forget_set.len(),
        bound,
    })
}
