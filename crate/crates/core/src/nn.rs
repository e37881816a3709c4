//! Deterministic dense-network engine: initialization, forward pass,
//! backpropagation for every loss kind, and the cross-entropy trainer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::Dataset;
use crate::error::{check_finite, check_len, FamrError, Result};
use crate::linalg;
use crate::losses::{LossWeights, StyleTarget, PROB_FLOOR};
use crate::model::{GradVector, ModelSpec, ParamVector};

/// Supervision attached to a single input.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// Full target distribution over classes.
    Soft(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: Target,
}

impl Sample {
    pub fn labeled(x: Vec<f64>, label: usize) -> Self {
        Sample {
            x,
            target: Target::Class(label),
        }
    }
}

/// Per-sample loss whose batch mean is differentiated by [`grad`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `−Σ_c q_c ln p_c` against a hard or soft target.
    CrossEntropy,
    /// `KL(u ‖ p)` against the uniform distribution.
    KlUniform,
    /// `‖φφᵀ − G_target‖_F²` on the feature layer.
    Style(StyleTarget),
    /// `α·KL(u ‖ p) + β·style`.
    Combined {
        weights: LossWeights,
        target: Option<StyleTarget>,
    },
}

impl LossKind {
    pub fn combined(weights: LossWeights, target: Option<StyleTarget>) -> Result<Self> {
        if weights.beta() > 0.0 && target.is_none() {
            return Err(FamrError::InvalidArgument(
                "style weight beta > 0 requires a style target".into(),
            ));
        }
        Ok(LossKind::Combined { weights, target })
    }

    fn needs_phi(&self) -> bool {
        match self {
            LossKind::Style(_) => true,
            LossKind::Combined { weights, .. } => weights.beta() > 0.0,
            _ => false,
        }
    }
}

/// Weights ~ N(0, 1)/√fan_in from a ChaCha8 stream seeded with `seed`; biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let scale = 1.0 / (layer.fan_in as f64).sqrt();
        let weights = &mut values[layer.weight_offset..layer.weight_offset + layer.fan_in * layer.fan_out];
        for w in weights {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = z * scale;
        }
    }
    ParamVector::new(spec, values).expect("initializer produces a valid vector")
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// Post-activation of the feature layer, when the architecture names one.
    pub phi: Option<Vec<f64>>,
}

impl ForwardOutput {
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// Cached activations of one forward pass.
struct Tape {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    fn logits(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    fn phi(&self, spec: &ModelSpec) -> Option<&[f64]> {
        spec.phi_layer_index().map(|h| self.acts[h + 1].as_slice())
    }
}

fn forward_tape(params: &[f64], spec: &ModelSpec, x: &[f64]) -> Tape {
    let num_layers = spec.num_layers();
    let act = spec.activation();
    let mut acts = Vec::with_capacity(num_layers + 1);
    let mut pre = Vec::with_capacity(num_layers);
    acts.push(x.to_vec());
    for (l, layer) in spec.layers().enumerate() {
        let input = &acts[l];
        let mut z = vec![0.0; layer.fan_out];
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &params[layer.weight_index(i, 0)..layer.weight_index(i, 0) + layer.fan_in];
            *zi = linalg::dot(row, input);
            if let Some(b) = layer.bias_offset {
                *zi += params[b + i];
            }
        }
        let a = if l + 1 < num_layers {
            z.iter().map(|&v| act.apply(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        acts.push(a);
    }
    Tape { acts, pre }
}

/// Accumulates `scale · ∂/∂θ` of a scalar whose derivatives with respect
/// to the logits (and optionally the feature layer) are given.
fn backward(
    params: &[f64],
    spec: &ModelSpec,
    tape: &Tape,
    dlogits: &[f64],
    dphi: Option<&[f64]>,
    scale: f64,
    grad: &mut [f64],
) {
    let layers: Vec<_> = spec.layers().collect();
    let act = spec.activation();
    let mut delta: Vec<f64> = dlogits.iter().map(|d| d * scale).collect();
    for l in (0..layers.len()).rev() {
        let layer = layers[l];
        let input = &tape.acts[l];
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let start = layer.weight_index(i, 0);
            for (g, &a) in grad[start..start + layer.fan_in].iter_mut().zip(input) {
                *g += d * a;
            }
            if let Some(b) = layer.bias_offset {
                grad[b + i] += d;
            }
        }
        if l == 0 {
            break;
        }
        // Gradient with respect to the post-activation output of hidden layer l - 1.
        let mut da = vec![0.0; layer.fan_in];
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let start = layer.weight_index(i, 0);
            for (acc, &w) in da.iter_mut().zip(&params[start..start + layer.fan_in]) {
                *acc += d * w;
            }
        }
        if let (Some(dphi), Some(h)) = (dphi, spec.phi_layer_index()) {
            if h == l - 1 {
                for (acc, &g) in da.iter_mut().zip(dphi) {
                    *acc += g * scale;
                }
            }
        }
        delta = da
            .iter()
            .zip(&tape.pre[l - 1])
            .map(|(&g, &z)| g * act.derivative(z))
            .collect();
    }
}

fn check_input(spec: &ModelSpec, x: &[f64]) -> Result<()> {
    check_len("model input", spec.input_dim(), x.len())?;
    check_finite("input", x)
}

/// Logits `f_θ(x)` and the feature vector φ(x).
pub fn forward(params: &ParamVector, spec: &ModelSpec, x: &[f64]) -> Result<ForwardOutput> {
    params.check_spec(spec)?;
    check_input(spec, x)?;
    let tape = forward_tape(params.values(), spec, x);
    Ok(ForwardOutput {
        logits: tape.logits().to_vec(),
        phi: tape.phi(spec).map(<[f64]>::to_vec),
    })
}

/// Loss of one sample plus its derivatives with respect to logits and φ.
struct HeadGrad {
    loss: f64,
    dlogits: Vec<f64>,
    dphi: Option<Vec<f64>>,
}

/// `−Σ_c q_c ln max(p_c, floor)` and its exact logit gradient.
fn soft_cross_entropy(probs: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut mass = 0.0;
    let mut dz = vec![0.0; probs.len()];
    for (c, (&p, &qc)) in probs.iter().zip(q).enumerate() {
        loss -= qc * p.max(PROB_FLOOR).ln();
        if p >= PROB_FLOOR {
            mass += qc;
            dz[c] -= qc;
        }
    }
    for (d, &p) in dz.iter_mut().zip(probs) {
        *d += mass * p;
    }
    (loss, dz)
}

fn style_head(phi: &[f64], target: &StyleTarget) -> Result<(f64, Vec<f64>)> {
    let m = phi.len();
    check_len("style target", m, target.dim())?;
    let sq = linalg::dot(phi, phi);
    let mut loss = 0.0;
    let mut dphi = vec![0.0; m];
    for i in 0..m {
        let mut g_phi_i = 0.0;
        for j in 0..m {
            let g = target.get(i, j);
            let diff = phi[i] * phi[j] - g;
            loss += diff * diff;
            g_phi_i += g * phi[j];
        }
        // d/dφ ‖φφᵀ − G‖² = 4(φφᵀ − G)φ for symmetric G.
        dphi[i] = 4.0 * (phi[i] * sq - g_phi_i);
    }
    Ok((loss, dphi))
}

fn head(spec: &ModelSpec, tape: &Tape, target: &Target, loss: &LossKind) -> Result<HeadGrad> {
    let c = spec.num_classes();
    let probs = softmax(tape.logits());
    let phi = || {
        tape.phi(spec).ok_or_else(|| {
            FamrError::InvalidArgument("style loss requires a model with a phi layer".into())
        })
    };
    let kl = |probs: &[f64]| {
        let u = vec![1.0 / c as f64; c];
        let (ce, dz) = soft_cross_entropy(probs, &u);
        (ce - (c as f64).ln(), dz)
    };
    match loss {
        LossKind::CrossEntropy => {
            let (value, dlogits) = match target {
                Target::Class(y) => {
                    if *y >= c {
                        return Err(FamrError::InvalidArgument(format!(
                            "label {y} out of range for {c} classes"
                        )));
                    }
                    let mut onehot = vec![0.0; c];
                    onehot[*y] = 1.0;
                    soft_cross_entropy(&probs, &onehot)
                }
                Target::Soft(q) => {
                    check_len("soft target", c, q.len())?;
                    soft_cross_entropy(&probs, q)
                }
            };
            Ok(HeadGrad {
                loss: value,
                dlogits,
                dphi: None,
            })
        }
        LossKind::KlUniform => {
            let (value, dlogits) = kl(&probs);
            Ok(HeadGrad {
                loss: value,
                dlogits,
                dphi: None,
            })
        }
        LossKind::Style(t) => {
            let (value, dphi) = style_head(phi()?, t)?;
            Ok(HeadGrad {
                loss: value,
                dlogits: vec![0.0; c],
                dphi: Some(dphi),
            })
        }
        LossKind::Combined { weights, target } => {
            let (alpha, beta) = (weights.alpha(), weights.beta());
            let mut value = 0.0;
            let mut dlogits = vec![0.0; c];
            let mut dphi = None;
            if alpha > 0.0 {
                let (k, dz) = kl(&probs);
                value += alpha * k;
                for (d, g) in dlogits.iter_mut().zip(dz) {
                    *d = alpha * g;
                }
            }
            if beta > 0.0 {
                let t = target.as_ref().ok_or_else(|| {
                    FamrError::InvalidArgument("style weight beta > 0 requires a style target".into())
                })?;
                let (s, dp) = style_head(phi()?, t)?;
                value += beta * s;
                dphi = Some(dp.into_iter().map(|g| beta * g).collect());
            }
            Ok(HeadGrad {
                loss: value,
                dlogits,
                dphi,
            })
        }
    }
}

fn check_batch(spec: &ModelSpec, batch: &[Sample], loss: &LossKind) -> Result<()> {
    if batch.is_empty() {
        return Err(FamrError::Empty("batch"));
    }
    if loss.needs_phi() && spec.phi_layer_index().is_none() {
        return Err(FamrError::InvalidArgument(
            "style loss requires a model with a phi layer".into(),
        ));
    }
    for s in batch {
        check_input(spec, &s.x)?;
    }
    Ok(())
}

/// Mean batch loss and, if requested, its gradient. Raw-slice core shared
/// by the public entry points and the optimizer.
pub(crate) fn evaluate(
    params: &[f64],
    spec: &ModelSpec,
    batch: &[Sample],
    loss: &LossKind,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_batch(spec, batch, loss)?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; params.len()]);
    for sample in batch {
        let tape = forward_tape(params, spec, &sample.x);
        let h = head(spec, &tape, &sample.target, loss)?;
        total += h.loss;
        if let Some(g) = grad.as_mut() {
            backward(params, spec, &tape, &h.dlogits, h.dphi.as_deref(), scale, g);
        }
    }
    Ok((total * scale, grad))
}

pub fn batch_loss(params: &ParamVector, spec: &ModelSpec, batch: &[Sample], loss: &LossKind) -> Result<f64> {
    params.check_spec(spec)?;
    Ok(evaluate(params.values(), spec, batch, loss, false)?.0)
}

/// Analytic gradient of the mean batch loss.
pub fn grad(params: &ParamVector, spec: &ModelSpec, batch: &[Sample], loss: &LossKind) -> Result<GradVector> {
    loss_and_grad(params, spec, batch, loss).map(|(_, g)| g)
}

pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &[Sample],
    loss: &LossKind,
) -> Result<(f64, GradVector)> {
    params.check_spec(spec)?;
    let (value, g) = evaluate(params.values(), spec, batch, loss, true)?;
    Ok((value, GradVector::new(g.expect("gradient requested"))?))
}

/// Gradient of a single sample's loss, one entry per sample.
pub fn per_sample_grads(
    params: &ParamVector,
    spec: &ModelSpec,
    samples: &[Sample],
    loss: &LossKind,
) -> Result<Vec<GradVector>> {
    samples
        .iter()
        .map(|s| grad(params, spec, std::slice::from_ref(s), loss))
        .collect()
}

/// Rows `∂z_c/∂θ` of the logit map's parameter Jacobian at input `x`.
pub fn logit_jacobian(params: &ParamVector, spec: &ModelSpec, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    params.check_spec(spec)?;
    check_input(spec, x)?;
    let tape = forward_tape(params.values(), spec, x);
    let c = spec.num_classes();
    Ok((0..c)
        .map(|k| {
            let mut e = vec![0.0; c];
            e[k] = 1.0;
            let mut row = vec![0.0; params.len()];
            backward(params.values(), spec, &tape, &e, None, 1.0, &mut row);
            row
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Per-sample ridge penalty `(l2/2)‖θ‖²` added to the cross-entropy.
    #[serde(default)]
    pub l2: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FamrError::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(FamrError::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(FamrError::InvalidArgument(format!("l2 must be nonnegative, got {}", self.l2)));
        }
        Ok(())
    }
}

/// Mean cross-entropy plus `(l2/2)‖θ‖²` and its gradient over `samples`.
pub fn training_loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    samples: &[Sample],
    l2: f64,
) -> Result<(f64, GradVector)> {
    params.check_spec(spec)?;
    let (value, g) = evaluate(params.values(), spec, samples, &LossKind::CrossEntropy, true)?;
    let mut g = g.expect("gradient requested");
    let theta = params.values();
    for (gi, &t) in g.iter_mut().zip(theta) {
        *gi += l2 * t;
    }
    let value = value + 0.5 * l2 * linalg::dot(theta, theta);
    Ok((value, GradVector::new(g)?))
}

fn check_labels(data: &Dataset, spec: &ModelSpec) -> Result<()> {
    if data.is_empty() {
        return Err(FamrError::Empty("training data"));
    }
    check_len("dataset input dimension", spec.input_dim(), data.dim())?;
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= spec.num_classes()) {
        return Err(FamrError::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes()
        )));
    }
    Ok(())
}

/// Mini-batch gradient descent on mean cross-entropy (plus the ridge term),
/// starting from `init_params(spec, cfg.seed)` and reshuffling every epoch.
pub fn train_baseline(data: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<ParamVector> {
    cfg.validate()?;
    check_labels(data, spec)?;
    let samples = data.samples();
    let mut theta = init_params(spec, cfg.seed).into_values();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let (_, g) = evaluate(&theta, spec, &batch, &LossKind::CrossEntropy, true)?;
            let g = g.expect("gradient requested");
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= cfg.lr * (gi + cfg.l2 * *t);
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(FamrError::Diverged {
                    step: epoch,
                    reason: "baseline training produced non-finite parameters".into(),
                    trace: None,
                });
            }
        }
    }
    ParamVector::new(spec, theta)
}

/// [`train_baseline`] followed by full-batch gradient descent at the same
/// learning rate until the training-objective gradient norm falls below
/// `tol`.
pub fn train_to_convergence(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    tol: f64,
    max_iters: usize,
) -> Result<ParamVector> {
    let mut theta = train_baseline(data, spec, cfg)?;
    let samples = data.samples();
    for _ in 0..max_iters {
        let (_, g) = training_loss_and_grad(&theta, spec, &samples, cfg.l2)?;
        if g.norm() < tol {
            return Ok(theta);
        }
        let next: Vec<f64> = theta
            .values()
            .iter()
            .zip(g.values())
            .map(|(t, gi)| t - cfg.lr * gi)
            .collect();
        theta = theta.with_values(next)?;
    }
    let (_, g) = training_loss_and_grad(&theta, spec, &samples, cfg.l2)?;
    if g.norm() < tol {
        return Ok(theta);
    }
    Err(FamrError::NoConvergence(format!(
        "training after {max_iters} full-batch iterations (gradient norm {:e} > {tol:e})",
        g.norm()
    )))
}
