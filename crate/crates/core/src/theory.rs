//! Reference solutions and bound checks: exact retraining, dense
//! Hessians, influence and damped-Newton updates, the parameter-gap and
//! Lipschitz output bounds, and the distance-to-uniform certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{check_len, FamrError, Result};
use crate::linalg;
use crate::model::{GradVector, ModelSpec, ParamVector};
use crate::nn::{self, LossKind, Sample, TrainConfig};

/// Largest parameter count for which a dense Hessian is formed.
pub const MAX_HESSIAN_PARAMS: usize = 2000;

/// Gradient-norm threshold for [`retrain_oracle`].
pub const RETRAIN_TOL: f64 = 1e-7;

/// Iteration cap for the full-batch phase of [`retrain_oracle`].
pub const RETRAIN_MAX_ITERS: usize = 500_000;

/// Multiplier applied to the largest observed Jacobian norm.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;

/// Smallest eigenvalue treated as nonsingular by [`influence_update`].
pub const SINGULAR_THRESHOLD: f64 = 1e-8;

/// Relative slack on the bound comparisons in [`BoundReport`].
pub const BOUND_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSource {
    FiniteDifference,
    AnalyticLogistic,
    /// Exact matrix of a quadratic loss.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    pub entries: DMatrix<f64>,
    pub lambda_min: f64,
    pub source: HessianSource,
}

impl HessianMatrix {
    /// Symmetrizes `m` and caches its smallest eigenvalue.
    pub fn from_matrix(m: DMatrix<f64>, source: HessianSource) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(FamrError::InvalidArgument("Hessian must be square".into()));
        }
        let entries = (&m + m.transpose()) * 0.5;
        let lambda_min = linalg::jacobi_eigen(&entries)?.min();
        Ok(HessianMatrix {
            entries,
            lambda_min,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

fn guard(count: usize) -> Result<()> {
    if count > MAX_HESSIAN_PARAMS {
        return Err(FamrError::TooManyParameters {
            count,
            limit: MAX_HESSIAN_PARAMS,
        });
    }
    Ok(())
}

/// Central-difference Jacobian of `grad` at `theta`, step `1e-4·(1 + |θᵢ|)`.
/// The result is not symmetrized.
pub fn finite_difference_hessian<F>(theta: &[f64], mut grad: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = theta.len();
    guard(n)?;
    let mut h = DMatrix::zeros(n, n);
    let mut probe = theta.to_vec();
    for j in 0..n {
        let step = 1e-4 * (1.0 + theta[j].abs());
        probe[j] = theta[j] + step;
        let plus = grad(&probe)?;
        probe[j] = theta[j] - step;
        let minus = grad(&probe)?;
        probe[j] = theta[j];
        check_len("gradient", n, plus.len())?;
        for i in 0..n {
            h[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(h)
}

/// Hessian of the summed training loss `Σᵢ [CEᵢ + (l2/2)‖θ‖²]` over `data`.
pub fn hessian(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &Dataset,
    l2: f64,
    source: HessianSource,
) -> Result<HessianMatrix> {
    params.check_spec(spec)?;
    guard(spec.param_count())?;
    if data.is_empty() {
        return Err(FamrError::Empty("Hessian dataset"));
    }
    let samples = data.samples();
    let n = samples.len() as f64;
    let m = match source {
        HessianSource::FiniteDifference => finite_difference_hessian(params.values(), |theta| {
            let (_, g) = nn::evaluate(theta, spec, &samples, &LossKind::CrossEntropy, true)?;
            Ok(g.expect("gradient requested")
                .iter()
                .zip(theta)
                .map(|(gi, t)| n * (gi + l2 * t))
                .collect())
        })?,
        HessianSource::AnalyticLogistic => logistic_hessian(params, spec, &samples, l2)?,
        HessianSource::ClosedForm => {
            return Err(FamrError::InvalidArgument(
                "closed-form Hessians come from a quadratic model, not a network".into(),
            ))
        }
    };
    HessianMatrix::from_matrix(m, source)
}

/// `Σᵢ (diag p − ppᵀ) ⊗ x̃x̃ᵀ + n·l2·I` for a model without hidden layers.
fn logistic_hessian(params: &ParamVector, spec: &ModelSpec, samples: &[Sample], l2: f64) -> Result<DMatrix<f64>> {
    if spec.num_hidden() != 0 {
        return Err(FamrError::InvalidArgument(
            "analytic Hessian is only available for models without hidden layers".into(),
        ));
    }
    let layer = spec.layers().next().expect("at least one layer");
    let (d, c) = (layer.fan_in, layer.fan_out);
    // Parameter index of (class k, augmented input coordinate j); j == d is the bias.
    let index = |k: usize, j: usize| -> Option<usize> {
        if j < d {
            Some(layer.weight_index(k, j))
        } else {
            layer.bias_offset.map(|b| b + k)
        }
    };
    let p_count = spec.param_count();
    let mut h = DMatrix::zeros(p_count, p_count);
    for s in samples {
        let probs = nn::forward(params, spec, &s.x)?.probs();
        let mut xt = s.x.clone();
        xt.push(1.0);
        for k in 0..c {
            for k2 in 0..c {
                let w = if k == k2 { probs[k] } else { 0.0 } - probs[k] * probs[k2];
                for j in 0..=d {
                    let Some(a) = index(k, j) else { continue };
                    for j2 in 0..=d {
                        let Some(b) = index(k2, j2) else { continue };
                        h[(a, b)] += w * xt[j] * xt[j2];
                    }
                }
            }
        }
    }
    let ridge = samples.len() as f64 * l2;
    for i in 0..p_count {
        h[(i, i)] += ridge;
    }
    Ok(h)
}

/// Smallest eigenvalue by cyclic Jacobi on the stored entries.
pub fn min_eigenvalue(h: &HessianMatrix) -> Result<f64> {
    Ok(linalg::jacobi_eigen(&h.entries)?.min())
}

/// Removal gradients `−∇[CEᵢ + (l2/2)‖θ‖²]` at `theta0`, one per forget sample.
///
/// Passing these to [`influence_update`] with a Hessian of the retained
/// loss gives the Newton step from `θ₀` toward the retrained minimizer.
pub fn removal_gradients(
    theta0: &ParamVector,
    spec: &ModelSpec,
    forget_set: &[Sample],
    l2: f64,
) -> Result<Vec<GradVector>> {
    nn::per_sample_grads(theta0, spec, forget_set, &LossKind::CrossEntropy)?
        .into_iter()
        .map(|g| {
            GradVector::new(
                g.values()
                    .iter()
                    .zip(theta0.values())
                    .map(|(gi, t)| -(gi + l2 * t))
                    .collect(),
            )
        })
        .collect()
}

/// `Σ g` over a list of gradients of common length `dim`.
pub fn gradient_sum(dim: usize, grads: &[GradVector]) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    for g in grads {
        check_len("forget gradient", dim, g.len())?;
        for (s, v) in sum.iter_mut().zip(g.values()) {
            *s += v;
        }
    }
    Ok(sum)
}

fn shifted_solve(theta0: &ParamVector, h: &HessianMatrix, shift: f64, grads: &[GradVector]) -> Result<ParamVector> {
    let n = theta0.len();
    check_len("Hessian", n, h.dim())?;
    let rhs = gradient_sum(n, grads)?;
    if h.lambda_min + shift <= SINGULAR_THRESHOLD {
        return Err(FamrError::Singular {
            lambda_min: h.lambda_min + shift,
        });
    }
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(theta0.clone());
    }
    let mut a = h.entries.clone();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    let delta = linalg::solve_spd(&a, &rhs)?;
    theta0.with_values(theta0.values().iter().zip(&delta).map(|(t, d)| t - d).collect())
}

/// `θ₀ − (H + μI)⁻¹ Σ g`, with optional diagonal damping `μ`.
pub fn influence_update(
    theta0: &ParamVector,
    h: &HessianMatrix,
    forget_grads: &[GradVector],
    damping: Option<f64>,
) -> Result<ParamVector> {
    let mu = damping.unwrap_or(0.0);
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(FamrError::InvalidArgument(format!("damping must be nonnegative, got {mu}")));
    }
    shifted_solve(theta0, h, mu, forget_grads)
}

/// Solution of `(H + λI)(θ̂ − θ₀) = −Σ g`.
pub fn damped_newton_solution(
    theta0: &ParamVector,
    h: &HessianMatrix,
    lambda: f64,
    forget_grads: &[GradVector],
) -> Result<ParamVector> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FamrError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    shifted_solve(theta0, h, lambda, forget_grads)
}

/// Exact retraining on the retained data: baseline training followed by
/// full-batch descent until the gradient norm drops below [`RETRAIN_TOL`].
pub fn retrain_oracle(retain: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<ParamVector> {
    if retain.is_empty() {
        return Err(FamrError::Empty("retain set"));
    }
    nn::train_to_convergence(retain, spec, cfg, RETRAIN_TOL, RETRAIN_MAX_ITERS)
}

/// `(λ / λ_min²) · ‖Σg‖`.
pub fn parameter_gap_bound(lambda: f64, lambda_min: f64, grad_sum_norm: f64) -> Result<f64> {
    if !(lambda_min > 0.0) {
        return Err(FamrError::Singular { lambda_min });
    }
    if !(lambda >= 0.0 && grad_sum_norm >= 0.0) {
        return Err(FamrError::InvalidArgument(
            "lambda and gradient norm must be nonnegative".into(),
        ));
    }
    Ok(lambda / (lambda_min * lambda_min) * grad_sum_norm)
}

/// Largest spectral norm of the logit Jacobian `∂f(x; θ)/∂θ` over every
/// parameter vector and probe, times [`LIPSCHITZ_SAFETY`].
pub fn estimate_lipschitz(params: &[&ParamVector], spec: &ModelSpec, probes: &[Vec<f64>]) -> Result<f64> {
    if probes.is_empty() {
        return Err(FamrError::Empty("probe inputs"));
    }
    if params.is_empty() {
        return Err(FamrError::Empty("parameter vectors"));
    }
    let mut best = 0.0f64;
    for p in params {
        for x in probes {
            let rows = nn::logit_jacobian(p, spec, x)?;
            // ‖J‖₂² = λ_max(J Jᵀ), a C×C matrix.
            let c = rows.len();
            let gram = DMatrix::from_fn(c, c, |i, j| linalg::dot(&rows[i], &rows[j]));
            let top = linalg::jacobi_eigen(&gram)?.max().max(0.0);
            best = best.max(top.sqrt());
        }
    }
    Ok(LIPSCHITZ_SAFETY * best)
}

/// Representation compared by the output bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpace {
    #[default]
    Logits,
    /// Softmax outputs; the logit-space estimate still bounds these since
    /// softmax is 1-Lipschitz.
    Probabilities,
}

fn output(params: &ParamVector, spec: &ModelSpec, x: &[f64], space: OutputSpace) -> Result<Vec<f64>> {
    let out = nn::forward(params, spec, x)?;
    Ok(match space {
        OutputSpace::Logits => out.logits,
        OutputSpace::Probabilities => out.probs(),
    })
}

/// Largest `Σ_c |p(c|x) − 1/C|` over `inputs`.
pub fn certificate_l1(params: &ParamVector, spec: &ModelSpec, inputs: &[Vec<f64>]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(FamrError::Empty("certificate inputs"));
    }
    let u = 1.0 / spec.num_classes() as f64;
    let mut worst = 0.0f64;
    for x in inputs {
        let p = nn::forward(params, spec, x)?.probs();
        worst = worst.max(p.iter().map(|pc| (pc - u).abs()).sum());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub param_gap: f64,
    pub gap_bound: f64,
    pub lipschitz_estimate: f64,
    pub max_output_gap: f64,
    pub output_bound: f64,
    pub certificate_l1: f64,
    pub holds_param: bool,
    pub holds_output: bool,
}

/// Everything [`verify_bounds`] compares, taken from a single experiment.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    pub spec: &'a ModelSpec,
    pub theta_star: &'a ParamVector,
    pub w_star: &'a ParamVector,
    pub hessian: &'a HessianMatrix,
    pub lambda: f64,
    pub forget_grads: &'a [GradVector],
    /// Inputs of the forget set, used for the certificate.
    pub forget_inputs: &'a [Vec<f64>],
    /// Inputs over which the output gap is maximized.
    pub probe_inputs: &'a [Vec<f64>],
    pub output_space: OutputSpace,
}

/// Fills a [`BoundReport`]. The Lipschitz estimate is taken at both
/// `θ*` and `w*`.
pub fn verify_bounds(inputs: &BoundInputs<'_>) -> Result<BoundReport> {
    let spec = inputs.spec;
    inputs.theta_star.check_spec(spec)?;
    inputs.w_star.check_spec(spec)?;
    check_len("Hessian", spec.param_count(), inputs.hessian.dim())?;

    let param_gap = linalg::distance(inputs.theta_star.values(), inputs.w_star.values());
    let grad_sum = gradient_sum(spec.param_count(), inputs.forget_grads)?;
    let gap_bound = parameter_gap_bound(inputs.lambda, inputs.hessian.lambda_min, linalg::norm(&grad_sum))?;

    let lipschitz_estimate = estimate_lipschitz(&[inputs.theta_star, inputs.w_star], spec, inputs.probe_inputs)?;
    let mut max_output_gap = 0.0f64;
    for x in inputs.probe_inputs {
        let a = output(inputs.theta_star, spec, x, inputs.output_space)?;
        let b = output(inputs.w_star, spec, x, inputs.output_space)?;
        max_output_gap = max_output_gap.max(linalg::distance(&a, &b));
    }
    let output_bound = lipschitz_estimate * param_gap;
    let certificate = certificate_l1(inputs.theta_star, spec, inputs.forget_inputs)?;

    Ok(BoundReport {
        param_gap,
        gap_bound,
        lipschitz_estimate,
        max_output_gap,
        output_bound,
        certificate_l1: certificate,
        holds_param: param_gap <= gap_bound * (1.0 + BOUND_SLACK),
        holds_output: max_output_gap <= output_bound * (1.0 + BOUND_SLACK),
    })
}

/// Linear least squares `Σᵢ ½(θᵀxᵢ − yᵢ)² + (ridge/2)·n·‖θ‖²`, the quadratic
/// instance on which the influence update is exact. Parameters live on a
/// single-output linear model without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    spec: ModelSpec,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    ridge: f64,
}

impl LeastSquares {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>, ridge: f64) -> Result<Self> {
        let first = features.first().ok_or(FamrError::Empty("least-squares rows"))?;
        let d = first.len();
        check_len("least-squares targets", features.len(), targets.len())?;
        for row in &features {
            check_len("least-squares row", d, row.len())?;
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(FamrError::InvalidArgument(format!("ridge must be nonnegative, got {ridge}")));
        }
        Ok(LeastSquares {
            spec: ModelSpec::linear(d, 1)?.without_bias(),
            features,
            targets,
            ridge,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// `Σ_{i∈rows} (xᵢxᵢᵀ + ridge·I)`.
    pub fn hessian(&self, rows: &[usize]) -> Result<HessianMatrix> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for &i in rows {
            let x = &self.features[i];
            for a in 0..d {
                for b in 0..d {
                    h[(a, b)] += x[a] * x[b];
                }
                h[(a, a)] += self.ridge;
            }
        }
        HessianMatrix::from_matrix(h, HessianSource::ClosedForm)
    }

    /// Minimizer over `rows`, by solving the stationarity system.
    pub fn fit(&self, rows: &[usize]) -> Result<ParamVector> {
        let d = self.dim();
        let h = self.hessian(rows)?;
        let mut rhs = vec![0.0; d];
        for &i in rows {
            for (r, x) in rhs.iter_mut().zip(&self.features[i]) {
                *r += self.targets[i] * x;
            }
        }
        ParamVector::new(&self.spec, linalg::solve_spd(&h.entries, &rhs)?)
    }

    /// `−∇[½(θᵀxᵢ − yᵢ)² + (ridge/2)‖θ‖²]` at `theta` for each row.
    pub fn removal_gradients(&self, theta: &ParamVector, rows: &[usize]) -> Result<Vec<GradVector>> {
        theta.check_spec(&self.spec)?;
        rows.iter()
            .map(|&i| {
                let x = &self.features[i];
                let r = linalg::dot(theta.values(), x) - self.targets[i];
                GradVector::new(
                    x.iter()
                        .zip(theta.values())
                        .map(|(xj, t)| -(r * xj + self.ridge * t))
                        .collect(),
                )
            })
            .collect()
    }
}
