//! Anchored gradient descent on `L_forget(θ) + (λ/2)‖θ − θ₀‖²`, with
//! stationarity and contraction-rate diagnostics.
//!
//! The loop is generic over [`ForgetObjective`] so the same code path runs
//! on networks and on closed-form quadratic surrogates.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FamrError, Result};
use crate::linalg;
use crate::losses::{LossWeights, StyleTarget};
use crate::model::{ModelSpec, ParamVector};
use crate::nn::{self, LossKind, Sample};

/// Mini-batch policy over the forget set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    #[serde(with = "full_literal")]
    Full,
    Size(usize),
}

mod full_literal {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("full")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("full") {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"full\" or a positive integer, got {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamrConfig {
    pub lambda: f64,
    pub eta: f64,
    pub iters: usize,
    pub weights: LossWeights,
    pub batch_size: BatchSize,
    pub seed: u64,
    pub record_every: usize,
    /// Stop early once the stationarity residual drops below this value.
    pub residual_tol: Option<f64>,
}

impl FamrConfig {
    /// Full-batch, KL-only configuration recording every step.
    pub fn new(lambda: f64, eta: f64, iters: usize) -> Self {
        FamrConfig {
            lambda,
            eta,
            iters,
            weights: LossWeights::kl_only(),
            batch_size: BatchSize::Full,
            seed: 0,
            record_every: 1,
            residual_tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FamrError::InvalidArgument(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if self.batch_size == BatchSize::Size(0) {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// A differentiable forgetting loss over a finite set of points.
pub trait ForgetObjective {
    fn dim(&self) -> usize;

    /// Number of points batches are drawn from.
    fn num_points(&self) -> usize;

    /// Mean loss and gradient over `batch` (all points when `None`).
    fn loss_and_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<f64> {
        self.loss_and_grad(theta, batch).map(|(l, _)| l)
    }
}

/// The combined forget loss of a network on a fixed forget set.
#[derive(Debug, Clone)]
pub struct NetworkForgetLoss {
    spec: ModelSpec,
    samples: Vec<Sample>,
    loss: LossKind,
}

impl NetworkForgetLoss {
    pub fn new(spec: ModelSpec, samples: Vec<Sample>, weights: LossWeights, target: Option<StyleTarget>) -> Result<Self> {
        if samples.is_empty() {
            return Err(FamrError::Empty("forget set"));
        }
        Ok(NetworkForgetLoss {
            spec,
            samples,
            loss: LossKind::combined(weights, target)?,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn loss_kind(&self) -> &LossKind {
        &self.loss
    }
}

impl ForgetObjective for NetworkForgetLoss {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn num_points(&self) -> usize {
        self.samples.len()
    }

    fn loss_and_grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        check_len("parameters", self.dim(), theta.len())?;
        let (value, g) = match batch {
            None => nn::evaluate(theta, &self.spec, &self.samples, &self.loss, true)?,
            Some(idx) => {
                let subset: Vec<Sample> = idx.iter().map(|&i| self.samples[i].clone()).collect();
                nn::evaluate(theta, &self.spec, &subset, &self.loss, true)?
            }
        };
        Ok((value, g.expect("gradient requested")))
    }
}

/// `½(θ − c)ᵀ A (θ − c)` for symmetric positive-semidefinite `A`.
#[derive(Debug, Clone)]
pub struct QuadraticForgetLoss {
    a: DMatrix<f64>,
    center: Vec<f64>,
}

impl QuadraticForgetLoss {
    pub fn new(a: DMatrix<f64>, center: Vec<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(FamrError::InvalidArgument("quadratic form must be square".into()));
        }
        check_len("quadratic center", a.nrows(), center.len())?;
        Ok(QuadraticForgetLoss { a, center })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Gradient-Lipschitz constant `λ_max(A)`.
    pub fn lipschitz(&self) -> Result<f64> {
        Ok(linalg::jacobi_eigen(&self.a)?.max())
    }
}

impl ForgetObjective for QuadraticForgetLoss {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn num_points(&self) -> usize {
        1
    }

    fn loss_and_grad(&self, theta: &[f64], _batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        check_len("parameters", self.dim(), theta.len())?;
        let d = DVector::from_vec(linalg::sub(theta, &self.center));
        let g = &self.a * &d;
        Ok((0.5 * d.dot(&g), g.iter().copied().collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub forget_loss: f64,
    pub anchor_value: f64,
    pub objective: f64,
    pub grad_norm_forget: f64,
    pub grad_norm_anchor: f64,
    pub stationarity_residual: f64,
    pub param_distance_to_theta0: f64,
}

impl TraceRow {
    fn is_finite(&self) -> bool {
        [
            self.forget_loss,
            self.anchor_value,
            self.objective,
            self.grad_norm_forget,
            self.grad_norm_anchor,
            self.stationarity_residual,
            self.param_distance_to_theta0,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptTrace {
    pub rows: Vec<TraceRow>,
}

impl OptTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub theta: Vec<f64>,
    pub trace: OptTrace,
    /// Number of updates applied.
    pub steps: usize,
}

fn anchor_gradient(theta: &[f64], theta0: &[f64], lambda: f64) -> Vec<f64> {
    theta.iter().zip(theta0).map(|(t, t0)| lambda * (t - t0)).collect()
}

fn apply_update(theta: &[f64], theta0: &[f64], g_forget: &[f64], eta: f64, lambda: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(theta0)
        .zip(g_forget)
        .map(|((t, t0), g)| t - eta * (g + lambda * (t - t0)))
        .collect()
}

/// One update `θ ← θ − η(g_forget + λ(θ − θ₀))` on the given batch.
pub fn anchored_step<O: ForgetObjective + ?Sized>(
    theta: &[f64],
    theta0: &[f64],
    objective: &O,
    batch: Option<&[usize]>,
    cfg: &FamrConfig,
) -> Result<Vec<f64>> {
    check_len("anchor", theta.len(), theta0.len())?;
    let (_, g) = objective.loss_and_grad(theta, batch)?;
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(FamrError::Diverged {
            step: 0,
            reason: format!("forget gradient entry {i} is {}", g[i]),
            trace: None,
        });
    }
    Ok(apply_update(theta, theta0, &g, cfg.eta, cfg.lambda))
}

/// `‖∇L_forget(θ) + λ(θ − θ₀)‖₂` over the full forget set.
pub fn residual<O: ForgetObjective + ?Sized>(objective: &O, theta: &[f64], theta0: &[f64], lambda: f64) -> Result<f64> {
    check_len("anchor", theta.len(), theta0.len())?;
    let (_, g) = objective.loss_and_grad(theta, None)?;
    let total: Vec<f64> = g
        .iter()
        .zip(anchor_gradient(theta, theta0, lambda))
        .map(|(a, b)| a + b)
        .collect();
    Ok(linalg::norm(&total))
}

/// Trace row for `theta` evaluated on the full forget set, as a run would
/// record it at `step`.
pub fn evaluate_row<O: ForgetObjective + ?Sized>(
    objective: &O,
    step: usize,
    theta: &[f64],
    theta0: &[f64],
    lambda: f64,
) -> Result<TraceRow> {
    check_len("anchor", theta.len(), theta0.len())?;
    let (loss, g) = objective.loss_and_grad(theta, None)?;
    Ok(trace_row(step, theta, theta0, lambda, loss, &g))
}

fn trace_row(step: usize, theta: &[f64], theta0: &[f64], lambda: f64, loss: f64, g: &[f64]) -> TraceRow {
    let anchor_grad = anchor_gradient(theta, theta0, lambda);
    let dist = linalg::distance(theta, theta0);
    let anchor_value = 0.5 * lambda * dist * dist;
    let total: Vec<f64> = g.iter().zip(&anchor_grad).map(|(a, b)| a + b).collect();
    TraceRow {
        step,
        forget_loss: loss,
        anchor_value,
        objective: loss + anchor_value,
        grad_norm_forget: linalg::norm(g),
        grad_norm_anchor: linalg::norm(&anchor_grad),
        stationarity_residual: linalg::norm(&total),
        param_distance_to_theta0: dist,
    }
}

/// Batches drawn without replacement, reshuffled every epoch.
struct BatchSampler {
    order: Vec<usize>,
    size: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler {
            order,
            size: size.min(n),
            cursor: 0,
            rng,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Runs `cfg.iters` anchored updates from `theta0`.
///
/// Trace rows describe the iterate *before* the update of that step and
/// are taken at steps `0, r, 2r, …` plus the final iterate, each evaluated
/// on the full forget set. `observer` sees every recorded row together
/// with its iterate. A non-finite gradient or trace row aborts with
/// [`FamrError::Diverged`] carrying the rows recorded so far.
pub fn anchored_descent<O, F>(theta0: &[f64], objective: &O, cfg: &FamrConfig, mut observer: F) -> Result<RunOutcome>
where
    O: ForgetObjective + ?Sized,
    F: FnMut(&TraceRow, &[f64]) -> Result<()>,
{
    cfg.validate()?;
    check_len("initial parameters", objective.dim(), theta0.len())?;
    if objective.num_points() == 0 {
        return Err(FamrError::Empty("forget set"));
    }
    let mut sampler = match cfg.batch_size {
        BatchSize::Full => None,
        BatchSize::Size(s) => Some(BatchSampler::new(objective.num_points(), s, cfg.seed)),
    };
    let mut trace = OptTrace::default();
    let mut theta = theta0.to_vec();

    let diverged = |step: usize, reason: String, trace: &OptTrace| FamrError::Diverged {
        step,
        reason,
        trace: Some(Box::new(trace.clone())),
    };

    let mut record = |step: usize, theta: &[f64], loss: f64, g: &[f64], trace: &mut OptTrace| -> Result<TraceRow> {
        let row = trace_row(step, theta, theta0, cfg.lambda, loss, g);
        if !row.is_finite() {
            return Err(diverged(step, "non-finite loss or gradient".into(), trace));
        }
        observer(&row, theta)?;
        trace.rows.push(row);
        Ok(row)
    };

    let mut steps = 0;
    while steps < cfg.iters {
        let full = if sampler.is_none() || steps % cfg.record_every == 0 || cfg.residual_tol.is_some() {
            Some(objective.loss_and_grad(&theta, None)?)
        } else {
            None
        };
        if let Some((loss, g)) = &full {
            let residual_now = if steps % cfg.record_every == 0 {
                Some(record(steps, &theta, *loss, g, &mut trace)?.stationarity_residual)
            } else {
                None
            };
            if let Some(tol) = cfg.residual_tol {
                let r = match residual_now {
                    Some(r) => r,
                    None => trace_row(steps, &theta, theta0, cfg.lambda, *loss, g).stationarity_residual,
                };
                if r < tol {
                    break;
                }
            }
        }
        let g = match (&mut sampler, full) {
            (None, Some((_, g))) => g,
            (Some(s), _) => {
                let batch = s.next_batch();
                objective.loss_and_grad(&theta, Some(&batch))?.1
            }
            (None, None) => unreachable!("full-batch runs always evaluate the full gradient"),
        };
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(diverged(steps, format!("forget gradient entry {i} is {}", g[i]), &trace));
        }
        theta = apply_update(&theta, theta0, &g, cfg.eta, cfg.lambda);
        steps += 1;
    }

    if trace.last().is_none_or(|r| r.step != steps) {
        let (loss, g) = objective.loss_and_grad(&theta, None)?;
        record(steps, &theta, loss, &g, &mut trace)?;
    }
    Ok(RunOutcome { theta, trace, steps })
}

/// Single update on a network; `batch` should be drawn from the forget set.
pub fn famr_step(
    params: &ParamVector,
    theta0: &ParamVector,
    spec: &ModelSpec,
    batch: &[Sample],
    cfg: &FamrConfig,
    target: Option<&StyleTarget>,
) -> Result<ParamVector> {
    params.check_spec(spec)?;
    theta0.check_spec(spec)?;
    let objective = NetworkForgetLoss::new(spec.clone(), batch.to_vec(), cfg.weights, target.cloned())?;
    let next = anchored_step(params.values(), theta0.values(), &objective, None, cfg)?;
    params.with_values(next)
}

/// Algorithm loop on a network, returning `θ*` and its trace.
pub fn famr_run(
    theta0: &ParamVector,
    spec: &ModelSpec,
    forget_set: &[Sample],
    cfg: &FamrConfig,
    target: Option<&StyleTarget>,
) -> Result<(ParamVector, OptTrace)> {
    famr_run_observed(theta0, spec, forget_set, cfg, target, |_, _| Ok(()))
}

pub fn famr_run_observed<F>(
    theta0: &ParamVector,
    spec: &ModelSpec,
    forget_set: &[Sample],
    cfg: &FamrConfig,
    target: Option<&StyleTarget>,
    observer: F,
) -> Result<(ParamVector, OptTrace)>
where
    F: FnMut(&TraceRow, &[f64]) -> Result<()>,
{
    theta0.check_spec(spec)?;
    let objective = NetworkForgetLoss::new(spec.clone(), forget_set.to_vec(), cfg.weights, target.cloned())?;
    let outcome = anchored_descent(theta0.values(), &objective, cfg, observer)?;
    Ok((theta0.with_values(outcome.theta)?, outcome.trace))
}

/// `‖∇L_forget(θ) + λ(θ − θ₀)‖₂` on the full forget set of a network.
pub fn stationarity_residual(
    theta: &ParamVector,
    theta0: &ParamVector,
    spec: &ModelSpec,
    forget_set: &[Sample],
    cfg: &FamrConfig,
    target: Option<&StyleTarget>,
) -> Result<f64> {
    theta.check_spec(spec)?;
    theta0.check_spec(spec)?;
    let objective = NetworkForgetLoss::new(spec.clone(), forget_set.to_vec(), cfg.weights, target.cloned())?;
    residual(&objective, theta.values(), theta0.values(), cfg.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Largest per-step contraction `(d_{t₂}/d_{t₁})^{1/(t₂−t₁)}` between recorded
    /// steps, skipping pairs that start within the tolerance of the optimum.
    pub max_ratio: f64,
    /// `1 − ηλ`.
    pub bound: f64,
    /// Every recorded `d_t ≤ (1 − ηλ)^t · d_0 + 1e-9`.
    pub holds: bool,
    pub violations: usize,
}

/// Slack added to the geometric envelope when checking recorded distances.
pub const RATE_TOLERANCE: f64 = 1e-9;

/// Checks recorded iterates against the linear rate `(1 − ηλ)^t`.
///
/// `iterates` must start at step 0 with strictly increasing steps. Never
/// errors on a violated rate; that is reported through `holds`.
pub fn convergence_rate_check(
    iterates: &[(usize, Vec<f64>)],
    theta_star: Option<&[f64]>,
    eta: f64,
    lambda: f64,
) -> Result<RateReport> {
    let theta_star = theta_star.ok_or_else(|| {
        FamrError::InvalidArgument("convergence check needs the optimum θ*".into())
    })?;
    let (first_step, _) = iterates.first().ok_or(FamrError::Empty("iterate trace"))?;
    if *first_step != 0 {
        return Err(FamrError::InvalidArgument("iterate trace must start at step 0".into()));
    }
    if iterates.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(FamrError::InvalidArgument("iterate steps must be strictly increasing".into()));
    }
    let dists = iterates
        .iter()
        .map(|(t, th)| {
            check_len("iterate", theta_star.len(), th.len())?;
            Ok((*t, linalg::distance(th, theta_star)))
        })
        .collect::<Result<Vec<_>>>()?;

    let bound = 1.0 - eta * lambda;
    let d0 = dists[0].1;
    let violations = dists
        .iter()
        .filter(|(t, d)| !(*d <= bound.powi(*t as i32) * d0 + RATE_TOLERANCE))
        .count();
    let max_ratio = dists
        .windows(2)
        .filter(|w| w[0].1 > RATE_TOLERANCE)
        .map(|w| (w[1].1 / w[0].1).powf(1.0 / (w[1].0 - w[0].0) as f64))
        .fold(0.0, f64::max);
    Ok(RateReport {
        max_ratio,
        bound,
        holds: violations == 0,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn quad(diag: &[f64], center: &[f64]) -> QuadraticForgetLoss {
        QuadraticForgetLoss::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)), center.to_vec()).unwrap()
    }

    /// Objective with zero gradient everywhere.
    struct Flat(usize);

    impl ForgetObjective for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn num_points(&self) -> usize {
            1
        }
        fn loss_and_grad(&self, _: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![0.0; self.0]))
        }
    }

    #[test]
    fn step_fixed_point_and_anchor_decay() {
        let cfg = FamrConfig::new(2.0, 0.1, 1);
        let theta0 = vec![1.0, -2.0, 0.5];
        assert_eq!(anchored_step(&theta0, &theta0, &Flat(3), None, &cfg).unwrap(), theta0);
        let theta = vec![2.0, 0.0, 0.5];
        let next = anchored_step(&theta, &theta0, &Flat(3), None, &cfg).unwrap();
        for i in 0..3 {
            let expected = theta0[i] + (1.0 - 0.1 * 2.0) * (theta[i] - theta0[i]);
            assert!((next[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_quadratic_step() {
        // L = ½(θ − a)², θ₀ = 0: θ' = θ − η(θ − a + λθ).
        let (a, eta, lambda, theta) = (3.0, 0.2, 0.5, 1.5);
        let cfg = FamrConfig::new(lambda, eta, 1);
        let next = anchored_step(&[theta], &[0.0], &quad(&[1.0], &[a]), None, &cfg).unwrap();
        assert!((next[0] - (1.5 - 0.2 * (1.5 - 3.0 + 0.75))).abs() < 1e-15);
        assert!((next[0] - 1.65).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_iff_stationary() {
        let q = quad(&[2.0, 1.0], &[1.0, -1.0]);
        let cfg = FamrConfig::new(1.0, 0.1, 1);
        // Minimizer of J: (A + λI)⁻¹(Aa + λθ₀) with θ₀ = 0 → (2/3, −1/2).
        let star = [2.0 / 3.0, -0.5];
        let next = anchored_step(&star, &[0.0, 0.0], &q, None, &cfg).unwrap();
        assert!(linalg::distance(&next, &star) < 1e-15);
        assert!(residual(&q, &star, &[0.0, 0.0], 1.0).unwrap() < 1e-15);
        let off = [0.7, -0.5];
        let moved = anchored_step(&off, &[0.0, 0.0], &q, None, &cfg).unwrap();
        assert!(linalg::distance(&moved, &off) > 0.0);
    }

    #[test]
    fn residual_at_anchor_is_forget_gradient_norm() {
        let q = quad(&[2.0, 3.0], &[1.0, 1.0]);
        let theta0 = [0.0, 0.0];
        let r = residual(&q, &theta0, &theta0, 5.0).unwrap();
        assert_eq!(r, (4.0f64 + 9.0).sqrt());
    }

    #[test]
    fn trace_cadence_includes_final_step() {
        let q = quad(&[1.0, 2.0], &[1.0, 1.0]);
        for (iters, every) in [(10, 3), (9, 3), (1, 1), (7, 10)] {
            let mut cfg = FamrConfig::new(0.5, 0.1, iters);
            cfg.record_every = every;
            let out = anchored_descent(&[0.0, 0.0], &q, &cfg, |_, _| Ok(())).unwrap();
            assert_eq!(out.trace.rows.len(), iters.div_ceil(every) + 1);
            assert_eq!(out.trace.rows[0].step, 0);
            assert_eq!(out.trace.last().unwrap().step, iters);
            assert!(out.trace.rows.windows(2).all(|w| w[0].step < w[1].step));
        }
    }

    #[test]
    fn residual_tolerance_stops_early() {
        let q = quad(&[1.0], &[1.0]);
        let mut cfg = FamrConfig::new(1.0, 0.5, 10_000);
        cfg.residual_tol = Some(1e-10);
        let out = anchored_descent(&[0.0], &q, &cfg, |_, _| Ok(())).unwrap();
        assert!(out.steps < 100);
        assert!(out.trace.last().unwrap().stationarity_residual < 1e-10);
    }

    #[test]
    fn divergence_keeps_finite_trace() {
        // η far above 2/(L + λ) on a stiff quadratic blows up.
        let q = quad(&[1e150], &[1.0]);
        let cfg = FamrConfig::new(1.0, 1.0, 100);
        match anchored_descent(&[0.0], &q, &cfg, |_, _| Ok(())) {
            Err(FamrError::Diverged { trace: Some(trace), .. }) => {
                assert!(!trace.rows.is_empty());
                assert!(trace.rows.iter().all(|r| r.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rate_check_degenerate_and_missing_optimum() {
        let it = vec![(0, vec![1.0]), (1, vec![1.0])];
        let r = convergence_rate_check(&it, Some(&[1.0]), 0.1, 1.0).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_ratio, 0.0);
        assert!(convergence_rate_check(&it, None, 0.1, 1.0).is_err());
        let late = vec![(1, vec![1.0])];
        assert!(convergence_rate_check(&late, Some(&[1.0]), 0.1, 1.0).is_err());
    }

    #[test]
    fn rate_check_flags_violations() {
        let it = vec![(0, vec![1.0]), (1, vec![0.95]), (2, vec![0.5])];
        let r = convergence_rate_check(&it, Some(&[0.0]), 0.1, 1.0).unwrap();
        assert!(!r.holds);
        assert_eq!(r.violations, 1);
        assert!((r.max_ratio - 0.95).abs() < 1e-15);
    }

    #[test]
    fn minibatch_runs_are_seed_deterministic() {
        let spec = ModelSpec::new(vec![2, 4, 3], Activation::Tanh, Some(0)).unwrap();
        let theta0 = nn::init_params(&spec, 3);
        let set: Vec<Sample> = (0..7)
            .map(|i| Sample::labeled(vec![i as f64 * 0.3 - 1.0, 0.5 - i as f64 * 0.1], i % 3))
            .collect();
        let mut cfg = FamrConfig::new(0.1, 0.05, 20);
        cfg.batch_size = BatchSize::Size(3);
        cfg.seed = 42;
        let a = famr_run(&theta0, &spec, &set, &cfg, None).unwrap();
        let b = famr_run(&theta0, &spec, &set, &cfg, None).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        let c = famr_run(&theta0, &spec, &set, &cfg, None).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn config_validation() {
        assert!(FamrConfig::new(0.0, 0.1, 1).validate().is_err());
        assert!(FamrConfig::new(0.1, 0.0, 1).validate().is_err());
        assert!(FamrConfig::new(0.1, 0.1, 0).validate().is_err());
        let mut cfg = FamrConfig::new(0.1, 0.1, 1);
        cfg.batch_size = BatchSize::Size(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn batch_size_serde() {
        #[derive(Deserialize)]
        struct W {
            b: BatchSize,
        }
        let full: W = serde_json::from_str(r#"{"b":"full"}"#).unwrap();
        assert_eq!(full.b, BatchSize::Full);
        let sized: W = serde_json::from_str(r#"{"b":16}"#).unwrap();
        assert_eq!(sized.b, BatchSize::Size(16));
        assert!(serde_json::from_str::<W>(r#"{"b":"most"}"#).is_err());
    }
}
