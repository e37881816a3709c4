//! The `train`, `forget` and `verify` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use famr::datagen::{draw_inputs, split_forget};
use famr::format::{fmt_f64, Provenance};
use famr::losses::{style_target_from_set, StyleTarget};
use famr::metrics::{self, assemble_report};
use famr::nn::{self, LossKind};
use famr::opt::{self, FamrConfig, NetworkForgetLoss, TraceRow};
use famr::theory::{self, BoundInputs};
use famr::{BoundReport, Checkpoint, Dataset, FamrError, ForgetSplit, LossWeights, MetricsReport, ModelSpec, ParamVector};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, HessianSet, LoadedConfig, StyleTargetPolicy};
use crate::CliError;

pub const THETA0_FILE: &str = "theta0.ckpt";
pub const THETA_STAR_FILE: &str = "theta_star.ckpt";
pub const DATASET_FILE: &str = "dataset.csv";
pub const TRAIN_METRICS_FILE: &str = "train_metrics.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const BOUNDS_FILE: &str = "bounds.json";

/// Column order of trace files.
pub const TRACE_COLUMNS: [&str; 12] = [
    "step",
    "forget_loss",
    "anchor_value",
    "objective",
    "stationarity_residual",
    "for_acc",
    "ret_acc",
    "entropy_forget",
    "kl_pre_post",
    "grad_norm_forget",
    "grad_norm_anchor",
    "param_distance_to_theta0",
];

/// Dataset, split and provenance shared by every subcommand.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: Dataset,
    pub split: ForgetSplit,
    pub provenance: Provenance,
}

impl Experiment {
    pub fn prepare(loaded: LoadedConfig) -> Result<Self, CliError> {
        let config = loaded.config;
        let data = config.dataset.generate().map_err(CliError::config)?;
        let split = split_forget(&data, &config.forget.select).map_err(CliError::config)?;
        let provenance = Provenance::new(loaded.hash, data.content_hash());
        Ok(Experiment {
            config,
            data,
            split,
            provenance,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.config.model
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output.dir
    }

    fn report(&self, pre: &ParamVector, post: &ParamVector, bound: Option<BoundReport>) -> famr::Result<MetricsReport> {
        assemble_report(
            pre,
            post,
            self.spec(),
            &self.split.retain,
            &self.split.forget,
            bound,
            self.config.metrics.kl_direction,
        )
    }

    fn read_checkpoint(&self, path: &Path) -> Result<Checkpoint, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: cannot read checkpoint: {e}", path.display())))?;
        let ckpt = Checkpoint::from_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if ckpt.spec != *self.spec() {
            return Err(CliError::Config(format!(
                "{}: checkpoint model spec does not match the config",
                path.display()
            )));
        }
        Ok(ckpt)
    }

    fn write_checkpoint(&self, path: &Path, params: &ParamVector, seed: u64) -> Result<(), CliError> {
        let ckpt = Checkpoint::new(self.spec().clone(), seed, params.clone())
            .map_err(CliError::runtime)?
            .with_provenance(self.provenance.clone());
        write(path, &ckpt.to_text())
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDocument {
    pub provenance: Provenance,
    pub stage: String,
    pub lambda: Option<f64>,
    pub iters: Option<usize>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub metrics: MetricsReport,
}

pub fn cmd_train(exp: &Experiment) -> Result<TrainOutputs, CliError> {
    let theta0 = nn::train_baseline(&exp.data, exp.spec(), &exp.config.train).map_err(CliError::runtime)?;
    let metrics = exp.report(&theta0, &theta0, None).map_err(CliError::runtime)?;
    let dir = exp.out_dir();
    let checkpoint = dir.join(THETA0_FILE);
    exp.write_checkpoint(&checkpoint, &theta0, exp.config.train.seed)?;
    write(&dir.join(DATASET_FILE), &exp.data.to_text())?;
    let doc = MetricsDocument {
        provenance: exp.provenance.clone(),
        stage: "train".into(),
        lambda: None,
        iters: None,
        metrics,
    };
    write(&dir.join(TRAIN_METRICS_FILE), &to_json(&doc))?;
    Ok(TrainOutputs { checkpoint, metrics })
}

/// Trace row plus the evaluation metrics of its iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub row: TraceRow,
    pub for_acc: f64,
    pub ret_acc: f64,
    pub entropy_forget: f64,
    pub kl_pre_post: f64,
}

impl TracePoint {
    fn values(&self) -> [f64; 11] {
        let r = &self.row;
        [
            r.forget_loss,
            r.anchor_value,
            r.objective,
            r.stationarity_residual,
            self.for_acc,
            self.ret_acc,
            self.entropy_forget,
            self.kl_pre_post,
            r.grad_norm_forget,
            r.grad_norm_anchor,
            r.param_distance_to_theta0,
        ]
    }
}

pub fn provenance_header(kind: &str, p: &Provenance) -> String {
    format!(
        "# {kind}\n# config_hash={}\n# dataset_hash={}\n# code_version={}\n",
        p.config_hash, p.dataset_hash, p.code_version
    )
}

pub fn trace_csv(points: &[TracePoint], p: &Provenance) -> String {
    let mut out = provenance_header("famr-trace-v1", p).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(TRACE_COLUMNS).expect("in-memory write");
        for pt in points {
            let mut rec = vec![pt.row.step.to_string()];
            rec.extend(pt.values().iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    String::from_utf8(out).expect("ascii output")
}

#[derive(Debug, Clone)]
pub struct ForgetOutputs {
    pub dir: PathBuf,
    pub theta_star: ParamVector,
    pub trace: Vec<TracePoint>,
    pub metrics: MetricsReport,
}

fn style_target(exp: &Experiment, theta0: &ParamVector) -> Result<Option<StyleTarget>, CliError> {
    if exp.config.forget.beta <= 0.0 {
        return Ok(None);
    }
    let target = match exp.config.forget.style_target {
        StyleTargetPolicy::RetainMean => style_target_from_set(theta0, exp.spec(), exp.split.retain.inputs()),
        StyleTargetPolicy::Zeros => Ok(StyleTarget::zeros(exp.spec().phi_dim().expect("validated phi layer"))),
    };
    target.map(Some).map_err(CliError::runtime)
}

/// Forget loss configured for this experiment.
pub fn forget_objective(exp: &Experiment, theta0: &ParamVector) -> Result<NetworkForgetLoss, CliError> {
    let f = &exp.config.forget;
    let weights = LossWeights::new(f.alpha, f.beta).map_err(CliError::config)?;
    NetworkForgetLoss::new(exp.spec().clone(), exp.split.forget.samples(), weights, style_target(exp, theta0)?)
        .map_err(CliError::runtime)
}

/// Runs the forgetting loop from the checkpoint at `theta0_path` for each
/// λ in `lambdas`, writing into `exp.out_dir()` (one λ) or one
/// subdirectory per λ.
pub fn cmd_forget(exp: &Experiment, theta0_path: &Path, lambdas: Option<&[f64]>) -> Result<Vec<ForgetOutputs>, CliError> {
    let theta0 = exp.read_checkpoint(theta0_path)?.params;
    match lambdas {
        None => Ok(vec![forget_once(exp, &theta0, exp.config.forget.lambda, exp.out_dir())?]),
        Some(grid) => grid
            .iter()
            .map(|&l| forget_once(exp, &theta0, l, &exp.out_dir().join(format!("lambda_{l:e}"))))
            .collect(),
    }
}

fn forget_once(exp: &Experiment, theta0: &ParamVector, lambda: f64, dir: &Path) -> Result<ForgetOutputs, CliError> {
    let f = &exp.config.forget;
    let spec = exp.spec();
    let objective = forget_objective(exp, theta0)?;
    let target = match objective.loss_kind() {
        LossKind::Combined { target, .. } => target.clone(),
        _ => None,
    };
    let point = |row: &TraceRow, theta: &[f64]| -> famr::Result<TracePoint> {
        let post = theta0.with_values(theta.to_vec())?;
        Ok(TracePoint {
            row: *row,
            for_acc: metrics::accuracy(&post, spec, &exp.split.forget)?,
            ret_acc: metrics::accuracy(&post, spec, &exp.split.retain)?,
            entropy_forget: metrics::mean_entropy(&post, spec, &exp.split.forget)?,
            kl_pre_post: metrics::kl_pre_post(theta0, &post, spec, &exp.split.forget, exp.config.metrics.kl_direction)?,
        })
    };
    let mut trace = Vec::new();
    let theta_star = if f.iters == 0 {
        let row = opt::evaluate_row(&objective, 0, theta0.values(), theta0.values(), lambda).map_err(CliError::runtime)?;
        trace.push(point(&row, theta0.values()).map_err(CliError::runtime)?);
        theta0.clone()
    } else {
        let cfg = FamrConfig {
            lambda,
            eta: f.eta,
            iters: f.iters,
            weights: LossWeights::new(f.alpha, f.beta).map_err(CliError::config)?,
            batch_size: f.batch_size,
            seed: f.seed,
            record_every: exp.config.output.trace_every,
            residual_tol: f.residual_tol,
        };
        let forget = exp.split.forget.samples();
        let run = opt::famr_run_observed(theta0, spec, &forget, &cfg, target.as_ref(), |row, theta| {
            trace.push(point(row, theta)?);
            Ok(())
        });
        match run {
            Ok((theta, _)) => theta,
            Err(e @ FamrError::Diverged { .. }) => {
                // Keep what was recorded before the failure.
                write(&dir.join(TRACE_FILE), &trace_csv(&trace, &exp.provenance))?;
                return Err(CliError::runtime(e));
            }
            Err(e) => return Err(CliError::runtime(e)),
        }
    };

    let metrics = exp.report(theta0, &theta_star, None).map_err(CliError::runtime)?;
    exp.write_checkpoint(&dir.join(THETA_STAR_FILE), &theta_star, f.seed)?;
    write(&dir.join(TRACE_FILE), &trace_csv(&trace, &exp.provenance))?;
    let doc = MetricsDocument {
        provenance: exp.provenance.clone(),
        stage: "forget".into(),
        lambda: Some(lambda),
        iters: Some(f.iters),
        metrics,
    };
    write(&dir.join(METRICS_FILE), &to_json(&doc))?;
    Ok(ForgetOutputs {
        dir: dir.to_path_buf(),
        theta_star,
        trace,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianSummary {
    pub source: famr::HessianSource,
    pub set: HessianSet,
    pub dim: usize,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub lambda: f64,
    /// `‖θ̂(λ) − θ₀‖`.
    pub distance_to_theta0: f64,
    /// `‖θ̂(λ) − w*‖` against the retrained model.
    pub distance_to_retrain: f64,
    /// `‖θ̂(λ) − w_infl‖` against the undamped influence update.
    pub distance_to_influence: Option<f64>,
    /// Bounds for the damped solution `θ̂(λ)` against `w*`.
    pub bound: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDocument {
    pub provenance: Provenance,
    pub lambda: f64,
    pub hessian: HessianSummary,
    pub retrain_distance_to_theta0: f64,
    pub influence_distance_to_retrain: Option<f64>,
    /// Bounds for the supplied `θ*` against `w*` at the configured λ.
    pub famr: BoundReport,
    pub grid: Vec<GridPoint>,
}

fn dist(a: &ParamVector, b: &ParamVector) -> f64 {
    famr::linalg::distance(a.values(), b.values())
}

/// Retrains on the retain set and checks every bound for the supplied
/// `θ*` and for the damped solution at each grid λ.
pub fn cmd_verify(exp: &Experiment, theta0_path: &Path, theta_star_path: &Path) -> Result<BoundsDocument, CliError> {
    let th = &exp.config.theory;
    if !th.enabled {
        return Err(CliError::Config("theory block is disabled; set theory.enabled = true".into()));
    }
    exp.config.check_hessian_guard()?;
    let spec = exp.spec();
    let theta0 = exp.read_checkpoint(theta0_path)?.params;
    let theta_star = exp.read_checkpoint(theta_star_path)?.params;
    let l2 = exp.config.train.l2;

    let w_star = theory::retrain_oracle(&exp.split.retain, spec, &exp.config.train).map_err(CliError::runtime)?;
    let source = th.source_for(spec);
    let h_data = match th.hessian_set {
        HessianSet::Retain => &exp.split.retain,
        HessianSet::Full => &exp.data,
    };
    let h = theory::hessian(&theta0, spec, h_data, l2, source).map_err(CliError::runtime)?;
    let grads = theory::removal_gradients(&theta0, spec, &exp.split.forget.samples(), l2).map_err(CliError::runtime)?;
    let influence = match theory::influence_update(&theta0, &h, &grads, th.damping) {
        Ok(w) => Some(w),
        Err(FamrError::Singular { lambda_min }) => {
            eprintln!("note: influence update skipped, Hessian is singular (smallest eigenvalue {lambda_min:e}); set theory.damping");
            None
        }
        Err(e) => return Err(CliError::runtime(e)),
    };

    let forget_inputs = exp.split.forget.inputs().to_vec();
    let mut probes = forget_inputs.clone();
    probes.extend(draw_inputs(&exp.data, th.probe_count, th.probe_seed));
    let check = |candidate: &ParamVector, lambda: f64| {
        theory::verify_bounds(&BoundInputs {
            spec,
            theta_star: candidate,
            w_star: &w_star,
            hessian: &h,
            lambda,
            forget_grads: &grads,
            forget_inputs: &forget_inputs,
            probe_inputs: &probes,
            output_space: th.output_space,
        })
        .map_err(CliError::runtime)
    };
    let note = |label: &str, r: &BoundReport| {
        if !r.holds_param {
            eprintln!(
                "note: parameter-gap bound not met for {label} (gap {}, bound {}); this check is advisory on non-quadratic losses",
                fmt_f64(r.param_gap),
                fmt_f64(r.gap_bound)
            );
        }
    };

    let famr = check(&theta_star, exp.config.forget.lambda)?;
    note("theta_star", &famr);
    let mut grid = Vec::new();
    for &lambda in &th.lambda_grid {
        let hat = theory::damped_newton_solution(&theta0, &h, lambda, &grads).map_err(CliError::runtime)?;
        let bound = check(&hat, lambda)?;
        note(&format!("lambda={lambda:e}"), &bound);
        grid.push(GridPoint {
            lambda,
            distance_to_theta0: dist(&hat, &theta0),
            distance_to_retrain: dist(&hat, &w_star),
            distance_to_influence: influence.as_ref().map(|w| dist(&hat, w)),
            bound,
        });
    }
    let doc = BoundsDocument {
        provenance: exp.provenance.clone(),
        lambda: exp.config.forget.lambda,
        hessian: HessianSummary {
            source,
            set: th.hessian_set,
            dim: h.dim(),
            lambda_min: h.lambda_min,
        },
        retrain_distance_to_theta0: dist(&w_star, &theta0),
        influence_distance_to_retrain: influence.as_ref().map(|w| dist(w, &w_star)),
        famr,
        grid,
    };
    write(&exp.out_dir().join(BOUNDS_FILE), &to_json(&doc))?;
    Ok(doc)
}
