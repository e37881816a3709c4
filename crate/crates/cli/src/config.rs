//! Experiment configuration: a TOML document with fixed key names.

use std::path::{Path, PathBuf};

use famr::datagen::{gen_blobs, gen_styled};
use famr::nn::TrainConfig;
use famr::opt::BatchSize;
use famr::theory::MAX_HESSIAN_PARAMS;
use famr::{Dataset, ForgetSpec, HessianSource, KlDirection, ModelSpec, OutputSpace, StyledArgs};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub forget: ForgetConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    Styled {
        classes: usize,
        per_class: usize,
        d_content: usize,
        d_style: usize,
        styles: usize,
        style_amplitude: f64,
        spread: f64,
        seed: u64,
    },
}

impl DatasetConfig {
    pub fn classes(&self) -> usize {
        match self {
            DatasetConfig::Blobs { classes, .. } | DatasetConfig::Styled { classes, .. } => *classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetConfig::Blobs { dim, .. } => *dim,
            DatasetConfig::Styled { d_content, d_style, .. } => d_content + d_style,
        }
    }

    fn seed_mut(&mut self) -> &mut u64 {
        match self {
            DatasetConfig::Blobs { seed, .. } | DatasetConfig::Styled { seed, .. } => seed,
        }
    }

    pub fn generate(&self) -> famr::Result<Dataset> {
        match *self {
            DatasetConfig::Blobs {
                classes,
                per_class,
                dim,
                spread,
                seed,
            } => gen_blobs(classes, per_class, dim, spread, seed),
            DatasetConfig::Styled {
                classes,
                per_class,
                d_content,
                d_style,
                styles,
                style_amplitude,
                spread,
                seed,
            } => gen_styled(&StyledArgs {
                classes,
                per_class,
                d_content,
                d_style,
                styles,
                style_amplitude,
                spread,
                seed,
            }),
        }
    }
}

/// Reference Gram matrix for the style term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleTargetPolicy {
    /// Mean feature Gram of the baseline model on the retain set.
    #[default]
    RetainMean,
    Zeros,
}

fn default_lambda() -> f64 {
    0.1
}
fn default_eta() -> f64 {
    1e-4
}
fn default_iters() -> usize {
    10
}
fn default_alpha() -> f64 {
    1.0
}
fn default_batch() -> BatchSize {
    BatchSize::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetConfig {
    pub select: ForgetSpec,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_batch")]
    pub batch_size: BatchSize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub style_target: StyleTargetPolicy,
}

/// Training set the influence Hessian is taken over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianSet {
    #[default]
    Retain,
    Full,
}

fn default_grid() -> Vec<f64> {
    vec![1.0, 0.1, 0.01, 0.001]
}
fn default_probes() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_probes")]
    pub probe_count: usize,
    #[serde(default)]
    pub probe_seed: u64,
    /// Defaults to the analytic form for models without hidden layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hessian_source: Option<HessianSource>,
    #[serde(default)]
    pub hessian_set: HessianSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default)]
    pub output_space: OutputSpace,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            enabled: true,
            lambda_grid: default_grid(),
            probe_count: default_probes(),
            probe_seed: 0,
            hessian_source: None,
            hessian_set: HessianSet::Retain,
            damping: None,
            output_space: OutputSpace::Logits,
        }
    }
}

impl TheoryConfig {
    pub fn source_for(&self, spec: &ModelSpec) -> HessianSource {
        self.hessian_source.unwrap_or(if spec.num_hidden() == 0 {
            HessianSource::AnalyticLogistic
        } else {
            HessianSource::FiniteDifference
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub kl_direction: KlDirection,
}

fn default_dir() -> PathBuf {
    PathBuf::from("famr-out")
}
fn default_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_every")]
    pub trace_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            trace_every: default_every(),
        }
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
}

/// A parsed and validated configuration plus its canonical hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let start = e.span().map_or(0, |s| s.start);
            let start = unknown_key_offset(text, start, e.message()).unwrap_or(start);
            let (line, col) = line_col(text, start);
            CliError::Config(format!("{origin}:{line}:{col}: {}", e.message()))
        })?;
        config.validate(text, origin)?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            *self.dataset.seed_mut() = seed;
            self.train.seed = seed;
            self.forget.seed = seed;
            self.theory.probe_seed = seed;
        }
        if let Some(grid) = &overrides.lambda_grid {
            self.theory.lambda_grid = grid.clone();
        }
        if let Some(out) = &overrides.out {
            self.output.dir = out.clone();
        }
    }

    /// Sha-256 of the canonical JSON form, defaults included. The output
    /// directory is excluded so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let mut content = self.clone();
        content.output.dir = PathBuf::new();
        let canonical = serde_json::to_vec(&content).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    fn validate(&self, text: &str, origin: &str) -> Result<(), CliError> {
        let fail = |section: &str, key: &str, msg: String| {
            let line = locate(text, section, key).unwrap_or(1);
            Err(CliError::Config(format!("{origin}:{line}: {msg}")))
        };
        let classes = self.dataset.classes();
        if self.model.num_classes() != classes {
            return fail(
                "model",
                "layer_widths",
                format!(
                    "model has {} outputs but the dataset has {classes} classes",
                    self.model.num_classes()
                ),
            );
        }
        if self.model.input_dim() != self.dataset.dim() {
            return fail(
                "model",
                "layer_widths",
                format!(
                    "model input width {} does not match dataset dimension {}",
                    self.model.input_dim(),
                    self.dataset.dim()
                ),
            );
        }
        if let Err(e) = self.train.validate() {
            return fail("train", "lr", e.to_string());
        }
        match &self.forget.select {
            ForgetSpec::Class { class_id } if *class_id >= classes => {
                return fail("forget.select", "class_id", format!("class_id {class_id} out of range for {classes} classes"));
            }
            ForgetSpec::Style { .. } if !matches!(self.dataset, DatasetConfig::Styled { .. }) => {
                return fail("forget.select", "kind", "style forgetting needs the styled generator".into());
            }
            _ => {}
        }
        let f = &self.forget;
        if let Err(e) = famr::LossWeights::new(f.alpha, f.beta) {
            return fail("forget", "alpha", e.to_string());
        }
        if f.beta > 0.0 && self.model.phi_layer_index().is_none() {
            return fail("forget", "beta", "style weight beta > 0 needs model.phi_layer_index".into());
        }
        if !(f.lambda > 0.0 && f.lambda.is_finite()) {
            return fail("forget", "lambda", format!("lambda must be positive, got {}", f.lambda));
        }
        if !(f.eta > 0.0 && f.eta.is_finite()) {
            return fail("forget", "eta", format!("eta must be positive, got {}", f.eta));
        }
        if f.batch_size == BatchSize::Size(0) {
            return fail("forget", "batch_size", "batch_size must be positive".into());
        }
        if self.output.trace_every == 0 {
            return fail("output", "trace_every", "trace_every must be at least 1".into());
        }
        validate_grid(&self.theory.lambda_grid).or_else(|msg| fail("theory", "lambda_grid", msg))?;
        if let Some(d) = self.theory.damping {
            if !(d >= 0.0 && d.is_finite()) {
                return fail("theory", "damping", format!("damping must be nonnegative, got {d}"));
            }
        }
        Ok(())
    }

    /// Errors when the dense Hessian guard would be exceeded.
    pub fn check_hessian_guard(&self) -> Result<(), CliError> {
        let count = self.model.param_count();
        if count > MAX_HESSIAN_PARAMS {
            return Err(CliError::Config(format!(
                "model has {count} parameters; dense Hessians are limited to {MAX_HESSIAN_PARAMS}, use a smaller model"
            )));
        }
        Ok(())
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<(), String> {
    if grid.is_empty() {
        return Err("lambda grid is empty".into());
    }
    if let Some(bad) = grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(format!("lambda grid values must be positive, got {bad}"));
    }
    Ok(())
}

/// Parses a comma-separated list of positive reals.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let grid = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("--lambda-grid: cannot parse {:?}", s.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    validate_grid(&grid).map_err(|m| CliError::Config(format!("--lambda-grid: {m}")))?;
    Ok(grid)
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: cannot read config: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_toml(&text, &path.display().to_string())?;
    config.apply(overrides);
    let hash = config.hash();
    Ok(LoadedConfig { config, hash })
}

/// Tagged tables report unknown keys at the table header; this finds the
/// key itself at or after `from`.
fn unknown_key_offset(text: &str, from: usize, message: &str) -> Option<usize> {
    let key = message.strip_prefix("unknown field `")?.split('`').next()?;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if offset >= from
            && trimmed
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        {
            return Some(offset + line.len() - trimmed.len());
        }
        offset += line.len();
    }
    None
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// 1-based line of `key = …` inside `[section]`, also matching dotted
/// and inline-table spellings.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section && fallback.is_none() {
                fallback = Some(i + 1);
            }
            continue;
        }
        let assigns = |k: &str| {
            line.strip_prefix(k)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        };
        let dotted = section
            .strip_prefix(&format!("{current}."))
            .map(|sub| format!("{sub}.{key}"));
        let inline = section.strip_prefix(&format!("{current}.")).map(|sub| sub.to_string());
        if (current == section && assigns(key))
            || dotted.as_deref().is_some_and(assigns)
            || inline.as_deref().is_some_and(|sub| assigns(sub) && line.contains(key))
        {
            return Some(i + 1);
        }
    }
    fallback
}
