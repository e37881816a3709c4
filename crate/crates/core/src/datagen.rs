//! Seeded synthetic datasets and forget-set selection.
//!
//! Class means are random directions on the unit sphere drawn from a
//! ChaCha8 stream; samples are isotropic Gaussians of standard deviation
//! `spread` around them, emitted class by class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_finite, FamrError, Result};
use crate::format::fmt_f64;
use crate::linalg;
use crate::nn::Sample;

/// Minimum pairwise distance accepted between class (or style) centers.
const MIN_CENTER_SEPARATION: f64 = 0.5;
const CENTER_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    style_tags: Option<Vec<u32>>,
    num_classes: usize,
    /// Generator name, arguments, and seed, written into the text header.
    provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        style_tags: Option<Vec<u32>>,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() || style_tags.as_ref().is_some_and(|t| t.len() != labels.len()) {
            return Err(FamrError::InvalidArgument(
                "inputs, labels and style tags must have equal lengths".into(),
            ));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(FamrError::InvalidArgument("inputs have inconsistent dimensions".into()));
            }
        }
        for x in &inputs {
            check_finite("dataset input", x)?;
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(FamrError::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            style_tags,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn style_tags(&self) -> Option<&[u32]> {
        self.style_tags.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.inputs
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| Sample::labeled(x.clone(), y))
            .collect()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            style_tags: self
                .style_tags
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        }
    }

    /// Columnar text form: a `#` header with generator parameters, a
    /// `# d=.. C=..` line, a column header, then one row per sample.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = format!("# famr-dataset-v1 {}\n# d={} C={}\n", self.provenance, d, self.num_classes);
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        if self.style_tags.is_some() {
            header.push("style_tag".into());
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for (i, x) in self.inputs.iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
            row.push(self.labels[i].to_string());
            if let Some(tags) = &self.style_tags {
                row.push(tags[i].to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| FamrError::Format(format!("dataset: {msg}"));
        let mut lines = text.lines();
        let provenance = lines
            .next()
            .and_then(|l| l.strip_prefix("# famr-dataset-v1 "))
            .ok_or_else(|| bad("missing famr-dataset-v1 header".into()))?
            .to_string();
        let dims = lines.next().ok_or_else(|| bad("missing dimension line".into()))?;
        let mut d = None;
        let mut c = None;
        for field in dims.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("d", v)) => d = v.parse::<usize>().ok(),
                Some(("C", v)) => c = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (d, c) = d.zip(c).ok_or_else(|| bad(format!("malformed dimension line {dims:?}")))?;
        let header = lines.next().ok_or_else(|| bad("missing column header".into()))?;
        let has_tags = header.ends_with(",style_tag");
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut tags = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 + usize::from(has_tags) {
                return Err(bad(format!("row {} has {} fields", n + 1, fields.len())));
            }
            let x = fields[..d]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", n + 1))))
                .collect::<Result<Vec<_>>>()?;
            inputs.push(x);
            labels.push(fields[d].parse().map_err(|e| bad(format!("row {}: {e}", n + 1)))?);
            if has_tags {
                tags.push(fields[d + 1].parse().map_err(|e| bad(format!("row {}: {e}", n + 1)))?);
            }
        }
        Dataset::new(inputs, labels, has_tags.then_some(tags), c, provenance)
    }

    /// SHA-256 of the text form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let n = linalg::norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(linalg::distance(&points[i], &points[j]));
        }
    }
    best
}

/// `count` unit vectors, redrawn until they are pairwise separated. Keeps the
/// best-separated draw if the threshold is never met.
fn separated_centers(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..CENTER_ATTEMPTS {
        let centers: Vec<Vec<f64>> = (0..count).map(|_| random_unit(rng, d)).collect();
        let sep = min_pairwise_distance(&centers);
        if sep >= MIN_CENTER_SEPARATION {
            return centers;
        }
        if best.as_ref().is_none_or(|(s, _)| sep > *s) {
            best = Some((sep, centers));
        }
    }
    best.expect("at least one attempt").1
}

/// `classes` isotropic Gaussian clusters around seeded unit-sphere means.
pub fn gen_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class < 1 || dim < 2 {
        return Err(FamrError::InvalidArgument(format!(
            "gen_blobs needs classes >= 2, per_class >= 1, dim >= 2 (got {classes}, {per_class}, {dim})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(FamrError::InvalidArgument(format!("spread must be nonnegative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = separated_centers(&mut rng, classes, dim);
    let mut inputs = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let x = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spread * z
                })
                .collect();
            inputs.push(x);
            labels.push(c);
        }
    }
    Dataset::new(
        inputs,
        labels,
        None,
        classes,
        format!("generator=blobs classes={classes} per_class={per_class} dim={dim} spread={spread} seed={seed}"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyledArgs {
    pub classes: usize,
    pub per_class: usize,
    pub d_content: usize,
    pub d_style: usize,
    pub styles: usize,
    /// Norm of each style pattern; zero removes the style block's signal entirely.
    pub style_amplitude: f64,
    pub spread: f64,
    pub seed: u64,
}

/// Content block from [`gen_blobs`] concatenated with a style block that
/// depends only on the style group. Sample `i` of each class gets style
/// `i mod styles`, so styles are balanced within every class.
pub fn gen_styled(args: &StyledArgs) -> Result<Dataset> {
    if args.styles < 2 || args.d_style < 2 {
        return Err(FamrError::InvalidArgument(format!(
            "gen_styled needs styles >= 2 and d_style >= 2 (got {}, {})",
            args.styles, args.d_style
        )));
    }
    if !(args.style_amplitude >= 0.0 && args.style_amplitude.is_finite()) {
        return Err(FamrError::InvalidArgument("style_amplitude must be nonnegative".into()));
    }
    let content = gen_blobs(args.classes, args.per_class, args.d_content, args.spread, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(2);
    let patterns = separated_centers(&mut rng, args.styles, args.d_style);

    let mut inputs = Vec::with_capacity(content.len());
    let mut tags = Vec::with_capacity(content.len());
    for (i, x) in content.inputs().iter().enumerate() {
        let tag = i % args.per_class % args.styles;
        let mut row = x.clone();
        row.extend(patterns[tag].iter().map(|&p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            args.style_amplitude * (p + args.spread * z)
        }));
        inputs.push(row);
        tags.push(tag as u32);
    }
    Dataset::new(
        inputs,
        content.labels().to_vec(),
        Some(tags),
        args.classes,
        format!(
            "generator=styled classes={} per_class={} d_content={} d_style={} styles={} style_amplitude={} spread={} seed={}",
            args.classes, args.per_class, args.d_content, args.d_style, args.styles, args.style_amplitude, args.spread, args.seed
        ),
    )
}

/// Which rows form the forget set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForgetSpec {
    Samples { sample_indices: Vec<usize> },
    Class { class_id: usize },
    Style { style_tag: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgetSplit {
    pub forget: Dataset,
    pub retain: Dataset,
    /// Row indices of the forget set in the original dataset.
    pub forget_indices: Vec<usize>,
}

/// Partitions `data` into forget and retain sets, preserving row order.
pub fn split_forget(data: &Dataset, spec: &ForgetSpec) -> Result<ForgetSplit> {
    let n = data.len();
    let mut in_forget = vec![false; n];
    match spec {
        ForgetSpec::Samples { sample_indices } => {
            for &i in sample_indices {
                if i >= n {
                    return Err(FamrError::InvalidArgument(format!(
                        "forget index {i} out of range for {n} samples"
                    )));
                }
                in_forget[i] = true;
            }
        }
        ForgetSpec::Class { class_id } => {
            if *class_id >= data.num_classes() {
                return Err(FamrError::InvalidArgument(format!(
                    "class_id {class_id} out of range for {} classes",
                    data.num_classes()
                )));
            }
            for (flag, &y) in in_forget.iter_mut().zip(data.labels()) {
                *flag = y == *class_id;
            }
        }
        ForgetSpec::Style { style_tag } => {
            let tags = data
                .style_tags()
                .ok_or_else(|| FamrError::InvalidArgument("dataset has no style tags".into()))?;
            for (flag, &t) in in_forget.iter_mut().zip(tags) {
                *flag = t == *style_tag;
            }
        }
    }
    let forget_indices: Vec<usize> = (0..n).filter(|&i| in_forget[i]).collect();
    let retain_indices: Vec<usize> = (0..n).filter(|&i| !in_forget[i]).collect();
    if forget_indices.is_empty() {
        return Err(FamrError::InvalidArgument("forget set is empty".into()));
    }
    if retain_indices.is_empty() {
        return Err(FamrError::InvalidArgument("forget set covers the whole dataset".into()));
    }
    Ok(ForgetSplit {
        forget: data.subset(&forget_indices),
        retain: data.subset(&retain_indices),
        forget_indices,
    })
}

/// `count` rows drawn uniformly with replacement, seeded.
pub fn draw_inputs(data: &Dataset, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if data.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| data.inputs()[rng.random_range(0..data.len())].clone())
        .collect()
}
