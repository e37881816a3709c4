#![allow(dead_code)]

use famr::{Activation, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain nested-loop forward pass over the documented flat layout: per
/// layer a row-major `fan_out × fan_in` weight block followed by biases.
/// Returns the logits and every hidden layer's post-activation.
pub fn reference_forward(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let widths = spec.layer_widths();
    let mut a = x.to_vec();
    let mut hidden = Vec::new();
    let mut off = 0;
    for l in 0..widths.len() - 1 {
        let (fi, fo) = (widths[l], widths[l + 1]);
        let w = &theta[off..off + fi * fo];
        off += fi * fo;
        let b = if spec.use_bias() {
            let b = &theta[off..off + fo];
            off += fo;
            Some(b)
        } else {
            None
        };
        let mut z = vec![0.0; fo];
        for r in 0..fo {
            let mut s = b.map_or(0.0, |b| b[r]);
            for c in 0..fi {
                s += w[r * fi + c] * a[c];
            }
            z[r] = s;
        }
        if l + 2 < widths.len() {
            let act: Vec<f64> = z
                .iter()
                .map(|&v| match spec.activation() {
                    Activation::Tanh => v.tanh(),
                    Activation::Relu => v.max(0.0),
                })
                .collect();
            hidden.push(act.clone());
            a = act;
        } else {
            a = z;
        }
    }
    (a, hidden)
}

/// Smallest absolute pre-activation of any hidden unit, for kink avoidance.
pub fn min_abs_preactivation(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> f64 {
    let widths = spec.layer_widths();
    let mut a = x.to_vec();
    let mut off = 0;
    let mut best = f64::INFINITY;
    for l in 0..widths.len() - 2 {
        let (fi, fo) = (widths[l], widths[l + 1]);
        let mut z = vec![0.0; fo];
        for r in 0..fo {
            z[r] = (0..fi).map(|c| theta[off + r * fi + c] * a[c]).sum::<f64>();
        }
        off += fi * fo;
        if spec.use_bias() {
            for r in 0..fo {
                z[r] += theta[off + r];
            }
            off += fo;
        }
        best = z.iter().fold(best, |m, v| m.min(v.abs()));
        a = z
            .iter()
            .map(|&v| match spec.activation() {
                Activation::Tanh => v.tanh(),
                Activation::Relu => v.max(0.0),
            })
            .collect();
    }
    best
}

/// Central differences with step `h·(1 + |θᵢ|)`.
pub fn fd_gradient(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let step = h * (1.0 + theta[i].abs());
            t[i] = theta[i] + step;
            let plus = f(&t);
            t[i] = theta[i] - step;
            let minus = f(&t);
            t[i] = theta[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

/// A random small MLP spec with at least one hidden layer.
pub fn random_spec(rng: &mut ChaCha8Rng, activation: Activation) -> ModelSpec {
    let depth = rng.random_range(1..=2);
    let mut widths = vec![rng.random_range(2..=5)];
    for _ in 0..depth {
        widths.push(rng.random_range(2..=7));
    }
    widths.push(rng.random_range(2..=5));
    let phi = rng.random_range(0..depth);
    ModelSpec::new(widths, activation, Some(phi)).unwrap()
}

pub fn random_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let v = (0..spec.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    ParamVector::new(spec, v).unwrap()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
