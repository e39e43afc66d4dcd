use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the probability simplex produced by a relaxed categorical draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexSample {
    pub values: Vec<f64>,
    pub temperature: f64,
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Vector-Jacobian product of `softmax(logits / T)` given its output `y`.
pub fn softmax_backward(y: &[f64], upstream: &[f64], temperature: f64) -> Vec<f64> {
    let dot: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
    y.iter()
        .zip(upstream)
        .map(|(yk, uk)| yk * (uk - dot) / temperature)
        .collect()
}

/// Draws `g_k = -ln(-ln u_k)` for `u_k ~ U(0, 1)`.
pub fn gumbel_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Relaxed categorical sample `softmax((logits + g) / T)`.
pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> Result<SimplexSample> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be > 0")));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("Gumbel-Softmax logits".into()));
    }
    let noise = gumbel_noise(logits.len(), rng);
    let perturbed: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
    Ok(SimplexSample {
        values: softmax(&perturbed, temperature),
        temperature,
    })
}

/// I.i.d. zero-mean Gaussian vector with standard deviation `sigma`.
pub fn gaussian_noise<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Index of the largest entry (first on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
