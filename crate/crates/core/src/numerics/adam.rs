use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with bias correction. Moments share the flat layout of the
/// parameters they optimise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update in place. On a non-finite gradient nothing is
    /// modified and the offending flat index is reported.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> std::result::Result<(), AdamReject> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(AdamReject::Shape {
                expected: self.first_moment.len(),
                got: grads.len(),
            });
        }
        if !(self.lr > 0.0) {
            return Err(AdamReject::LearningRate);
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(AdamReject::NonFinite { index });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdamReject {
    Shape { expected: usize, got: usize },
    LearningRate,
    NonFinite { index: usize },
}

impl AdamReject {
    pub(crate) fn into_error(self, layer_of: impl Fn(usize) -> usize) -> Error {
        match self {
            AdamReject::Shape { expected, got } => Error::shape("Adam gradient", expected, got),
            AdamReject::LearningRate => Error::InvalidArgument("Adam learning rate must be > 0".into()),
            AdamReject::NonFinite { index } => Error::NonFiniteGradient { layer: layer_of(index) },
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::shape("soft update", target.len(), online.len()));
    }
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Rescales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping. A non-positive `max_norm` leaves `grads` untouched.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
