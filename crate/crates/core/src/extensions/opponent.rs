use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, softmax, AdamState};
use crate::trainer::ActorNet;

/// Agent i's online approximation of agent j's policy.
///
/// The network shares the actor architecture: a tanh mean on physical
/// units (Gaussian with fixed `sigma`) and categorical logits on comm units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpponentModel {
    pub net: ActorNet,
    pub target: ActorNet,
    pub opt: AdamState,
    /// Entropy weight.
    pub lambda: f64,
    /// Fixed standard deviation of the physical slice.
    pub sigma: f64,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl OpponentModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        physical_dim: usize,
        comm_dim: usize,
        hidden: usize,
        lambda: f64,
        sigma: f64,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = ActorNet::new(obs_dim, physical_dim, comm_dim, hidden, rng)?;
        Self::from_actor(net, lambda, sigma, lr)
    }

    pub fn from_actor(net: ActorNet, lambda: f64, sigma: f64, lr: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::InvalidArgument("entropy weight must be non-negative".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument("model sigma must be positive".into()));
        }
        Ok(Self {
            opt: AdamState::new(net.net.num_params(), lr),
            target: net.clone(),
            net,
            lambda,
            sigma,
        })
    }

    /// `mean[-log q(a|o) - lambda * H(q(.|o))]` and its parameter gradient.
    pub fn loss_and_gradient(
        &self,
        obs: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = obs.nrows();
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        if actions.ncols() != self.net.action_dim() || actions.nrows() != n {
            return Err(Error::shape("opponent-model actions", self.net.action_dim(), actions.ncols()));
        }
        let tape = self.net.net.forward_tape(obs)?;
        let out = tape.output();
        let p = self.net.physical_dim;
        let var = self.sigma * self.sigma;
        let mut upstream = Array2::zeros(out.dim());
        let mut loss = 0.0;
        let nf = n as f64;
        for r in 0..n {
            for c in 0..p {
                let e = actions[[r, c]] - out[[r, c]];
                loss += (e * e / (2.0 * var) + self.sigma.ln() + HALF_LN_2PI) / nf;
                upstream[[r, c]] = -e / var / nf;
            }
            if self.net.comm_dim > 0 {
                let logits = out.slice(s![r, p..]).to_vec();
                let target = actions.slice(s![r, p..]);
                let logp = log_softmax(&logits);
                let prob: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let mass: f64 = target.sum();
                let entropy: f64 = -prob.iter().zip(&logp).map(|(q, l)| if *q > 0.0 { q * l } else { 0.0 }).sum::<f64>();
                let nll: f64 = -target.iter().zip(&logp).map(|(a, l)| if *a != 0.0 { a * l } else { 0.0 }).sum::<f64>();
                loss += (nll - self.lambda * entropy) / nf;
                for (c, (q, l)) in prob.iter().zip(&logp).enumerate() {
                    let ent_grad = if *q > 0.0 { q * (l + entropy) } else { 0.0 };
                    upstream[[r, p + c]] = (q * mass - target[c] + self.lambda * ent_grad) / nf;
                }
            }
        }
        let (grads, _) = self.net.net.backward(&tape, upstream.view())?;
        Ok((loss, grads))
    }

    /// One Adam step on the latest `(o_j, a_j)` samples; returns the pre-step loss.
    pub fn update(&mut self, obs: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradient(obs, actions)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("opponent-model loss".into()));
        }
        self.net.net.adam_step(&mut self.opt, &grads)?;
        Ok(loss)
    }

    pub fn soft_update_target(&mut self, tau: f64) -> Result<()> {
        self.target.net.soft_update_from(&self.net.net, tau)
    }

    /// Mean entropy of the categorical slice over a batch of observations.
    pub fn mean_entropy(&self, obs: ArrayView2<'_, f64>) -> Result<f64> {
        let out = self.net.net.forward_batch(obs)?;
        let p = self.net.physical_dim;
        let mut total = 0.0;
        for row in out.rows() {
            let logp = log_softmax(&row.slice(s![p..]).to_vec());
            total -= logp.iter().map(|l| l.exp() * l).sum::<f64>();
        }
        Ok(total / out.nrows() as f64)
    }

    /// Mean `KL(true || model)` over a batch. The true policy is given by its
    /// physical means and comm probabilities, with the same fixed `sigma`.
    pub fn kl_from(&self, obs: ArrayView2<'_, f64>, true_policy: ArrayView2<'_, f64>) -> Result<f64> {
        let out = self.net.net.forward_batch(obs)?;
        if true_policy.dim() != out.dim() {
            return Err(Error::shape("true policy batch", out.len(), true_policy.len()));
        }
        let p = self.net.physical_dim;
        let var = self.sigma * self.sigma;
        let mut total = 0.0;
        for (m, t) in out.rows().into_iter().zip(true_policy.rows()) {
            for c in 0..p {
                total += (t[c] - m[c]).powi(2) / (2.0 * var);
            }
            if self.net.comm_dim > 0 {
                let logq = log_softmax(&m.slice(s![p..]).to_vec());
                for (c, &pt) in t.slice(s![p..]).iter().enumerate() {
                    if pt > 0.0 {
                        total += pt * (pt.ln() - logq[c]);
                    }
                }
            }
        }
        Ok(total / out.nrows() as f64)
    }

    /// Probability vector of the model's comm distribution for one observation.
    pub fn comm_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.net.forward(obs)?;
        Ok(softmax(&out[self.net.physical_dim..], 1.0))
    }
}
