use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, softmax, Activation, Mlp, OutputHead};
use crate::policy::AgentPolicy;
use crate::world::AgentAction;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stochastic policy `o_i -> [mean | log std | comm logits]`: a diagonal
/// Gaussian on physical units and a categorical over comm symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub net: Mlp,
    pub physical_dim: usize,
    pub comm_dim: usize,
    pub label: String,
}

/// A drawn action in the policy's own coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySample {
    /// Unclamped Gaussian draw.
    pub physical: Vec<f64>,
    /// Chosen comm symbol.
    pub symbol: Option<usize>,
}

impl PolicySample {
    /// Environment action: clamped force and a one-hot comm vector.
    pub fn to_action(&self, comm_dim: usize) -> AgentAction {
        let physical = self.physical.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let mut comm = vec![0.0; comm_dim];
        if let Some(k) = self.symbol {
            comm[k] = 1.0;
        }
        AgentAction::new(physical, comm)
    }
}

struct Params {
    mean: Vec<f64>,
    /// Clamped log standard deviations.
    log_std: Vec<f64>,
    /// Whether each raw log-std lies inside the clamp range.
    log_std_free: Vec<bool>,
    logits: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        physical_dim: usize,
        comm_dim: usize,
        hidden: usize,
        label: impl Into<String>,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::init_uniform(
            &[obs_dim, hidden, hidden, 2 * physical_dim + comm_dim],
            Activation::Relu,
            OutputHead::Linear,
            rng,
        )?;
        Self::from_net(net, physical_dim, comm_dim, label)
    }

    pub fn from_net(net: Mlp, physical_dim: usize, comm_dim: usize, label: impl Into<String>) -> Result<Self> {
        if net.output_dim() != 2 * physical_dim + comm_dim {
            return Err(Error::shape(
                "stochastic policy output",
                2 * physical_dim + comm_dim,
                net.output_dim(),
            ));
        }
        Ok(Self {
            net,
            physical_dim,
            comm_dim,
            label: label.into(),
        })
    }

    fn params(&self, out: &[f64]) -> Params {
        let p = self.physical_dim;
        let raw = &out[p..2 * p];
        Params {
            mean: out[..p].to_vec(),
            log_std: raw.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
            log_std_free: raw.iter().map(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(v)).collect(),
            logits: out[2 * p..].to_vec(),
        }
    }

    fn log_prob_of(&self, params: &Params, sample: &PolicySample) -> f64 {
        let mut lp = 0.0;
        for ((a, m), s) in sample.physical.iter().zip(&params.mean).zip(&params.log_std) {
            let z = (a - m) / s.exp();
            lp += -0.5 * (LN_2PI + 2.0 * s + z * z);
        }
        if let Some(k) = sample.symbol {
            lp += log_softmax(&params.logits)[k];
        }
        lp
    }

    fn check(&self, sample: &PolicySample) -> Result<()> {
        if sample.physical.len() != self.physical_dim {
            return Err(Error::shape("physical sample", self.physical_dim, sample.physical.len()));
        }
        match sample.symbol {
            Some(k) if k >= self.comm_dim => Err(Error::shape("comm symbol", self.comm_dim, k)),
            None if self.comm_dim > 0 => Err(Error::InvalidArgument("sample lacks a comm symbol".into())),
            _ => Ok(()),
        }
    }

    /// Draws an action and returns its exact log-density.
    pub fn sample_and_logprob<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(PolicySample, f64)> {
        let out = self.net.forward(obs)?;
        let params = self.params(&out);
        let physical = params
            .mean
            .iter()
            .zip(&params.log_std)
            .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let symbol = if self.comm_dim > 0 {
            let probs = softmax(&params.logits, 1.0);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.comm_dim - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = i;
                    break;
                }
            }
            Some(k)
        } else {
            None
        };
        let sample = PolicySample { physical, symbol };
        let lp = self.log_prob_of(&params, &sample);
        Ok((sample, lp))
    }

    pub fn log_prob(&self, obs: &[f64], sample: &PolicySample) -> Result<f64> {
        self.check(sample)?;
        let out = self.net.forward(obs)?;
        Ok(self.log_prob_of(&self.params(&out), sample))
    }

    /// Log-density and its gradient with respect to every parameter.
    pub fn log_prob_gradient(&self, obs: &[f64], sample: &PolicySample) -> Result<(f64, Vec<f64>)> {
        self.check(sample)?;
        let out = self.net.forward(obs)?;
        let params = self.params(&out);
        let lp = self.log_prob_of(&params, sample);
        let p = self.physical_dim;
        let mut upstream = vec![0.0; out.len()];
        for c in 0..p {
            let var = (2.0 * params.log_std[c]).exp();
            let e = sample.physical[c] - params.mean[c];
            upstream[c] = e / var;
            if params.log_std_free[c] {
                upstream[p + c] = e * e / var - 1.0;
            }
        }
        if let Some(k) = sample.symbol {
            let probs = softmax(&params.logits, 1.0);
            for (c, q) in probs.iter().enumerate() {
                upstream[2 * p + c] = if c == k { 1.0 } else { 0.0 } - q;
            }
        }
        let (grads, _) = self.net.gradient(obs, &upstream)?;
        Ok((lp, grads))
    }

    /// Noise-free action: clamped mean and comm probabilities.
    pub fn mean_action(&self, obs: &[f64]) -> Result<AgentAction> {
        let out = self.net.forward(obs)?;
        let params = self.params(&out);
        let physical = params.mean.iter().map(|m| m.clamp(-1.0, 1.0)).collect();
        let comm = if self.comm_dim > 0 {
            softmax(&params.logits, 1.0)
        } else {
            Vec::new()
        };
        Ok(AgentAction::new(physical, comm))
    }
}

impl AgentPolicy for StochasticPolicy {
    fn act(&self, _variant: usize, obs: &[f64], _rng: &mut dyn RngCore) -> Result<AgentAction> {
        self.mean_action(obs)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}
