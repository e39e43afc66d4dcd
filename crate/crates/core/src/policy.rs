//! Execution-time policies: one per agent, reading only that agent's observation.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numerics::{gumbel_noise, softmax};
use crate::trainer::ActorNet;
use crate::world::{AgentAction, AgentSpec};

pub trait AgentPolicy: Send + Sync {
    /// Number of sub-policies an episode can select from.
    fn variants(&self) -> usize {
        1
    }

    fn act(&self, variant: usize, obs: &[f64], rng: &mut dyn RngCore) -> Result<AgentAction>;

    /// Short provenance label for reports.
    fn label(&self) -> String;
}

/// Noise-free snapshot of trained deterministic actors.
#[derive(Clone, Debug)]
pub struct ActorPolicy {
    pub actors: Vec<ActorNet>,
    pub temperature: f64,
    pub label: String,
}

impl ActorPolicy {
    pub fn new(actors: Vec<ActorNet>, temperature: f64, label: impl Into<String>) -> Result<Self> {
        if actors.is_empty() {
            return Err(Error::InvalidArgument("actor policy needs at least one actor".into()));
        }
        Ok(Self {
            actors,
            temperature,
            label: label.into(),
        })
    }
}

impl AgentPolicy for ActorPolicy {
    fn variants(&self) -> usize {
        self.actors.len()
    }

    fn act(&self, variant: usize, obs: &[f64], _rng: &mut dyn RngCore) -> Result<AgentAction> {
        self.actors[variant % self.actors.len()].deterministic(obs, self.temperature)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Uniform force in `[-1, 1]^2` and a random simplex point on comm.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    pub physical_dim: usize,
    pub comm_dim: usize,
}

impl RandomPolicy {
    pub fn for_agent(spec: &AgentSpec) -> Self {
        Self {
            physical_dim: spec.physical_dim,
            comm_dim: spec.comm_dim,
        }
    }
}

impl AgentPolicy for RandomPolicy {
    fn act(&self, _variant: usize, _obs: &[f64], rng: &mut dyn RngCore) -> Result<AgentAction> {
        let physical = (0..self.physical_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let comm = if self.comm_dim > 0 {
            softmax(&gumbel_noise(self.comm_dim, rng), 1.0)
        } else {
            Vec::new()
        };
        Ok(AgentAction::new(physical, comm))
    }

    fn label(&self) -> String {
        "random".into()
    }
}

/// A deterministic hand-written policy.
pub struct ScriptedPolicy<F> {
    f: F,
    label: String,
}

impl<F> ScriptedPolicy<F>
where
    F: Fn(&[f64]) -> AgentAction + Send + Sync,
{
    pub fn new(label: impl Into<String>, f: F) -> Self {
        Self { f, label: label.into() }
    }
}

impl<F> AgentPolicy for ScriptedPolicy<F>
where
    F: Fn(&[f64]) -> AgentAction + Send + Sync,
{
    fn act(&self, _variant: usize, obs: &[f64], _rng: &mut dyn RngCore) -> Result<AgentAction> {
        Ok((self.f)(obs))
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Proportional-derivative steering command towards a relative target.
pub fn steer(rel: [f64; 2], vel: [f64; 2]) -> Vec<f64> {
    const KP: f64 = 4.0;
    const KD: f64 = 1.5;
    vec![
        (KP * rel[0] - KD * vel[0]).clamp(-1.0, 1.0),
        (KP * rel[1] - KD * vel[1]).clamp(-1.0, 1.0),
    ]
}
