use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::ScenarioKind;

/// Learning rule of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Centralised critic over all observations and actions.
    Maddpg,
    /// Decentralised critic over the agent's own observation and action.
    Ddpg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpponentConfig {
    /// Entropy weight of the policy-inference loss.
    pub lambda: f64,
    /// Fixed standard deviation of modelled physical actions.
    pub sigma: f64,
}

impl Default for OpponentConfig {
    fn default() -> Self {
        Self { lambda: 0.001, sigma: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub k: usize,
    /// Agents of one team share the sampled sub-policy index.
    pub team_tied: bool,
}

impl EnsembleConfig {
    pub fn for_scenario(kind: ScenarioKind) -> Self {
        let k = match kind {
            ScenarioKind::PredatorPrey => 2,
            _ => 3,
        };
        Self { k, team_tied: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    /// Environment samples between update rounds.
    pub update_every: usize,
    pub batch_size: usize,
    pub episodes: usize,
    pub hidden_units: usize,
    pub seed: u64,
    /// Per-agent learning rule; empty means every agent uses MADDPG.
    pub modes: Vec<Mode>,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Fraction of training over which exploration noise is annealed.
    pub noise_anneal_fraction: f64,
    pub gumbel_temperature: f64,
    pub straight_through: bool,
    /// Agents emit one-hot comm symbols while acting.
    pub hard_comm: bool,
    /// Weight of the mean squared actor output added to the policy loss.
    pub actor_output_penalty: f64,
    /// Global-norm bound on actor and critic gradients (0 = unclipped).
    pub grad_clip_norm: f64,
    /// Episodes between noise-free evaluations in the metrics stream (0 = never).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episodes between checkpoints (0 = only at the end).
    pub checkpoint_every: usize,
    pub opponent_models: Option<OpponentConfig>,
    pub ensemble: Option<EnsembleConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            tau: 0.01,
            gamma: 0.95,
            buffer_capacity: 1_000_000,
            update_every: 100,
            batch_size: 1024,
            episodes: 25_000,
            hidden_units: 64,
            seed: 0,
            modes: Vec::new(),
            noise_start: 0.3,
            noise_end: 0.0,
            noise_anneal_fraction: 0.6,
            gumbel_temperature: 1.0,
            straight_through: true,
            hard_comm: false,
            actor_output_penalty: 1e-3,
            grad_clip_norm: 0.5,
            eval_every: 0,
            eval_episodes: 100,
            checkpoint_every: 0,
            opponent_models: None,
            ensemble: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the scenario's reference network width. coop_comm
    /// uses a smaller step and keeps a little force noise to the end.
    pub fn for_scenario(kind: ScenarioKind) -> Self {
        let hidden_units = match kind {
            ScenarioKind::CoopNav | ScenarioKind::PredatorPrey => 128,
            _ => 64,
        };
        let base = Self {
            hidden_units,
            ..Self::default()
        };
        match kind {
            ScenarioKind::CoopComm => Self {
                lr: 0.005,
                noise_end: 0.05,
                ..base
            },
            _ => base,
        }
    }

    pub fn mode_of(&self, agent: usize) -> Mode {
        self.modes.get(agent).copied().unwrap_or(Mode::Maddpg)
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", "must lie in (0, 1]"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be positive"));
        }
        if self.update_every == 0 {
            return Err(Error::config("update_every", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.hidden_units == 0 {
            return Err(Error::config("hidden_units", "must be positive"));
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(Error::config("gumbel_temperature", "must be positive"));
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            return Err(Error::config("noise_start", "noise levels must be non-negative"));
        }
        if !(self.actor_output_penalty >= 0.0) {
            return Err(Error::config("actor_output_penalty", "must be non-negative"));
        }
        if !(self.grad_clip_norm >= 0.0) {
            return Err(Error::config("grad_clip_norm", "must be non-negative (0 disables clipping)"));
        }
        if !(0.0..=1.0).contains(&self.noise_anneal_fraction) {
            return Err(Error::config("noise_anneal_fraction", "must lie in [0, 1]"));
        }
        if !self.modes.is_empty() && self.modes.len() != n_agents {
            return Err(Error::config(
                "modes",
                format!("expected {n_agents} entries, got {}", self.modes.len()),
            ));
        }
        if let Some(op) = &self.opponent_models {
            if op.lambda < 0.0 {
                return Err(Error::config("opponent_models.lambda", "must be non-negative"));
            }
            if !(op.sigma > 0.0) {
                return Err(Error::config("opponent_models.sigma", "must be positive"));
            }
        }
        if let Some(e) = &self.ensemble {
            if e.k == 0 {
                return Err(Error::config("ensemble.k", "must be at least 1"));
            }
            if self.opponent_models.is_some() {
                return Err(Error::config(
                    "ensemble",
                    "ensembles cannot be combined with opponent models",
                ));
            }
        }
        Ok(())
    }

    /// Exploration standard deviation for `episode`, annealed linearly.
    pub fn noise_at(&self, episode: usize) -> f64 {
        let horizon = self.noise_anneal_fraction * self.episodes as f64;
        if horizon <= 0.0 {
            return self.noise_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }

    pub fn ensemble_k(&self) -> usize {
        self.ensemble.as_ref().map_or(1, |e| e.k)
    }
}
