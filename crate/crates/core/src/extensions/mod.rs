//! Opponent-policy inference and policy ensembles.

mod ensemble;
mod opponent;

pub use ensemble::EnsembleState;
pub use opponent::OpponentModel;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::trainer::{bootstrap_targets, AgentNets, Batch, Layout};

/// Bootstrap targets where every other agent's next action comes from agent
/// `agent`'s target opponent models instead of the true target actors.
///
/// `models[j]` must be `Some` for every `j != agent`.
pub fn approx_critic_target(
    layout: &Layout,
    nets: &AgentNets,
    agent: usize,
    batch: &Batch,
    models: &[Option<OpponentModel>],
    temperature: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if models.len() != layout.n_agents() {
        return Err(Error::shape("opponent models", layout.n_agents(), models.len()));
    }
    let mut next = Array2::zeros((batch.len(), layout.act_total()));
    for j in 0..layout.n_agents() {
        let obs = batch.obs_next(layout, j);
        let a = if j == agent {
            nets.target_actors[0].deterministic_batch(obs, temperature)?
        } else {
            let model = models[j]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("missing opponent model for agent {j}")))?;
            model.target.deterministic_batch(obs, temperature)?
        };
        let off = layout.act_offset(j);
        next.slice_mut(s![.., off..off + layout.act_dims[j]]).assign(&a);
    }
    bootstrap_targets(layout, nets, agent, batch, next.view(), gamma)
}
