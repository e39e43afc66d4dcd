//! Actor and critic networks and the per-agent MADDPG update rules.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, Layout};
use super::config::Mode;
use crate::error::{Error, Result};
use crate::numerics::{
    argmax, gaussian_noise, gumbel_noise, softmax, softmax_backward, Activation, AdamState,
    HeadKind, HeadSlice, Mlp, OutputHead, Tape,
};
use crate::world::AgentAction;

/// Deterministic policy `o_i -> [tanh force | comm logits]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorNet {
    pub net: Mlp,
    pub physical_dim: usize,
    pub comm_dim: usize,
    /// Emit one-hot comm symbols instead of simplex points.
    #[serde(default)]
    pub hard_comm: bool,
}

fn one_hot_argmax(values: &[f64]) -> Vec<f64> {
    let k = argmax(values);
    (0..values.len()).map(|c| if c == k { 1.0 } else { 0.0 }).collect()
}

fn actor_head(physical_dim: usize, comm_dim: usize) -> OutputHead {
    let mut slices = Vec::new();
    if physical_dim > 0 {
        slices.push(HeadSlice { len: physical_dim, kind: HeadKind::Tanh });
    }
    if comm_dim > 0 {
        slices.push(HeadSlice { len: comm_dim, kind: HeadKind::Linear });
    }
    OutputHead::PerSlice(slices)
}

/// A relaxed batch of actions together with what the backward pass needs.
pub struct RelaxedBatch {
    tape: Tape,
    /// Soft simplex values on the communication columns.
    soft: Array2<f64>,
    /// Actions fed to the critic (hard one-hot under straight-through).
    pub actions: Array2<f64>,
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        physical_dim: usize,
        comm_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::init_uniform(
            &[obs_dim, hidden, hidden, physical_dim + comm_dim],
            Activation::Relu,
            actor_head(physical_dim, comm_dim),
            rng,
        )?;
        Ok(Self {
            net,
            physical_dim,
            comm_dim,
            hard_comm: false,
        })
    }

    /// Wraps an existing network; its output width must equal the action width.
    pub fn from_net(net: Mlp, physical_dim: usize, comm_dim: usize) -> Result<Self> {
        if net.output_dim() != physical_dim + comm_dim {
            return Err(Error::shape("actor output", physical_dim + comm_dim, net.output_dim()));
        }
        Ok(Self {
            net,
            physical_dim,
            comm_dim,
            hard_comm: false,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.physical_dim + self.comm_dim
    }

    fn split(&self, out: Vec<f64>) -> AgentAction {
        AgentAction::new(out[..self.physical_dim].to_vec(), out[self.physical_dim..].to_vec())
    }

    pub fn with_hard_comm(mut self, hard: bool) -> Self {
        self.hard_comm = hard;
        self
    }

    fn comm_output(&self, logits: &[f64], temperature: f64) -> Vec<f64> {
        if self.hard_comm {
            one_hot_argmax(logits)
        } else {
            softmax(logits, temperature)
        }
    }

    /// Noise-free action: tanh force and `softmax(logits / T)` on comm (the
    /// most likely symbol under `hard_comm`).
    pub fn deterministic(&self, obs: &[f64], temperature: f64) -> Result<AgentAction> {
        let mut out = self.net.forward(obs)?;
        let p = self.physical_dim;
        if self.comm_dim > 0 {
            let comm = self.comm_output(&out[p..], temperature);
            out[p..].copy_from_slice(&comm);
        }
        Ok(self.split(out))
    }

    /// Exploratory action. Gaussian noise is added to the force and the
    /// result clamped to `[-1, 1]`; comm is a Gumbel-Softmax draw. With
    /// `sigma == 0` no randomness is consumed and the result equals
    /// [`ActorNet::deterministic`].
    pub fn explore<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        sigma: f64,
        temperature: f64,
        rng: &mut R,
    ) -> Result<AgentAction> {
        if sigma == 0.0 {
            return self.deterministic(obs, temperature);
        }
        let mut out = self.net.forward(obs)?;
        let p = self.physical_dim;
        let noise = gaussian_noise(p, sigma, rng);
        for (v, n) in out[..p].iter_mut().zip(noise) {
            *v = (*v + n).clamp(-1.0, 1.0);
        }
        if self.comm_dim > 0 {
            let g = gumbel_noise(self.comm_dim, rng);
            let perturbed: Vec<f64> = out[p..].iter().zip(&g).map(|(l, g)| l + g).collect();
            let comm = self.comm_output(&perturbed, temperature);
            out[p..].copy_from_slice(&comm);
        }
        Ok(self.split(out))
    }

    /// Deterministic actions for a batch of observations, one row each.
    pub fn deterministic_batch(&self, obs: ArrayView2<'_, f64>, temperature: f64) -> Result<Array2<f64>> {
        let mut out = self.net.forward_batch(obs)?;
        let p = self.physical_dim;
        if self.comm_dim > 0 {
            for mut row in out.rows_mut() {
                let slice = row.slice(s![p..]).to_vec();
                let comm = self.comm_output(&slice, temperature);
                row.slice_mut(s![p..]).assign(&ndarray::ArrayView1::from(&comm));
            }
        }
        Ok(out)
    }

    /// `weight * mean(z^2)` over the output layer before squashing (force
    /// pre-activations and comm logits) and its parameter gradient.
    pub fn output_penalty_gradient(&self, obs: ArrayView2<'_, f64>, weight: f64) -> Result<(f64, Vec<f64>)> {
        let tape = self.net.forward_tape(obs)?;
        let z = tape.pre_head();
        let scale = weight / z.len() as f64;
        let penalty = scale * z.iter().map(|v| v * v).sum::<f64>();
        let up = z.mapv(|v| 2.0 * scale * v);
        Ok((penalty, self.net.backward_pre_head(&tape, up.view())?.0))
    }

    /// Reparameterised actions for the policy-gradient step: noise-free force
    /// and a fresh Gumbel-Softmax sample on comm.
    pub fn relaxed_batch<R: Rng + ?Sized>(
        &self,
        obs: ArrayView2<'_, f64>,
        temperature: f64,
        straight_through: bool,
        rng: &mut R,
    ) -> Result<RelaxedBatch> {
        let tape = self.net.forward_tape(obs)?;
        let mut actions = tape.output().clone();
        let p = self.physical_dim;
        let mut soft = Array2::zeros((actions.nrows(), self.comm_dim));
        if self.comm_dim > 0 {
            for (r, mut row) in actions.rows_mut().into_iter().enumerate() {
                let g = gumbel_noise(self.comm_dim, rng);
                let perturbed: Vec<f64> = row.slice(s![p..]).iter().zip(&g).map(|(l, g)| l + g).collect();
                let y = softmax(&perturbed, temperature);
                soft.row_mut(r).assign(&ndarray::ArrayView1::from(&y));
                if straight_through {
                    let k = argmax(&y);
                    for (c, v) in row.slice_mut(s![p..]).iter_mut().enumerate() {
                        *v = if c == k { 1.0 } else { 0.0 };
                    }
                } else {
                    row.slice_mut(s![p..]).assign(&ndarray::ArrayView1::from(&y));
                }
            }
        }
        Ok(RelaxedBatch { tape, soft, actions })
    }

    /// Parameter gradient of `sum(upstream * actions)` for a relaxed batch.
    /// Straight-through draws pass the gradient through the soft sample.
    pub fn backward_relaxed(
        &self,
        relaxed: &RelaxedBatch,
        upstream: ArrayView2<'_, f64>,
        temperature: f64,
    ) -> Result<Vec<f64>> {
        let p = self.physical_dim;
        let mut up = upstream.to_owned();
        if self.comm_dim > 0 {
            for (r, mut row) in up.rows_mut().into_iter().enumerate() {
                let u = row.slice(s![p..]).to_vec();
                let y = relaxed.soft.row(r).to_vec();
                let d = softmax_backward(&y, &u, temperature);
                row.slice_mut(s![p..]).assign(&ndarray::ArrayView1::from(&d));
            }
        }
        Ok(self.net.backward(&relaxed.tape, up.view())?.0)
    }
}

/// Centralised (or decentralised, in DDPG mode) action-value network.
pub fn new_critic<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Mlp> {
    Mlp::init_uniform(&[input_dim, hidden, hidden, 1], Activation::Relu, OutputHead::Linear, rng)
}

pub fn critic_input_dim(layout: &Layout, mode: Mode, agent: usize) -> usize {
    match mode {
        Mode::Maddpg => layout.obs_total() + layout.act_total(),
        Mode::Ddpg => layout.obs_dims[agent] + layout.act_dims[agent],
    }
}

/// Critic input rows: `[x | a_1..a_N]` centrally, `[o_i | a_i]` for DDPG.
pub fn critic_input(
    layout: &Layout,
    mode: Mode,
    agent: usize,
    x: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
) -> Array2<f64> {
    match mode {
        Mode::Maddpg => ndarray::concatenate(Axis(1), &[x, actions]).expect("row counts agree"),
        Mode::Ddpg => {
            let o = layout.obs_offset(agent);
            let a = layout.act_offset(agent);
            ndarray::concatenate(
                Axis(1),
                &[
                    x.slice(s![.., o..o + layout.obs_dims[agent]]),
                    actions.slice(s![.., a..a + layout.act_dims[agent]]),
                ],
            )
            .expect("row counts agree")
        }
    }
}

/// Networks and optimizer state owned by one learning agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub mode: Mode,
    /// Sub-policies; exactly one unless the agent trains an ensemble.
    pub actors: Vec<ActorNet>,
    pub target_actors: Vec<ActorNet>,
    pub actor_opts: Vec<AdamState>,
    pub critic: Mlp,
    pub target_critic: Mlp,
    pub critic_opt: AdamState,
}

impl AgentNets {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        layout: &Layout,
        agent: usize,
        physical_dim: usize,
        comm_dim: usize,
        mode: Mode,
        hidden: usize,
        k: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut actors = Vec::with_capacity(k);
        for _ in 0..k {
            actors.push(ActorNet::new(layout.obs_dims[agent], physical_dim, comm_dim, hidden, rng)?);
        }
        let critic = new_critic(critic_input_dim(layout, mode, agent), hidden, rng)?;
        Ok(Self {
            mode,
            target_actors: actors.clone(),
            actor_opts: actors.iter().map(|a| AdamState::new(a.net.num_params(), lr)).collect(),
            actors,
            critic_opt: AdamState::new(critic.num_params(), lr),
            target_critic: critic.clone(),
            critic,
        })
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        for (t, a) in self.target_actors.iter_mut().zip(&self.actors) {
            t.net.soft_update_from(&a.net, tau)?;
        }
        self.target_critic.soft_update_from(&self.critic, tau)
    }
}

/// `y = r + gamma * (1 - terminal) * Q'(x', a')` for the given next actions.
pub fn bootstrap_targets(
    layout: &Layout,
    nets: &AgentNets,
    agent: usize,
    batch: &Batch,
    next_actions: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let input = critic_input(layout, nets.mode, agent, batch.x_next.view(), next_actions);
    let q = nets.target_critic.forward_batch(input.view())?;
    Ok((0..batch.len())
        .map(|r| {
            let reward = batch.rewards[[r, agent]];
            if batch.terminal[r] {
                reward
            } else {
                reward + gamma * q[[r, 0]]
            }
        })
        .collect())
}

/// One Adam step on `mean((Q(x, a) - y)^2)`; returns the pre-step loss.
pub fn critic_update(
    layout: &Layout,
    nets: &mut AgentNets,
    agent: usize,
    batch: &Batch,
    y: &[f64],
) -> Result<f64> {
    let (loss, grads) = critic_loss_and_gradient(layout, nets, agent, batch, y)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("critic loss of agent {agent}")));
    }
    nets.critic.adam_step(&mut nets.critic_opt, &grads)?;
    Ok(loss)
}

/// Mean squared TD error and its parameter gradient, with `y` held fixed.
pub fn critic_loss_and_gradient(
    layout: &Layout,
    nets: &AgentNets,
    agent: usize,
    batch: &Batch,
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if y.len() != batch.len() {
        return Err(Error::shape("critic targets", batch.len(), y.len()));
    }
    let input = critic_input(layout, nets.mode, agent, batch.x.view(), batch.actions.view());
    let tape = nets.critic.forward_tape(input.view())?;
    let q = tape.output();
    let n = batch.len() as f64;
    let mut upstream = Array2::zeros((batch.len(), 1));
    let mut loss = 0.0;
    for r in 0..batch.len() {
        let e = q[[r, 0]] - y[r];
        loss += e * e / n;
        upstream[[r, 0]] = 2.0 * e / n;
    }
    let (grads, _) = nets.critic.backward(&tape, upstream.view())?;
    Ok((loss, grads))
}

/// Policy-gradient ascent direction for sub-policy `k` of `agent` and the
/// objective `mean Q(x, a_1..mu_i(o_i)..a_N)`. The returned gradient is of
/// the loss `-objective`, ready for a minimising optimizer.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_gradient<R: Rng + ?Sized>(
    layout: &Layout,
    nets: &AgentNets,
    agent: usize,
    k: usize,
    batch: &Batch,
    temperature: f64,
    straight_through: bool,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let actor = &nets.actors[k];
    let relaxed = actor.relaxed_batch(batch.obs(layout, agent), temperature, straight_through, rng)?;
    let mut actions = batch.actions.clone();
    let off = layout.act_offset(agent);
    let width = layout.act_dims[agent];
    actions.slice_mut(s![.., off..off + width]).assign(&relaxed.actions);
    let input = critic_input(layout, nets.mode, agent, batch.x.view(), actions.view());
    let tape = nets.critic.forward_tape(input.view())?;
    let n = batch.len() as f64;
    let objective = tape.output().sum() / n;
    let up = Array2::from_elem((batch.len(), 1), -1.0 / n);
    let (_, d_input) = nets.critic.backward(&tape, up.view())?;
    let a_col = match nets.mode {
        Mode::Maddpg => layout.obs_total() + off,
        Mode::Ddpg => layout.obs_dims[agent],
    };
    let d_action = d_input.slice(s![.., a_col..a_col + width]);
    let grads = actor.backward_relaxed(&relaxed, d_action, temperature)?;
    Ok((objective, grads))
}

/// Applies one Adam step to sub-policy `k` with its gradient scaled by `scale`.
pub fn apply_actor_step(nets: &mut AgentNets, k: usize, mut grads: Vec<f64>, scale: f64) -> Result<()> {
    if scale != 1.0 {
        for g in &mut grads {
            *g *= scale;
        }
    }
    nets.actors[k].net.adam_step(&mut nets.actor_opts[k], &grads)
}
