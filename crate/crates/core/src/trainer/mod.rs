//! Centralised-critic actor-critic training (MADDPG) with per-agent
//! decentralised (DDPG) critics as a drop-in alternative.

mod buffer;
mod checkpoint;
mod config;
mod nets;

pub use buffer::{Batch, Layout, ReplayBuffer, Transition};
pub use checkpoint::{TrainerBundle, BUNDLE_FILE, REPLAY_FILE};
pub use config::{EnsembleConfig, Mode, OpponentConfig, TrainConfig};
pub use nets::{
    actor_loss_gradient, apply_actor_step, bootstrap_targets, critic_input, critic_input_dim,
    critic_loss_and_gradient, critic_update, new_critic, ActorNet, AgentNets, RelaxedBatch,
};

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{self, EvalOptions};
use crate::error::{Error, Result};
use crate::extensions::{approx_critic_target, EnsembleState, OpponentModel};
use crate::numerics::clip_global_norm;
use crate::par::Exec;
use crate::policy::{ActorPolicy, AgentPolicy};
use crate::world::{AgentAction, JointAction, Scenario};

/// One line of the training metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based count of completed training episodes.
    pub episode: usize,
    /// Undiscounted episode return of every agent.
    pub returns: Vec<f64>,
    /// Mean KL from true to modelled policies over the last update round.
    pub opponent_kl: Option<f64>,
    pub eval: Option<BTreeMap<String, f64>>,
}

/// CSV header for a run's metrics stream.
pub fn metrics_header(scenario: &Scenario, config: &TrainConfig) -> String {
    let mut cols = vec!["episode".to_string()];
    cols.extend(scenario.agents().iter().map(|a| format!("return_{}", a.name)));
    if config.opponent_models.is_some() {
        cols.push("opponent_kl".into());
    }
    if config.eval_every > 0 {
        cols.extend(analysis::metric_names(scenario.kind()).iter().map(|m| format!("eval_{m}")));
    }
    cols.join(",")
}

impl MetricsRow {
    pub fn to_csv(&self, scenario: &Scenario, config: &TrainConfig) -> String {
        let mut cols = vec![self.episode.to_string()];
        cols.extend(self.returns.iter().map(|r| r.to_string()));
        if config.opponent_models.is_some() {
            cols.push(self.opponent_kl.map(|v| v.to_string()).unwrap_or_default());
        }
        if config.eval_every > 0 {
            for m in analysis::metric_names(scenario.kind()) {
                let v = self.eval.as_ref().and_then(|e| e.get(*m));
                cols.push(v.map(|v| v.to_string()).unwrap_or_default());
            }
        }
        cols.join(",")
    }
}

/// Complete mutable state of a training run.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub(crate) scenario: Scenario,
    pub(crate) config: TrainConfig,
    pub(crate) layout: Layout,
    pub(crate) agents: Vec<AgentNets>,
    /// One shared buffer, or `n_agents * k` per-sub-policy buffers.
    pub(crate) buffers: Vec<ReplayBuffer>,
    /// `opponents[i][j]`: agent i's model of agent j (`None` on the diagonal).
    pub(crate) opponents: Option<Vec<Vec<Option<OpponentModel>>>>,
    pub(crate) ensemble: Option<EnsembleState>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) env_steps: usize,
    pub(crate) episodes_done: usize,
    pub(crate) update_rounds: usize,
    pub(crate) last_kl: Option<f64>,
}

impl TrainerState {
    pub fn new(scenario: Scenario, config: TrainConfig) -> Result<Self> {
        let n = scenario.n_agents();
        config.validate(n)?;
        let layout = Layout::new(scenario.obs_dims(), scenario.action_dims());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.ensemble_k();
        let mut agents = Vec::with_capacity(n);
        for (i, spec) in scenario.agents().iter().enumerate() {
            agents.push(AgentNets::new(
                &layout,
                i,
                spec.physical_dim,
                spec.comm_dim,
                config.mode_of(i),
                config.hidden_units,
                k,
                config.lr,
                &mut rng,
            )?);
        }
        let opponents = match &config.opponent_models {
            Some(op) => {
                let mut all = Vec::with_capacity(n);
                for i in 0..n {
                    let mut row = Vec::with_capacity(n);
                    for (j, spec) in scenario.agents().iter().enumerate() {
                        row.push(if i == j {
                            None
                        } else {
                            Some(OpponentModel::new(
                                spec.obs_dim,
                                spec.physical_dim,
                                spec.comm_dim,
                                config.hidden_units,
                                op.lambda,
                                op.sigma,
                                config.lr,
                                &mut rng,
                            )?)
                        });
                    }
                    all.push(row);
                }
                Some(all)
            }
            None => None,
        };
        let ensemble = match &config.ensemble {
            Some(e) => Some(EnsembleState::new(
                e.k,
                e.team_tied,
                scenario.agents().iter().map(|a| a.role).collect(),
            )?),
            None => None,
        };
        let n_buffers = if ensemble.is_some() { n * k } else { 1 };
        let buffers = (0..n_buffers)
            .map(|_| ReplayBuffer::new(layout.clone(), config.buffer_capacity))
            .collect();
        let mut state = Self {
            scenario,
            config,
            layout,
            agents,
            buffers,
            opponents,
            ensemble,
            rng,
            env_steps: 0,
            episodes_done: 0,
            update_rounds: 0,
            last_kl: None,
        };
        state.apply_comm_mode();
        Ok(state)
    }

    /// Propagates `config.hard_comm` to every actor and opponent model.
    pub(crate) fn apply_comm_mode(&mut self) {
        let hard = self.config.hard_comm;
        for nets in &mut self.agents {
            for a in nets.actors.iter_mut().chain(nets.target_actors.iter_mut()) {
                a.hard_comm = hard;
            }
        }
        if let Some(models) = self.opponents.as_mut() {
            for m in models.iter_mut().flatten().flatten() {
                m.net.hard_comm = hard;
                m.target.hard_comm = hard;
            }
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn agents(&self) -> &[AgentNets] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentNets] {
        &mut self.agents
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn update_rounds(&self) -> usize {
        self.update_rounds
    }

    pub fn ensemble(&self) -> Option<&EnsembleState> {
        self.ensemble.as_ref()
    }

    pub fn opponents(&self) -> Option<&Vec<Vec<Option<OpponentModel>>>> {
        self.opponents.as_ref()
    }

    pub fn opponents_mut(&mut self) -> Option<&mut Vec<Vec<Option<OpponentModel>>>> {
        self.opponents.as_mut()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// The shared replay buffer, or agent 0's first sub-policy buffer.
    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffers[0]
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.buffers[0]
    }

    /// Buffer `D_i^(k)` of an ensemble run (the shared buffer otherwise).
    pub fn sub_buffer(&self, agent: usize, k: usize) -> &ReplayBuffer {
        &self.buffers[self.buffer_index(agent, k)]
    }

    fn buffer_index(&self, agent: usize, k: usize) -> usize {
        if self.ensemble.is_some() {
            agent * self.config.ensemble_k() + k
        } else {
            0
        }
    }

    fn started(&self) -> bool {
        self.env_steps > 0 || self.episodes_done > 0
    }

    /// Switches agent `agent` between centralised and decentralised critics.
    /// Only allowed before the first environment step.
    pub fn set_mode(&mut self, agent: usize, mode: Mode) -> Result<()> {
        if self.started() {
            return Err(Error::InvalidArgument(
                "critic mode cannot change after training has started".into(),
            ));
        }
        if agent >= self.agents.len() {
            return Err(Error::InvalidArgument(format!("no agent with index {agent}")));
        }
        if self.config.modes.is_empty() {
            self.config.modes = vec![Mode::Maddpg; self.agents.len()];
        }
        self.config.modes[agent] = mode;
        if self.agents[agent].mode != mode {
            let critic = new_critic(
                critic_input_dim(&self.layout, mode, agent),
                self.config.hidden_units,
                &mut self.rng,
            )?;
            let nets = &mut self.agents[agent];
            nets.mode = mode;
            nets.critic_opt = crate::numerics::AdamState::new(critic.num_params(), self.config.lr);
            nets.target_critic = critic.clone();
            nets.critic = critic;
        }
        Ok(())
    }

    /// Shorthand for `set_mode(agent, Mode::Ddpg)`.
    pub fn ddpg_mode(&mut self, agent: usize) -> Result<()> {
        self.set_mode(agent, Mode::Ddpg)
    }

    fn active(&self) -> Vec<usize> {
        match &self.ensemble {
            Some(e) => e.active().to_vec(),
            None => vec![0; self.agents.len()],
        }
    }

    /// Joint action from every agent's own observation, with exploration
    /// noise at the current schedule level when `explore` is set.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[Vec<f64>], explore: bool, rng: &mut R) -> Result<JointAction> {
        let sigma = if explore { self.config.noise_at(self.episodes_done) } else { 0.0 };
        self.act_with_sigma(obs, sigma, rng)
    }

    pub fn act_with_sigma<R: Rng + ?Sized>(&self, obs: &[Vec<f64>], sigma: f64, rng: &mut R) -> Result<JointAction> {
        if obs.len() != self.agents.len() {
            return Err(Error::shape("joint observation", self.agents.len(), obs.len()));
        }
        let active = self.active();
        let t = self.config.gumbel_temperature;
        obs.iter()
            .zip(&self.agents)
            .zip(active)
            .map(|((o, nets), k)| nets.actors[k].explore(o, sigma, t, rng))
            .collect()
    }

    /// Next joint actions from target actors on `x'`; each agent uses the
    /// sub-policy recorded in the transition's provenance tag.
    pub fn target_next_actions(&self, batch: &Batch) -> Result<Array2<f64>> {
        let l = &self.layout;
        let t = self.config.gumbel_temperature;
        let mut next = Array2::zeros((batch.len(), l.act_total()));
        for (j, nets) in self.agents.iter().enumerate() {
            let obs = batch.obs_next(l, j);
            let off = l.act_offset(j);
            let width = l.act_dims[j];
            let first = batch.tags.first().map_or(0, |t| t[j]);
            if batch.tags.iter().all(|tags| tags[j] == first) {
                let a = nets.target_actors[first].deterministic_batch(obs, t)?;
                next.slice_mut(s![.., off..off + width]).assign(&a);
            } else {
                let per_variant = nets
                    .target_actors
                    .iter()
                    .map(|actor| actor.deterministic_batch(obs, t))
                    .collect::<Result<Vec<_>>>()?;
                for (r, tags) in batch.tags.iter().enumerate() {
                    next.slice_mut(s![r, off..off + width])
                        .assign(&per_variant[tags[j]].row(r));
                }
            }
        }
        Ok(next)
    }

    /// `y = r_i + gamma * Q_i'(x', mu_1'(o_1'), ..., mu_N'(o_N'))`.
    pub fn critic_target(&self, agent: usize, batch: &Batch) -> Result<Vec<f64>> {
        let next = self.target_next_actions(batch)?;
        bootstrap_targets(&self.layout, &self.agents[agent], agent, batch, next.view(), self.config.gamma)
    }

    /// Critic step for `agent` on `batch`; returns the pre-step loss.
    pub fn critic_update(&mut self, agent: usize, batch: &Batch) -> Result<f64> {
        let y = self.critic_target(agent, batch)?;
        self.critic_step(agent, batch, &y)
    }

    fn critic_step(&mut self, agent: usize, batch: &Batch, y: &[f64]) -> Result<f64> {
        let nets = &mut self.agents[agent];
        let (loss, mut grads) = critic_loss_and_gradient(&self.layout, nets, agent, batch, y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss of agent {agent}")));
        }
        clip_global_norm(&mut grads, self.config.grad_clip_norm);
        nets.critic.adam_step(&mut nets.critic_opt, &grads)?;
        Ok(loss)
    }

    /// Policy-gradient step for sub-policy `k` of `agent`, scaled by `1/K`
    /// in ensemble runs. Returns the pre-step objective estimate.
    pub fn actor_update(&mut self, agent: usize, k: usize, batch: &Batch) -> Result<f64> {
        let (obj, mut grads) = actor_loss_gradient(
            &self.layout,
            &self.agents[agent],
            agent,
            k,
            batch,
            self.config.gumbel_temperature,
            self.config.straight_through,
            &mut self.rng,
        )?;
        if self.config.actor_output_penalty > 0.0 {
            let actor = &self.agents[agent].actors[k];
            let (_, pg) = actor.output_penalty_gradient(batch.obs(&self.layout, agent), self.config.actor_output_penalty)?;
            grads.iter_mut().zip(pg).for_each(|(g, p)| *g += p);
        }
        clip_global_norm(&mut grads, self.config.grad_clip_norm);
        let scale = 1.0 / self.config.ensemble_k() as f64;
        apply_actor_step(&mut self.agents[agent], k, grads, scale)?;
        Ok(obj)
    }

    fn ready_for_update(&self) -> bool {
        self.buffers.iter().any(|b| b.len() >= self.config.batch_size)
    }

    /// Online opponent-model step on the most recent `update_every` samples.
    fn update_opponent_models(&mut self) -> Result<()> {
        let Some(models) = self.opponents.as_mut() else {
            return Ok(());
        };
        let latest = self.buffers[0].latest(self.config.update_every)?;
        let l = &self.layout;
        let t = self.config.gumbel_temperature;
        let mut kl_total = 0.0;
        let mut pairs = 0;
        for row in models.iter_mut() {
            for (j, model) in row.iter_mut().enumerate() {
                let Some(model) = model else { continue };
                let obs = latest.obs(l, j);
                model.update(obs, latest.action(l, j))?;
                let truth = self.agents[j].actors[0].deterministic_batch(obs, t)?;
                kl_total += model.kl_from(obs, truth.view())?;
                pairs += 1;
            }
        }
        if pairs > 0 {
            self.last_kl = Some(kl_total / pairs as f64);
        }
        Ok(())
    }

    /// One round of critic and actor updates for every agent, followed by
    /// soft target updates.
    pub fn update_round(&mut self) -> Result<()> {
        self.update_opponent_models()?;
        let k_total = self.config.ensemble_k();
        for i in 0..self.agents.len() {
            for k in 0..k_total {
                let idx = self.buffer_index(i, k);
                if self.buffers[idx].len() < self.config.batch_size {
                    continue;
                }
                let batch = self.buffers[idx].sample(self.config.batch_size, &mut self.rng)?;
                let y = match &self.opponents {
                    Some(models) => approx_critic_target(
                        &self.layout,
                        &self.agents[i],
                        i,
                        &batch,
                        &models[i],
                        self.config.gumbel_temperature,
                        self.config.gamma,
                    )?,
                    None => self.critic_target(i, &batch)?,
                };
                self.critic_step(i, &batch, &y)?;
                self.actor_update(i, k, &batch)?;
            }
        }
        let tau = self.config.tau;
        for nets in &mut self.agents {
            nets.soft_update_targets(tau)?;
        }
        if let Some(models) = self.opponents.as_mut() {
            for m in models.iter_mut().flatten().flatten() {
                m.soft_update_target(tau)?;
            }
        }
        self.update_rounds += 1;
        Ok(())
    }

    fn push(&mut self, t: &Transition) -> Result<()> {
        match &self.ensemble {
            Some(_) => {
                for i in 0..self.agents.len() {
                    let idx = self.buffer_index(i, t.tags[i]);
                    self.buffers[idx].push(t)?;
                }
                Ok(())
            }
            None => self.buffers[0].push(t),
        }
    }

    /// Plays one exploratory episode, learning along the way.
    pub fn run_episode(&mut self) -> Result<MetricsRow> {
        if let Some(e) = self.ensemble.as_mut() {
            e.begin_episode(&mut self.rng);
        }
        let sigma = self.config.noise_at(self.episodes_done);
        let (mut state, mut obs) = self.scenario.reset(&mut self.rng);
        let mut returns = vec![0.0; self.agents.len()];
        for _ in 0..self.scenario.horizon() {
            let mut rng = self.rng.clone();
            let action = self.act_with_sigma(&obs, sigma, &mut rng)?;
            self.rng = rng;
            let out = self.scenario.step(&state, &action)?;
            let terminal = out.done && self.scenario.terminal_at_horizon();
            let transition = Transition {
                x: obs.concat(),
                actions: action.iter().map(AgentAction::to_flat).collect(),
                rewards: out.rewards.clone(),
                x_next: out.observations.concat(),
                terminal,
                tags: self.active(),
            };
            self.push(&transition)?;
            self.env_steps += 1;
            if self.env_steps.is_multiple_of(self.config.update_every) && self.ready_for_update() {
                self.update_round()?;
            }
            for (r, v) in returns.iter_mut().zip(&out.rewards) {
                *r += v;
            }
            state = out.state;
            obs = out.observations;
        }
        self.episodes_done += 1;
        let eval = if self.config.eval_every > 0 && self.episodes_done.is_multiple_of(self.config.eval_every) {
            Some(self.evaluate(self.config.eval_episodes, self.eval_seed())?.metrics)
        } else {
            None
        };
        Ok(MetricsRow {
            episode: self.episodes_done,
            returns,
            opponent_kl: self.last_kl,
            eval,
        })
    }

    fn eval_seed(&self) -> u64 {
        self.config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.episodes_done as u64)
    }

    /// Runs episodes until `config.episodes` is reached, calling `on_episode`
    /// after each one.
    pub fn train_with<F>(&mut self, mut on_episode: F) -> Result<Vec<MetricsRow>>
    where
        F: FnMut(&TrainerState, &MetricsRow) -> Result<()>,
    {
        let mut rows = Vec::new();
        while self.episodes_done < self.config.episodes {
            let row = self.run_episode()?;
            on_episode(self, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }

    /// Noise-free per-agent policy snapshots.
    pub fn policies(&self) -> Vec<ActorPolicy> {
        self.agents
            .iter()
            .map(|nets| {
                let mut label = match nets.mode {
                    Mode::Maddpg => "maddpg".to_string(),
                    Mode::Ddpg => "ddpg".to_string(),
                };
                if nets.actors.len() > 1 {
                    label.push_str(&format!("+ensemble{}", nets.actors.len()));
                }
                ActorPolicy {
                    actors: nets.actors.clone(),
                    temperature: self.config.gumbel_temperature,
                    label,
                }
            })
            .collect()
    }

    /// Deterministic evaluation of the current actors.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<analysis::EvalReport> {
        let policies = self.policies();
        let refs: Vec<&dyn AgentPolicy> = policies.iter().map(|p| p as &dyn AgentPolicy).collect();
        let opts = EvalOptions {
            team_tied: self.config.ensemble.as_ref().is_none_or(|e| e.team_tied),
            exec: Exec::default(),
        };
        analysis::evaluate(&self.scenario, &refs, episodes, seed, opts)
    }
}

/// Trains from scratch with `config.seed`, returning the final state and
/// the metrics stream.
pub fn train(scenario: &Scenario, config: &TrainConfig) -> Result<(TrainerState, Vec<MetricsRow>)> {
    let mut state = TrainerState::new(scenario.clone(), config.clone())?;
    let rows = state.train_with(|_, _| Ok(()))?;
    Ok((state, rows))
}
