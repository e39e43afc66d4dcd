//! Decentralised on-policy baselines: REINFORCE and independent actor-critic.
//!
//! Every update here sees only the learning agent's own observations,
//! actions and rewards.

mod policy;

pub use policy::{PolicySample, StochasticPolicy, LOG_STD_MAX, LOG_STD_MIN};

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, EvalOptions, EvalReport};
use crate::error::{Error, Result};
use crate::numerics::{Activation, AdamState, Mlp, NetCheckpoint, OutputHead, CHECKPOINT_FORMAT};
use crate::par::Exec;
use crate::policy::AgentPolicy;
use crate::trainer::{MetricsRow, TrainConfig};
use crate::world::Scenario;

/// One step of one agent's own experience.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub sample: PolicySample,
    pub reward: f64,
    pub obs_next: Vec<f64>,
    pub terminal: bool,
}

/// `R^t = sum_k gamma^(k - t) r_k` for every step.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// The REINFORCE ascent direction `sum_t grad log pi(a_t|o_t) R^t` and the
/// surrogate loss `-sum_t R^t log pi(a_t|o_t)`.
pub fn reinforce_gradient(policy: &StochasticPolicy, episode: &[Step], gamma: f64) -> Result<(f64, Vec<f64>)> {
    let rewards: Vec<f64> = episode.iter().map(|s| s.reward).collect();
    let returns = discounted_returns(&rewards, gamma);
    let mut grad = vec![0.0; policy.net.num_params()];
    let mut loss = 0.0;
    for (step, ret) in episode.iter().zip(returns) {
        if ret == 0.0 {
            continue;
        }
        let (lp, g) = policy.log_prob_gradient(&step.obs, &step.sample)?;
        loss -= ret * lp;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += ret * gi;
        }
    }
    Ok((loss, grad))
}

/// One Adam ascent step along the REINFORCE direction; returns the surrogate loss.
pub fn reinforce_update(
    policy: &mut StochasticPolicy,
    episode: &[Step],
    opt: &mut AdamState,
    gamma: f64,
) -> Result<f64> {
    let (loss, mut grad) = reinforce_gradient(policy, episode, gamma)?;
    grad.iter_mut().for_each(|g| *g = -*g);
    policy.net.adam_step(opt, &grad)?;
    Ok(loss)
}

pub fn new_value_net<R: rand::Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Result<Mlp> {
    Mlp::init_uniform(&[obs_dim, hidden, hidden, 1], Activation::Relu, OutputHead::Linear, rng)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcLosses {
    /// Mean squared TD error before the critic step.
    pub critic: f64,
    /// Advantage-weighted surrogate `-mean(delta * log pi)`.
    pub actor: f64,
}

fn value_batch(value: &Mlp, rows: &[&[f64]]) -> Result<Vec<f64>> {
    let dim = value.input_dim();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let x = Array2::from_shape_vec((rows.len(), dim), flat)
        .map_err(|_| Error::shape("value input", dim, rows.first().map_or(0, |r| r.len())))?;
    Ok(value.forward_batch(x.view())?.column(0).to_vec())
}

/// TD(0) errors `r + gamma (1 - terminal) V(o') - V(o)`.
pub fn td_errors(value: &Mlp, steps: &[Step], gamma: f64) -> Result<Vec<f64>> {
    let obs: Vec<&[f64]> = steps.iter().map(|s| s.obs.as_slice()).collect();
    let next: Vec<&[f64]> = steps.iter().map(|s| s.obs_next.as_slice()).collect();
    let v = value_batch(value, &obs)?;
    let vn = value_batch(value, &next)?;
    Ok(steps
        .iter()
        .zip(v.iter().zip(&vn))
        .map(|(s, (v, vn))| s.reward + if s.terminal { 0.0 } else { gamma * vn } - v)
        .collect())
}

/// Gradient of `mean(delta^2)` with the bootstrap target held fixed.
pub fn td_critic_gradient(value: &Mlp, steps: &[Step], deltas: &[f64]) -> Result<Vec<f64>> {
    let n = steps.len() as f64;
    let dim = value.input_dim();
    let flat: Vec<f64> = steps.iter().flat_map(|s| s.obs.iter().copied()).collect();
    let x = Array2::from_shape_vec((steps.len(), dim), flat)
        .map_err(|_| Error::shape("value input", dim, steps[0].obs.len()))?;
    let tape = value.forward_tape(x.view())?;
    let up = Array2::from_shape_vec((steps.len(), 1), deltas.iter().map(|d| -2.0 * d / n).collect())
        .expect("one delta per step");
    Ok(value.backward(&tape, up.view())?.0)
}

/// Independent actor-critic step: TD(0) on the agent's own value function
/// and an actor step weighted by the pre-update TD error.
pub fn independent_ac_update(
    policy: &mut StochasticPolicy,
    policy_opt: &mut AdamState,
    value: &mut Mlp,
    value_opt: &mut AdamState,
    steps: &[Step],
    gamma: f64,
) -> Result<AcLosses> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("actor-critic update needs at least one step".into()));
    }
    let deltas = td_errors(value, steps, gamma)?;
    let n = steps.len() as f64;
    let critic_loss = deltas.iter().map(|d| d * d).sum::<f64>() / n;
    let vgrad = td_critic_gradient(value, steps, &deltas)?;
    let mut pgrad = vec![0.0; policy.net.num_params()];
    let mut actor_loss = 0.0;
    for (s, d) in steps.iter().zip(&deltas) {
        let (lp, g) = policy.log_prob_gradient(&s.obs, &s.sample)?;
        actor_loss -= d * lp / n;
        for (acc, gi) in pgrad.iter_mut().zip(g) {
            *acc -= d * gi / n;
        }
    }
    value.adam_step(value_opt, &vgrad)?;
    policy.net.adam_step(policy_opt, &pgrad)?;
    Ok(AcLosses {
        critic: critic_loss,
        actor: actor_loss,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineAlgo {
    Reinforce,
    Iac,
}

impl BaselineAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BaselineAlgo::Reinforce => "reinforce",
            BaselineAlgo::Iac => "iac",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineAgent {
    pub algo: BaselineAlgo,
    pub policy: StochasticPolicy,
    pub policy_opt: AdamState,
    pub value: Option<Mlp>,
    pub value_opt: Option<AdamState>,
}

/// On-policy training state for a population of decentralised learners.
#[derive(Clone, Debug)]
pub struct BaselineTrainer {
    scenario: Scenario,
    config: TrainConfig,
    agents: Vec<BaselineAgent>,
    rng: ChaCha8Rng,
    episodes_done: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineAgentCheckpoint {
    algo: BaselineAlgo,
    physical_dim: usize,
    comm_dim: usize,
    label: String,
    policy: NetCheckpoint,
    value: Option<NetCheckpoint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineBundle {
    format: String,
    scenario: Scenario,
    config: TrainConfig,
    agents: Vec<BaselineAgentCheckpoint>,
    rng: ChaCha8Rng,
    episodes_done: usize,
}

pub const BASELINE_FILE: &str = "baseline.json";

impl BaselineTrainer {
    pub fn new(scenario: Scenario, config: TrainConfig, algos: &[BaselineAlgo]) -> Result<Self> {
        let n = scenario.n_agents();
        let mut cfg = config.clone();
        cfg.modes.clear();
        cfg.validate(n)?;
        if config.opponent_models.is_some() || config.ensemble.is_some() {
            return Err(Error::config("algo", "extensions apply only to off-policy learners"));
        }
        if algos.len() != n {
            return Err(Error::config("algo", format!("expected {n} entries, got {}", algos.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut agents = Vec::with_capacity(n);
        for (spec, &algo) in scenario.agents().iter().zip(algos) {
            let policy = StochasticPolicy::new(
                spec.obs_dim,
                spec.physical_dim,
                spec.comm_dim,
                config.hidden_units,
                algo.name(),
                &mut rng,
            )?;
            let (value, value_opt) = match algo {
                BaselineAlgo::Iac => {
                    let v = new_value_net(spec.obs_dim, config.hidden_units, &mut rng)?;
                    let o = AdamState::new(v.num_params(), config.lr);
                    (Some(v), Some(o))
                }
                BaselineAlgo::Reinforce => (None, None),
            };
            agents.push(BaselineAgent {
                algo,
                policy_opt: AdamState::new(policy.net.num_params(), config.lr),
                policy,
                value,
                value_opt,
            });
        }
        Ok(Self {
            scenario,
            config: cfg,
            agents,
            rng,
            episodes_done: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agents(&self) -> &[BaselineAgent] {
        &self.agents
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Samples one episode from the current policies, then updates each
    /// agent on its own trajectory.
    pub fn run_episode(&mut self) -> Result<MetricsRow> {
        let n = self.agents.len();
        let (mut state, mut obs) = self.scenario.reset(&mut self.rng);
        let mut trajectories: Vec<Vec<Step>> = vec![Vec::new(); n];
        let mut returns = vec![0.0; n];
        for _ in 0..self.scenario.horizon() {
            let mut samples = Vec::with_capacity(n);
            for (a, o) in self.agents.iter().zip(&obs) {
                samples.push(a.policy.sample_and_logprob(o, &mut self.rng)?.0);
            }
            let action: Vec<_> = samples
                .iter()
                .zip(&self.agents)
                .map(|(s, a)| s.to_action(a.policy.comm_dim))
                .collect();
            let out = self.scenario.step(&state, &action)?;
            let terminal = out.done && self.scenario.terminal_at_horizon();
            for (i, sample) in samples.into_iter().enumerate() {
                trajectories[i].push(Step {
                    obs: obs[i].clone(),
                    sample,
                    reward: out.rewards[i],
                    obs_next: out.observations[i].clone(),
                    terminal,
                });
                returns[i] += out.rewards[i];
            }
            state = out.state;
            obs = out.observations;
        }
        let gamma = self.config.gamma;
        for (agent, traj) in self.agents.iter_mut().zip(&trajectories) {
            match agent.algo {
                BaselineAlgo::Reinforce => {
                    reinforce_update(&mut agent.policy, traj, &mut agent.policy_opt, gamma)?;
                }
                BaselineAlgo::Iac => {
                    let value = agent.value.as_mut().expect("iac agents own a value net");
                    let vopt = agent.value_opt.as_mut().expect("iac agents own a value optimizer");
                    independent_ac_update(&mut agent.policy, &mut agent.policy_opt, value, vopt, traj, gamma)?;
                }
            }
        }
        self.episodes_done += 1;
        let eval = if self.config.eval_every > 0 && self.episodes_done.is_multiple_of(self.config.eval_every) {
            let seed = self
                .config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(self.episodes_done as u64);
            Some(self.evaluate(self.config.eval_episodes, seed)?.metrics)
        } else {
            None
        };
        Ok(MetricsRow {
            episode: self.episodes_done,
            returns,
            opponent_kl: None,
            eval,
        })
    }

    pub fn train_with<F>(&mut self, mut on_episode: F) -> Result<Vec<MetricsRow>>
    where
        F: FnMut(&BaselineTrainer, &MetricsRow) -> Result<()>,
    {
        let mut rows = Vec::new();
        while self.episodes_done < self.config.episodes {
            let row = self.run_episode()?;
            on_episode(self, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn policies(&self) -> Vec<StochasticPolicy> {
        self.agents.iter().map(|a| a.policy.clone()).collect()
    }

    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalReport> {
        let refs: Vec<&dyn AgentPolicy> = self.agents.iter().map(|a| &a.policy as &dyn AgentPolicy).collect();
        analysis::evaluate(
            &self.scenario,
            &refs,
            episodes,
            seed,
            EvalOptions {
                team_tied: true,
                exec: Exec::default(),
            },
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let bundle = BaselineBundle {
            format: CHECKPOINT_FORMAT.to_string(),
            scenario: self.scenario.clone(),
            config: self.config.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| BaselineAgentCheckpoint {
                    algo: a.algo,
                    physical_dim: a.policy.physical_dim,
                    comm_dim: a.policy.comm_dim,
                    label: a.policy.label.clone(),
                    policy: NetCheckpoint::capture(&a.policy.net, Some(&a.policy_opt)),
                    value: a.value.as_ref().map(|v| NetCheckpoint::capture(v, a.value_opt.as_ref())),
                })
                .collect(),
            rng: self.rng.clone(),
            episodes_done: self.episodes_done,
        };
        let path = dir.join(BASELINE_FILE);
        let tmp = path.with_extension("partial");
        fs::write(&tmp, serde_json::to_string(&bundle)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bundle: BaselineBundle = serde_json::from_str(&fs::read_to_string(dir.join(BASELINE_FILE))?)?;
        if bundle.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", bundle.format)));
        }
        if bundle.agents.len() != bundle.scenario.n_agents() {
            return Err(Error::shape("checkpoint agents", bundle.scenario.n_agents(), bundle.agents.len()));
        }
        let mut agents = Vec::with_capacity(bundle.agents.len());
        for (spec, a) in bundle.scenario.agents().iter().zip(bundle.agents) {
            let (net, opt) = a.policy.restore()?;
            if net.input_dim() != spec.obs_dim {
                return Err(Error::shape(format!("{} policy input", spec.name), spec.obs_dim, net.input_dim()));
            }
            let policy = StochasticPolicy::from_net(net, a.physical_dim, a.comm_dim, a.label)?;
            let (value, value_opt) = match a.value {
                Some(v) => {
                    let (v, o) = v.restore()?;
                    (Some(v), o)
                }
                None => (None, None),
            };
            agents.push(BaselineAgent {
                algo: a.algo,
                policy,
                policy_opt: opt.ok_or_else(|| Error::Checkpoint("missing policy optimizer".into()))?,
                value,
                value_opt,
            });
        }
        Ok(Self {
            scenario: bundle.scenario,
            config: bundle.config,
            agents,
            rng: bundle.rng,
            episodes_done: bundle.episodes_done,
        })
    }
}
