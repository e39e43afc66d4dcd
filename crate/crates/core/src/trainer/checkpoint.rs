//! Full training-state bundles for exact resumption.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActorNet, AgentNets, Layout, Mode, ReplayBuffer, TrainConfig, TrainerState};
use crate::error::{Error, Result};
use crate::extensions::{EnsembleState, OpponentModel};
use crate::numerics::{NetCheckpoint, CHECKPOINT_FORMAT};
use crate::world::Scenario;

pub const BUNDLE_FILE: &str = "trainer.json";
pub const REPLAY_FILE: &str = "replay.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActorCheckpoint {
    physical_dim: usize,
    comm_dim: usize,
    online: NetCheckpoint,
    target: NetCheckpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentCheckpoint {
    mode: Mode,
    actors: Vec<ActorCheckpoint>,
    critic: NetCheckpoint,
    target_critic: NetCheckpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelCheckpoint {
    actor: ActorCheckpoint,
    lambda: f64,
    sigma: f64,
}

/// Serializable image of a [`TrainerState`] minus its replay contents,
/// which are stored alongside in a little-endian binary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerBundle {
    pub format: String,
    pub scenario: Scenario,
    pub config: TrainConfig,
    agents: Vec<AgentCheckpoint>,
    #[serde(default)]
    opponents: Option<Vec<Vec<Option<ModelCheckpoint>>>>,
    #[serde(default)]
    ensemble: Option<EnsembleState>,
    rng: ChaCha8Rng,
    pub env_steps: usize,
    pub episodes_done: usize,
    pub update_rounds: usize,
    last_kl: Option<f64>,
}

fn actor_ckpt(online: &ActorNet, target: &ActorNet, opt: Option<&crate::numerics::AdamState>) -> ActorCheckpoint {
    ActorCheckpoint {
        physical_dim: online.physical_dim,
        comm_dim: online.comm_dim,
        online: NetCheckpoint::capture(&online.net, opt),
        target: NetCheckpoint::capture(&target.net, None),
    }
}

fn restore_actor(c: &ActorCheckpoint) -> Result<(ActorNet, ActorNet, Option<crate::numerics::AdamState>)> {
    let (net, opt) = c.online.restore()?;
    let (target, _) = c.target.restore()?;
    Ok((
        ActorNet::from_net(net, c.physical_dim, c.comm_dim)?,
        ActorNet::from_net(target, c.physical_dim, c.comm_dim)?,
        opt,
    ))
}

fn missing(what: &str) -> Error {
    Error::Checkpoint(format!("missing optimizer state for {what}"))
}

impl TrainerBundle {
    pub fn capture(state: &TrainerState) -> Self {
        let agents = state
            .agents
            .iter()
            .map(|a| AgentCheckpoint {
                mode: a.mode,
                actors: a
                    .actors
                    .iter()
                    .zip(&a.target_actors)
                    .zip(&a.actor_opts)
                    .map(|((o, t), opt)| actor_ckpt(o, t, Some(opt)))
                    .collect(),
                critic: NetCheckpoint::capture(&a.critic, Some(&a.critic_opt)),
                target_critic: NetCheckpoint::capture(&a.target_critic, None),
            })
            .collect();
        let opponents = state.opponents.as_ref().map(|rows| {
            rows.iter()
                .map(|row| {
                    row.iter()
                        .map(|m| {
                            m.as_ref().map(|m| ModelCheckpoint {
                                actor: actor_ckpt(&m.net, &m.target, Some(&m.opt)),
                                lambda: m.lambda,
                                sigma: m.sigma,
                            })
                        })
                        .collect()
                })
                .collect()
        });
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            scenario: state.scenario.clone(),
            config: state.config.clone(),
            agents,
            opponents,
            ensemble: state.ensemble.clone(),
            rng: state.rng.clone(),
            env_steps: state.env_steps,
            episodes_done: state.episodes_done,
            update_rounds: state.update_rounds,
            last_kl: state.last_kl,
        }
    }

    /// Rebuilds the trainer around the given replay buffers.
    pub fn restore(&self, buffers: Vec<ReplayBuffer>) -> Result<TrainerState> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        let n = self.scenario.n_agents();
        self.config.validate(n)?;
        if self.agents.len() != n {
            return Err(Error::shape("checkpoint agents", n, self.agents.len()));
        }
        let layout = Layout::new(self.scenario.obs_dims(), self.scenario.action_dims());
        let mut agents = Vec::with_capacity(n);
        for (i, a) in self.agents.iter().enumerate() {
            let mut actors = Vec::new();
            let mut targets = Vec::new();
            let mut opts = Vec::new();
            for c in &a.actors {
                let (online, target, opt) = restore_actor(c)?;
                if online.obs_dim() != layout.obs_dims[i] || online.action_dim() != layout.act_dims[i] {
                    return Err(Error::shape(
                        format!("actor input of agent {i}"),
                        layout.obs_dims[i],
                        online.obs_dim(),
                    ));
                }
                actors.push(online);
                targets.push(target);
                opts.push(opt.ok_or_else(|| missing("actor"))?);
            }
            let (critic, critic_opt) = a.critic.restore()?;
            let (target_critic, _) = a.target_critic.restore()?;
            let expected = super::critic_input_dim(&layout, a.mode, i);
            if critic.input_dim() != expected {
                return Err(Error::shape(format!("critic input of agent {i}"), expected, critic.input_dim()));
            }
            agents.push(AgentNets {
                mode: a.mode,
                actors,
                target_actors: targets,
                actor_opts: opts,
                critic,
                target_critic,
                critic_opt: critic_opt.ok_or_else(|| missing("critic"))?,
            });
        }
        let opponents = match &self.opponents {
            Some(rows) => {
                let mut out = Vec::with_capacity(rows.len());
                for row in rows {
                    let mut r = Vec::with_capacity(row.len());
                    for m in row {
                        r.push(match m {
                            Some(m) => {
                                let (net, target, opt) = restore_actor(&m.actor)?;
                                Some(OpponentModel {
                                    net,
                                    target,
                                    opt: opt.ok_or_else(|| missing("opponent model"))?,
                                    lambda: m.lambda,
                                    sigma: m.sigma,
                                })
                            }
                            None => None,
                        });
                    }
                    out.push(r);
                }
                Some(out)
            }
            None => None,
        };
        let expected_buffers = if self.ensemble.is_some() { n * self.config.ensemble_k() } else { 1 };
        if buffers.len() != expected_buffers {
            return Err(Error::shape("replay buffers", expected_buffers, buffers.len()));
        }
        if buffers.iter().any(|b| b.layout() != &layout) {
            return Err(Error::Checkpoint("replay buffer layout does not match the scenario".into()));
        }
        let mut state = TrainerState {
            scenario: self.scenario.clone(),
            config: self.config.clone(),
            layout,
            agents,
            buffers,
            opponents,
            ensemble: self.ensemble.clone(),
            rng: self.rng.clone(),
            env_steps: self.env_steps,
            episodes_done: self.episodes_done,
            update_rounds: self.update_rounds,
            last_kl: self.last_kl,
        };
        state.apply_comm_mode();
        Ok(state)
    }
}

fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl TrainerState {
    /// Writes `trainer.json` and `replay.bin` into `dir`. Each file is
    /// replaced atomically, so an interrupted save keeps the previous one.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(REPLAY_FILE), |w| {
            w.write_all(&(self.buffers.len() as u64).to_le_bytes())?;
            for b in &self.buffers {
                b.write_to(&mut *w)?;
            }
            Ok(())
        })?;
        let json = serde_json::to_string(&TrainerBundle::capture(self))?;
        write_atomic(&dir.join(BUNDLE_FILE), |w| {
            w.write_all(json.as_bytes())?;
            Ok(())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(BUNDLE_FILE))?;
        let bundle: TrainerBundle = serde_json::from_str(&text)?;
        let layout = Layout::new(bundle.scenario.obs_dims(), bundle.scenario.action_dims());
        let mut r = BufReader::new(fs::File::open(dir.join(REPLAY_FILE))?);
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        let mut buffers = Vec::with_capacity(count);
        for _ in 0..count {
            buffers.push(ReplayBuffer::read_from(layout.clone(), &mut r)?);
        }
        bundle.restore(buffers)
    }

    /// Loads only the networks of a bundle (no replay file needed).
    pub fn load_policies_only(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(BUNDLE_FILE))?;
        let bundle: TrainerBundle = serde_json::from_str(&text)?;
        let layout = Layout::new(bundle.scenario.obs_dims(), bundle.scenario.action_dims());
        let n = if bundle.ensemble.is_some() {
            bundle.scenario.n_agents() * bundle.config.ensemble_k()
        } else {
            1
        };
        let buffers = (0..n)
            .map(|_| ReplayBuffer::new(layout.clone(), bundle.config.buffer_capacity))
            .collect();
        bundle.restore(buffers)
    }
}
