//! The six particle-world scenarios.
//!
//! Agent order is always cooperators first, adversaries last.
//!
//! Observation layouts (frozen; `rel(x)` is `x - own position`):
//!
//! | scenario            | agent        | layout                                                                 | dim |
//! |---------------------|--------------|------------------------------------------------------------------------|-----|
//! | coop_comm           | speaker      | goal one-hot (3)                                                       | 3   |
//! | coop_comm           | listener     | vel (2), rel landmarks (3x2), speaker comm (3)                         | 11  |
//! | coop_nav            | agent        | vel (2), pos (2), rel landmarks (3x2), rel other agents (2x2)          | 14  |
//! | keep_away           | agent        | vel (2), rel goal (2), rel landmarks (2x2), rel adversary (2)          | 10  |
//! | keep_away           | adversary    | vel (2), rel landmarks (2x2), rel agent (2)                            | 8   |
//! | physical_deception  | agent        | vel (2), rel goal (2), rel landmarks (2x2), rel others (2x2)           | 12  |
//! | physical_deception  | adversary    | vel (2), rel landmarks (2x2), rel others (2x2)                         | 10  |
//! | predator_prey       | all          | vel (2), pos (2), rel landmarks (3x2), rel others (3x2), others' vel (3x2) | 22 |
//! | covert_comm         | alice        | message one-hot (4), key one-hot (2)                                   | 6   |
//! | covert_comm         | bob          | alice comm (4), key one-hot (2)                                        | 6   |
//! | covert_comm         | eve          | alice comm (4)                                                         | 4   |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, dist, integrate, Entity, JointAction, StepOutcome, WorldState, ARENA_HALF_WIDTH};
use crate::error::{Error, Result};

/// Distance under which an agent counts as having reached a landmark.
pub const TARGET_THRESHOLD: f64 = 0.15;

const COMM_DIM: usize = 3;
const CRYPTO_DIM: usize = 4;
const N_MESSAGES: usize = 2;
const N_KEYS: usize = 2;
/// Floor on the reconstruction probability inside the cross-entropy reward.
const CE_PROB_FLOOR: f64 = 1e-2;
const TOUCH_REWARD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CoopComm,
    CoopNav,
    KeepAway,
    PhysicalDeception,
    PredatorPrey,
    CovertComm,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::CoopComm,
        ScenarioKind::CoopNav,
        ScenarioKind::KeepAway,
        ScenarioKind::PhysicalDeception,
        ScenarioKind::PredatorPrey,
        ScenarioKind::CovertComm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CoopComm => "coop_comm",
            ScenarioKind::CoopNav => "coop_nav",
            ScenarioKind::KeepAway => "keep_away",
            ScenarioKind::PhysicalDeception => "physical_deception",
            ScenarioKind::PredatorPrey => "predator_prey",
            ScenarioKind::CovertComm => "covert_comm",
        }
    }

    /// Scenarios where cooperators face adversaries.
    pub fn is_competitive(self) -> bool {
        matches!(
            self,
            ScenarioKind::KeepAway
                | ScenarioKind::PhysicalDeception
                | ScenarioKind::PredatorPrey
                | ScenarioKind::CovertComm
        )
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cooperator,
    Adversary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub role: Role,
    pub physical_dim: usize,
    pub comm_dim: usize,
    pub obs_dim: usize,
    pub radius: f64,
    pub max_speed: Option<f64>,
    pub movable: bool,
    pub collidable: bool,
}

impl AgentSpec {
    pub fn action_dim(&self) -> usize {
        self.physical_dim + self.comm_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    kind: ScenarioKind,
    agents: Vec<AgentSpec>,
    n_landmarks: usize,
    landmark_radius: f64,
    landmarks_collidable: bool,
    horizon: usize,
    prey_speed_factor: f64,
}

fn spec(name: &str, role: Role, physical: usize, comm: usize, obs: usize, radius: f64) -> AgentSpec {
    AgentSpec {
        name: name.to_string(),
        role,
        physical_dim: physical,
        comm_dim: comm,
        obs_dim: obs,
        radius,
        max_speed: None,
        movable: physical > 0,
        collidable: false,
    }
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        use Role::*;
        let (agents, n_landmarks, landmark_radius, landmarks_collidable, horizon) = match kind {
            ScenarioKind::CoopComm => (
                vec![
                    spec("speaker", Cooperator, 0, COMM_DIM, 3, 0.075),
                    spec("listener", Cooperator, 2, 0, 11, 0.075),
                ],
                3,
                0.04,
                false,
                25,
            ),
            ScenarioKind::CoopNav => {
                let agents = (0..3)
                    .map(|i| AgentSpec {
                        collidable: true,
                        ..spec(&format!("agent_{i}"), Cooperator, 2, 0, 14, 0.15)
                    })
                    .collect();
                (agents, 3, 0.05, false, 25)
            }
            ScenarioKind::KeepAway => (
                vec![
                    AgentSpec { collidable: true, ..spec("agent", Cooperator, 2, 0, 10, 0.075) },
                    AgentSpec { collidable: true, ..spec("adversary", Adversary, 2, 0, 8, 0.075) },
                ],
                2,
                TARGET_THRESHOLD,
                false,
                25,
            ),
            ScenarioKind::PhysicalDeception => (
                vec![
                    spec("agent_0", Cooperator, 2, 0, 12, 0.08),
                    spec("agent_1", Cooperator, 2, 0, 12, 0.08),
                    spec("adversary", Adversary, 2, 0, 10, 0.08),
                ],
                2,
                0.08,
                false,
                25,
            ),
            ScenarioKind::PredatorPrey => {
                let mut agents: Vec<AgentSpec> = (0..3)
                    .map(|i| AgentSpec {
                        collidable: true,
                        max_speed: Some(1.0),
                        ..spec(&format!("predator_{i}"), Cooperator, 2, 0, 22, 0.075)
                    })
                    .collect();
                agents.push(AgentSpec {
                    collidable: true,
                    max_speed: Some(1.3),
                    ..spec("prey", Adversary, 2, 0, 22, 0.05)
                });
                (agents, 3, 0.2, true, 25)
            }
            ScenarioKind::CovertComm => (
                vec![
                    spec("alice", Cooperator, 0, CRYPTO_DIM, CRYPTO_DIM + N_KEYS, 0.05),
                    spec("bob", Cooperator, 0, CRYPTO_DIM, CRYPTO_DIM + N_KEYS, 0.05),
                    spec("eve", Adversary, 0, CRYPTO_DIM, CRYPTO_DIM, 0.05),
                ],
                0,
                0.05,
                false,
                2,
            ),
        };
        Self {
            kind,
            agents,
            n_landmarks,
            landmark_radius,
            landmarks_collidable,
            horizon,
            prey_speed_factor: 1.3,
        }
    }

    /// Predator-prey with the prey `factor` times faster than predators
    /// (1.3 and 2.0 are the two reference presets).
    pub fn predator_prey(factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::config("prey_speed_factor", "must be positive"));
        }
        let mut s = Self::new(ScenarioKind::PredatorPrey);
        s.prey_speed_factor = factor;
        s.agents[3].max_speed = Some(factor);
        Ok(s)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_adversaries(&self) -> usize {
        self.agents.iter().filter(|a| a.role == Role::Adversary).count()
    }

    pub fn n_landmarks(&self) -> usize {
        self.n_landmarks
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn prey_speed_factor(&self) -> f64 {
        self.prey_speed_factor
    }

    pub fn landmark_radius(&self) -> f64 {
        self.landmark_radius
    }

    pub fn obs_dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.obs_dim).collect()
    }

    pub fn action_dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.action_dim()).collect()
    }

    /// Indices of agents with the given role.
    pub fn agents_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.n_agents()).filter(|&i| self.agents[i].role == role).collect()
    }

    /// Whether reaching the horizon ends the episode for bootstrapping
    /// purposes. Only the one-shot signalling game is truly terminal;
    /// physical scenarios are cut by a time limit.
    pub fn terminal_at_horizon(&self) -> bool {
        self.kind == ScenarioKind::CovertComm
    }

    fn uniform_point<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
        [
            rng.random_range(-ARENA_HALF_WIDTH..ARENA_HALF_WIDTH),
            rng.random_range(-ARENA_HALF_WIDTH..ARENA_HALF_WIDTH),
        ]
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (WorldState, Vec<Vec<f64>>) {
        let agents: Vec<Entity> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut e = Entity::new(a.radius);
                e.movable = a.movable;
                e.collidable = a.collidable;
                e.max_speed = a.max_speed;
                e.color_tag = i as u8;
                if self.kind != ScenarioKind::CovertComm {
                    e.position = Self::uniform_point(rng);
                }
                e
            })
            .collect();
        let landmarks: Vec<Entity> = (0..self.n_landmarks)
            .map(|l| {
                let mut e = Entity::new(self.landmark_radius);
                e.movable = false;
                e.collidable = self.landmarks_collidable;
                e.color_tag = l as u8;
                e.position = Self::uniform_point(rng);
                e
            })
            .collect();
        let (goal, message, key) = match self.kind {
            ScenarioKind::CoopComm | ScenarioKind::KeepAway | ScenarioKind::PhysicalDeception => {
                (Some(rng.random_range(0..self.n_landmarks)), None, None)
            }
            ScenarioKind::CovertComm => (
                None,
                Some(rng.random_range(0..N_MESSAGES)),
                Some(rng.random_range(0..N_KEYS)),
            ),
            _ => (None, None, None),
        };
        let state = WorldState {
            agents,
            landmarks,
            comms: self.agents.iter().map(|a| vec![0.0; a.comm_dim]).collect(),
            tick: 0,
            goal,
            message,
            key,
        };
        let obs = self.observe_all(&state);
        (state, obs)
    }

    pub fn step(&self, state: &WorldState, action: &JointAction) -> Result<StepOutcome> {
        let forces = check_action(self, action)?;
        if state.tick >= self.horizon {
            return Err(Error::InvalidArgument(format!(
                "episode already finished at tick {}",
                state.tick
            )));
        }
        let mut next = state.clone();
        integrate(&mut next, &forces);
        for (c, a) in next.comms.iter_mut().zip(action) {
            c.clone_from(&a.comm);
        }
        next.tick += 1;
        let rewards = self.reward_of(&next, action);
        let observations = self.observe_all(&next);
        let done = next.tick >= self.horizon;
        Ok(StepOutcome {
            state: next,
            rewards,
            observations,
            done,
        })
    }

    pub fn observe_all(&self, state: &WorldState) -> Vec<Vec<f64>> {
        (0..self.n_agents()).map(|i| self.observe(state, i)).collect()
    }

    pub fn observe(&self, state: &WorldState, agent: usize) -> Vec<f64> {
        let me = &state.agents[agent];
        let p = me.position;
        let mut obs = Vec::with_capacity(self.agents[agent].obs_dim);
        let rel = |obs: &mut Vec<f64>, q: [f64; 2]| {
            obs.push(q[0] - p[0]);
            obs.push(q[1] - p[1]);
        };
        let landmarks = |obs: &mut Vec<f64>| {
            for lm in &state.landmarks {
                rel(obs, lm.position);
            }
        };
        let others = |obs: &mut Vec<f64>| {
            for (j, o) in state.agents.iter().enumerate() {
                if j != agent {
                    rel(obs, o.position);
                }
            }
        };
        match self.kind {
            ScenarioKind::CoopComm => {
                if agent == 0 {
                    obs.extend(one_hot(state.goal.unwrap_or(0), self.n_landmarks));
                } else {
                    obs.extend_from_slice(&me.velocity);
                    landmarks(&mut obs);
                    obs.extend_from_slice(&state.comms[0]);
                }
            }
            ScenarioKind::CoopNav | ScenarioKind::PredatorPrey => {
                obs.extend_from_slice(&me.velocity);
                obs.extend_from_slice(&me.position);
                landmarks(&mut obs);
                others(&mut obs);
                if self.kind == ScenarioKind::PredatorPrey {
                    for (j, o) in state.agents.iter().enumerate() {
                        if j != agent {
                            obs.extend_from_slice(&o.velocity);
                        }
                    }
                }
            }
            ScenarioKind::KeepAway | ScenarioKind::PhysicalDeception => {
                obs.extend_from_slice(&me.velocity);
                if self.agents[agent].role == Role::Cooperator {
                    rel(&mut obs, state.landmarks[state.goal.unwrap_or(0)].position);
                }
                landmarks(&mut obs);
                others(&mut obs);
            }
            ScenarioKind::CovertComm => match agent {
                0 => {
                    obs.extend(one_hot(state.message.unwrap_or(0), CRYPTO_DIM));
                    obs.extend(one_hot(state.key.unwrap_or(0), N_KEYS));
                }
                1 => {
                    obs.extend_from_slice(&state.comms[0]);
                    obs.extend(one_hot(state.key.unwrap_or(0), N_KEYS));
                }
                _ => obs.extend_from_slice(&state.comms[0]),
            },
        }
        debug_assert_eq!(obs.len(), self.agents[agent].obs_dim);
        obs
    }

    /// Per-agent rewards for the post-step `state` produced by `action`.
    pub fn reward_of(&self, state: &WorldState, action: &JointAction) -> Vec<f64> {
        let n = self.n_agents();
        match self.kind {
            ScenarioKind::CoopComm => {
                let target = &state.landmarks[state.goal.unwrap_or(0)];
                let d = state.agents[1].distance(target);
                vec![-d * d; n]
            }
            ScenarioKind::CoopNav => {
                let cover: f64 = state
                    .landmarks
                    .iter()
                    .map(|lm| {
                        state
                            .agents
                            .iter()
                            .map(|a| a.distance(lm))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .sum();
                let collisions = self.colliding_agent_pairs(state) as f64;
                vec![-cover - collisions; n]
            }
            ScenarioKind::KeepAway => {
                let target = &state.landmarks[state.goal.unwrap_or(0)];
                state.agents.iter().map(|a| -a.distance(target)).collect()
            }
            ScenarioKind::PhysicalDeception => {
                let target = &state.landmarks[state.goal.unwrap_or(0)];
                let coop = self.agents_with_role(Role::Cooperator);
                let adv = self.agents_with_role(Role::Adversary);
                let best = coop
                    .iter()
                    .map(|&i| state.agents[i].distance(target))
                    .fold(f64::INFINITY, f64::min);
                let adv_dist: f64 = adv.iter().map(|&i| state.agents[i].distance(target)).sum();
                (0..n)
                    .map(|i| match self.agents[i].role {
                        Role::Cooperator => -best + adv_dist,
                        Role::Adversary => -state.agents[i].distance(target),
                    })
                    .collect()
            }
            ScenarioKind::PredatorPrey => {
                let touches = self.predator_prey_touches(state) as f64;
                (0..n)
                    .map(|i| match self.agents[i].role {
                        Role::Cooperator => TOUCH_REWARD * touches,
                        Role::Adversary => {
                            let p = state.agents[i].position;
                            -TOUCH_REWARD * touches - boundary_penalty(p[0]) - boundary_penalty(p[1])
                        }
                    })
                    .collect()
            }
            ScenarioKind::CovertComm => {
                let message = state.message.unwrap_or(0);
                let bob = reconstruction_ce(&action[1].comm, message);
                let eve = reconstruction_ce(&action[2].comm, message);
                vec![-bob + eve, -bob + eve, -eve]
            }
        }
    }

    /// Number of colliding agent pairs (`d < r_a + r_b`) among collidable agents.
    pub fn colliding_agent_pairs(&self, state: &WorldState) -> usize {
        let mut count = 0;
        for i in 0..state.agents.len() {
            for j in (i + 1)..state.agents.len() {
                let (a, b) = (&state.agents[i], &state.agents[j]);
                if a.collidable && b.collidable && a.distance(b) < a.radius + b.radius {
                    count += 1;
                }
            }
        }
        count
    }

    /// Number of predator-prey pairs currently in contact.
    pub fn predator_prey_touches(&self, state: &WorldState) -> usize {
        let predators = self.agents_with_role(Role::Cooperator);
        let prey = self.agents_with_role(Role::Adversary);
        let mut count = 0;
        for &p in &predators {
            for &q in &prey {
                let (a, b) = (&state.agents[p], &state.agents[q]);
                if dist(a.position, b.position) < a.radius + b.radius {
                    count += 1;
                }
            }
        }
        count
    }
}

/// `-ln p[message]` with the probability floored.
pub(crate) fn reconstruction_ce(output: &[f64], message: usize) -> f64 {
    -output[message].max(CE_PROB_FLOOR).ln()
}

/// Soft arena-exit penalty for one coordinate.
fn boundary_penalty(x: f64) -> f64 {
    let x = x.abs();
    if x < 0.9 {
        0.0
    } else if x < 1.0 {
        (x - 0.9) * 10.0
    } else {
        (2.0 * x - 2.0).exp().min(10.0)
    }
}

fn one_hot(index: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}
