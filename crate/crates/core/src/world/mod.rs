//! Deterministic 2D particle world: continuous space, discrete time.
//!
//! The engine is pure state-in/state-out. Scenario definitions (entity
//! rosters, observation layouts, rewards) live in [`scenarios`].

mod scenarios;
mod trajectory;

pub use scenarios::{AgentSpec, Role, Scenario, ScenarioKind, TARGET_THRESHOLD};
pub use trajectory::TrajectoryRecord;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.25;
pub const FORCE_GAIN: f64 = 5.0;
pub const ARENA_HALF_WIDTH: f64 = 1.0;
pub const CONTACT_GAIN: f64 = 100.0;
pub const CONTACT_MARGIN: f64 = 1e-3;
/// Spring constant of the soft wall that starts at the arena edge.
pub const BOUNDARY_GAIN: f64 = 20.0;

pub type Vec2 = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub mass: f64,
    pub max_speed: Option<f64>,
    pub movable: bool,
    pub collidable: bool,
    pub color_tag: u8,
}

impl Entity {
    pub fn new(radius: f64) -> Self {
        Self {
            position: [0.0, 0.0],
            velocity: [0.0, 0.0],
            radius,
            mass: 1.0,
            max_speed: None,
            movable: true,
            collidable: true,
            color_tag: 0,
        }
    }

    pub fn distance(&self, other: &Entity) -> f64 {
        dist(self.position, other.position)
    }
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<Entity>,
    pub landmarks: Vec<Entity>,
    /// Latest broadcast of every agent (empty for silent agents).
    pub comms: Vec<Vec<f64>>,
    pub tick: usize,
    /// Hidden target landmark index, when the scenario has one.
    pub goal: Option<usize>,
    /// Hidden message index (covert communication).
    pub message: Option<usize>,
    /// Hidden key bit (covert communication).
    pub key: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    /// Force command in `[-1, 1]^2`, or empty for agents that cannot move.
    pub physical: Vec<f64>,
    /// Communication simplex vector, or empty for silent agents.
    pub comm: Vec<f64>,
}

impl AgentAction {
    pub fn new(physical: Vec<f64>, comm: Vec<f64>) -> Self {
        Self { physical, comm }
    }

    /// Flat `[physical | comm]` layout used by critics and the replay buffer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.physical.clone();
        v.extend_from_slice(&self.comm);
        v
    }

    pub fn from_flat(flat: &[f64], physical_dim: usize) -> Self {
        Self {
            physical: flat[..physical_dim].to_vec(),
            comm: flat[physical_dim..].to_vec(),
        }
    }
}

pub type JointAction = Vec<AgentAction>;

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: WorldState,
    pub rewards: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Soft-penetration contact force exerted on `a` by `b`.
///
/// Coincident centres push `a` along `+x`; callers apply the negation to `b`
/// so the pair stays antisymmetric.
pub fn contact_force(a: &Entity, b: &Entity) -> Vec2 {
    let delta = [a.position[0] - b.position[0], a.position[1] - b.position[1]];
    let d = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
    let d_min = a.radius + b.radius;
    let k = CONTACT_MARGIN;
    let sp = softplus((d_min - d) / k);
    if sp < 1e-9 {
        return [0.0, 0.0];
    }
    let penetration = k * sp;
    let magnitude = CONTACT_GAIN * penetration;
    if d == 0.0 {
        return [magnitude, 0.0];
    }
    [magnitude * delta[0] / d, magnitude * delta[1] / d]
}

fn boundary_force(p: Vec2) -> Vec2 {
    let mut f = [0.0; 2];
    for axis in 0..2 {
        let excess = p[axis].abs() - ARENA_HALF_WIDTH;
        if excess > 0.0 {
            f[axis] = -BOUNDARY_GAIN * excess * p[axis].signum();
        }
    }
    f
}

/// Advances every movable entity by one semi-implicit Euler step.
///
/// `forces[i]` is the applied (already gained) force on agent `i`.
pub(crate) fn integrate(state: &mut WorldState, applied: &[Vec2]) {
    let n_agents = state.agents.len();
    let mut forces: Vec<Vec2> = applied.to_vec();
    forces.resize(n_agents, [0.0, 0.0]);
    let mut landmark_forces = vec![[0.0f64; 2]; state.landmarks.len()];

    // Pairwise contacts, agent-agent then agent-landmark.
    for i in 0..n_agents {
        if !state.agents[i].collidable {
            continue;
        }
        for j in (i + 1)..n_agents {
            if !state.agents[j].collidable {
                continue;
            }
            let f = contact_force(&state.agents[i], &state.agents[j]);
            forces[i][0] += f[0];
            forces[i][1] += f[1];
            forces[j][0] -= f[0];
            forces[j][1] -= f[1];
        }
        for (l, lm) in state.landmarks.iter().enumerate() {
            if !lm.collidable {
                continue;
            }
            let f = contact_force(&state.agents[i], lm);
            forces[i][0] += f[0];
            forces[i][1] += f[1];
            landmark_forces[l][0] -= f[0];
            landmark_forces[l][1] -= f[1];
        }
    }

    let step_entity = |e: &mut Entity, f: Vec2| {
        if !e.movable {
            return;
        }
        let b = boundary_force(e.position);
        for axis in 0..2 {
            e.velocity[axis] =
                (1.0 - DAMPING) * e.velocity[axis] + (f[axis] + b[axis]) / e.mass * DT;
        }
        if let Some(max) = e.max_speed {
            let speed = (e.velocity[0].powi(2) + e.velocity[1].powi(2)).sqrt();
            if speed > max {
                e.velocity[0] *= max / speed;
                e.velocity[1] *= max / speed;
            }
        }
        for axis in 0..2 {
            e.position[axis] += e.velocity[axis] * DT;
        }
    };
    for (e, f) in state.agents.iter_mut().zip(&forces) {
        step_entity(e, *f);
    }
    for (e, f) in state.landmarks.iter_mut().zip(&landmark_forces) {
        step_entity(e, *f);
    }
}

/// Validates an action against the scenario and returns clamped force commands.
pub(crate) fn check_action(scenario: &Scenario, action: &JointAction) -> Result<Vec<Vec2>> {
    if action.len() != scenario.n_agents() {
        return Err(Error::shape("joint action agents", scenario.n_agents(), action.len()));
    }
    let mut forces = Vec::with_capacity(action.len());
    for (spec, a) in scenario.agents().iter().zip(action) {
        if a.physical.len() != spec.physical_dim {
            return Err(Error::shape(
                format!("{} physical action", spec.name),
                spec.physical_dim,
                a.physical.len(),
            ));
        }
        if a.comm.len() != spec.comm_dim {
            return Err(Error::shape(
                format!("{} communication action", spec.name),
                spec.comm_dim,
                a.comm.len(),
            ));
        }
        if a.physical.iter().chain(&a.comm).any(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("{} action", spec.name)));
        }
        if spec.physical_dim == 2 {
            let u = [a.physical[0].clamp(-1.0, 1.0), a.physical[1].clamp(-1.0, 1.0)];
            forces.push([FORCE_GAIN * u[0], FORCE_GAIN * u[1]]);
        } else {
            forces.push([0.0, 0.0]);
        }
    }
    Ok(forces)
}
