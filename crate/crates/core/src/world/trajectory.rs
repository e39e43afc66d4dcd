use serde::{Deserialize, Serialize};

use super::{JointAction, Vec2, WorldState};

/// One JSON-lines record of an exported rollout.
///
/// Record `tick = t` holds the state at `t` together with the actions and
/// rewards of the step that produced it (`None` at `t = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub tick: usize,
    /// Agents first, then landmarks.
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub comms: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    pub rewards: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn capture(
        episode: usize,
        state: &WorldState,
        action: Option<&JointAction>,
        rewards: Option<&[f64]>,
    ) -> Self {
        Self {
            episode,
            tick: state.tick,
            positions: state
                .agents
                .iter()
                .chain(&state.landmarks)
                .map(|e| e.position)
                .collect(),
            velocities: state.agents.iter().map(|e| e.velocity).collect(),
            comms: state.comms.clone(),
            actions: action.map(|a| a.iter().map(|x| x.to_flat()).collect()),
            rewards: rewards.map(<[f64]>::to_vec),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory records always serialize")
    }
}
