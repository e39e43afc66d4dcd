//! Noise-free evaluation rollouts and per-scenario metrics.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::argmax;
use crate::par::Exec;
use crate::policy::AgentPolicy;
use crate::world::{dist, JointAction, Role, Scenario, ScenarioKind, WorldState, TARGET_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Agents of one team share the sampled sub-policy index.
    pub team_tied: bool,
    pub exec: Exec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            team_tied: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    /// Policy provenance label of every agent.
    pub provenance: Vec<String>,
    pub episodes: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Min-max normalised agent-side score, set by cross-play.
    pub normalized_score: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k},{v}\n"));
        }
        if let Some(s) = self.normalized_score {
            out.push_str(&format!("normalized_score,{s}\n"));
        }
        out
    }
}

/// Metric names reported for each scenario, in report order.
pub fn metric_names(kind: ScenarioKind) -> &'static [&'static str] {
    match kind {
        ScenarioKind::CoopComm => &["avg_distance", "target_reach_pct"],
        ScenarioKind::CoopNav => &["avg_distance", "collisions_per_episode"],
        ScenarioKind::KeepAway => &["adversary_goal_frames", "agent_goal_frames"],
        ScenarioKind::PhysicalDeception => &["adversary_success_pct", "agent_success_pct", "delta_success_pct"],
        ScenarioKind::PredatorPrey => &["touches_per_episode"],
        ScenarioKind::CovertComm => &["bob_success_pct", "delta_success_pct", "eve_success_pct"],
    }
}

/// The cooperating side's primary metric used by cross-play (larger is better).
pub fn agent_side_score(kind: ScenarioKind, metrics: &BTreeMap<String, f64>) -> Result<f64> {
    let get = |k: &str| {
        metrics
            .get(k)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("report lacks metric `{k}`")))
    };
    match kind {
        ScenarioKind::PhysicalDeception | ScenarioKind::CovertComm => get("delta_success_pct"),
        ScenarioKind::KeepAway => Ok(-get("adversary_goal_frames")?),
        ScenarioKind::PredatorPrey => get("touches_per_episode"),
        _ => Err(Error::InvalidArgument(format!("{kind} is not a competitive scenario"))),
    }
}

fn pct(hit: bool) -> f64 {
    if hit {
        100.0
    } else {
        0.0
    }
}

/// Per-step counters accumulated during an episode.
#[derive(Default)]
struct Tally {
    collisions: f64,
    touches: f64,
    agent_goal_frames: f64,
    adversary_goal_frames: f64,
}

impl Tally {
    fn observe(&mut self, scenario: &Scenario, state: &WorldState) {
        match scenario.kind() {
            ScenarioKind::CoopNav => self.collisions += scenario.colliding_agent_pairs(state) as f64,
            ScenarioKind::PredatorPrey => self.touches += scenario.predator_prey_touches(state) as f64,
            ScenarioKind::KeepAway => {
                // A side holds the goal when one of its agents is inside the
                // goal radius and nearer the centre than every opponent.
                let goal = &state.landmarks[state.goal.unwrap_or(0)];
                let nearest = |role: Role| {
                    scenario
                        .agents()
                        .iter()
                        .zip(&state.agents)
                        .filter(|(spec, _)| spec.role == role)
                        .map(|(_, a)| a.distance(goal))
                        .fold(f64::INFINITY, f64::min)
                };
                let (coop, adv) = (nearest(Role::Cooperator), nearest(Role::Adversary));
                if coop < goal.radius && coop < adv {
                    self.agent_goal_frames += 1.0;
                }
                if adv < goal.radius && adv < coop {
                    self.adversary_goal_frames += 1.0;
                }
            }
            _ => {}
        }
    }
}

fn final_metrics(scenario: &Scenario, state: &WorldState, tally: &Tally) -> Vec<(&'static str, f64)> {
    match scenario.kind() {
        ScenarioKind::CoopComm => {
            let target = &state.landmarks[state.goal.unwrap_or(0)];
            let d = state.agents[1].distance(target);
            vec![("avg_distance", d), ("target_reach_pct", pct(d < TARGET_THRESHOLD))]
        }
        ScenarioKind::CoopNav => {
            let cover: f64 = state
                .landmarks
                .iter()
                .map(|lm| {
                    state
                        .agents
                        .iter()
                        .map(|a| dist(a.position, lm.position))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / state.landmarks.len() as f64;
            vec![("avg_distance", cover), ("collisions_per_episode", tally.collisions)]
        }
        ScenarioKind::KeepAway => vec![
            ("adversary_goal_frames", tally.adversary_goal_frames),
            ("agent_goal_frames", tally.agent_goal_frames),
        ],
        ScenarioKind::PhysicalDeception => {
            let target = &state.landmarks[state.goal.unwrap_or(0)];
            let near = |role: Role| {
                scenario
                    .agents_with_role(role)
                    .iter()
                    .any(|&i| state.agents[i].distance(target) < TARGET_THRESHOLD)
            };
            let (ag, adv) = (pct(near(Role::Cooperator)), pct(near(Role::Adversary)));
            vec![
                ("adversary_success_pct", adv),
                ("agent_success_pct", ag),
                ("delta_success_pct", ag - adv),
            ]
        }
        ScenarioKind::PredatorPrey => vec![("touches_per_episode", tally.touches)],
        ScenarioKind::CovertComm => {
            let m = state.message.unwrap_or(0);
            let bob = pct(argmax(&state.comms[1]) == m);
            let eve = pct(argmax(&state.comms[2]) == m);
            vec![
                ("bob_success_pct", bob),
                ("delta_success_pct", bob - eve),
                ("eve_success_pct", eve),
            ]
        }
    }
}

/// Sub-policy index of every agent for one episode.
fn pick_variants(
    scenario: &Scenario,
    policies: &[&dyn AgentPolicy],
    team_tied: bool,
    rng: &mut dyn RngCore,
) -> Vec<usize> {
    if team_tied {
        let mut team = [None, None];
        (0..policies.len())
            .map(|i| {
                let slot = match scenario.agents()[i].role {
                    Role::Cooperator => 0,
                    Role::Adversary => 1,
                };
                let v = policies[i].variants();
                let k = *team[slot].get_or_insert_with(|| rng.random_range(0..v.max(1)));
                k % v.max(1)
            })
            .collect()
    } else {
        policies.iter().map(|p| rng.random_range(0..p.variants().max(1))).collect()
    }
}

/// Metrics of one noise-free episode on stream `episode` of `seed`.
pub fn evaluate_episode(
    scenario: &Scenario,
    policies: &[&dyn AgentPolicy],
    seed: u64,
    episode: u64,
    team_tied: bool,
) -> Result<Vec<(&'static str, f64)>> {
    rollout_episode(scenario, policies, seed, episode, team_tied, |_, _, _| Ok(()))
}

/// Runs the same episode as [`evaluate_episode`], calling `on_state` with the
/// reset state and then with every stepped state, its joint action and rewards.
pub fn rollout_episode<F>(
    scenario: &Scenario,
    policies: &[&dyn AgentPolicy],
    seed: u64,
    episode: u64,
    team_tied: bool,
    mut on_state: F,
) -> Result<Vec<(&'static str, f64)>>
where
    F: FnMut(&WorldState, Option<&JointAction>, Option<&[f64]>) -> Result<()>,
{
    if policies.len() != scenario.n_agents() {
        return Err(Error::shape("policies", scenario.n_agents(), policies.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    let variants = pick_variants(scenario, policies, team_tied, &mut rng);
    let (mut state, mut obs) = scenario.reset(&mut rng);
    on_state(&state, None, None)?;
    let mut tally = Tally::default();
    for _ in 0..scenario.horizon() {
        let action = policies
            .iter()
            .zip(&variants)
            .zip(&obs)
            .map(|((p, &v), o)| p.act(v, o, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let out = scenario.step(&state, &action)?;
        tally.observe(scenario, &out.state);
        on_state(&out.state, Some(&action), Some(&out.rewards))?;
        state = out.state;
        obs = out.observations;
    }
    Ok(final_metrics(scenario, &state, &tally))
}

/// Averages scenario metrics over `episodes` noise-free rollouts. Episode
/// `e` always uses stream `e` of `seed`, so the report does not depend on
/// the execution mode.
pub fn evaluate(
    scenario: &Scenario,
    policies: &[&dyn AgentPolicy],
    episodes: usize,
    seed: u64,
    opts: EvalOptions,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if policies.len() != scenario.n_agents() {
        return Err(Error::shape("policies", scenario.n_agents(), policies.len()));
    }
    let per_episode = opts
        .exec
        .map_range(episodes, |e| evaluate_episode(scenario, policies, seed, e as u64, opts.team_tied));
    let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
    for ep in per_episode {
        for (k, v) in ep? {
            *metrics.entry(k.to_string()).or_insert(0.0) += v;
        }
    }
    for v in metrics.values_mut() {
        *v /= episodes as f64;
    }
    Ok(EvalReport {
        scenario: scenario.name().to_string(),
        provenance: policies.iter().map(|p| p.label()).collect(),
        episodes,
        seed,
        metrics,
        normalized_score: None,
    })
}
