//! Proposition-1 harness, evaluation metrics and cross-play tournaments.

mod evaluate;
mod prop1;

pub use evaluate::{agent_side_score, evaluate, evaluate_episode, metric_names, rollout_episode, EvalOptions, EvalReport};
pub use prop1::{sweep, sweep_csv, BinaryCoordGame, ExactProp1, McEstimate, SweepRow, MAX_ENUMERATION_AGENTS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::AgentPolicy;
use crate::world::{Role, Scenario};

/// A full roster of policies with a display label. Cross-play takes the
/// cooperators from one set and the adversaries from another.
pub struct PolicySet<'a> {
    pub label: String,
    pub policies: Vec<&'a dyn AgentPolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossplayMatrix {
    pub scenario: String,
    /// Row labels (agent side).
    pub agent_labels: Vec<String>,
    /// Column labels (adversary side).
    pub adversary_labels: Vec<String>,
    /// Agent-side primary metric of every pairing, `raw[row][col]`.
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub reports: Vec<Vec<EvalReport>>,
}

/// Min-max normalisation to `[0, 1]`; a constant matrix maps to 0.5.
pub fn min_max_normalize(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let values = raw.iter().flatten();
    let min = values.clone().cloned().fold(f64::INFINITY, f64::min);
    let max = values.cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|row| {
            row.iter()
                .map(|v| if max > min { (v - min) / (max - min) } else { 0.5 })
                .collect()
        })
        .collect()
}

impl CrossplayMatrix {
    pub fn raw_at(&self, agent_label: &str, adversary_label: &str) -> Option<f64> {
        let r = self.agent_labels.iter().position(|l| l == agent_label)?;
        let c = self.adversary_labels.iter().position(|l| l == adversary_label)?;
        Some(self.raw[r][c])
    }

    pub fn normalized_at(&self, agent_label: &str, adversary_label: &str) -> Option<f64> {
        let r = self.agent_labels.iter().position(|l| l == agent_label)?;
        let c = self.adversary_labels.iter().position(|l| l == adversary_label)?;
        Some(self.normalized[r][c])
    }

    /// One row per pairing and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent,adversary,metric,value\n");
        for (r, row) in self.reports.iter().enumerate() {
            for (c, report) in row.iter().enumerate() {
                let (a, b) = (&self.agent_labels[r], &self.adversary_labels[c]);
                for (k, v) in &report.metrics {
                    out.push_str(&format!("{a},{b},{k},{v}\n"));
                }
                out.push_str(&format!("{a},{b},agent_side_score,{}\n", self.raw[r][c]));
                out.push_str(&format!("{a},{b},normalized_score,{}\n", self.normalized[r][c]));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates every (agent side, adversary side) pairing and min-max
/// normalises the agent-side metric across the matrix.
pub fn crossplay(
    scenario: &Scenario,
    agent_sides: &[PolicySet<'_>],
    adversary_sides: &[PolicySet<'_>],
    episodes: usize,
    seed: u64,
    opts: EvalOptions,
) -> Result<CrossplayMatrix> {
    if !scenario.kind().is_competitive() {
        return Err(Error::InvalidArgument(format!(
            "cross-play needs a competitive scenario, got {}",
            scenario.name()
        )));
    }
    if agent_sides.is_empty() || adversary_sides.is_empty() {
        return Err(Error::InvalidArgument("cross-play needs at least one policy set per side".into()));
    }
    for set in agent_sides.iter().chain(adversary_sides) {
        if set.policies.len() != scenario.n_agents() {
            return Err(Error::shape(
                format!("policy set `{}`", set.label),
                scenario.n_agents(),
                set.policies.len(),
            ));
        }
    }
    let roles: Vec<Role> = scenario.agents().iter().map(|a| a.role).collect();
    let mut reports = Vec::with_capacity(agent_sides.len());
    let mut raw = Vec::with_capacity(agent_sides.len());
    for ag in agent_sides {
        let mut report_row = Vec::with_capacity(adversary_sides.len());
        let mut raw_row = Vec::with_capacity(adversary_sides.len());
        for adv in adversary_sides {
            let mixed: Vec<&dyn AgentPolicy> = roles
                .iter()
                .enumerate()
                .map(|(i, role)| match role {
                    Role::Cooperator => ag.policies[i],
                    Role::Adversary => adv.policies[i],
                })
                .collect();
            let mut report = evaluate(scenario, &mixed, episodes, seed, opts)?;
            raw_row.push(agent_side_score(scenario.kind(), &report.metrics)?);
            report.provenance = mixed.iter().map(|p| p.label()).collect();
            report_row.push(report);
        }
        reports.push(report_row);
        raw.push(raw_row);
    }
    let normalized = min_max_normalize(&raw);
    for (row, nrow) in reports.iter_mut().zip(&normalized) {
        for (rep, n) in row.iter_mut().zip(nrow) {
            rep.normalized_score = Some(*n);
        }
    }
    Ok(CrossplayMatrix {
        scenario: scenario.name().to_string(),
        agent_labels: agent_sides.iter().map(|s| s.label.clone()).collect(),
        adversary_labels: adversary_sides.iter().map(|s| s.label.clone()).collect(),
        raw,
        normalized,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_matrix_maps_to_half() {
        assert_eq!(min_max_normalize(&[vec![3.0]]), vec![vec![0.5]]);
        let n = min_max_normalize(&[vec![1.0, 3.0], vec![2.0, 1.0]]);
        assert_eq!(n, vec![vec![0.0, 1.0], vec![0.5, 0.0]]);
    }
}
