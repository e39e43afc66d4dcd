//! Run configuration documents: TOML file, flag overrides and resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Failure;
use crate::trainer::{EnsembleConfig, Mode, OpponentConfig, TrainConfig};
use crate::world::{Scenario, ScenarioKind};

pub const OUT_ENV: &str = "MPLAB_OUT";
pub const DEFAULT_OUT: &str = "runs";
pub const DEFAULT_FINAL_EVAL_EPISODES: usize = 1000;

/// Learner of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Maddpg,
    Ddpg,
    Reinforce,
    Iac,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Maddpg => "maddpg",
            Algo::Ddpg => "ddpg",
            Algo::Reinforce => "reinforce",
            Algo::Iac => "iac",
        }
    }

    pub fn parse(s: &str) -> Result<Self, Failure> {
        match s {
            "maddpg" => Ok(Algo::Maddpg),
            "ddpg" => Ok(Algo::Ddpg),
            "reinforce" => Ok(Algo::Reinforce),
            "iac" => Ok(Algo::Iac),
            other => Err(Failure::config(format!(
                "algo: unknown algorithm `{other}` (expected maddpg, ddpg, reinforce or iac)"
            ))),
        }
    }

    pub fn is_off_policy(self) -> bool {
        matches!(self, Algo::Maddpg | Algo::Ddpg)
    }
}

/// One algorithm for every agent, or one per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlgoSpec {
    One(String),
    PerAgent(Vec<String>),
}

/// A configuration document as written by the user. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub name: Option<String>,
    pub scenario: Option<String>,
    pub algo: Option<AlgoSpec>,
    pub horizon: Option<usize>,
    pub prey_speed_factor: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub final_eval_episodes: Option<usize>,
    pub eval_seed: Option<u64>,
    pub train: Option<toml::Table>,
}

/// Fully resolved configuration of a training command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub scenario: ScenarioKind,
    pub algo: Vec<Algo>,
    pub horizon: Option<usize>,
    pub prey_speed_factor: Option<f64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub final_eval_episodes: usize,
    pub eval_seed: u64,
    pub train: TrainConfig,
}

/// Flag overrides applied on top of the configuration document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub name: Option<String>,
    pub scenario: Option<String>,
    pub algo: Vec<String>,
    pub episodes: Option<usize>,
    pub seeds: Vec<u64>,
    pub num_seeds: Option<usize>,
    pub out: Option<PathBuf>,
    pub horizon: Option<usize>,
    pub prey_speed_factor: Option<f64>,
    pub opponent_models: bool,
    pub ensemble: Option<usize>,
    pub final_eval_episodes: Option<usize>,
    /// `key=value` assignments into the `train` table.
    pub set: Vec<String>,
}

/// Seed count used when none is given: ten for the scenarios with stark
/// success or failure outcomes, three otherwise.
pub fn default_seed_count(kind: ScenarioKind) -> usize {
    match kind {
        ScenarioKind::CoopComm | ScenarioKind::PhysicalDeception | ScenarioKind::CovertComm => 10,
        _ => 3,
    }
}

pub fn read_run_file(path: &Path) -> Result<RunFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("config: cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
}

fn parse_assignment(s: &str) -> Result<(String, toml::Value), Failure> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("set: expected key=value, got `{s}`")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table holds the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

fn train_config(kind: ScenarioKind, user: Option<&toml::Table>) -> Result<TrainConfig, Failure> {
    let base = TrainConfig::for_scenario(kind);
    let Some(user) = user else {
        return Ok(base);
    };
    let non_empty = |v: &toml::Value| v.as_array().is_none_or(|a| !a.is_empty());
    if user.get("modes").is_some_and(non_empty) {
        return Err(Failure::config("train.modes: choose per-agent learners with `algo`"));
    }
    let mut table = toml::Table::try_from(&base).expect("train config serializes");
    for (k, v) in user {
        table.insert(k.clone(), v.clone());
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::config(format!("train: {e}")))
}

impl RunConfig {
    /// Resolves a document and flag overrides. Output root precedence:
    /// `--out`, then `MPLAB_OUT`, then `out_dir`, then `runs`.
    pub fn resolve(file: RunFile, flags: Overrides, env_out: Option<PathBuf>) -> Result<Self, Failure> {
        let scenario_name = flags
            .scenario
            .or(file.scenario)
            .ok_or_else(|| Failure::config("scenario: missing (pass --scenario or set it in the config)"))?;
        let kind: ScenarioKind = scenario_name.parse().map_err(Failure::from)?;

        let mut train_table = file.train.clone().unwrap_or_default();
        for a in &flags.set {
            let (k, v) = parse_assignment(a)?;
            train_table.insert(k, v);
        }
        let mut train = train_config(kind, Some(&train_table))?;
        if let Some(e) = flags.episodes {
            train.episodes = e;
        }
        if flags.opponent_models && train.opponent_models.is_none() {
            train.opponent_models = Some(OpponentConfig::default());
        }
        if let Some(k) = flags.ensemble {
            let mut ens = train.ensemble.clone().unwrap_or_else(|| EnsembleConfig::for_scenario(kind));
            ens.k = k;
            train.ensemble = Some(ens);
        }

        let horizon = flags.horizon.or(file.horizon);
        let prey_speed_factor = flags.prey_speed_factor.or(file.prey_speed_factor);
        let config = Self {
            name: String::new(),
            scenario: kind,
            algo: Vec::new(),
            horizon,
            prey_speed_factor,
            seeds: Vec::new(),
            out_dir: PathBuf::new(),
            final_eval_episodes: flags
                .final_eval_episodes
                .or(file.final_eval_episodes)
                .unwrap_or(DEFAULT_FINAL_EVAL_EPISODES),
            eval_seed: file.eval_seed.unwrap_or(0),
            train,
        };
        let scenario = config.scenario()?;
        let n = scenario.n_agents();

        let algo_names: Vec<String> = if !flags.algo.is_empty() {
            flags.algo
        } else {
            match file.algo {
                Some(AlgoSpec::One(a)) => vec![a],
                Some(AlgoSpec::PerAgent(v)) => v,
                None => vec!["maddpg".to_string()],
            }
        };
        let mut algo = algo_names.iter().map(|a| Algo::parse(a)).collect::<Result<Vec<_>, _>>()?;
        if algo.len() == 1 {
            algo = vec![algo[0]; n];
        }
        if algo.len() != n {
            return Err(Failure::config(format!(
                "algo: {} lists {} entries but `{}` has {n} agents",
                algo_names.join(","),
                algo.len(),
                kind
            )));
        }

        let seeds = if !flags.seeds.is_empty() {
            flags.seeds
        } else if let Some(count) = flags.num_seeds {
            (0..count as u64).collect()
        } else {
            file.seeds.unwrap_or_else(|| (0..default_seed_count(kind) as u64).collect())
        };
        if seeds.is_empty() {
            return Err(Failure::config("seeds: at least one seed is required"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Failure::config("seeds: duplicate seeds would share a run directory"));
        }

        let out_dir = flags
            .out
            .or(env_out)
            .or(file.out_dir)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let name = flags
            .name
            .or(file.name)
            .unwrap_or_else(|| default_name(kind, &algo, &config.train));
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(Failure::config(format!("name: `{name}` is not a valid directory name")));
        }

        let resolved = Self {
            name,
            algo,
            seeds,
            out_dir,
            ..config
        };
        resolved.validate()?;
        Ok(resolved)
    }

    pub fn scenario(&self) -> Result<Scenario, Failure> {
        let mut scenario = match self.prey_speed_factor {
            Some(f) if self.scenario == ScenarioKind::PredatorPrey => {
                Scenario::predator_prey(f).map_err(Failure::from)?
            }
            Some(_) => {
                return Err(Failure::config(
                    "prey_speed_factor: only applies to predator_prey",
                ))
            }
            None => Scenario::new(self.scenario),
        };
        if let Some(h) = self.horizon {
            scenario = scenario.with_horizon(h).map_err(Failure::from)?;
        }
        Ok(scenario)
    }

    /// Learner modes of the off-policy agents, empty for on-policy runs.
    pub fn modes(&self) -> Vec<Mode> {
        self.algo
            .iter()
            .filter_map(|a| match a {
                Algo::Maddpg => Some(Mode::Maddpg),
                Algo::Ddpg => Some(Mode::Ddpg),
                _ => None,
            })
            .collect()
    }

    pub fn off_policy(&self) -> bool {
        self.algo.iter().all(|a| a.is_off_policy())
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let scenario = self.scenario()?;
        let off = self.algo.iter().filter(|a| a.is_off_policy()).count();
        if off != 0 && off != self.algo.len() {
            return Err(Failure::config(
                "algo: mixing replay-based (maddpg, ddpg) and on-policy (reinforce, iac) learners is not supported",
            ));
        }
        if self.final_eval_episodes == 0 {
            return Err(Failure::config("final_eval_episodes: must be positive"));
        }
        let mut cfg = self.train.clone();
        cfg.modes = self.modes();
        cfg.validate(scenario.n_agents()).map_err(Failure::from)?;
        if !self.off_policy() && (cfg.opponent_models.is_some() || cfg.ensemble.is_some()) {
            return Err(Failure::config(
                "train: opponent_models and ensemble need maddpg or ddpg learners",
            ));
        }
        Ok(())
    }

    /// Training configuration of one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = seed;
        cfg.modes = self.modes();
        cfg
    }

    /// The configuration restricted to one seed, as written next to its artifacts.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn default_name(kind: ScenarioKind, algo: &[Algo], train: &TrainConfig) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for a in algo {
        if parts.last() != Some(&a.name()) {
            parts.push(a.name());
        }
    }
    let mut name = format!("{kind}-{}", parts.join("-"));
    if train.opponent_models.is_some() {
        name.push_str("-om");
    }
    if let Some(e) = &train.ensemble {
        name.push_str(&format!("-ens{}", e.k));
    }
    name
}
