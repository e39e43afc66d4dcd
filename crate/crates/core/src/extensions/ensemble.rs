use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Role;

/// Per-episode sub-policy selection for every agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    k: usize,
    team_tied: bool,
    roles: Vec<Role>,
    active: Vec<usize>,
}

impl EnsembleState {
    pub fn new(k: usize, team_tied: bool, roles: Vec<Role>) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("ensemble.k", "must be at least 1"));
        }
        let n = roles.len();
        Ok(Self {
            k,
            team_tied,
            roles,
            active: vec![0; n],
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn team_tied(&self) -> bool {
        self.team_tied
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Draws a fresh active index per agent, uniformly from `0..k`. In tied
    /// mode one index is drawn per team and shared by its members.
    pub fn begin_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        if self.team_tied {
            let coop = rng.random_range(0..self.k);
            let adv = rng.random_range(0..self.k);
            for (a, role) in self.active.iter_mut().zip(&self.roles) {
                *a = match role {
                    Role::Cooperator => coop,
                    Role::Adversary => adv,
                };
            }
        } else {
            for a in &mut self.active {
                *a = rng.random_range(0..self.k);
            }
        }
        &self.active
    }
}
