//! Single-sample policy-gradient direction in an N-agent binary coordination game.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

/// Largest agent count accepted by exact enumeration (2^N profiles).
pub const MAX_ENUMERATION_AGENTS: usize = 20;

/// N agents with `P(a_i = 1) = theta_i`; reward 1 iff every action is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryCoordGame {
    theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactProp1 {
    /// `dJ/dtheta_i`, computed as the enumerated expectation of the estimator.
    pub gradient: Vec<f64>,
    pub expected_reward: f64,
    /// Probability mass of profiles whose sample gradient has positive inner
    /// product with the true gradient.
    pub direction_prob: f64,
    /// Per-coordinate variance of the single-sample estimator.
    pub variance: Vec<f64>,
    /// Mean of the reduced estimator `R (2 a_i - 1)`.
    pub reduced_mean: Vec<f64>,
    /// Variance of the reduced estimator `R (2 a_i - 1)`.
    pub reduced_variance: Vec<f64>,
}

impl ExactProp1 {
    /// `E[g_i] / sqrt(Var[g_i])` for coordinate `i`.
    pub fn snr(&self, i: usize) -> f64 {
        self.gradient[i] / self.variance[i].sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl BinaryCoordGame {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidArgument("the game needs at least one agent".into()));
        }
        if theta.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidArgument("every theta must lie strictly inside (0, 1)".into()));
        }
        Ok(Self { theta })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![0.5; n])
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn reward(&self, actions: &[bool]) -> f64 {
        if actions.iter().all(|&a| a) {
            1.0
        } else {
            0.0
        }
    }

    /// Closed-form gradient `prod_{j != i} theta_j`.
    pub fn analytic_gradient(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.theta
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, t)| t)
                    .product()
            })
            .collect()
    }

    /// `R (a_i / theta_i - (1 - a_i) / (1 - theta_i))` for every agent.
    pub fn pg_sample_gradient(&self, actions: &[bool], reward: f64) -> Result<Vec<f64>> {
        if actions.len() != self.n() {
            return Err(Error::shape("action profile", self.n(), actions.len()));
        }
        Ok(self.sample_gradient_unchecked(actions, reward))
    }

    /// The estimator written in its `theta = 0.5` form, `R (2 a_i - 1)`.
    /// At `theta = 0.5` it is exactly half of [`BinaryCoordGame::pg_sample_gradient`],
    /// so both share every sign and direction probability.
    pub fn reduced_sample_gradient(&self, actions: &[bool], reward: f64) -> Result<Vec<f64>> {
        if actions.len() != self.n() {
            return Err(Error::shape("action profile", self.n(), actions.len()));
        }
        Ok(actions.iter().map(|&a| if a { reward } else { -reward }).collect())
    }

    fn sample_gradient_unchecked(&self, actions: &[bool], reward: f64) -> Vec<f64> {
        actions
            .iter()
            .zip(&self.theta)
            .map(|(&a, &t)| if a { reward / t } else { -reward / (1.0 - t) })
            .collect()
    }

    fn profile(&self, mask: u64) -> (Vec<bool>, f64) {
        let actions: Vec<bool> = (0..self.n()).map(|i| mask >> i & 1 == 1).collect();
        let prob = actions
            .iter()
            .zip(&self.theta)
            .map(|(&a, &t)| if a { t } else { 1.0 - t })
            .product();
        (actions, prob)
    }

    /// Exact enumeration over all `2^N` action profiles.
    pub fn exact(&self) -> Result<ExactProp1> {
        let n = self.n();
        if n > MAX_ENUMERATION_AGENTS {
            return Err(Error::InvalidArgument(format!(
                "exact enumeration supports at most {MAX_ENUMERATION_AGENTS} agents, got {n}"
            )));
        }
        let mut expected_reward = 0.0;
        let mut mean = vec![0.0; n];
        let mut second = vec![0.0; n];
        let mut reduced_mean = vec![0.0; n];
        let mut reduced_second = vec![0.0; n];
        for mask in 0..(1u64 << n) {
            let (actions, prob) = self.profile(mask);
            let r = self.reward(&actions);
            expected_reward += prob * r;
            for (i, g) in self.sample_gradient_unchecked(&actions, r).into_iter().enumerate() {
                mean[i] += prob * g;
                second[i] += prob * g * g;
            }
            for (i, &a) in actions.iter().enumerate() {
                let g = if a { r } else { -r };
                reduced_mean[i] += prob * g;
                reduced_second[i] += prob * g * g;
            }
        }
        let mut direction_prob = 0.0;
        for mask in 0..(1u64 << n) {
            let (actions, prob) = self.profile(mask);
            let g = self.sample_gradient_unchecked(&actions, self.reward(&actions));
            let dot: f64 = g.iter().zip(&mean).map(|(a, b)| a * b).sum();
            if dot > 0.0 {
                direction_prob += prob;
            }
        }
        let variance = mean.iter().zip(&second).map(|(m, s)| s - m * m).collect();
        let reduced_variance = reduced_mean
            .iter()
            .zip(&reduced_second)
            .map(|(m, s)| s - m * m)
            .collect();
        Ok(ExactProp1 {
            gradient: mean,
            expected_reward,
            direction_prob,
            variance,
            reduced_mean,
            reduced_variance,
        })
    }

    /// Monte-Carlo estimate of `P(<g_hat, grad J> > 0)` with binomial standard error.
    pub fn mc_direction_prob<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<McEstimate> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one Monte-Carlo sample".into()));
        }
        let grad = self.analytic_gradient();
        let mut hits = 0usize;
        let mut actions = vec![false; self.n()];
        for _ in 0..samples {
            for (a, &t) in actions.iter_mut().zip(&self.theta) {
                *a = rng.random::<f64>() < t;
            }
            let g = self.sample_gradient_unchecked(&actions, self.reward(&actions));
            let dot: f64 = g.iter().zip(&grad).map(|(a, b)| a * b).sum();
            if dot > 0.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        Ok(McEstimate {
            p,
            stderr: (p * (1.0 - p) / samples as f64).sqrt(),
            samples,
        })
    }
}

/// One row of an agent-count sweep at `theta = 0.5`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub exact_p: f64,
    pub mc_p: f64,
    pub stderr: f64,
    pub exact_e_r: f64,
    pub snr: f64,
}

/// Exact and Monte-Carlo direction probabilities for every `n` in `ns`.
/// Each row draws from its own stream of `seed`.
pub fn sweep(ns: &[usize], samples: usize, seed: u64, exec: Exec) -> Result<Vec<SweepRow>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one Monte-Carlo sample".into()));
    }
    exec.map_slice(ns, |&n| {
        let game = BinaryCoordGame::uniform(n)?;
        let exact = game.exact()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n as u64);
        let mc = game.mc_direction_prob(samples, &mut rng)?;
        Ok(SweepRow {
            n,
            exact_p: exact.direction_prob,
            mc_p: mc.p,
            stderr: mc.stderr,
            exact_e_r: exact.expected_reward,
            snr: exact.snr(0),
        })
    })
    .into_iter()
    .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("N,exact_p,mc_p,stderr,exact_E_R,snr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.exact_p, r.mc_p, r.stderr, r.exact_e_r, r.snr
        ));
    }
    out
}
