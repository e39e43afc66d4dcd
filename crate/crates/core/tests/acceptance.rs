//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`. Extra arguments select
//! criteria by id prefix (`cargo test --test acceptance -- C5`). The full-scale
//! cooperative-communication run only executes with `MPLAB_ACCEPTANCE_FULL=1`.

use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mplab::analysis::{crossplay, rollout_episode, BinaryCoordGame, CrossplayMatrix, EvalOptions, PolicySet};
use mplab::baselines::{BaselineAlgo, BaselineTrainer, PolicySample, StochasticPolicy};
use mplab::extensions::{approx_critic_target, EnsembleState, OpponentModel};
use mplab::numerics::{gumbel_softmax, soft_update, Activation, HeadKind, HeadSlice, Mlp, OutputHead};
use mplab::par::Exec;
use mplab::policy::{ActorPolicy, AgentPolicy, RandomPolicy};
use mplab::trainer::{
    actor_loss_gradient, critic_loss_and_gradient, ActorNet, AgentNets, EnsembleConfig, Layout,
    MetricsRow, Mode, OpponentConfig, ReplayBuffer, TrainConfig, TrainerState, Transition,
};
use mplab::world::{contact_force, AgentAction, Entity, Role, Scenario, ScenarioKind, DAMPING};

const FULL_ENV: &str = "MPLAB_ACCEPTANCE_FULL";
const EVAL_EPISODES: usize = 1000;
const EVAL_SEED: u64 = 1_000_003;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

type Criterion = (&'static str, &'static str, fn() -> Result<Verdict>);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: &[Criterion] = &[
        ("C1", "prop1-exact", c1_prop1_exact),
        ("C2", "prop1-monte-carlo", c2_prop1_mc),
        ("C3", "gradient-correctness", c3_gradients),
        ("C4", "coop-comm-smoke", c4_smoke),
        ("C4-full", "coop-comm-full", c4_full),
        ("C5", "deception-crossplay", c5_deception),
        ("C6", "opponent-models", c6_opponent_models),
        ("C7", "keep-away-ensembles", c7_ensembles),
        ("C8", "property-suites", c8_properties),
        ("S1", "smoke-coop-nav", || smoke_default(ScenarioKind::CoopNav)),
        ("S2", "smoke-predator-prey", || smoke_default(ScenarioKind::PredatorPrey)),
        ("S3", "smoke-covert-comm", smoke_covert),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| id.starts_with(f.as_str())) {
            continue;
        }
        if *id == "C4-full" && std::env::var_os(FULL_ENV).is_none() {
            println!("SKIP {id} {name}: set {FULL_ENV}=1 to run (about twenty minutes on one core)");
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(v) if v.pass => println!("PASS {id} {name} ({secs:.1}s): {}", v.detail),
            Ok(v) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {}", v.detail);
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): error: {e:#}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- C1, C2

fn c1_prop1_exact() -> Result<Verdict> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in 1..=16usize {
        let exact = BinaryCoordGame::uniform(n)?.exact()?;
        let p = 0.5f64.powi(n as i32);
        let var = p - p * p;
        let mut checks = vec![(exact.direction_prob, p), (exact.expected_reward, p)];
        for i in 0..n {
            checks.push((exact.reduced_mean[i], p));
            checks.push((exact.reduced_variance[i], var));
            // The likelihood-ratio form at theta = 0.5 is exactly twice the reduced form.
            checks.push((exact.gradient[i], 2.0 * p));
            checks.push((exact.variance[i], 4.0 * var));
        }
        for (got, want) in checks {
            worst = worst.max((got - want).abs() / want);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 4.0 * f64::EPSILON && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.2e} over N=1..16 in {:.3}s", elapsed.as_secs_f64()),
    )
}

fn c2_prop1_mc() -> Result<Verdict> {
    let start = Instant::now();
    let samples = 100_000;
    let reps = 100u64;
    let mut worst_reps = reps;
    for n in 1..=6usize {
        let game = BinaryCoordGame::uniform(n)?;
        let p = 0.5f64.powi(n as i32);
        let stderr = (p * (1.0 - p) / samples as f64).sqrt();
        let hits = Exec::default()
            .map_range(reps as usize, |rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(rep as u64);
                rng.set_stream(n as u64);
                game.mc_direction_prob(samples, &mut rng).map(|mc| (mc.p - p).abs() < 3.0 * stderr)
            })
            .into_iter()
            .collect::<mplab::Result<Vec<bool>>>()?;
        worst_reps = worst_reps.min(hits.iter().filter(|h| **h).count() as u64);
    }
    let elapsed = start.elapsed();
    verdict(
        worst_reps >= 99 && elapsed < Duration::from_secs(60),
        format!("worst N has {worst_reps}/100 repetitions within 3 stderr"),
    )
}

// ---------------------------------------------------------------- C3

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Coordinates checked per network; every one when the network is smaller.
const FD_COORDS: usize = 200;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_mlp(rng: &mut ChaCha8Rng, input: usize, output: usize, head: OutputHead) -> Result<Mlp> {
    let layers = rng.random_range(1..=3);
    let mut dims = vec![input];
    for _ in 1..layers {
        dims.push(rng.random_range(1..=64));
    }
    dims.push(output);
    let hidden = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let mut net = Mlp::init_uniform(&dims, hidden, head, rng)?;
    // Zero-initialised biases can leave ReLU units exactly on their kink,
    // where finite differences are undefined.
    for p in net.params_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    Ok(net)
}

/// Worst relative error over the checked coordinates and the number skipped
/// because the step straddles a ReLU kink (one-sided slopes disagree).
fn fd_check<F>(params: usize, grad: &[f64], rng: &mut ChaCha8Rng, mut loss_at: F) -> Result<(f64, usize)>
where
    F: FnMut(usize, f64) -> Result<f64>,
{
    ensure!(grad.len() == params, "gradient has {} entries for {params} parameters", grad.len());
    let coords: Vec<usize> = if params <= FD_COORDS {
        (0..params).collect()
    } else {
        (0..FD_COORDS).map(|_| rng.random_range(0..params)).collect()
    };
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    for i in coords {
        let (plus, mid, minus) = (loss_at(i, FD_STEP)?, loss_at(i, 0.0)?, loss_at(i, -FD_STEP)?);
        let (right, left) = ((plus - mid) / FD_STEP, (mid - minus) / FD_STEP);
        if rel_err(right, left) > 1e-2 {
            kinks += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, grad[i]));
    }
    Ok((worst, kinks))
}

fn random_batch(layout: &Layout, rows: usize, rng: &mut ChaCha8Rng) -> Result<mplab::trainer::Batch> {
    let mut buf = ReplayBuffer::new(layout.clone(), rows);
    for _ in 0..rows {
        let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let x = v(layout.obs_total());
        let x_next = v(layout.obs_total());
        let actions = layout.act_dims.iter().map(|&d| v(d)).collect();
        let rewards = v(layout.n_agents());
        buf.push(&Transition {
            x,
            actions,
            rewards,
            x_next,
            terminal: false,
            tags: vec![0; layout.n_agents()],
        })?;
    }
    Ok(buf.latest(rows)?)
}

fn c3_gradients() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2017);
    let mut worst = [0.0f64; 4];
    let mut kinks = 0;
    for _ in 0..100 {
        let physical = rng.random_range(0..=2);
        let comm = if physical == 0 { rng.random_range(1..=3) } else { rng.random_range(0..=3) };
        let obs = rng.random_range(1..=6);
        let mut slices = Vec::new();
        if physical > 0 {
            slices.push(HeadSlice { len: physical, kind: HeadKind::Tanh });
        }
        if comm > 0 {
            slices.push(HeadSlice { len: comm, kind: HeadKind::Linear });
        }
        let actor = ActorNet::from_net(
            random_mlp(&mut rng, obs, physical + comm, OutputHead::PerSlice(slices))?,
            physical,
            comm,
        )?;
        let other = rng.random_range(1..=4);
        let layout = Layout::new(vec![obs, other], vec![physical + comm, 2]);
        let mode = if rng.random_bool(0.5) { Mode::Maddpg } else { Mode::Ddpg };
        let mut nets = AgentNets::new(&layout, 0, physical, comm, mode, 4, 1, 0.01, &mut rng)?;
        let critic_in = nets.critic.input_dim();
        nets.critic = random_mlp(&mut rng, critic_in, 1, OutputHead::Linear)?;
        nets.actors[0] = actor.clone();
        let batch = random_batch(&layout, 6, &mut rng)?;
        let t = rng.random_range(0.5..2.0);

        // Actor through the critic, with the Gumbel draw replayed for every evaluation.
        let noise = ChaCha8Rng::seed_from_u64(rng.random());
        let (_, g) = actor_loss_gradient(&layout, &nets, 0, 0, &batch, t, false, &mut noise.clone())?;
        let w = fd_check(actor.net.num_params(), &g, &mut rng, |i, h| {
            let mut n = nets.clone();
            n.actors[0].net.params_mut()[i] += h;
            Ok(-actor_loss_gradient(&layout, &n, 0, 0, &batch, t, false, &mut noise.clone())?.0)
        })?;
        worst[0] = worst[0].max(w.0);
        kinks += w.1;

        // Critic regression.
        let y: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, g) = critic_loss_and_gradient(&layout, &nets, 0, &batch, &y)?;
        let w = fd_check(nets.critic.num_params(), &g, &mut rng, |i, h| {
            let mut n = nets.clone();
            n.critic.params_mut()[i] += h;
            Ok(critic_loss_and_gradient(&layout, &n, 0, &batch, &y)?.0)
        })?;
        worst[1] = worst[1].max(w.0);
        kinks += w.1;

        // Opponent model on soft comm targets.
        let model = OpponentModel::from_actor(actor.clone(), rng.random_range(0.0..0.1), 0.1, 0.01)?;
        let o = batch.obs(&layout, 0).to_owned();
        let mut a = Array2::zeros((batch.len(), physical + comm));
        for mut row in a.rows_mut() {
            for c in 0..physical {
                row[c] = rng.random_range(-1.0..1.0);
            }
            let probs = mplab::numerics::softmax(&(0..comm).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>(), 1.0);
            for c in 0..comm {
                row[physical + c] = probs[c];
            }
        }
        let (_, g) = model.loss_and_gradient(o.view(), a.view())?;
        let w = fd_check(model.net.net.num_params(), &g, &mut rng, |i, h| {
            let mut m = model.clone();
            m.net.net.params_mut()[i] += h;
            Ok(m.loss_and_gradient(o.view(), a.view())?.0)
        })?;
        worst[2] = worst[2].max(w.0);
        kinks += w.1;

        // Stochastic-policy log-density.
        let net = random_mlp(&mut rng, obs, 2 * physical + comm, OutputHead::Linear)?;
        let policy = StochasticPolicy::from_net(net, physical, comm, "fd")?;
        let ob: Vec<f64> = (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sample = PolicySample {
            physical: (0..physical).map(|_| rng.random_range(-1.0..1.0)).collect(),
            symbol: (comm > 0).then(|| rng.random_range(0..comm)),
        };
        let (_, g) = policy.log_prob_gradient(&ob, &sample)?;
        let w = fd_check(policy.net.num_params(), &g, &mut rng, |i, h| {
            let mut p = policy.clone();
            p.net.params_mut()[i] += h;
            Ok(p.log_prob(&ob, &sample)?)
        })?;
        worst[3] = worst[3].max(w.0);
        kinks += w.1;
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    verdict(
        max < FD_TOL,
        format!(
            "max relative error actor {:.1e}, critic {:.1e}, opponent {:.1e}, log-prob {:.1e}; {kinks} kink coordinates skipped",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// ---------------------------------------------------------------- training helpers

fn train_config(kind: ScenarioKind, episodes: usize, seed: u64, mode: Mode) -> TrainConfig {
    let mut cfg = TrainConfig::for_scenario(kind);
    cfg.episodes = episodes;
    cfg.seed = seed;
    cfg.modes = vec![mode; Scenario::new(kind).n_agents()];
    cfg
}

fn train_run(kind: ScenarioKind, cfg: TrainConfig) -> Result<(TrainerState, Vec<MetricsRow>)> {
    let mut state = TrainerState::new(Scenario::new(kind), cfg)?;
    let rows = state.train_with(|_, _| Ok(()))?;
    Ok((state, rows))
}

fn seeds_parallel<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    Exec::default().map_slice(seeds, |&s| f(s)).into_iter().collect()
}

fn metric(report: &mplab::analysis::EvalReport, key: &str) -> Result<f64> {
    report
        .metrics
        .get(key)
        .copied()
        .ok_or_else(|| anyhow::anyhow!("report lacks `{key}`"))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.1}")).collect();
    format!("[{}]", parts.join(", "))
}

fn reach_off_policy(episodes: usize, seed: u64, mode: Mode) -> Result<f64> {
    let (state, _) = train_run(ScenarioKind::CoopComm, train_config(ScenarioKind::CoopComm, episodes, seed, mode))?;
    metric(&state.evaluate(EVAL_EPISODES, EVAL_SEED)?, "target_reach_pct")
}

fn reach_baseline(episodes: usize, seed: u64, algo: BaselineAlgo) -> Result<f64> {
    let mut cfg = TrainConfig::for_scenario(ScenarioKind::CoopComm);
    cfg.episodes = episodes;
    cfg.seed = seed;
    let mut t = BaselineTrainer::new(Scenario::new(ScenarioKind::CoopComm), cfg, &[algo; 2])?;
    t.train_with(|_, _| Ok(()))?;
    metric(&t.evaluate(EVAL_EPISODES, EVAL_SEED)?, "target_reach_pct")
}

// ---------------------------------------------------------------- C4

const C4_SMOKE_EPISODES: usize = 8000;
const C4_FULL_EPISODES: usize = 25_000;
const C4_FULL_SEEDS: [u64; 3] = [0, 1, 2];

fn c4_smoke() -> Result<Verdict> {
    let both = Exec::default()
        .map_slice(&[Mode::Maddpg, Mode::Ddpg], |&mode| reach_off_policy(C4_SMOKE_EPISODES, 0, mode))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    verdict(
        both[0] > both[1],
        format!("target reach after {C4_SMOKE_EPISODES} episodes: MADDPG {:.1}%, DDPG {:.1}%", both[0], both[1]),
    )
}

fn c4_full() -> Result<Verdict> {
    let maddpg = seeds_parallel(&C4_FULL_SEEDS, |s| reach_off_policy(C4_FULL_EPISODES, s, Mode::Maddpg))?;
    let ddpg = seeds_parallel(&C4_FULL_SEEDS, |s| reach_off_policy(C4_FULL_EPISODES, s, Mode::Ddpg))?;
    let reinforce = seeds_parallel(&C4_FULL_SEEDS, |s| reach_baseline(C4_FULL_EPISODES, s, BaselineAlgo::Reinforce))?;
    let iac = seeds_parallel(&C4_FULL_SEEDS, |s| reach_baseline(C4_FULL_EPISODES, s, BaselineAlgo::Iac))?;
    let (m, d, r, i) = (median(&maddpg), median(&ddpg), median(&reinforce), median(&iac));
    verdict(
        m >= 60.0 && m - d >= 20.0 && r < d + 10.0 && i < d + 10.0,
        format!(
            "median target reach MADDPG {m:.1}% {}, DDPG {d:.1}% {}, REINFORCE {r:.1}% {}, IAC {i:.1}% {}",
            fmt(&maddpg),
            fmt(&ddpg),
            fmt(&reinforce),
            fmt(&iac)
        ),
    )
}

// ---------------------------------------------------------------- C5, C7

fn policy_refs(p: &[ActorPolicy]) -> Vec<&dyn AgentPolicy> {
    p.iter().map(|a| a as &dyn AgentPolicy).collect()
}

fn crossplay_pair(kind: ScenarioKind, agents: &[Vec<ActorPolicy>; 2], labels: [&str; 2]) -> Result<CrossplayMatrix> {
    let sets: Vec<PolicySet<'_>> = agents
        .iter()
        .zip(labels)
        .map(|(p, l)| PolicySet {
            label: l.to_string(),
            policies: policy_refs(p),
        })
        .collect();
    Ok(crossplay(&Scenario::new(kind), &sets, &sets, EVAL_EPISODES, EVAL_SEED, EvalOptions::default())?)
}

const C5_EPISODES: usize = 10_000;
const C5_SEEDS: [u64; 3] = [0, 1, 2];

fn c5_deception() -> Result<Verdict> {
    let kind = ScenarioKind::PhysicalDeception;
    let per_seed = seeds_parallel(&C5_SEEDS, |seed| {
        let (m, _) = train_run(kind, train_config(kind, C5_EPISODES, seed, Mode::Maddpg))?;
        let (d, _) = train_run(kind, train_config(kind, C5_EPISODES, seed, Mode::Ddpg))?;
        let x = crossplay_pair(kind, &[m.policies(), d.policies()], ["maddpg", "ddpg"])?;
        let get = |a: &str, b: &str| x.raw_at(a, b).ok_or_else(|| anyhow::anyhow!("missing cell {a}/{b}"));
        Ok([get("maddpg", "ddpg")?, get("ddpg", "ddpg")?, get("ddpg", "maddpg")?])
    })?;
    let col = |k: usize| per_seed.iter().map(|v| v[k]).collect::<Vec<f64>>();
    let (md, dd, dm) = (col(0), col(1), col(2));
    let (a, b, c) = (median(&md), median(&dd), median(&dm));
    verdict(
        a > b && b > c,
        format!(
            "median delta success: MADDPG vs DDPG {a:.1} {}, DDPG vs DDPG {b:.1} {}, DDPG vs MADDPG {c:.1} {}",
            fmt(&md),
            fmt(&dd),
            fmt(&dm)
        ),
    )
}

const C7_EPISODES: usize = 10_000;
const C7_SEEDS: [u64; 3] = [0, 1, 2];

fn c7_ensembles() -> Result<Verdict> {
    let kind = ScenarioKind::KeepAway;
    let per_seed = seeds_parallel(&C7_SEEDS, |seed| {
        let mut ens_cfg = train_config(kind, C7_EPISODES, seed, Mode::Maddpg);
        ens_cfg.ensemble = Some(EnsembleConfig { k: 3, team_tied: true });
        let (e, _) = train_run(kind, ens_cfg)?;
        let (s, _) = train_run(kind, train_config(kind, C7_EPISODES, seed, Mode::Maddpg))?;
        let x = crossplay_pair(kind, &[e.policies(), s.policies()], ["ensemble", "single"])?;
        let get = |a: &str, b: &str| x.raw_at(a, b).ok_or_else(|| anyhow::anyhow!("missing cell {a}/{b}"));
        Ok([get("ensemble", "single")?, get("single", "ensemble")?])
    })?;
    let col = |k: usize| per_seed.iter().map(|v| v[k]).collect::<Vec<f64>>();
    let (es, se) = (col(0), col(1));
    let wins = es.iter().zip(&se).filter(|(a, b)| a > b).count();
    verdict(
        median(&es) > median(&se),
        format!(
            "agent-side score (negated adversary goal frames): ensemble vs single {:.2} {}, single vs ensemble {:.2} {}; ensemble ahead on {wins}/{} seeds",
            median(&es),
            fmt(&es),
            median(&se),
            fmt(&se),
            es.len()
        ),
    )
}

// ---------------------------------------------------------------- C6

const C6_EPISODES: usize = 10_000;
const C6_SEEDS: [u64; 3] = [0, 1, 2];

fn c6_opponent_models() -> Result<Verdict> {
    let kind = ScenarioKind::CoopComm;
    let runs = seeds_parallel(&C6_SEEDS, |seed| {
        let truth = reach_off_policy(C6_EPISODES, seed, Mode::Maddpg)?;
        let mut cfg = train_config(kind, C6_EPISODES, seed, Mode::Maddpg);
        cfg.opponent_models = Some(OpponentConfig::default());
        let (state, rows) = train_run(kind, cfg)?;
        let inferred = metric(&state.evaluate(EVAL_EPISODES, EVAL_SEED)?, "target_reach_pct")?;
        let kl: Vec<f64> = rows.iter().filter_map(|r| r.opponent_kl).collect();
        ensure!(kl.len() >= 20, "only {} KL readings", kl.len());
        let tenth = kl.len() / 10;
        let early = kl[..tenth].iter().sum::<f64>() / tenth as f64;
        let late = kl[kl.len() - tenth..].iter().sum::<f64>() / tenth as f64;
        Ok([truth, inferred, early, late])
    })?;
    let col = |k: usize| runs.iter().map(|v| v[k]).collect::<Vec<f64>>();
    let (truth, inferred) = (col(0), col(1));
    let (early, late) = (col(2), col(3));
    let gap = (median(&truth) - median(&inferred)).abs();
    let decreasing = median(&late) < median(&early);
    let seeds_down = early.iter().zip(&late).filter(|(e, l)| l < e).count();
    verdict(
        gap <= 10.0 && decreasing,
        format!(
            "median target reach true policies {:.1}% {}, inferred {:.1}% {}; median KL first/last tenth {:.3} {} -> {:.3} {}, lower on {seeds_down}/{} seeds",
            median(&truth),
            fmt(&truth),
            median(&inferred),
            fmt(&inferred),
            median(&early),
            fmt3(&early),
            median(&late),
            fmt3(&late),
            early.len()
        ),
    )
}

fn fmt3(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- C8

type Check = (&'static str, fn() -> Result<()>);

fn c8_properties() -> Result<Verdict> {
    let checks: [Check; 7] = [
        ("replay ring and uniform sampling", prop_replay),
        ("soft-update contraction", prop_soft_update),
        ("Gumbel-Softmax marginals", prop_gumbel),
        ("physics damping, determinism, action-reaction", prop_physics),
        ("approximate target under perfect models", prop_perfect_models),
        ("ensemble buffer isolation", prop_ensemble_isolation),
        ("ensemble 1/K actor-gradient scale", prop_ensemble_scale),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        if let Err(e) = check() {
            failures.push(format!("{name}: {e:#}"));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} property groups hold (full suites run under cargo test)", checks.len())
        } else {
            failures.join("; ")
        },
    )
}

fn scalar_transition(v: f64) -> Transition {
    Transition {
        x: vec![v],
        actions: vec![vec![v]],
        rewards: vec![v],
        x_next: vec![v],
        terminal: false,
        tags: vec![0],
    }
}

fn prop_replay() -> Result<()> {
    let cap = 50;
    let mut buf = ReplayBuffer::new(Layout::new(vec![1], vec![1]), cap);
    for i in 0..(3 * cap + 7) {
        buf.push(&scalar_transition(i as f64))?;
        ensure!(buf.len() == (i + 1).min(cap), "length {} after {} pushes", buf.len(), i + 1);
    }
    let mut held: Vec<f64> = (0..buf.len()).map(|r| buf.get(r).unwrap().x[0]).collect();
    held.sort_by(f64::total_cmp);
    let expect: Vec<f64> = ((2 * cap + 7)..(3 * cap + 7)).map(|v| v as f64).collect();
    ensure!(held == expect, "ring does not hold the newest {cap} transitions");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut counts = vec![0usize; cap];
    let batch = buf.sample(draws, &mut rng)?;
    for v in batch.x.column(0) {
        counts[*v as usize - (2 * cap + 7)] += 1;
    }
    let p = 1.0 / cap as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let chi2: f64 = counts
        .iter()
        .map(|c| (*c as f64 - draws as f64 * p).powi(2) / (draws as f64 * p))
        .sum();
    ensure!(
        counts.iter().all(|c| (*c as f64 - draws as f64 * p).abs() < 5.0 * sigma),
        "a slot is off by more than 5 sigma"
    );
    // 99.9% quantile of chi-square with 49 degrees of freedom.
    ensure!(chi2 < 85.35, "chi-square {chi2:.1}");
    Ok(())
}

fn prop_soft_update() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let online: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut target: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gap0: Vec<f64> = target.iter().zip(&online).map(|(t, o)| t - o).collect();
    let tau = 0.01;
    for _ in 0..50 {
        soft_update(&mut target, &online, tau)?;
    }
    let factor = (1.0 - tau).powi(50);
    for ((t, o), g) in target.iter().zip(&online).zip(&gap0) {
        ensure!(((t - o) - factor * g).abs() < 1e-12, "gap {} vs {}", t - o, factor * g);
    }
    Ok(())
}

fn prop_gumbel() -> Result<()> {
    let logits = [0.5, -1.0, 1.5];
    let probs = mplab::numerics::softmax(&logits, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let s = gumbel_softmax(&logits, 0.5, &mut rng)?;
        counts[mplab::numerics::argmax(&s.values)] += 1;
    }
    for (c, p) in counts.iter().zip(&probs) {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        ensure!((*c as f64 - n as f64 * p).abs() < 4.0 * sigma, "argmax counts {counts:?} vs {probs:?}");
    }
    Ok(())
}

fn prop_physics() -> Result<()> {
    let sc = Scenario::new(ScenarioKind::CoopComm);
    let (mut state, _) = sc.reset(&mut ChaCha8Rng::seed_from_u64(6));
    for lm in &mut state.landmarks {
        lm.position = [0.9, 0.9];
    }
    state.agents[1].position = [-0.5, -0.5];
    state.agents[1].velocity = [0.4, -0.2];
    let idle = vec![AgentAction::new(vec![], vec![1.0, 0.0, 0.0]), AgentAction::new(vec![0.0, 0.0], vec![])];
    let a = sc.step(&state, &idle)?;
    let b = sc.step(&state, &idle)?;
    ensure!(a.state == b.state && a.rewards == b.rewards, "step is not deterministic");
    let v = a.state.agents[1].velocity;
    ensure!(
        (v[0] - 0.4 * (1.0 - DAMPING)).abs() < 1e-15 && (v[1] + 0.2 * (1.0 - DAMPING)).abs() < 1e-15,
        "free particle velocity {v:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let mut p = Entity::new(rng.random_range(0.02..0.2));
        let mut q = Entity::new(rng.random_range(0.02..0.2));
        p.position = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        q.position = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        let f = contact_force(&p, &q);
        let g = contact_force(&q, &p);
        ensure!(f[0] == -g[0] && f[1] == -g[1], "contact forces {f:?} and {g:?} are not opposite");
    }
    Ok(())
}

fn small_config(episodes: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        update_every: 25,
        hidden_units: 16,
        episodes,
        ..TrainConfig::default()
    }
}

fn prop_perfect_models() -> Result<()> {
    let cfg = TrainConfig {
        opponent_models: Some(OpponentConfig::default()),
        ..small_config(8)
    };
    let (mut state, _) = train_run(ScenarioKind::CoopNav, cfg)?;
    let truth: Vec<ActorNet> = state.agents().iter().map(|n| n.target_actors[0].clone()).collect();
    for row in state.opponents_mut().unwrap() {
        for (j, m) in row.iter_mut().enumerate() {
            if let Some(m) = m {
                m.target = truth[j].clone();
            }
        }
    }
    let batch = state.buffer().sample(64, &mut ChaCha8Rng::seed_from_u64(8))?;
    let (t, gamma) = (state.config().gumbel_temperature, state.config().gamma);
    for i in 0..state.scenario().n_agents() {
        let y = state.critic_target(i, &batch)?;
        let models = &state.opponents().unwrap()[i];
        let y_hat = approx_critic_target(state.layout(), &state.agents()[i], i, &batch, models, t, gamma)?;
        ensure!(y == y_hat, "agent {i}: approximate target differs");
    }
    Ok(())
}

fn prop_ensemble_isolation() -> Result<()> {
    let cfg = TrainConfig {
        ensemble: Some(EnsembleConfig { k: 3, team_tied: true }),
        ..small_config(30)
    };
    let (state, _) = train_run(ScenarioKind::KeepAway, cfg)?;
    let mut total = 0;
    for i in 0..state.scenario().n_agents() {
        for k in 0..3 {
            let buf = state.sub_buffer(i, k);
            for r in 0..buf.len() {
                ensure!(buf.get(r).unwrap().tags[i] == k, "agent {i} buffer {k} holds a foreign sample");
            }
            total += buf.len();
        }
    }
    ensure!(total == state.scenario().n_agents() * state.env_steps(), "samples lost or duplicated");
    let mut sel = EnsembleState::new(3, true, vec![Role::Cooperator, Role::Cooperator, Role::Adversary])?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let a = sel.begin_episode(&mut rng);
        ensure!(a[0] == a[1], "team-tied indices differ");
    }
    Ok(())
}

fn prop_ensemble_scale() -> Result<()> {
    let cfg = TrainConfig {
        ensemble: Some(EnsembleConfig { k: 3, team_tied: true }),
        batch_size: 1_000_000,
        actor_output_penalty: 0.0,
        grad_clip_norm: 0.0,
        ..small_config(10)
    };
    let mut state = TrainerState::new(Scenario::new(ScenarioKind::KeepAway), cfg)?;
    for _ in 0..3 {
        state.run_episode()?;
    }
    let k = state.ensemble().unwrap().active()[0];
    let batch = state.sub_buffer(0, k).sample(32, &mut ChaCha8Rng::seed_from_u64(10))?;
    let mut probe = state.rng_mut().clone();
    let t = state.config().gumbel_temperature;
    let st = state.config().straight_through;
    let (_, g) = actor_loss_gradient(state.layout(), &state.agents()[0], 0, k, &batch, t, st, &mut probe)?;
    state.actor_update(0, k, &batch)?;
    let opt = &state.agents()[0].actor_opts[k];
    for (m, g) in opt.first_moment.iter().zip(&g) {
        let expect = (1.0 - opt.beta1) * g / 3.0;
        ensure!((m - expect).abs() <= 1e-15 * (1.0 + expect.abs()), "first moment {m} vs {expect}");
    }
    Ok(())
}

// ---------------------------------------------------------------- smoke runs

const SMOKE_EPISODES: usize = 2000;
const SMOKE_EVAL_EPISODES: usize = 500;

fn cooperators(sc: &Scenario) -> Vec<usize> {
    sc.agents_with_role(Role::Cooperator)
}

/// Mean per-episode cooperator return with the adversaries replaced by
/// uniform random policies.
fn return_vs_random(sc: &Scenario, trained: &[ActorPolicy]) -> Result<f64> {
    let random: Vec<RandomPolicy> = sc.agents().iter().map(RandomPolicy::for_agent).collect();
    let team = cooperators(sc);
    let policies: Vec<&dyn AgentPolicy> = (0..sc.n_agents())
        .map(|i| if team.contains(&i) { &trained[i] as &dyn AgentPolicy } else { &random[i] })
        .collect();
    let totals = Exec::default().map_range(SMOKE_EVAL_EPISODES, |e| {
        let mut total = 0.0;
        rollout_episode(sc, &policies, EVAL_SEED, e as u64, false, |_, _, r| {
            if let Some(r) = r {
                total += team.iter().map(|&i| r[i]).sum::<f64>() / team.len() as f64;
            }
            Ok(())
        })?;
        Ok(total)
    });
    let totals = totals.into_iter().collect::<mplab::Result<Vec<f64>>>()?;
    Ok(totals.iter().sum::<f64>() / totals.len() as f64)
}

/// Cooperative scenarios compare the training return of the first and last
/// fifth. In competitive ones both sides co-adapt, so the trained
/// cooperators are instead compared with their initial policies against a
/// fixed random adversary.
fn smoke(kind: ScenarioKind, cfg: TrainConfig) -> Result<Verdict> {
    let sc = Scenario::new(kind);
    let initial = TrainerState::new(sc.clone(), cfg.clone())?.policies();
    let (state, rows) = train_run(kind, cfg)?;
    let report = state.evaluate(200, EVAL_SEED)?;
    let finite = report.metrics.values().all(|v| v.is_finite()) && rows.iter().all(|r| r.returns.iter().all(|v| v.is_finite()));
    let (first, last, what) = if kind.is_competitive() {
        (
            return_vs_random(&sc, &initial)?,
            return_vs_random(&sc, &state.policies())?,
            format!("cooperator return against random adversaries, initial -> trained ({SMOKE_EVAL_EPISODES} episodes)"),
        )
    } else {
        let team = cooperators(&sc);
        let window = SMOKE_EPISODES / 5;
        let mean_return = |rows: &[MetricsRow]| {
            rows.iter().map(|r| team.iter().map(|&i| r.returns[i]).sum::<f64>() / team.len() as f64).sum::<f64>()
                / rows.len() as f64
        };
        (
            mean_return(&rows[..window]),
            mean_return(&rows[rows.len() - window..]),
            format!("cooperator training return, first -> last {window} episodes"),
        )
    };
    verdict(
        finite && last > first,
        format!("{what}: {first:.2} -> {last:.2}; metrics {:?}", report.metrics),
    )
}

fn smoke_default(kind: ScenarioKind) -> Result<Verdict> {
    smoke(kind, train_config(kind, SMOKE_EPISODES, 0, Mode::Maddpg))
}

/// covert_comm episodes last two steps, so the default batch would leave
/// only a few dozen update rounds in the smoke budget.
fn smoke_covert() -> Result<Verdict> {
    let kind = ScenarioKind::CovertComm;
    smoke(
        kind,
        TrainConfig {
            batch_size: 256,
            update_every: 20,
            ..train_config(kind, SMOKE_EPISODES, 0, Mode::Maddpg)
        },
    )
}
