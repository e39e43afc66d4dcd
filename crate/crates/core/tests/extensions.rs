use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mplab::extensions::{approx_critic_target, EnsembleState, OpponentModel};
use mplab::numerics::softmax;
use mplab::trainer::{
    actor_loss_gradient, bootstrap_targets, ActorNet, AgentNets, EnsembleConfig, Layout, Mode, OpponentConfig,
    ReplayBuffer, TrainConfig, TrainerState, Transition,
};
use mplab::world::{Role, Scenario, ScenarioKind};

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        update_every: 25,
        hidden_units: 16,
        episodes: 12,
        ..TrainConfig::default()
    }
}

#[test]
fn perfect_models_reproduce_the_true_target() {
    let cfg = TrainConfig {
        opponent_models: Some(OpponentConfig::default()),
        ..config()
    };
    let mut state = TrainerState::new(Scenario::new(ScenarioKind::CoopNav), cfg).unwrap();
    state.train_with(|_, _| Ok(())).unwrap();
    let truth: Vec<ActorNet> = state.agents().iter().map(|n| n.target_actors[0].clone()).collect();
    for (i, row) in state.opponents_mut().unwrap().iter_mut().enumerate() {
        for (j, m) in row.iter_mut().enumerate() {
            match m {
                Some(m) => m.target = truth[j].clone(),
                None => assert_eq!(i, j),
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = state.buffer().sample(64, &mut rng).unwrap();
    let t = state.config().gumbel_temperature;
    let gamma = state.config().gamma;
    for i in 0..3 {
        let y = state.critic_target(i, &batch).unwrap();
        let models = &state.opponents().unwrap()[i];
        let y_hat = approx_critic_target(state.layout(), &state.agents()[i], i, &batch, models, t, gamma).unwrap();
        assert_eq!(y, y_hat);
    }
}

#[test]
fn single_agent_target_needs_no_models() {
    let layout = Layout::new(vec![3], vec![4]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let nets = AgentNets::new(&layout, 0, 2, 2, Mode::Maddpg, 8, 1, 0.01, &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(layout.clone(), 16);
    for _ in 0..8 {
        buf.push(&Transition {
            x: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            actions: vec![(0..4).map(|_| rng.random_range(-1.0..1.0)).collect()],
            rewards: vec![rng.random_range(-1.0..1.0)],
            x_next: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            terminal: false,
            tags: vec![0],
        })
        .unwrap();
    }
    let batch = buf.latest(8).unwrap();
    let next = nets.target_actors[0].deterministic_batch(batch.x_next.view(), 1.0).unwrap();
    let y = bootstrap_targets(&layout, &nets, 0, &batch, next.view(), 0.95).unwrap();
    let y_hat = approx_critic_target(&layout, &nets, 0, &batch, &[None], 1.0, 0.95).unwrap();
    assert_eq!(y, y_hat);
}

/// Observations of the coop_comm listener from random play.
fn listener_observations(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let sc = Scenario::new(ScenarioKind::CoopComm);
    let dim = sc.obs_dims()[1];
    let mut rows = Vec::with_capacity(n * dim);
    while rows.len() < n * dim {
        let (mut state, obs) = sc.reset(rng);
        rows.extend_from_slice(&obs[1]);
        let steps = rng.random_range(0..sc.horizon());
        for _ in 0..steps {
            let action: Vec<_> = sc
                .agents()
                .iter()
                .map(|a| {
                    let phys = (0..a.physical_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let logits: Vec<f64> = (0..a.comm_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                    mplab::world::AgentAction::new(phys, softmax(&logits, 1.0))
                })
                .collect();
            state = sc.step(&state, &action).unwrap().state;
        }
        if rows.len() + dim <= n * dim {
            rows.extend_from_slice(&sc.observe(&state, 1));
        }
    }
    rows.truncate(n * dim);
    Array2::from_shape_vec((n, dim), rows).unwrap()
}

#[test]
fn learned_model_approaches_a_scripted_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sc = Scenario::new(ScenarioKind::CoopComm);
    let spec = &sc.agents()[1];
    let truth = ActorNet::new(spec.obs_dim, spec.physical_dim, spec.comm_dim, 16, &mut rng).unwrap();
    let mut model = OpponentModel::new(spec.obs_dim, spec.physical_dim, spec.comm_dim, 64, 0.001, 0.1, 0.01, &mut rng)
        .unwrap();
    let pool = listener_observations(4096, &mut rng);
    let probe = listener_observations(256, &mut rng);
    let probe_truth = truth.deterministic_batch(probe.view(), 1.0).unwrap();
    let pool_truth = truth.deterministic_batch(pool.view(), 1.0).unwrap();
    let mut kls = Vec::new();
    for step in 0..5000 {
        let rows: Vec<usize> = (0..64).map(|_| rng.random_range(0..pool.nrows())).collect();
        let obs = pool.select(ndarray::Axis(0), &rows);
        // Actions drawn from the scripted conditional: Gaussian force, softened comm target.
        let mut actions = pool_truth.select(ndarray::Axis(0), &rows);
        for mut row in actions.rows_mut() {
            for c in 0..spec.physical_dim {
                row[c] += 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        model.update(obs.view(), actions.view()).unwrap();
        if step % 500 == 0 || step == 4999 {
            kls.push(model.kl_from(probe.view(), probe_truth.view()).unwrap());
        }
    }
    assert!(kls.last().unwrap() < &0.1, "{kls:?}");
    assert!(kls.last().unwrap() < &kls[0], "{kls:?}");
}

#[test]
fn ensemble_buffers_only_hold_their_sub_policy() {
    let cfg = TrainConfig {
        ensemble: Some(EnsembleConfig::for_scenario(ScenarioKind::KeepAway)),
        episodes: 40,
        ..config()
    };
    let mut state = TrainerState::new(Scenario::new(ScenarioKind::KeepAway), cfg).unwrap();
    state.train_with(|_, _| Ok(())).unwrap();
    assert!(state.update_rounds() > 0);
    let k = 3;
    let n = state.scenario().n_agents();
    let mut total = 0;
    for i in 0..n {
        for sub in 0..k {
            let buf = state.sub_buffer(i, sub);
            for r in 0..buf.len() {
                assert_eq!(buf.get(r).unwrap().tags[i], sub);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sub as u64);
            if !buf.is_empty() {
                let batch = buf.sample(16, &mut rng).unwrap();
                assert!(batch.tags.iter().all(|t| t[i] == sub));
            }
            total += buf.len();
        }
    }
    // Every transition lands in exactly one buffer per agent.
    assert_eq!(total, n * state.env_steps());
}

#[test]
fn ensemble_actor_gradient_is_scaled_by_one_over_k() {
    let cfg = TrainConfig {
        ensemble: Some(EnsembleConfig { k: 3, team_tied: true }),
        batch_size: 1_000_000,
        // Clipping and the output penalty would hide the plain gradient.
        actor_output_penalty: 0.0,
        grad_clip_norm: 0.0,
        ..config()
    };
    let mut state = TrainerState::new(Scenario::new(ScenarioKind::KeepAway), cfg).unwrap();
    for _ in 0..3 {
        state.run_episode().unwrap();
    }
    let active = state.ensemble().unwrap().active()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = state.sub_buffer(0, active).sample(32, &mut rng).unwrap();
    let mut probe_rng = state.rng_mut().clone();
    let (_, plain) = actor_loss_gradient(
        state.layout(),
        &state.agents()[0],
        0,
        active,
        &batch,
        state.config().gumbel_temperature,
        state.config().straight_through,
        &mut probe_rng,
    )
    .unwrap();
    state.actor_update(0, active, &batch).unwrap();
    let opt = &state.agents()[0].actor_opts[active];
    assert_eq!(opt.step_count, 1);
    for (m, g) in opt.first_moment.iter().zip(&plain) {
        let expect = (1.0 - opt.beta1) * (g / 3.0);
        assert!((m - expect).abs() <= 1e-15 * (1.0 + expect.abs()), "{m} vs {expect}");
    }
}

#[test]
fn single_member_ensemble_matches_plain_updates() {
    let sc = Scenario::new(ScenarioKind::KeepAway);
    let warm = TrainConfig {
        batch_size: 1_000_000,
        ..config()
    };
    let plain_cfg = warm.clone();
    let ens_cfg = TrainConfig {
        ensemble: Some(EnsembleConfig { k: 1, team_tied: true }),
        ..warm
    };
    let mut plain = TrainerState::new(sc.clone(), plain_cfg).unwrap();
    let mut ens = TrainerState::new(sc, ens_cfg).unwrap();
    assert_eq!(plain.agents(), ens.agents());
    for _ in 0..2 {
        plain.run_episode().unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = plain.buffer().sample(32, &mut rng).unwrap();
    // Both updates draw the same Gumbel noise.
    *ens.rng_mut() = plain.rng_mut().clone();
    plain.actor_update(1, 0, &batch).unwrap();
    ens.actor_update(1, 0, &batch).unwrap();
    assert_eq!(plain.agents()[1].actors, ens.agents()[1].actors);
}

#[test]
fn sub_policy_selection_is_uniform() {
    let mut e = EnsembleState::new(3, false, vec![Role::Cooperator, Role::Adversary]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[e.begin_episode(&mut rng)[0]] += 1;
    }
    let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 / 3.0).abs() < 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn opponent_models_train_and_report_kl() {
    let cfg = TrainConfig {
        opponent_models: Some(OpponentConfig::default()),
        episodes: 20,
        ..config()
    };
    let (state, rows) = mplab::trainer::train(&Scenario::new(ScenarioKind::CoopComm), &cfg).unwrap();
    assert!(state.update_rounds() > 0);
    let kl = rows.last().unwrap().opponent_kl.unwrap();
    assert!(kl.is_finite() && kl >= 0.0);
}
