use narrate_core::agents::*;
use narrate_core::env::{ActionKind, GameState, Observation, NUM_ACTIONS};
use narrate_core::mem::CommandSet;
use narrate_core::nn::{relative_error, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ctx() -> ShaperContext {
    ShaperContext {
        mem: None,
        commands: CommandSet::original(),
        tau: 0.5,
        bonus: 1.0,
    }
}

/// Rolls `len` steps from a fresh game with the net's own policy.
fn toy_rollout(net: &AgentNet, len: usize, seed: u64) -> Rollout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GameState::reset(seed);
    let mut obs = Observation::initial(&s);
    let mut hidden = AgentNet::initial_state();
    let init = hidden.clone();
    let mut steps = Vec::new();
    for t in 0..len {
        let aux: Vec<f64> = (0..AUX_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (row, next) = net.step(&obs, &aux, &hidden).unwrap();
        let mask = s.legal_actions();
        let p = PolicyOutput::from_logits(&row, mask);
        // Force a spatial action on the first step so every head is exercised.
        let action = if t == 0 {
            narrate_core::env::Action::BuildDepot { x: 9, y: 4 }
        } else {
            p.sample(&mut rng).action
        };
        let mask = if t == 0 {
            let mut m = mask;
            m.set(ActionKind::BuildDepot);
            m
        } else {
            mask
        };
        let p = PolicyOutput::from_logits(&row, mask);
        let prev = s.clone();
        let out = s.step(action).unwrap();
        let next_obs = Observation::encode(&prev, &s);
        steps.push(Transition {
            observation: std::mem::replace(&mut obs, next_obs),
            aux,
            mask,
            action,
            log_prob: p.log_prob(&action),
            value: p.value,
            reward: out.reward + rng.gen_range(0.0..2.0),
            env_reward: out.reward,
            done: false,
        });
        hidden = next;
    }
    Rollout {
        init,
        steps,
        bootstrap: 0.7,
    }
}

fn randomized_net(seed: u64) -> AgentNet {
    let mut net = AgentNet::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    net.heads.visit_params_mut(&mut |p| p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3)));
    // Zero biases put every blank conv patch exactly on the relu kink.
    net.visit_params_mut(&mut |p| {
        if p.value.iter().all(|v| *v == 0.0) {
            p.value.iter_mut().for_each(|v| *v = rng.gen_range(0.05..0.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        }
    });
    net
}

#[test]
fn a3c_gradients_match_finite_differences() {
    let mut net = randomized_net(5);
    let rollout = toy_rollout(&net, 2, 3);
    let c = LossCoefficients::default();
    let (ret, adv) = compute_returns(&rollout, c.gamma);
    let stats = a3c_loss(&mut net, &rollout, &ret, &adv, &c).unwrap();
    let direct = a3c_loss_value(&net, &rollout, &ret, &adv, &c).unwrap();
    assert!((stats.loss - direct).abs() < 1e-9, "{} vs {direct}", stats.loss);

    let analytic = net.flat_grads();
    let base = net.flat_params();
    // Sample indices from every parameter block.
    let mut blocks = Vec::new();
    let mut off = 0;
    net.visit_params(&mut |p| {
        blocks.push((off, p.len()));
        off += p.len();
    });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut probe = net.clone();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (start, len) in blocks {
        for _ in 0..12 {
            let i = start + rng.gen_range(0..len);
            let mut p = base.clone();
            p[i] += eps;
            probe.set_flat_params(&p).unwrap();
            let plus = a3c_loss_value(&probe, &rollout, &ret, &adv, &c).unwrap();
            p[i] -= 2.0 * eps;
            probe.set_flat_params(&p).unwrap();
            let minus = a3c_loss_value(&probe, &rollout, &ret, &adv, &c).unwrap();
            let numeric = (plus - minus) / (2.0 * eps);
            let e = relative_error(analytic[i], numeric);
            worst = worst.max(e);
            checked += 1;
        }
    }
    assert!(checked > 100);
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn zero_advantage_exact_value_leaves_only_entropy() {
    let mut net = AgentNet::new(2);
    let rollout = toy_rollout(&net, 3, 4);
    let c = LossCoefficients::default();
    let values: Vec<f64> = rollout.steps.iter().map(|s| s.value).collect();
    let adv = vec![0.0; values.len()];
    let stats = a3c_loss(&mut net, &rollout, &values, &adv, &c).unwrap();
    assert!(stats.value.abs() < 1e-20);
    assert!((stats.loss + c.entropy * stats.entropy).abs() < 1e-12);
    assert!(stats.loss < 0.0);
    assert!(stats.entropy <= 3.0 * max_step_entropy() + 1e-9);
}

#[test]
fn untrained_policy_samples_legal_ids_uniformly() {
    let net = AgentNet::new(0);
    let mut s = GameState::reset(1);
    s.minerals = 500;
    s.step(narrate_core::env::Action::SelectWorker).unwrap();
    let legal = s.legal_actions();
    let (row, _) = net.step(&Observation::initial(&s), &[0.0; AUX_LEN], &AgentNet::initial_state()).unwrap();
    let p = PolicyOutput::from_logits(&row, legal);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = [0usize; NUM_ACTIONS];
    let n = 10_000;
    for _ in 0..n {
        counts[p.sample(&mut rng).action.id()] += 1;
    }
    let k = legal.count() as f64;
    let expected = n as f64 / k;
    let chi2: f64 = ActionKind::ALL
        .iter()
        .filter(|a| legal.contains(**a))
        .map(|a| (counts[a.id()] as f64 - expected).powi(2) / expected)
        .sum();
    for a in ActionKind::ALL {
        if !legal.contains(a) {
            assert_eq!(counts[a.id()], 0);
        }
    }
    // 99.9th percentile of chi-square with up to 5 degrees of freedom.
    assert!(chi2 < 20.5, "chi2 {chi2} counts {counts:?}");
}

#[test]
fn policy_heads_are_distributions_after_masking() {
    let net = randomized_net(8);
    let mut s = GameState::reset(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hidden = AgentNet::initial_state();
    let mut prev = s.clone();
    for _ in 0..200 {
        let (row, next) = net.step(&Observation::encode(&prev, &s), &[0.1; AUX_LEN], &hidden).unwrap();
        let p = PolicyOutput::from_logits(&row, s.legal_actions());
        for head in [&p.id_probs, &p.x_probs, &p.y_probs] {
            assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for a in ActionKind::ALL {
            if !s.legal_actions().contains(a) {
                assert_eq!(p.id_probs[a.id()], 0.0);
            }
        }
        let a = p.sample(&mut rng).action;
        prev = s.clone();
        s.step(a).unwrap();
        hidden = next;
    }
}

#[test]
fn evaluation_is_bitwise_reproducible() {
    let net = randomized_net(4);
    let reg = ShaperRegistry::with_builtins();
    let mut a = reg.build("subtask", &ctx()).unwrap();
    let mut b = reg.build("subtask", &ctx()).unwrap();
    let ra = evaluate(Policy::Net(&net), a.as_mut(), 2, 50, 200).unwrap();
    let rb = evaluate(Policy::Net(&net), b.as_mut(), 2, 50, 200).unwrap();
    assert_eq!(ra, rb);
    let r1 = evaluate(Policy::Random, a.as_mut(), 3, 7, 720).unwrap();
    let r2 = evaluate(Policy::Random, b.as_mut(), 3, 7, 720).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn zero_bonus_optimizes_environment_reward() {
    let reg = ShaperRegistry::with_builtins();
    let c = ShaperContext { bonus: 0.0, ..ctx() };
    let mut sh = reg.build("subtask", &c).unwrap();
    let mut env = MicroBuildEnv::new(720);
    let stats = run_episode(Policy::Random, &mut env, sh.as_mut(), 3, 3).unwrap();
    assert_eq!(stats.shaped_return, stats.env_score);
    assert!(stats.instr_completions > 0);
}

#[test]
fn shared_version_equals_update_count() {
    let cfg = A3cConfig {
        workers: 3,
        rollout: 8,
        total_steps: 600,
        eval_every: 0,
        eval_episodes: 0,
        ..Default::default()
    };
    let out = train(&cfg, "none", &ShaperRegistry::with_builtins(), &ctx(), 1, |_, _| {}).unwrap();
    // Every rollout ends in exactly one update; rollouts hold at most 8 steps.
    assert!(out.env_steps >= 600);
    assert!(out.updates >= out.env_steps.div_ceil(8));
    assert!(out.updates <= out.env_steps);
}

#[test]
fn value_head_learns_geometric_series() {
    let cfg = A3cConfig {
        workers: 1,
        total_steps: 30_000,
        lr: 3e-3,
        eval_every: 0,
        eval_episodes: 0,
        ..Default::default()
    };
    let out = train_with_env(
        &cfg,
        "none",
        &ShaperRegistry::with_builtins(),
        &ctx(),
        0,
        |_| ConstantRewardEnv::new(1.0),
        |_, _| {},
    )
    .unwrap();
    let mut env = ConstantRewardEnv::new(1.0);
    env.reset(0);
    let mut hidden = AgentNet::initial_state();
    let mut values = Vec::new();
    for _ in 0..300 {
        let prev = env.state().clone();
        env.step(narrate_core::env::Action::NoOp).unwrap();
        let (row, next) = out.net.step(&Observation::encode(&prev, env.state()), &[0.0; AUX_LEN], &hidden).unwrap();
        values.push(PolicyOutput::from_logits(&row, env.legal()).value);
        hidden = next;
    }
    let v = values[values.len() - 1];
    let target = 1.0 / (1.0 - cfg.loss.gamma);
    assert!((v - target).abs() <= 0.05 * target, "value {v}, target {target}");
}
