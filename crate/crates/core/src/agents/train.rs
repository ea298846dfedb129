use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::envs::{AgentEnv, MicroBuildEnv};
use super::net::{AgentNet, PolicyOutput};
use super::rollout::{a3c_loss, compute_returns, LossCoefficients, Rollout, Transition};
use super::shaping::{Shaper, ShaperContext, ShaperRegistry};
use super::shared::{clip_grad_norm, SharedParams};
use super::AgentError;
use crate::env::{random_legal_action, Observation};
use crate::nn::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A3cConfig {
    pub workers: usize,
    /// Rollout length `T`.
    pub rollout: usize,
    pub total_steps: u64,
    pub lr: f64,
    pub grad_clip: f64,
    pub loss: LossCoefficients,
    pub horizon: u32,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// First seed of the fixed evaluation episodes.
    pub eval_seed: u64,
}

impl Default for A3cConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            rollout: 32,
            total_steps: 2_000_000,
            lr: 1e-4,
            grad_clip: 40.0,
            loss: LossCoefficients::default(),
            horizon: crate::env::DEFAULT_HORIZON,
            eval_every: 50_000,
            eval_episodes: 20,
            eval_seed: 1_000_000,
        }
    }
}

/// One row of `curve.csv`. Training episodes carry the worker index;
/// evaluation episodes carry `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub worker: String,
    pub episode: u64,
    pub env_score: f64,
    pub shaped_return: f64,
    pub instr_completions: u32,
    pub variant: String,
    pub seed: u64,
}

impl RunRecord {
    pub fn is_eval(&self) -> bool {
        self.worker == "eval"
    }
}

/// Result of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub env_score: f64,
    pub shaped_return: f64,
    pub instr_completions: u32,
    pub steps: u32,
}

/// Who picks actions during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Net(&'a AgentNet),
    /// Uniform over legal action ids, uniform build sites.
    Random,
}

/// Plays one full episode. Deterministic for fixed `env_seed`, `rng_seed`
/// and parameters.
pub fn run_episode(
    policy: Policy,
    env: &mut dyn AgentEnv,
    shaper: &mut dyn Shaper,
    env_seed: u64,
    rng_seed: u64,
) -> Result<EpisodeStats, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    env.reset(env_seed);
    let mut obs = Observation::initial(env.state());
    shaper.reset(env.state(), &obs)?;
    let mut hidden = AgentNet::initial_state();
    let mut stats = EpisodeStats::default();
    loop {
        let action = match policy {
            Policy::Net(net) => {
                let (row, next) = net.step(&obs, shaper.aux(), &hidden)?;
                hidden = next;
                PolicyOutput::from_logits(&row, env.legal()).sample(&mut rng).action
            }
            Policy::Random => random_legal_action(env.state(), &mut rng),
        };
        let prev = env.state().clone();
        let (r, done) = env.step(action)?;
        obs = Observation::encode(&prev, env.state());
        let sh = shaper.shape(&prev, env.state(), &obs)?;
        stats.env_score += r;
        stats.shaped_return += r + sh.bonus;
        stats.instr_completions += u32::from(sh.completed);
        stats.steps += 1;
        if done {
            return Ok(stats);
        }
    }
}

/// Evaluates a frozen policy on `episodes` fixed-seed MicroBuild episodes.
pub fn evaluate(
    policy: Policy,
    shaper: &mut dyn Shaper,
    episodes: usize,
    eval_seed: u64,
    horizon: u32,
) -> Result<Vec<EpisodeStats>, AgentError> {
    let mut env = MicroBuildEnv::new(horizon);
    (0..episodes as u64)
        .map(|i| {
            let s = eval_seed + i;
            run_episode(policy, &mut env, shaper, s, s.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        })
        .collect()
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: AgentNet,
    /// Training episodes followed by evaluation rows, each in step order.
    pub records: Vec<RunRecord>,
    pub updates: u64,
    pub env_steps: u64,
}

struct WorkerCtx<'a> {
    id: usize,
    config: &'a A3cConfig,
    shared: &'a SharedParams,
    steps: &'a AtomicU64,
    /// Workers pause once `steps` reaches this value until evaluation moves it.
    limit: &'a AtomicU64,
    stop: &'a AtomicBool,
    template: &'a AgentNet,
    variant: &'a str,
    seed: u64,
}

fn worker_loop(
    ctx: WorkerCtx,
    env: &mut dyn AgentEnv,
    shaper: &mut dyn Shaper,
    tx: mpsc::Sender<RunRecord>,
) -> Result<(), AgentError> {
    let cfg = ctx.config;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed + ctx.id as u64);
    let mut net = ctx.template.clone();
    let mut params = Vec::new();
    let mut episode = 0u64;
    let mut stats = EpisodeStats::default();

    env.reset(rng.gen());
    let mut obs = Observation::initial(env.state());
    shaper.reset(env.state(), &obs)?;
    let mut hidden = AgentNet::initial_state();

    while ctx.steps.load(Ordering::Relaxed) < cfg.total_steps && !ctx.stop.load(Ordering::Relaxed) {
        if ctx.steps.load(Ordering::Relaxed) >= ctx.limit.load(Ordering::Relaxed) {
            std::thread::sleep(Duration::from_millis(1));
            continue;
        }
        ctx.shared.snapshot_into(&mut params);
        net.set_flat_params(&params)?;
        let init = hidden.clone();
        let mut steps = Vec::with_capacity(cfg.rollout);
        let mut done = false;
        for _ in 0..cfg.rollout {
            let (row, next) = net.step(&obs, shaper.aux(), &hidden)?;
            let mask = env.legal();
            let p = PolicyOutput::from_logits(&row, mask);
            let s = p.sample(&mut rng);
            let aux = shaper.aux().to_vec();
            let prev = env.state().clone();
            let (r, d) = env.step(s.action)?;
            let next_obs = Observation::encode(&prev, env.state());
            let sh = shaper.shape(&prev, env.state(), &next_obs)?;
            steps.push(Transition {
                observation: std::mem::replace(&mut obs, next_obs),
                aux,
                mask,
                action: s.action,
                log_prob: s.log_prob,
                value: p.value,
                reward: r + sh.bonus,
                env_reward: r,
                done: d,
            });
            stats.env_score += r;
            stats.shaped_return += r + sh.bonus;
            stats.instr_completions += u32::from(sh.completed);
            stats.steps += 1;
            hidden = next;
            ctx.steps.fetch_add(1, Ordering::Relaxed);
            if d {
                done = true;
                break;
            }
        }
        let bootstrap = if done {
            0.0
        } else {
            let (row, _) = net.step(&obs, shaper.aux(), &hidden)?;
            PolicyOutput::from_logits(&row, env.legal()).value
        };
        let rollout = Rollout { init, steps, bootstrap };
        let (returns, adv) = compute_returns(&rollout, cfg.loss.gamma);
        a3c_loss(&mut net, &rollout, &returns, &adv, &cfg.loss)?;
        let mut grads = net.flat_grads();
        clip_grad_norm(&mut grads, cfg.grad_clip);
        ctx.shared.apply(&grads)?;

        if done {
            let rec = RunRecord {
                step: ctx.steps.load(Ordering::Relaxed),
                worker: ctx.id.to_string(),
                episode,
                env_score: stats.env_score,
                shaped_return: stats.shaped_return,
                instr_completions: stats.instr_completions,
                variant: ctx.variant.to_string(),
                seed: ctx.seed,
            };
            let _ = tx.send(rec);
            episode += 1;
            stats = EpisodeStats::default();
            env.reset(rng.gen());
            obs = Observation::initial(env.state());
            shaper.reset(env.state(), &obs)?;
            hidden = AgentNet::initial_state();
        }
    }
    Ok(())
}

/// Trains with `config.workers` asynchronous workers on environments from
/// `make_env`, evaluating a frozen snapshot every `eval_every` steps.
#[allow(clippy::too_many_arguments)]
pub fn train_with_env<E: AgentEnv, F: Fn(usize) -> E + Sync>(
    config: &A3cConfig,
    variant: &str,
    registry: &ShaperRegistry,
    shaper_ctx: &ShaperContext,
    seed: u64,
    make_env: F,
    mut on_progress: impl FnMut(u64, &[RunRecord]),
) -> Result<TrainOutput, AgentError> {
    if config.workers == 0 || config.rollout == 0 {
        return Err(AgentError::Config("workers and rollout must be positive".into()));
    }
    let template = AgentNet::new(seed);
    let shared = SharedParams::new(template.flat_params(), config.lr);
    let steps = AtomicU64::new(0);
    let gated = config.eval_every > 0;
    let limit = AtomicU64::new(if gated { 0 } else { u64::MAX });
    let stop = AtomicBool::new(false);
    let mut shapers = (0..config.workers)
        .map(|_| registry.build(variant, shaper_ctx))
        .collect::<Result<Vec<_>, _>>()?;
    let mut eval_shaper = registry.build(variant, shaper_ctx)?;
    let mut train_records = Vec::new();
    let mut eval_records = Vec::new();
    let mut eval_net = template.clone();

    let mut run_eval = |at: u64, shared: &SharedParams, out: &mut Vec<RunRecord>| -> Result<(), AgentError> {
        if config.eval_episodes == 0 {
            return Ok(());
        }
        let (p, _) = shared.snapshot();
        eval_net.set_flat_params(&p)?;
        let res = evaluate(
            Policy::Net(&eval_net),
            eval_shaper.as_mut(),
            config.eval_episodes,
            config.eval_seed,
            config.horizon,
        )?;
        out.extend(res.iter().enumerate().map(|(i, s)| RunRecord {
            step: at,
            worker: "eval".into(),
            episode: i as u64,
            env_score: s.env_score,
            shaped_return: s.shaped_return,
            instr_completions: s.instr_completions,
            variant: variant.to_string(),
            seed,
        }));
        Ok(())
    };

    let result: Result<(), AgentError> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        let mut handles = Vec::new();
        for (id, shaper) in shapers.iter_mut().enumerate() {
            let tx = tx.clone();
            let ctx = WorkerCtx {
                id,
                config,
                shared: &shared,
                steps: &steps,
                limit: &limit,
                stop: &stop,
                template: &template,
                variant,
                seed,
            };
            let make_env = &make_env;
            let stop = &stop;
            handles.push(scope.spawn(move || {
                let mut env = make_env(id);
                let r = worker_loop(ctx, &mut env, shaper.as_mut(), tx);
                if r.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                r
            }));
        }
        drop(tx);

        let mut next_eval = 0u64;
        let mut outcome = Ok(());
        loop {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(rec) => train_records.push(rec),
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
            let now = steps.load(Ordering::Relaxed);
            if gated && now >= next_eval && next_eval < config.total_steps && outcome.is_ok() {
                if let Err(e) = run_eval(next_eval, &shared, &mut eval_records) {
                    stop.store(true, Ordering::Relaxed);
                    outcome = Err(e);
                }
                on_progress(next_eval, &eval_records);
                next_eval += config.eval_every;
                limit.store(next_eval.min(config.total_steps), Ordering::Relaxed);
            }
        }
        for h in handles {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    if outcome.is_ok() {
                        outcome = Err(AgentError::Worker(e.to_string()));
                    }
                }
                Err(_) => outcome = Err(AgentError::Worker("worker panicked".into())),
            }
        }
        outcome
    });
    result?;
    run_eval(config.total_steps, &shared, &mut eval_records)?;
    on_progress(config.total_steps, &eval_records);

    let (p, updates) = shared.snapshot();
    let mut net = template;
    net.set_flat_params(&p)?;
    train_records.sort_by_key(|r| (r.step, r.worker.clone(), r.episode));
    train_records.extend(eval_records);
    Ok(TrainOutput {
        net,
        records: train_records,
        updates,
        env_steps: steps.load(Ordering::Relaxed),
    })
}

/// [`train_with_env`] on the MicroBuild game.
pub fn train(
    config: &A3cConfig,
    variant: &str,
    registry: &ShaperRegistry,
    shaper_ctx: &ShaperContext,
    seed: u64,
    on_progress: impl FnMut(u64, &[RunRecord]),
) -> Result<TrainOutput, AgentError> {
    let horizon = config.horizon;
    train_with_env(config, variant, registry, shaper_ctx, seed, |_| MicroBuildEnv::new(horizon), on_progress)
}
