//! Distillation of the CNS archive into one skill-conditioned actor-critic.
//!
//! Every batch is drawn half from online experience and half from the filtered
//! archive. The actor maximizes a per-skill blend of extrinsic and intrinsic critics
//! whose weights come from Lagrange multipliers on the constraint `v_i ≥ α·v*`, with
//! `v*` the running maximum of the skill value estimates.

mod agent;
mod buffer;
mod eval;

pub use agent::{conditioned_input, Agent, CriticEnsemble, CriticReport, MixWeights, PolicyGrad};
pub use buffer::{Batch, StratifiedBuffer};
pub use eval::{evaluate_network, evaluate_policies, lockstep_rollouts, policy_checkpoint, EpisodeSpec, EvalResult};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cns::CnsArchive;
use crate::config::DistillConfig;
use crate::diversity::{nn_diversity, repulsion_direction};
use crate::envs::{Env, Origin, Transition};
use crate::error::{invalid, Error, Result};
use crate::nn::{Checkpoint, RunningNorm};
use crate::par::Exec;
use crate::stats::{vmax, SkillStats};

/// `v* ← max{v*, max_i v_i}` on a copy of `stats`.
pub fn vmax_update(stats: &SkillStats, values: &[f64]) -> Result<SkillStats> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value estimate".into()));
    }
    let mut out = stats.clone();
    out.v_star = vmax(stats.v_star, values);
    Ok(out)
}

/// Intrinsic rewards `φ(s)ᵀ(φ̄_z − φ̄_nn(z))` for every row of a batch.
pub fn batch_intrinsic(stats: &SkillStats, features: &Array2<f64>, z: &[usize]) -> Result<Array1<f64>> {
    let dirs = (0..stats.n()).map(|i| repulsion_direction(stats, i)).collect::<Result<Vec<_>>>()?;
    Ok(Array1::from_iter(
        features.rows().into_iter().zip(z).map(|(f, &zi)| f.iter().zip(&dirs[zi]).map(|(a, b)| a * b).sum()),
    ))
}

/// Everything distillation needs beyond the environment and the archive.
#[derive(Clone, Debug)]
pub struct DistillSetup {
    pub cfg: DistillConfig,
    pub skills: usize,
    pub alpha: f64,
    /// Use the expert skill's current value instead of the running max.
    pub no_vmax: bool,
    /// Drop the intrinsic critic from the policy objective.
    pub no_diversity: bool,
    pub exec: Exec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub v: Vec<f64>,
    pub weights: Vec<f64>,
    pub v_star: f64,
    /// Nearest-neighbour diversity of the running feature estimates.
    pub diversity: f64,
    pub eval_returns: Vec<f64>,
    pub eval_return: f64,
    pub eval_diversity: f64,
    pub temperature: f64,
    pub critic_ext_loss: f64,
    pub critic_int_loss: f64,
}

/// Multipliers and statistics around one batched environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    /// Multipliers, values and `v*` seen by the dual update.
    pub lambdas_before: Vec<f64>,
    pub v: Vec<f64>,
    pub v_star: f64,
    pub lambdas_after: Vec<f64>,
    /// Per-skill `(mean features, value estimate)` folded into the averages, if the skill stepped.
    pub observed: Vec<Option<(Vec<f64>, f64)>>,
}

#[derive(Clone, Debug)]
pub struct DistillOutput {
    pub agent: Agent,
    pub stats: SkillStats,
    pub lambdas: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
    pub final_eval: EvalResult,
    /// `v*` at the start and after every batched environment step.
    pub v_star_trace: Vec<f64>,
    /// Extrinsic weights at the start and after every batched environment step.
    pub weight_trace: Vec<Vec<f64>>,
    /// `(online, offline)` counts of every training batch.
    pub batch_mix: Vec<(usize, usize)>,
    /// Dual and moving-average bookkeeping of every batched environment step.
    pub ticks: Vec<TickRecord>,
    pub offline_hash_start: String,
    pub offline_hash_end: String,
    pub env_steps: usize,
}

impl DistillOutput {
    /// Full training state as a checkpoint.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = policy_checkpoint(&self.agent)?;
        for (name, net) in self.agent.named_params().into_iter().skip(1) {
            ck.add_mlp(&name, net)?;
        }
        ck.insert("log_temperature", vec![1], vec![self.agent.log_temp])?;
        ck.insert("lambdas", vec![self.lambdas.len()], self.lambdas.clone())?;
        ck.insert("v", vec![self.stats.v.len()], self.stats.v.clone())?;
        ck.insert("v_star", vec![1], vec![self.stats.v_star])?;
        let f = self.stats.phi_bar.first().map_or(0, Vec::len);
        ck.insert("phi_bar", vec![self.stats.n(), f], self.stats.phi_bar.concat())?;
        Ok(ck)
    }
}

struct Slot<S> {
    state: Option<S>,
    obs: Vec<f64>,
    skill: usize,
    start_at: usize,
}

fn check_setup(setup: &DistillSetup, spec_obs: usize, phi_init: &[Vec<f64>], feature_dim: usize) -> Result<()> {
    setup.cfg.validate()?;
    if setup.skills < 2 {
        return Err(invalid("distillation needs at least two skills"));
    }
    if !(0.0..=1.0).contains(&setup.alpha) {
        return Err(invalid("alpha must be in [0, 1]"));
    }
    if phi_init.len() != setup.skills || phi_init.iter().any(|p| p.len() != feature_dim) {
        return Err(invalid("initial feature estimates must have one entry of feature_dim per skill"));
    }
    if spec_obs == 0 {
        return Err(invalid("environment has no observations"));
    }
    Ok(())
}

/// Mean features of one stochastic rollout of `agent` per skill.
pub fn rollout_features<E: Env, R: Rng + ?Sized>(
    agent: &Agent,
    env: &E,
    seed: u64,
    jitter: bool,
    exec: Exec,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let episodes: Vec<EpisodeSpec> =
        (0..agent.skills).map(|skill| EpisodeSpec { skill, seed: seed ^ mix_seed(skill as u64), jitter }).collect();
    let rollouts = lockstep_rollouts(env, &episodes, exec, |x, z| {
        let eps = agent.noise(x.nrows(), rng);
        agent.act(x.view(), z, Some(eps))
    })?;
    Ok(rollouts.into_iter().map(|r| r.mean_features).collect())
}

/// Runs the second stage on a filtered archive. `phi_init` seeds the per-skill feature
/// estimates; without it they come from one stochastic rollout of the initial policy
/// per skill. Values and `v*` start at zero.
pub fn run_distill<E: Env>(
    setup: &DistillSetup,
    env: &E,
    archive: &CnsArchive,
    phi_init: Option<Vec<Vec<f64>>>,
    seed: u64,
) -> Result<DistillOutput> {
    let cfg = &setup.cfg;
    let spec = env.spec();
    let n = setup.skills;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(spec.obs_dim, spec.action_dim, n, cfg, &mut rng);
    let phi_init = match phi_init {
        Some(p) => p,
        None => rollout_features(&agent, env, seed ^ 0x5EED, cfg.jitter, setup.exec, &mut rng)?,
    };
    check_setup(setup, spec.obs_dim, &phi_init, spec.feature_dim)?;
    let mut buffer = StratifiedBuffer::with_archive(n, cfg.buffer_capacity, archive)?;
    let offline_hash_start = buffer.offline_hash();

    let mut ext_norm = RunningNorm::new(1);
    for z in 0..n {
        ext_norm.update_batch(buffer.offline_for(z).iter().map(|t| std::slice::from_ref(&t.r_ext)));
    }
    let mut int_norm = RunningNorm::new(1);
    let mut stats = SkillStats::new(phi_init, 1.0 - cfg.ema_phi, 1.0 - cfg.ema_v);
    let mut lambdas = vec![0.0f64.clamp(cfg.lambda_bounds[0], cfg.lambda_bounds[1]); n];
    lambdas[0] = cfg.lambda_bounds[1];

    let t_len = spec.episode_len;
    let mut episode_counter: u64 = 0;
    let mut slots: Vec<Slot<E::State>> = (0..cfg.num_envs)
        .map(|k| Slot { state: None, obs: Vec::new(), skill: 0, start_at: k * t_len / cfg.num_envs })
        .collect();

    let mut metrics = Vec::new();
    let mut v_star_trace = vec![stats.v_star];
    let mut weight_trace = vec![MixWeights::from_lambdas(&lambdas).ext];
    let mut ticks = Vec::new();
    let mut batch_mix = Vec::new();
    let mut last_report = CriticReport::default();
    let mut steps = 0usize;
    let mut next_eval = cfg.eval_interval;
    let mut tick = 0usize;

    while steps < cfg.total_steps {
        for slot in slots.iter_mut().filter(|s| s.state.is_none() && s.start_at <= tick) {
            let s = env.reset(seed ^ mix_seed(episode_counter), cfg.jitter);
            episode_counter += 1;
            slot.obs = env.observe(&s);
            slot.skill = rng.random_range(0..n);
            slot.state = Some(s);
        }
        tick += 1;
        let active: Vec<usize> = (0..slots.len()).filter(|&k| slots[k].state.is_some()).collect();
        if active.is_empty() {
            continue;
        }
        let budget = cfg.total_steps - steps;
        let active = &active[..active.len().min(budget)];
        let mut x = Array2::zeros((active.len(), spec.obs_dim));
        for (r, &k) in active.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&slots[k].obs));
        }
        let z: Vec<usize> = active.iter().map(|&k| slots[k].skill).collect();
        let eps = agent.noise(active.len(), &mut rng);
        let actions = agent.act(x.view(), &z, Some(eps))?;
        let idx: Vec<(usize, usize)> = active.iter().copied().enumerate().collect();
        let results = setup.exec.map(&idx, |&(r, k)| {
            env.step(slots[k].state.as_ref().expect("active slot"), actions.row(r).as_slice().expect("contiguous"))
        });

        let mut feat_sum = vec![vec![0.0; spec.feature_dim]; n];
        let mut rew_sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for ((r, k), res) in idx.iter().copied().zip(results) {
            let step = res?;
            let zk = slots[k].skill;
            for (a, f) in feat_sum[zk].iter_mut().zip(&step.features) {
                *a += f;
            }
            rew_sum[zk] += step.reward;
            count[zk] += 1;
            ext_norm.update(&[step.reward]);
            buffer.push(Transition {
                s: std::mem::take(&mut slots[k].obs),
                a: actions.row(r).to_vec(),
                r_ext: step.reward,
                features: step.features,
                s_next: step.observation.clone(),
                z: zk,
                done: step.done,
                origin: Origin::Online,
            })?;
            if step.done {
                slots[k].state = None;
            } else {
                slots[k].obs = step.observation;
                slots[k].state = Some(step.next_state);
            }
        }
        steps += active.len();

        if buffer.online_len() + buffer.offline_len() >= cfg.batch_size {
            for _ in 0..cfg.critic_utd {
                let batch = buffer.sample_batch(cfg.batch_size, &mut rng)?;
                batch_mix.push((batch.online, batch.offline));
                let r_ext = batch.r_ext.mapv(|r| ext_norm.normalize_scalar(r));
                let r_int = if setup.no_diversity {
                    None
                } else {
                    let raw = batch_intrinsic(&stats, &batch.features, &batch.z)?;
                    int_norm.update_batch(raw.iter().map(std::slice::from_ref));
                    Some(raw.mapv(|r| int_norm.normalize_scalar(r)))
                };
                last_report = agent.critic_update(
                    &batch,
                    &r_ext,
                    r_int.as_ref(),
                    cfg.gamma,
                    cfg.critic_lr,
                    cfg.polyak,
                    cfg.critic_subset,
                    &mut rng,
                )?;
            }
            let mix =
                if setup.no_diversity { MixWeights::extrinsic_only(n) } else { MixWeights::from_lambdas(&lambdas) };
            for _ in 0..cfg.policy_utd {
                let batch = buffer.sample_batch(cfg.batch_size, &mut rng)?;
                batch_mix.push((batch.online, batch.offline));
                agent.policy_update(
                    &batch,
                    &mix,
                    !setup.no_diversity,
                    cfg.actor_lr,
                    cfg.temperature_lr,
                    cfg.critic_subset,
                    &mut rng,
                )?;
            }
        }

        let lambdas_before = lambdas.clone();
        for (i, lam) in lambdas.iter_mut().enumerate() {
            if cfg.pin_expert && i == 0 {
                continue;
            }
            *lam = (*lam - cfg.lambda_lr * (stats.v[i] - setup.alpha * stats.v_star) / t_len as f64)
                .clamp(cfg.lambda_bounds[0], cfg.lambda_bounds[1]);
        }
        let mut tick_rec = TickRecord {
            lambdas_before,
            v: stats.v.clone(),
            v_star: stats.v_star,
            lambdas_after: lambdas.clone(),
            observed: vec![None; n],
        };
        for i in 0..n {
            if count[i] > 0 {
                let c = count[i] as f64;
                let phi: Vec<f64> = feat_sum[i].iter().map(|f| f / c).collect();
                let value = rew_sum[i] / c * t_len as f64;
                stats.update_phi(i, &phi);
                stats.update_value(i, value);
                tick_rec.observed[i] = Some((phi, value));
            }
        }
        ticks.push(tick_rec);
        if setup.no_vmax {
            stats.v_star = stats.v[0];
        } else {
            stats.update_v_star();
        }
        v_star_trace.push(stats.v_star);
        weight_trace.push(MixWeights::from_lambdas(&lambdas).ext);

        if steps >= next_eval || steps >= cfg.total_steps {
            while next_eval <= steps {
                next_eval += cfg.eval_interval;
            }
            let ev = evaluate_network(&agent.policy, n, env, cfg.eval_episodes, seed ^ 0xE7A1, cfg.jitter, setup.exec)?;
            metrics.push(MetricsRow {
                step: steps,
                v: stats.v.clone(),
                weights: MixWeights::from_lambdas(&lambdas).ext,
                v_star: stats.v_star,
                diversity: nn_diversity(&stats.phi_bar)?,
                eval_return: ev.mean_return(),
                eval_returns: ev.returns,
                eval_diversity: ev.diversity,
                temperature: agent.temperature(),
                critic_ext_loss: last_report.ext_loss,
                critic_int_loss: last_report.int_loss,
            });
            log::debug!("distill step {steps}: v* {:.2}", stats.v_star);
        }
    }

    let final_eval =
        evaluate_network(&agent.policy, n, env, cfg.eval_episodes.max(1), seed ^ 0xF1AA, cfg.jitter, setup.exec)?;
    let offline_hash_end = buffer.offline_hash();
    Ok(DistillOutput {
        agent,
        stats,
        lambdas,
        metrics,
        final_eval,
        v_star_trace,
        weight_trace,
        batch_mix,
        ticks,
        offline_hash_start,
        offline_hash_end,
        env_steps: steps,
    })
}

fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
