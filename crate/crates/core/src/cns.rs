//! Constrained novelty search: one CMA-ES population per skill over spline control
//! points. Each member is scored by a blend of its novelty against the other skills'
//! current representative trajectories and its task return, with per-skill
//! sigmoid-bounded multipliers enforcing `v_i ≥ α·v*`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmaes::CmaState;
use crate::config::CnsConfig;
use crate::diversity::cns_intrinsic_return;
use crate::envs::{rollout_open_loop, Env, Rollout, Transition};
use crate::error::{invalid, Error, Result};
use crate::par::Exec;
use crate::spline::{degree_for, eval_trajectory, SplineParams};
use crate::stats::{sigmoid, SkillStats};

const Z_STD_FLOOR: f64 = 1e-8;

/// Per-skill Lagrange multipliers (pre-sigmoid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambdas: Vec<f64>,
    pub lr: f64,
    pub bounds: [f64; 2],
    pub delay: usize,
    pub inner_steps: usize,
    /// Skill whose extrinsic weight is held at exactly one.
    pub pinned: Option<usize>,
}

impl LagrangeState {
    pub fn new(n: usize, lr: f64, bounds: [f64; 2], delay: usize, inner_steps: usize, pinned: Option<usize>) -> Self {
        let mut lambdas = vec![0.0f64.clamp(bounds[0], bounds[1]); n];
        if let Some(p) = pinned {
            lambdas[p] = bounds[1];
        }
        Self { lambdas, lr, bounds, delay: delay.max(1), inner_steps, pinned }
    }

    /// Extrinsic weight `σ(λ_i)`; exactly 1 for the pinned skill.
    pub fn weight(&self, i: usize) -> f64 {
        if self.pinned == Some(i) {
            1.0
        } else {
            sigmoid(self.lambdas[i])
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.lambdas.len()).map(|i| self.weight(i)).collect()
    }

    /// Whether the multipliers are due for an update at (1-based) `iteration`.
    pub fn due(&self, iteration: usize) -> bool {
        iteration.is_multiple_of(self.delay)
    }
}

/// `inner_steps` steps of `λ_i ← clip(λ_i − lr·(v_i − α v*))` for every non-pinned skill.
pub fn lambda_update(lag: &LagrangeState, v: &[f64], v_star: f64, alpha: f64) -> Result<LagrangeState> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if v.len() != lag.lambdas.len() {
        return Err(invalid(format!("expected {} values, got {}", lag.lambdas.len(), v.len())));
    }
    let mut out = lag.clone();
    for (i, lam) in out.lambdas.iter_mut().enumerate() {
        if lag.pinned == Some(i) {
            continue;
        }
        let gap = v[i] - alpha * v_star;
        for _ in 0..lag.inner_steps {
            *lam = (*lam - lag.lr * gap).clamp(lag.bounds[0], lag.bounds[1]);
        }
    }
    Ok(out)
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt().max(Z_STD_FLOOR);
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Normalizes both fitness vectors within the subpopulation and mixes them with
/// extrinsic weight `w_ext`.
pub fn blend_with_weight(r_int: &[f64], r_ext: &[f64], w_ext: f64) -> Result<Vec<f64>> {
    if r_int.len() != r_ext.len() {
        return Err(invalid(format!("fitness length mismatch: {} vs {}", r_int.len(), r_ext.len())));
    }
    if r_int.is_empty() {
        return Ok(Vec::new());
    }
    if r_int.iter().chain(r_ext).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite fitness".into()));
    }
    let (zi, ze) = (zscore(r_int), zscore(r_ext));
    Ok(zi.iter().zip(&ze).map(|(i, e)| (1.0 - w_ext) * i + w_ext * e).collect())
}

/// [`blend_with_weight`] with weight `σ(λ)`.
pub fn blend_fitness(r_int: &[f64], r_ext: &[f64], lambda: f64) -> Result<Vec<f64>> {
    blend_with_weight(r_int, r_ext, sigmoid(lambda))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub skill: usize,
    pub iteration: usize,
    pub ret: f64,
    pub mean_features: Vec<f64>,
    pub collisions: usize,
    pub transitions: Vec<Transition>,
}

impl ArchiveEntry {
    fn from_rollout(skill: usize, iteration: usize, r: Rollout) -> Self {
        Self {
            skill,
            iteration,
            ret: r.ret,
            mean_features: r.mean_features,
            collisions: r.collisions,
            transitions: r.transitions,
        }
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.features.clone()).collect()
    }
}

/// Trajectories gathered during CNS, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CnsArchive {
    pub skills: usize,
    pub entries: Vec<ArchiveEntry>,
}

impl CnsArchive {
    pub fn new(skills: usize) -> Self {
        Self { skills, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_skill(&self, z: usize) -> impl Iterator<Item = &ArchiveEntry> {
        self.entries.iter().filter(move |e| e.skill == z)
    }

    pub fn count(&self, z: usize) -> usize {
        self.for_skill(z).count()
    }

    /// Mean features of each skill's trajectories (`None` for skills without data).
    pub fn mean_features(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.skills)
            .map(|z| {
                let mut it = self.for_skill(z).peekable();
                let dim = it.peek()?.mean_features.len();
                let mut acc = vec![0.0; dim];
                let mut n = 0.0;
                for e in it {
                    for (a, f) in acc.iter_mut().zip(&e.mean_features) {
                        *a += f;
                    }
                    n += 1.0;
                }
                Some(acc.into_iter().map(|a| a / n).collect())
            })
            .collect()
    }
}

/// Keeps the best `ceil(keep_fraction · count)` trajectories of every skill by return;
/// equal returns keep insertion order.
pub fn filter_archive(archive: &CnsArchive, keep_fraction: f64) -> Result<CnsArchive> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(invalid(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let mut out = CnsArchive::new(archive.skills);
    for z in 0..archive.skills {
        let mut idx: Vec<usize> =
            archive.entries.iter().enumerate().filter(|(_, e)| e.skill == z).map(|(i, _)| i).collect();
        let keep = (keep_fraction * idx.len() as f64 - 1e-9).ceil() as usize;
        idx.sort_by(|&a, &b| archive.entries[b].ret.total_cmp(&archive.entries[a].ret));
        out.entries.extend(idx.into_iter().take(keep).map(|i| archive.entries[i].clone()));
    }
    Ok(out)
}

/// Everything CNS needs beyond the environment.
#[derive(Clone, Debug)]
pub struct CnsSetup {
    pub cfg: CnsConfig,
    pub skills: usize,
    pub alpha: f64,
    /// Replace the multipliers by `cfg.fixed_blend_weight` (skill 0 stays extrinsic).
    pub fixed_blend: bool,
    pub exec: Exec,
}

/// State after one CNS iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnsTrace {
    pub iteration: usize,
    pub v: Vec<f64>,
    pub v_star: f64,
    pub lambdas: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean_return: Vec<f64>,
    /// `v_i − α·v*` seen by each multiplier update this iteration; `None` when skipped.
    pub gaps: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
pub struct CnsOutput {
    pub archive: CnsArchive,
    pub stats: SkillStats,
    pub lagrange: LagrangeState,
    pub params: Vec<SplineParams>,
    /// Mean features of one rollout of each skill's final search mean.
    pub final_features: Vec<Vec<f64>>,
    pub final_returns: Vec<f64>,
    pub trace: Vec<CnsTrace>,
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn rollout_seed(seed: u64, skill: usize, iteration: usize, member: usize) -> u64 {
    mix(mix(mix(seed ^ skill as u64) ^ iteration as u64) ^ member as u64)
}

struct Decoder {
    m: usize,
    u: usize,
    degree: usize,
    horizon: usize,
}

impl Decoder {
    fn params(&self, x: &DVector<f64>) -> Result<SplineParams> {
        let controls = ndarray::Array2::from_shape_vec((self.m, self.u), x.iter().copied().collect())
            .map_err(|e| invalid(e.to_string()))?;
        SplineParams::new(controls, self.degree, self.horizon)
    }

    fn run<E: Env>(&self, env: &E, x: &DVector<f64>, seed: u64, jitter: bool, skill: usize) -> Result<Rollout> {
        let actions = eval_trajectory(&self.params(x)?);
        rollout_open_loop(env, actions.view(), seed, jitter, skill)
    }
}

/// Runs constrained novelty search and returns the unfiltered archive.
pub fn run_cns<E: Env>(setup: &CnsSetup, env: &E, seed: u64) -> Result<CnsOutput> {
    let cfg = &setup.cfg;
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    let n = setup.skills;
    if n < 2 {
        return Err(invalid("constrained novelty search needs at least two skills"));
    }
    let spec = env.spec();
    let dec = Decoder {
        m: cfg.spline_controls,
        u: spec.action_dim,
        degree: cfg.spline_degree.unwrap_or_else(|| degree_for(cfg.spline_controls)),
        horizon: spec.episode_len,
    };
    let dim = dec.m * dec.u;
    let mut cmas = (0..n)
        .map(|_| CmaState::new(&vec![0.0; dim], cfg.popsize, cfg.elite_ratio, cfg.sigma0))
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|z| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(z as u64);
            r
        })
        .collect();
    let mut stats = SkillStats::new(vec![vec![0.0; spec.feature_dim]; n], cfg.kappa_phi, cfg.kappa_v);
    let mut lag =
        LagrangeState::new(n, cfg.lambda_lr, cfg.lambda_bounds, cfg.lambda_delay, cfg.lambda_inner_steps, Some(0));
    let mut archive = CnsArchive::new(n);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let jitter = cfg.jitter;

    for it in 1..=cfg.iterations {
        let reps: Vec<Vec<Vec<f64>>> = setup
            .exec
            .map(&cmas, |c| dec.run(env, &c.mean, rollout_seed(seed, usize::MAX, it, 0), jitter, 0))
            .into_iter()
            .map(|r| r.map(|r| r.feature_seq()))
            .collect::<Result<_>>()?;
        let asks: Vec<_> = cmas.iter().zip(rngs.iter_mut()).map(|(c, r)| c.ask(r)).collect();
        let jobs: Vec<(usize, usize)> = (0..n).flat_map(|z| (0..cfg.popsize).map(move |k| (z, k))).collect();
        let results = setup.exec.map(&jobs, |&(z, k)| -> Result<(Rollout, f64)> {
            let r = dec.run(env, &asks[z].candidates[k], rollout_seed(seed, z, it, k), jitter, z)?;
            let others: Vec<&[Vec<f64>]> =
                reps.iter().enumerate().filter(|(j, _)| *j != z).map(|(_, f)| f.as_slice()).collect();
            let novelty = cns_intrinsic_return(&r.feature_seq(), &others, cfg.any_time)?;
            Ok((r, novelty))
        });
        let mut results = results.into_iter();
        let mut mean_return = vec![0.0; n];
        let mut gaps = vec![None; n];
        for z in 0..n {
            let batch: Vec<(Rollout, f64)> = results.by_ref().take(cfg.popsize).collect::<Result<_>>()?;
            let r_ext: Vec<f64> = batch.iter().map(|(r, _)| r.ret).collect();
            let r_int: Vec<f64> = batch.iter().map(|(_, nov)| *nov).collect();
            let w = if setup.fixed_blend && z != 0 { cfg.fixed_blend_weight } else { lag.weight(z) };
            let fitness = blend_with_weight(&r_int, &r_ext, w)?;
            cmas[z] = cmas[z].tell(&asks[z], &fitness)?;

            let pop = batch.len() as f64;
            let mut phi = vec![0.0; spec.feature_dim];
            for (r, _) in &batch {
                for (p, f) in phi.iter_mut().zip(&r.mean_features) {
                    *p += f / pop;
                }
            }
            mean_return[z] = r_ext.iter().sum::<f64>() / pop;
            stats.update_phi(z, &phi);
            stats.update_value(z, mean_return[z]);
            stats.update_v_star();
            if lag.due(it) && !setup.fixed_blend {
                if lag.pinned != Some(z) {
                    gaps[z] = Some(stats.v[z] - setup.alpha * stats.v_star);
                }
                let mut next = lambda_update(&lag, &stats.v, stats.v_star, setup.alpha)?;
                // only skill z's multiplier moves at this point of the sweep
                for (j, l) in next.lambdas.iter_mut().enumerate() {
                    if j != z {
                        *l = lag.lambdas[j];
                    }
                }
                lag = next;
            }
            archive.entries.extend(batch.into_iter().map(|(r, _)| ArchiveEntry::from_rollout(z, it, r)));
        }
        trace.push(CnsTrace {
            iteration: it,
            v: stats.v.clone(),
            v_star: stats.v_star,
            lambdas: lag.lambdas.clone(),
            weights: (0..n)
                .map(|z| if setup.fixed_blend && z != 0 { cfg.fixed_blend_weight } else { lag.weight(z) })
                .collect(),
            mean_return,
            gaps,
        });
    }

    let params = cmas.iter().map(|c| dec.params(&c.mean)).collect::<Result<Vec<_>>>()?;
    let finals = setup
        .exec
        .map_range(n, |z| dec.run(env, &cmas[z].mean, rollout_seed(seed, z, usize::MAX, 0), jitter, z))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CnsOutput {
        archive,
        stats,
        lagrange: lag,
        params,
        final_features: finals.iter().map(|r| r.mean_features.clone()).collect(),
        final_returns: finals.iter().map(|r| r.ret).collect(),
        trace,
    })
}
