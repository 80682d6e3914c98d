//! End-to-end pipeline per seed: CNS, filtering, distillation, evaluation, artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cns::{filter_archive, run_cns, CnsArchive, CnsOutput, CnsSetup};
use crate::config::{EnvKind, RunConfig};
use crate::distill::{evaluate_network, run_distill, DistillOutput, DistillSetup, EvalResult, MetricsRow};
use crate::envs::{corridor_class, CorridorClass, Env, MazeConfig, MazeEnv, PushEnv, Rollout};
use crate::error::Result;
use crate::io;

/// Offset applied to the run seed for final evaluation episodes.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Per-seed summary written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub ablations: Vec<String>,
    /// Mean return of the filtered CNS archive.
    pub archive_return: Option<f64>,
    /// Distinct corridor classes among filtered archive trajectories (maze only).
    pub archive_classes: Option<usize>,
    /// Fraction of collision-free steps over the filtered archive.
    pub archive_free_fraction: Option<f64>,
    pub eval_returns: Vec<f64>,
    pub mean_return: f64,
    pub diversity: f64,
    pub v_star: f64,
    /// Skills whose evaluation return is at least `(α − 0.1)·v*`.
    pub constraint_satisfied: usize,
    /// Distinct per-skill corridor classes at evaluation (maze only).
    pub corridor_classes: Option<usize>,
    /// Mean evaluation return over all metric rows (area under the learning curve).
    pub return_auc: f64,
    pub env_steps: usize,
}

pub struct SeedRun {
    pub report: SeedReport,
    pub cns: Option<CnsOutput>,
    /// Filtered archive used as the offline stratum (empty when disabled).
    pub offline: CnsArchive,
    pub distill: DistillOutput,
    pub eval: EvalResult,
}

/// Corridor class of a rollout, read from its position features.
pub fn rollout_class(cfg: &MazeConfig, r: &Rollout) -> CorridorClass {
    let path: Vec<[f64; 2]> = r.transitions.iter().map(|t| [t.features[0], t.features[1]]).collect();
    corridor_class(cfg, &path)
}

fn complete(c: &CorridorClass) -> bool {
    c.0.iter().all(Option::is_some)
}

/// Distinct complete classes among the given rollouts.
pub fn distinct_classes<'a>(cfg: &MazeConfig, rollouts: impl IntoIterator<Item = &'a Rollout>) -> usize {
    rollouts.into_iter().map(|r| rollout_class(cfg, r)).filter(complete).collect::<BTreeSet<_>>().len()
}

/// Number of distinct complete classes among per-skill majority classes.
pub fn skill_classes(cfg: &MazeConfig, eval: &EvalResult) -> usize {
    let skills = eval.returns.len();
    let per = eval.rollouts.len() / skills.max(1);
    let mut out = BTreeSet::new();
    for chunk in eval.rollouts.chunks(per.max(1)) {
        let mut counts: BTreeMap<CorridorClass, usize> = BTreeMap::new();
        for r in chunk {
            *counts.entry(rollout_class(cfg, r)).or_default() += 1;
        }
        if let Some((c, _)) = counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0))) {
            if complete(&c) {
                out.insert(c);
            }
        }
    }
    out.len()
}

pub fn archive_mean_return(a: &CnsArchive) -> f64 {
    a.entries.iter().map(|e| e.ret).sum::<f64>() / a.len().max(1) as f64
}

pub fn archive_free_fraction(a: &CnsArchive) -> f64 {
    let steps: usize = a.entries.iter().map(|e| e.transitions.len()).sum();
    let hits: usize = a.entries.iter().map(|e| e.collisions).sum();
    1.0 - hits as f64 / steps.max(1) as f64
}

/// Runs the CNS stage alone and returns its output with the filtered archive.
pub fn cns_stage<E: Env>(cfg: &RunConfig, env: &E, seed: u64) -> Result<(CnsOutput, CnsArchive)> {
    let setup = CnsSetup {
        cfg: cfg.cns.clone(),
        skills: cfg.skills,
        alpha: cfg.alpha,
        fixed_blend: cfg.ablation.fixed_blend,
        exec: cfg.exec,
    };
    let out = run_cns(&setup, env, seed)?;
    let filtered = filter_archive(&out.archive, cfg.cns.keep_fraction)?;
    Ok((out, filtered))
}

/// CNS on the environment selected by the config.
pub fn run_cns_only(cfg: &RunConfig, seed: u64) -> Result<(CnsOutput, CnsArchive)> {
    let cfg = cfg.effective();
    cfg.validate()?;
    match cfg.env {
        EnvKind::Maze => cns_stage(&cfg, &MazeEnv::new(cfg.maze.clone())?, seed),
        EnvKind::Push => cns_stage(&cfg, &PushEnv::new(cfg.push.clone())?, seed),
    }
}

fn run_with<E: Env>(cfg: &RunConfig, env: &E, maze: Option<&MazeConfig>, seed: u64) -> Result<SeedRun> {
    let ab = &cfg.ablation;
    let (cns, offline, phi_init) = if ab.from_scratch {
        (None, CnsArchive::new(cfg.skills), None)
    } else {
        let (out, filtered) = cns_stage(cfg, env, seed)?;
        let phi = out.final_features.clone();
        let offline = if ab.no_symmetric { CnsArchive::new(cfg.skills) } else { filtered };
        (Some((out, offline.clone())), offline, Some(phi))
    };
    let setup = DistillSetup {
        cfg: cfg.distill.clone(),
        skills: cfg.skills,
        alpha: cfg.alpha,
        no_vmax: ab.no_vmax,
        no_diversity: ab.no_diversity,
        exec: cfg.exec,
    };
    let distill = run_distill(&setup, env, &offline, phi_init, seed)?;
    let eval = evaluate_network(
        &distill.agent.policy,
        cfg.skills,
        env,
        cfg.eval.episodes_per_skill,
        seed.wrapping_add(EVAL_SEED_OFFSET),
        cfg.eval.jitter,
        cfg.exec,
    )?;
    let v_star = distill.stats.v_star;
    let floor = (cfg.alpha - 0.1) * v_star;
    let archive = cns.as_ref().map(|(_, a)| a).filter(|a| !a.is_empty());
    let report = SeedReport {
        seed,
        ablations: ab.active().into_iter().map(str::to_string).collect(),
        archive_return: archive.map(archive_mean_return),
        archive_classes: archive.zip(maze).map(|(a, m)| {
            let rs: Vec<Rollout> = a
                .entries
                .iter()
                .map(|e| Rollout {
                    transitions: e.transitions.clone(),
                    ret: e.ret,
                    mean_features: e.mean_features.clone(),
                    collisions: e.collisions,
                })
                .collect();
            distinct_classes(m, &rs)
        }),
        archive_free_fraction: archive.map(archive_free_fraction),
        eval_returns: eval.returns.clone(),
        mean_return: eval.mean_return(),
        diversity: eval.diversity,
        v_star,
        constraint_satisfied: eval.returns.iter().filter(|&&r| r >= floor).count(),
        corridor_classes: maze.map(|m| skill_classes(m, &eval)),
        return_auc: return_auc(&distill.metrics),
        env_steps: distill.env_steps,
    };
    Ok(SeedRun { report, cns: cns.map(|(c, _)| c), offline, distill, eval })
}

/// Mean evaluation return across metric rows.
pub fn return_auc(rows: &[MetricsRow]) -> f64 {
    rows.iter().map(|r| r.eval_return).sum::<f64>() / rows.len().max(1) as f64
}

/// Full pipeline for one seed with ablations folded in.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let cfg = cfg.effective();
    cfg.validate()?;
    match cfg.env {
        EnvKind::Maze => run_with(&cfg, &MazeEnv::new(cfg.maze.clone())?, Some(&cfg.maze), seed),
        EnvKind::Push => run_with(&cfg, &PushEnv::new(cfg.push.clone())?, None, seed),
    }
}

/// Artifact file names inside a seed directory.
pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const CNS_TRACE_FILE: &str = "cns_trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Writes the seed artifacts and returns the written paths.
pub fn write_seed(dir: &Path, run: &SeedRun, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join(ARCHIVE_FILE);
    io::write_archive(io::create(&path)?, &run.offline)?;
    written.push(path);
    if let Some(c) = &run.cns {
        let path = dir.join(CNS_TRACE_FILE);
        io::write_cns_trace(io::create(&path)?, &c.trace, cfg.skills)?;
        written.push(path);
    }
    let path = dir.join(METRICS_FILE);
    io::write_metrics(io::create(&path)?, &run.distill.metrics, cfg.skills)?;
    written.push(path);
    let path = dir.join(CHECKPOINT_FILE);
    run.distill.checkpoint()?.save(&path)?;
    written.push(path);
    let path = dir.join(EVAL_FILE);
    io::write_eval(io::create(&path)?, &io::eval_records(&run.eval, cfg.eval.episodes_per_skill))?;
    written.push(path);
    let path = dir.join(SUMMARY_FILE);
    serde_json::to_writer_pretty(io::create(&path)?, &run.report)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Origin, Transition};

    fn line_rollout(ys: &[(f64, f64)]) -> Rollout {
        Rollout {
            transitions: ys
                .iter()
                .map(|&(x, y)| Transition {
                    s: vec![],
                    a: vec![],
                    r_ext: 0.0,
                    features: vec![x, y],
                    s_next: vec![],
                    z: 0,
                    done: false,
                    origin: Origin::Online,
                })
                .collect(),
            ret: 0.0,
            mean_features: vec![0.0, 0.0],
            collisions: 0,
        }
    }

    #[test]
    fn class_counting() {
        let m = MazeConfig::default();
        let low = line_rollout(&[(-4.0, -1.6), (2.0, -1.6)]);
        let high = line_rollout(&[(-4.0, 1.6), (2.0, 1.6)]);
        let short = line_rollout(&[(-4.0, 0.0), (-3.0, 0.0)]);
        assert_eq!(distinct_classes(&m, [&low, &high, &low, &short]), 2);
        let eval = EvalResult {
            returns: vec![0.0, 0.0],
            mean_features: vec![vec![0.0; 2]; 2],
            diversity: 0.0,
            rollouts: vec![low.clone(), low.clone(), high.clone(), high.clone(), low.clone(), short.clone()],
        };
        assert_eq!(skill_classes(&m, &eval), 1);
    }

    #[test]
    fn archive_summaries() {
        let mut a = CnsArchive::new(1);
        let mut r = line_rollout(&[(0.0, 0.0); 4]);
        r.collisions = 1;
        a.entries.push(crate::cns::ArchiveEntry {
            skill: 0,
            iteration: 1,
            ret: 3.0,
            mean_features: vec![0.0, 0.0],
            collisions: 1,
            transitions: r.transitions,
        });
        assert_eq!(archive_mean_return(&a), 3.0);
        assert_eq!(archive_free_fraction(&a), 0.75);
    }
}
