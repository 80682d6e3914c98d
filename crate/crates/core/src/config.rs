//! Run configuration. Every block rejects unknown keys and fills missing ones with the
//! maze defaults.

use serde::{Deserialize, Serialize};

use crate::envs::{MazeConfig, PushConfig};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::par::Exec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Maze,
    Push,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnsConfig {
    pub iterations: usize,
    pub popsize: usize,
    pub elite_ratio: f64,
    pub sigma0: f64,
    pub spline_controls: usize,
    /// Spline degree; `None` picks `min(3, controls − 1)`.
    pub spline_degree: Option<usize>,
    pub lambda_lr: f64,
    pub lambda_bounds: [f64; 2],
    /// Multipliers are updated every `lambda_delay` iterations.
    pub lambda_delay: usize,
    pub lambda_inner_steps: usize,
    pub kappa_phi: f64,
    pub kappa_v: f64,
    pub keep_fraction: f64,
    /// Match features against other skills at any timestep instead of the same one.
    pub any_time: bool,
    /// Extrinsic weight used instead of the multipliers by the fixed-blend ablation.
    pub fixed_blend_weight: f64,
    pub jitter: bool,
}

impl Default for CnsConfig {
    fn default() -> Self {
        Self {
            iterations: 110,
            popsize: 4,
            elite_ratio: 0.5,
            sigma0: 0.6,
            spline_controls: 5,
            spline_degree: None,
            lambda_lr: 1e-4,
            lambda_bounds: [-6.0, 6.0],
            lambda_delay: 1,
            lambda_inner_steps: 200,
            kappa_phi: 0.2,
            kappa_v: 0.2,
            keep_fraction: 0.25,
            any_time: false,
            fixed_blend_weight: 0.5,
            jitter: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Total environment steps summed over all parallel environments.
    pub total_steps: usize,
    pub num_envs: usize,
    pub batch_size: usize,
    pub policy_utd: usize,
    pub critic_utd: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub lambda_lr: f64,
    pub lambda_bounds: [f64; 2],
    pub init_temperature: f64,
    /// Target entropy per action dimension.
    pub target_entropy_per_dim: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub num_critics: usize,
    pub critic_subset: usize,
    pub hidden_depth: usize,
    pub hidden_size: usize,
    pub activation: Activation,
    pub layer_norm: bool,
    pub buffer_capacity: usize,
    pub ema_phi: f64,
    pub ema_v: f64,
    /// Keep skill 0's multiplier at the upper bound for the whole stage.
    pub pin_expert: bool,
    /// Environment steps between metric rows.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub jitter: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            total_steps: 1_000_000,
            num_envs: 32,
            batch_size: 256,
            policy_utd: 4,
            critic_utd: 4,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            lambda_lr: 5e-4,
            lambda_bounds: [-6.0, 6.0],
            init_temperature: 1.0,
            target_entropy_per_dim: -0.5,
            gamma: 0.975,
            polyak: 5e-3,
            num_critics: 10,
            critic_subset: 2,
            hidden_depth: 4,
            hidden_size: 64,
            activation: Activation::Relu,
            layer_norm: true,
            buffer_capacity: 1_000_000,
            ema_phi: 0.995,
            ema_v: 0.992,
            pin_expert: false,
            eval_interval: 20_000,
            eval_episodes: 1,
            jitter: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Replace the running-max target with the expert skill's current value.
    pub no_vmax: bool,
    /// Train without offline batches (CNS still initializes the feature estimates).
    pub no_symmetric: bool,
    /// Skip CNS entirely: no offline data, uniform feature initialization.
    pub from_scratch: bool,
    /// Zero intrinsic weight in the policy objective.
    pub no_diversity: bool,
    /// One policy update per batched environment step.
    pub utd_1: bool,
    /// Fixed extrinsic/intrinsic weights in CNS instead of multipliers.
    pub fixed_blend: bool,
    /// Ten-fold maze collision penalty.
    pub high_penalty: bool,
}

pub const ABLATION_FLAGS: [&str; 7] =
    ["no_vmax", "no_symmetric", "from_scratch", "no_diversity", "utd_1", "fixed_blend", "high_penalty"];

impl Ablation {
    pub fn set(&mut self, flag: &str) -> Result<()> {
        let slot = match flag {
            "no_vmax" => &mut self.no_vmax,
            "no_symmetric" => &mut self.no_symmetric,
            "from_scratch" => &mut self.from_scratch,
            "no_diversity" => &mut self.no_diversity,
            "utd_1" => &mut self.utd_1,
            "fixed_blend" => &mut self.fixed_blend,
            "high_penalty" => &mut self.high_penalty,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation flag `{other}` (expected one of {})",
                    ABLATION_FLAGS.join(", ")
                )))
            }
        };
        *slot = true;
        Ok(())
    }

    /// Names of the enabled flags.
    pub fn active(&self) -> Vec<&'static str> {
        let on = [
            self.no_vmax,
            self.no_symmetric,
            self.from_scratch,
            self.no_diversity,
            self.utd_1,
            self.fixed_blend,
            self.high_penalty,
        ];
        ABLATION_FLAGS.iter().zip(on).filter(|(_, b)| *b).map(|(n, _)| *n).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes_per_skill: usize,
    pub jitter: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes_per_skill: 5, jitter: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub env: EnvKind,
    pub skills: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub exec: Exec,
    pub maze: MazeConfig,
    pub push: PushConfig,
    pub cns: CnsConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            env: EnvKind::Maze,
            skills: 10,
            alpha: 0.8,
            seeds: vec![0],
            exec: Exec::Parallel,
            maze: MazeConfig::default(),
            push: PushConfig::default(),
            cns: CnsConfig::default(),
            distill: DistillConfig::default(),
            eval: EvalConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl CnsConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.iterations > 0, "cns.iterations must be positive")?;
        check(self.popsize >= 2, "cns.popsize must be at least 2")?;
        check(self.elite_ratio > 0.0 && self.elite_ratio <= 1.0, "cns.elite_ratio must be in (0, 1]")?;
        check(self.sigma0 > 0.0 && self.sigma0.is_finite(), "cns.sigma0 must be positive")?;
        check(self.spline_controls >= 2, "cns.spline_controls must be at least 2")?;
        if let Some(d) = self.spline_degree {
            check(d >= 1 && d < self.spline_controls, "cns.spline_degree must be in [1, controls)")?;
        }
        check(self.lambda_lr >= 0.0, "cns.lambda_lr must be non-negative")?;
        check(self.lambda_bounds[0] < self.lambda_bounds[1], "cns.lambda_bounds must be increasing")?;
        check(self.lambda_delay > 0, "cns.lambda_delay must be positive")?;
        check(in_unit(self.kappa_phi) && in_unit(self.kappa_v), "cns.kappa_phi and cns.kappa_v must be in [0, 1]")?;
        check(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0, "cns.keep_fraction must be in (0, 1]")?;
        check(in_unit(self.fixed_blend_weight), "cns.fixed_blend_weight must be in [0, 1]")
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.num_envs > 0, "distill.num_envs must be positive")?;
        check(self.batch_size >= 2 && self.batch_size.is_multiple_of(2), "distill.batch_size must be even")?;
        check(self.critic_utd > 0 && self.policy_utd > 0, "distill UTD ratios must be positive")?;
        for (v, name) in [
            (self.actor_lr, "actor_lr"),
            (self.critic_lr, "critic_lr"),
            (self.temperature_lr, "temperature_lr"),
            (self.lambda_lr, "lambda_lr"),
        ] {
            check(v >= 0.0 && v.is_finite(), &format!("distill.{name} must be non-negative"))?;
        }
        check(self.lambda_bounds[0] < self.lambda_bounds[1], "distill.lambda_bounds must be increasing")?;
        check(self.init_temperature > 0.0, "distill.init_temperature must be positive")?;
        check((0.0..1.0).contains(&self.gamma), "distill.gamma must be in [0, 1)")?;
        check(self.polyak > 0.0 && self.polyak <= 1.0, "distill.polyak must be in (0, 1]")?;
        check(self.num_critics >= 1, "distill.num_critics must be positive")?;
        check(
            self.critic_subset >= 1 && self.critic_subset <= self.num_critics,
            "distill.critic_subset must be in [1, num_critics]",
        )?;
        check(self.hidden_size > 0, "distill.hidden_size must be positive")?;
        check(self.buffer_capacity > 0, "distill.buffer_capacity must be positive")?;
        check(in_unit(self.ema_phi) && in_unit(self.ema_v), "distill.ema_phi and distill.ema_v must be in [0, 1]")?;
        check(self.eval_interval > 0, "distill.eval_interval must be positive")?;
        check(self.eval_episodes > 0, "distill.eval_episodes must be positive")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.version == CONFIG_VERSION,
            &format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
        )?;
        check(self.skills >= 2, "skills must be at least 2")?;
        check(in_unit(self.alpha), "alpha must be in [0, 1]")?;
        check(!self.seeds.is_empty(), "seeds must not be empty")?;
        check(self.eval.episodes_per_skill > 0, "eval.episodes_per_skill must be positive")?;
        self.maze.validate()?;
        self.push.validate()?;
        self.cns.validate()?;
        self.distill.validate()
    }

    /// Configuration with the ablation flags folded into the affected settings.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.ablation.utd_1 {
            c.distill.policy_utd = 1;
        }
        if c.ablation.high_penalty {
            c.maze = c.maze.with_penalty_scale(10.0);
        }
        c
    }
}
