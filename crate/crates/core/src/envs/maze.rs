//! Point-mass maze: a rod under xy velocity control must reach a goal line while
//! weaving between cylinder obstacles.
//!
//! Step reward `β_target·(x − x_target) − β_coll·1_coll + x_max`, with `β_target = 10`
//! on the final step and `1` otherwise, clipped to `[-1, 2]`. Cylinders are solid: a
//! move that would penetrate one is projected back onto its surface and counts as a
//! collision for that step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, EnvSpec, StepResult};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeConfig {
    pub start: [f64; 2],
    pub x_target: f64,
    /// Position bound; also the reward offset `x_max`.
    pub bound: f64,
    /// Displacement per unit action per step.
    pub step_size: f64,
    pub rod_radius: f64,
    pub collision_penalty: f64,
    pub final_target_gain: f64,
    pub reward_clip: [f64; 2],
    pub jitter: f64,
    pub episode_len: usize,
    pub obstacles: Vec<Obstacle>,
}

impl Default for MazeConfig {
    fn default() -> Self {
        // Two staggered columns: three cylinders at x = -1 and three at x = 0.5. The gaps
        // give four passages through the first column and three through the second.
        let col = |x: f64, ys: &[f64]| -> Vec<Obstacle> {
            ys.iter().map(|&y| Obstacle { center: [x, y], radius: 0.6 }).collect()
        };
        let mut obstacles = col(-1.0, &[-3.0, 0.0, 3.0]);
        obstacles.extend(col(0.5, &[-1.5, 1.5, 4.5]));
        Self {
            start: [-4.0, 0.0],
            x_target: 1.0,
            bound: 4.5,
            step_size: 0.15,
            rod_radius: 0.1,
            collision_penalty: 100.0,
            final_target_gain: 10.0,
            reward_clip: [-1.0, 2.0],
            jitter: 0.5,
            episode_len: 100,
            obstacles,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_len == 0 || self.step_size <= 0.0 || self.bound <= 0.0 {
            return Err(invalid("maze: episode_len, step_size and bound must be positive"));
        }
        if self.reward_clip[0] > self.reward_clip[1] {
            return Err(invalid("maze: reward_clip must be [lo, hi] with lo <= hi"));
        }
        if self.obstacles.iter().any(|o| o.radius <= 0.0) {
            return Err(invalid("maze: obstacle radius must be positive"));
        }
        Ok(())
    }

    /// Scales the collision penalty and the reward floor so the larger penalty is felt.
    pub fn with_penalty_scale(mut self, scale: f64) -> Self {
        self.collision_penalty *= scale;
        self.reward_clip[0] *= scale;
        self
    }

    /// Distinct obstacle column x-coordinates, ascending.
    pub fn columns(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.obstacles.iter().map(|o| o.center[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        xs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeState {
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct MazeEnv {
    cfg: MazeConfig,
}

impl MazeEnv {
    pub fn new(cfg: MazeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &MazeConfig {
        &self.cfg
    }

    /// Whether the rod at `q` intersects any cylinder.
    pub fn in_collision(&self, q: [f64; 2]) -> bool {
        self.cfg.obstacles.iter().any(|o| dist(q, o.center) < o.radius + self.cfg.rod_radius)
    }

    /// Unclipped step reward at position `q`.
    fn raw_reward(&self, q: [f64; 2], collision: bool, final_step: bool) -> f64 {
        let gain = if final_step { self.cfg.final_target_gain } else { 1.0 };
        let penalty = if collision { self.cfg.collision_penalty } else { 0.0 };
        gain * (q[0] - self.cfg.x_target) - penalty + self.cfg.bound
    }

    /// Clipped step reward at position `q`.
    pub fn reward(&self, q: [f64; 2], collision: bool, final_step: bool) -> f64 {
        self.raw_reward(q, collision, final_step).clamp(self.cfg.reward_clip[0], self.cfg.reward_clip[1])
    }

    /// Moves out of any penetrated cylinder; returns whether a contact occurred.
    fn resolve(&self, q: &mut [f64; 2]) -> bool {
        let mut hit = false;
        for _ in 0..4 {
            let mut moved = false;
            for o in &self.cfg.obstacles {
                let reach = o.radius + self.cfg.rod_radius;
                let d = dist(*q, o.center);
                if d < reach {
                    hit = true;
                    moved = true;
                    let (nx, ny) =
                        if d > 1e-12 { ((q[0] - o.center[0]) / d, (q[1] - o.center[1]) / d) } else { (-1.0, 0.0) };
                    q[0] = o.center[0] + nx * reach;
                    q[1] = o.center[1] + ny * reach;
                }
            }
            let b = self.cfg.bound;
            q[0] = q[0].clamp(-b, b);
            q[1] = q[1].clamp(-b, b);
            if !moved {
                break;
            }
        }
        hit
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Env for MazeEnv {
    type State = MazeState;

    fn spec(&self) -> EnvSpec {
        EnvSpec { obs_dim: 5, action_dim: 2, episode_len: self.cfg.episode_len, feature_dim: 2 }
    }

    fn reset(&self, seed: u64, jitter: bool) -> MazeState {
        let mut q = self.cfg.start;
        if jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in q.iter_mut() {
                *v += rng.random_range(-self.cfg.jitter..=self.cfg.jitter);
            }
        }
        let b = self.cfg.bound;
        q = [q[0].clamp(-b, b), q[1].clamp(-b, b)];
        MazeState { q, qdot: [0.0; 2], t: 0 }
    }

    fn observe(&self, s: &MazeState) -> Vec<f64> {
        let b = self.cfg.bound;
        let v = self.cfg.step_size;
        let phase = s.t as f64 / self.cfg.episode_len as f64;
        vec![s.q[0] / b, s.q[1] / b, s.qdot[0] / v, s.qdot[1] / v, phase]
    }

    fn features(&self, s: &MazeState) -> Vec<f64> {
        s.q.to_vec()
    }

    fn time(&self, s: &MazeState) -> usize {
        s.t
    }

    fn step(&self, s: &MazeState, action: &[f64]) -> Result<StepResult<MazeState>> {
        if s.t >= self.cfg.episode_len {
            return Err(Error::EpisodeFinished(s.t));
        }
        if action.len() != 2 {
            return Err(invalid(format!("maze action must have 2 entries, got {}", action.len())));
        }
        let b = self.cfg.bound;
        let dv = self.cfg.step_size;
        let mut q = [
            (s.q[0] + dv * action[0].clamp(-1.0, 1.0)).clamp(-b, b),
            (s.q[1] + dv * action[1].clamp(-1.0, 1.0)).clamp(-b, b),
        ];
        let collision = self.resolve(&mut q);
        let t = s.t + 1;
        let done = t == self.cfg.episode_len;
        let reward = self.reward(q, collision, done);
        let next = MazeState { q, qdot: [q[0] - s.q[0], q[1] - s.q[1]], t };
        Ok(StepResult {
            observation: self.observe(&next),
            features: self.features(&next),
            next_state: next,
            reward,
            done,
            collision,
        })
    }
}

/// Passage taken through each obstacle column: the number of that column's cylinders
/// whose centre lies below the path where it first crosses the column, or `None` if
/// the path never reaches the column.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorridorClass(pub Vec<Option<u8>>);

pub fn corridor_class(cfg: &MazeConfig, path: &[[f64; 2]]) -> CorridorClass {
    let classes = cfg
        .columns()
        .into_iter()
        .map(|xc| {
            let crossing = path.windows(2).find(|w| w[0][0] < xc && w[1][0] >= xc);
            let y = match crossing {
                Some(w) => {
                    let dx = w[1][0] - w[0][0];
                    let f = if dx.abs() > 1e-12 { (xc - w[0][0]) / dx } else { 0.0 };
                    w[0][1] + f * (w[1][1] - w[0][1])
                }
                None if path.first().is_some_and(|p| p[0] >= xc) => path[0][1],
                None => return None,
            };
            let below = cfg.obstacles.iter().filter(|o| (o.center[0] - xc).abs() < 1e-9 && o.center[1] < y).count();
            Some(below as u8)
        })
        .collect();
    CorridorClass(classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{rollout_open_loop, Env};
    use ndarray::Array2;

    fn env() -> MazeEnv {
        MazeEnv::new(MazeConfig::default()).unwrap()
    }

    #[test]
    fn reset_without_jitter_is_exact() {
        let e = env();
        assert_eq!(e.reset(7, false).q, e.config().start);
    }

    #[test]
    fn jittered_reset_is_deterministic_and_bounded() {
        let e = env();
        for seed in 0..200 {
            let a = e.reset(seed, true);
            assert_eq!(a, e.reset(seed, true));
            let d = (a.q[0] - e.config().start[0]).abs().max((a.q[1] - e.config().start[1]).abs());
            assert!(d <= 0.5);
        }
    }

    #[test]
    fn reward_at_target_line_hits_ceiling() {
        let e = env();
        let x = e.config().x_target;
        assert_eq!(e.reward([x, 0.0], false, false), 2.0);
    }

    #[test]
    fn collision_reward_hits_floor() {
        let e = env();
        assert_eq!(e.reward([e.config().x_target, 0.0], true, false), -1.0);
        let o = e.config().obstacles[0];
        assert!(e.in_collision(o.center));
    }

    #[test]
    fn zero_action_keeps_position() {
        let e = env();
        let s = e.reset(0, true);
        let r = e.step(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(r.next_state.q, s.q);
        assert_eq!(r.features, s.q.to_vec());
    }

    #[test]
    fn step_after_episode_end_fails() {
        let e = env();
        let mut s = e.reset(0, false);
        s.t = e.config().episode_len;
        assert!(matches!(e.step(&s, &[0.0, 0.0]), Err(Error::EpisodeFinished(_))));
    }

    #[test]
    fn idle_rollout_from_offset_start() {
        let mut cfg = MazeConfig::default();
        cfg.start = [cfg.x_target - 4.5, 0.0];
        let e = MazeEnv::new(cfg).unwrap();
        assert!(!e.in_collision(e.config().start));
        let actions = Array2::zeros((100, 2));
        let ro = rollout_open_loop(&e, actions.view(), 0, false, 0).unwrap();
        // non-final steps: clip(0) = 0; final: clip(10·(-4.5) + 4.5) = -1
        assert_eq!(ro.ret, -1.0);
        assert_eq!(ro.mean_features, e.config().start.to_vec());
        assert_eq!(ro.collisions, 0);
    }

    #[test]
    fn cylinders_block_motion() {
        let e = env();
        let o = e.config().obstacles[1];
        let reach = o.radius + e.config().rod_radius;
        let mut s = e.reset(0, false);
        s.q = [o.center[0] - reach - 0.01, o.center[1]];
        let r = e.step(&s, &[1.0, 0.0]).unwrap();
        assert!(r.collision);
        assert!(!e.in_collision(r.next_state.q));
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn random_walks_respect_bounds_and_reward_range() {
        use rand::Rng;
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for ep in 0..50 {
            let mut s = e.reset(ep, true);
            for _ in 0..100 {
                let a = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                let r = e.step(&s, &a).unwrap();
                assert!((-1.0..=2.0).contains(&r.reward));
                assert!(r.next_state.q.iter().all(|v| v.abs() <= 4.5));
                s = r.next_state;
            }
        }
    }

    #[test]
    fn high_penalty_lowers_the_floor() {
        let e = MazeEnv::new(MazeConfig::default().with_penalty_scale(10.0)).unwrap();
        assert_eq!(e.reward([0.0, 0.0], true, false), -10.0);
    }

    #[test]
    fn corridor_classes_of_straight_paths() {
        let cfg = MazeConfig::default();
        let path = |y: f64| -> Vec<[f64; 2]> { (0..60).map(|i| [-4.0 + 0.1 * i as f64, y]).collect() };
        // y = 2.0: above cylinders at -3 and 0 in column one, above -1.5 and 1.5 in column two
        assert_eq!(corridor_class(&cfg, &path(2.0)), CorridorClass(vec![Some(2), Some(2)]));
        assert_eq!(corridor_class(&cfg, &path(-4.0)), CorridorClass(vec![Some(0), Some(0)]));
        let short: Vec<[f64; 2]> = (0..35).map(|i| [-4.0 + 0.1 * i as f64, 0.5]).collect();
        assert_eq!(corridor_class(&cfg, &short), CorridorClass(vec![Some(2), None]));
    }
}
