//! Feature-space diversity measures and the two intrinsic rewards built on them.

use crate::error::{invalid, Result};
use crate::par::Exec;
use crate::stats::SkillStats;

/// Guard inside every logarithm of a distance.
pub const LOG_EPS: f64 = 1e-9;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Mean squared distance from each vector to its nearest neighbour:
/// `(1/n) Σ_i min_{j≠i} ‖φ̄_i − φ̄_j‖²`.
pub fn nn_diversity(phis: &[Vec<f64>]) -> Result<f64> {
    nn_diversity_with(phis, Exec::Sequential)
}

pub fn nn_diversity_with(phis: &[Vec<f64>], exec: Exec) -> Result<f64> {
    let n = phis.len();
    if n < 2 {
        return Err(invalid(format!("diversity needs at least 2 feature vectors, got {n}")));
    }
    let mins = exec.map_range(n, |i| {
        (0..n).filter(|&j| j != i).map(|j| sq_dist(&phis[i], &phis[j])).fold(f64::INFINITY, f64::min)
    });
    Ok(mins.iter().sum::<f64>() / n as f64)
}

/// Particle entropy estimate `Σ_i log(‖x_i − x_i^(k)‖ + ε)` with `x_i^(k)` the k-th
/// nearest neighbour of `x_i`.
pub fn knn_entropy(points: &[Vec<f64>], k: usize) -> Result<f64> {
    knn_entropy_with(points, k, Exec::Sequential)
}

pub fn knn_entropy_with(points: &[Vec<f64>], k: usize, exec: Exec) -> Result<f64> {
    let n = points.len();
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if n <= k {
        return Err(invalid(format!("knn entropy needs more than k={k} points, got {n}")));
    }
    let terms = exec.map_range(n, |i| {
        let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(&points[i], &points[j])).collect();
        let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
        (*kth + LOG_EPS).ln()
    });
    Ok(terms.iter().sum())
}

/// Per-step novelty reward of one trajectory against the other skills'
/// representative trajectories: `log(ε + min_j ‖φ(s_t^i) − φ(s_t^j)‖)`.
///
/// With `any_time` set, the minimum runs over every timestep of the other
/// trajectories instead of only timestep `t`.
pub fn cns_step_intrinsic(traj: &[Vec<f64>], others: &[&[Vec<f64>]], t: usize, any_time: bool) -> Result<f64> {
    if others.is_empty() {
        return Err(invalid("novelty reward needs at least one other skill"));
    }
    if t >= traj.len() {
        return Err(invalid(format!("timestep {t} outside trajectory of length {}", traj.len())));
    }
    let own = &traj[t];
    let mut best = f64::INFINITY;
    for other in others {
        if other.len() != traj.len() {
            return Err(invalid(format!("trajectory length mismatch: {} vs {}", traj.len(), other.len())));
        }
        if any_time {
            for f in other.iter() {
                best = best.min(dist(own, f));
            }
        } else {
            best = best.min(dist(own, &other[t]));
        }
    }
    Ok((best + LOG_EPS).ln())
}

/// Sum over time of [`cns_step_intrinsic`].
pub fn cns_intrinsic_return(traj: &[Vec<f64>], others: &[&[Vec<f64>]], any_time: bool) -> Result<f64> {
    (0..traj.len()).map(|t| cns_step_intrinsic(traj, others, t, any_time)).sum()
}

/// Index of the skill whose expected features are closest to skill `z`'s (ties: lowest index).
pub fn nearest_skill(phi_bar: &[Vec<f64>], z: usize) -> Result<usize> {
    if phi_bar.len() < 2 {
        return Err(invalid("nearest skill needs at least 2 skills"));
    }
    if z >= phi_bar.len() {
        return Err(invalid(format!("skill {z} out of range")));
    }
    let mut best = (f64::INFINITY, usize::MAX);
    for (j, p) in phi_bar.iter().enumerate() {
        if j == z {
            continue;
        }
        let d = sq_dist(&phi_bar[z], p);
        if d < best.0 {
            best = (d, j);
        }
    }
    Ok(best.1)
}

/// Direction `φ̄_z − φ̄_j` towards which skill `z` is rewarded, `j` its nearest neighbour.
pub fn repulsion_direction(stats: &SkillStats, z: usize) -> Result<Vec<f64>> {
    let j = nearest_skill(&stats.phi_bar, z)?;
    Ok(stats.phi_bar[z].iter().zip(&stats.phi_bar[j]).map(|(a, b)| a - b).collect())
}

/// Diversity reward `φ(s)ᵀ(φ̄_z − φ̄_j)` with `j = argmin_{j≠z} ‖φ̄_z − φ̄_j‖²`.
pub fn domino_intrinsic(phi_s: &[f64], z: usize, stats: &SkillStats) -> Result<f64> {
    let dir = repulsion_direction(stats, z)?;
    if dir.len() != phi_s.len() {
        return Err(invalid("feature dimension mismatch"));
    }
    Ok(phi_s.iter().zip(&dir).map(|(a, b)| a * b).sum())
}
