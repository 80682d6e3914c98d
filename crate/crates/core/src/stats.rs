//! Per-skill running estimates shared by both stages: expected-feature and value EMAs
//! plus the running optimal-value target `v*`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillStats {
    pub phi_bar: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub v_star: f64,
    pub kappa_phi: f64,
    pub kappa_v: f64,
}

impl SkillStats {
    pub fn new(phi_bar: Vec<Vec<f64>>, kappa_phi: f64, kappa_v: f64) -> Self {
        let n = phi_bar.len();
        Self { phi_bar, v: vec![0.0; n], v_star: 0.0, kappa_phi, kappa_v }
    }

    pub fn n(&self) -> usize {
        self.phi_bar.len()
    }

    /// `φ̄_i ← (1 − κ_φ) φ̄_i + κ_φ · observed`.
    pub fn update_phi(&mut self, i: usize, observed: &[f64]) {
        let k = self.kappa_phi;
        for (p, o) in self.phi_bar[i].iter_mut().zip(observed) {
            *p = (1.0 - k) * *p + k * o;
        }
    }

    /// `v_i ← (1 − κ_v) v_i + κ_v · observed`.
    pub fn update_value(&mut self, i: usize, observed: f64) {
        self.v[i] = (1.0 - self.kappa_v) * self.v[i] + self.kappa_v * observed;
    }

    /// Running-max target: `v* ← max{v*, max_i v_i}`.
    pub fn update_v_star(&mut self) {
        self.v_star = vmax(self.v_star, &self.v);
    }
}

/// `max{v_star, max(values)}`; never decreases `v_star`.
pub fn vmax(v_star: f64, values: &[f64]) -> f64 {
    values.iter().fold(v_star, |acc, &v| acc.max(v))
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Interquartile mean: mean of the sorted values with the lowest and highest quarter
/// trimmed (fractional weights at the cut points).
pub fn iqm(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "iqm of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let (lo, hi) = (0.25 * n, 0.75 * n);
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate() {
        let (a, b) = (i as f64, i as f64 + 1.0);
        let w = (b.min(hi) - a.max(lo)).max(0.0);
        acc += w * x;
    }
    acc / (hi - lo)
}
