use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam optimizer state for one flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self::with_betas(n, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restores moments and step count, e.g. from a checkpoint.
    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::ShapeMismatch("adam moment length".into()));
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam holds {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target ← (1 − tau)·target + tau·online`.
pub fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len(), "polyak averaging needs equal lengths");
    for (t, &o) in target.iter_mut().zip(online) {
        *t += tau * (o - *t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut opt = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..1000 {
            let before = p.clone();
            opt.step(&mut p, &[0.5, -3.0], 1e-3).unwrap();
            for (a, b) in p.iter().zip(&before) {
                let d = (a - b).abs();
                assert!(d <= 1e-3 * (1.0 + 1e-6));
                assert!(d > 0.99e-3);
            }
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(3);
        let mut p = vec![3.0, -2.0, 1.0];
        for _ in 0..5000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g, 1e-2).unwrap();
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3), "{p:?}");
    }

    #[test]
    fn rejects_bad_input() {
        let mut opt = Adam::new(2);
        let mut p = vec![0.0; 2];
        assert!(opt.step(&mut p, &[1.0], 0.1).is_err());
        assert!(opt.step(&mut p, &[f64::NAN, 0.0], 0.1).is_err());
    }

    #[test]
    fn polyak_examples() {
        let mut t = vec![0.0, 1.0];
        polyak(&mut t, &[1.0, 1.0], 0.25);
        assert_eq!(t, vec![0.25, 1.0]);
        let mut t = vec![2.0];
        polyak(&mut t, &[5.0], 1.0);
        assert_eq!(t, vec![5.0]);
    }

    proptest! {
        #[test]
        fn adam_step_is_bounded(g in prop::collection::vec(-1e3f64..1e3, 1..8), lr in 1e-5f64..1e-1, steps in 1usize..20) {
            let mut opt = Adam::new(g.len());
            let mut p = vec![0.0; g.len()];
            for _ in 0..steps {
                let before = p.clone();
                opt.step(&mut p, &g, lr).unwrap();
                for (a, b) in p.iter().zip(&before) {
                    prop_assert!((a - b).abs() <= lr * (1.0 + 1e-6));
                }
            }
        }

        #[test]
        fn polyak_stays_between(t0 in -10f64..10.0, o in -10f64..10.0, tau in 0f64..=1.0) {
            let mut t = vec![t0];
            polyak(&mut t, &[o], tau);
            prop_assert!(t[0] >= t0.min(o) - 1e-12 && t[0] <= t0.max(o) + 1e-12);
        }
    }
}
