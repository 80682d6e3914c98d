use ndarray::{Array1, Array2, ArrayView2};

/// Range the log standard deviation is clamped to.
pub const LOG_STD_RANGE: (f64, f64) = (-5.0, 2.0);

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const ACTION_LIMIT: f64 = 1.0 - 1e-9;

/// `ln(1 − tanh²(u))`, computed without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Tanh-squashed diagonal Gaussian over the network output `[mean | log_std]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianHead {
    pub action_dim: usize,
}

/// Reparameterized sample together with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct SquashedSample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    eps: Array2<f64>,
    std: Array2<f64>,
    /// 1 where the log-std is inside its clamp range.
    ls_mask: Array2<f64>,
}

impl GaussianHead {
    pub fn output_dim(&self) -> usize {
        2 * self.action_dim
    }

    /// Deterministic action `tanh(mean)` for every row.
    pub fn mode(&self, out: ArrayView2<'_, f64>) -> Array2<f64> {
        out.slice(ndarray::s![.., ..self.action_dim]).mapv(|m| m.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
    }

    /// Samples `a = tanh(mean + exp(log_std)·eps)` with the given standard-normal noise.
    pub fn sample(&self, out: ArrayView2<'_, f64>, eps: Array2<f64>) -> SquashedSample {
        let (b, d) = (out.nrows(), self.action_dim);
        assert_eq!(out.ncols(), 2 * d, "policy output width");
        assert_eq!(eps.dim(), (b, d), "noise shape");
        let mut actions = Array2::zeros((b, d));
        let mut std = Array2::zeros((b, d));
        let mut ls_mask = Array2::zeros((b, d));
        let mut log_prob = Array1::zeros(b);
        for r in 0..b {
            let mut lp = 0.0;
            for c in 0..d {
                let raw = out[[r, d + c]];
                let ls = raw.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
                ls_mask[[r, c]] = if raw == ls { 1.0 } else { 0.0 };
                let s = ls.exp();
                let e = eps[[r, c]];
                let u = out[[r, c]] + s * e;
                actions[[r, c]] = u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT);
                std[[r, c]] = s;
                lp += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
            log_prob[r] = lp;
        }
        SquashedSample { actions, log_prob, eps, std, ls_mask }
    }

    /// Gradient with respect to the network output given `dL/da` and `dL/dlog π`.
    pub fn backward(&self, sample: &SquashedSample, d_actions: ArrayView2<'_, f64>, d_log_prob: &[f64]) -> Array2<f64> {
        let (b, d) = sample.actions.dim();
        let mut grad = Array2::zeros((b, 2 * d));
        for r in 0..b {
            for c in 0..d {
                let a = sample.actions[[r, c]];
                let du = d_actions[[r, c]] * (1.0 - a * a) + d_log_prob[r] * 2.0 * a;
                grad[[r, c]] = du;
                let dls = du * sample.std[[r, c]] * sample.eps[[r, c]] - d_log_prob[r];
                grad[[r, d + c]] = dls * sample.ls_mask[[r, c]];
            }
        }
        grad
    }
}

/// Log density of a squashed Gaussian at a given action in (−1, 1).
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let ls = ls.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
            let u = a.clamp(-ACTION_LIMIT, ACTION_LIMIT).atanh();
            let e = (u - m) / ls.exp();
            -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn log_one_minus_tanh_sq_is_stable() {
        for u in [-40.0, -3.0, 0.0, 0.7, 5.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            if u.abs() < 10.0 {
                assert!((direct - stable).abs() < 1e-9);
            } else {
                assert!(stable.is_finite());
            }
        }
    }

    #[test]
    fn sample_log_prob_matches_density() {
        let head = GaussianHead { action_dim: 2 };
        let out = array![[0.3, -0.2, -0.5, 0.1]];
        let s = head.sample(out.view(), array![[0.4, -1.1]]);
        let lp = squashed_log_prob(&[0.3, -0.2], &[-0.5, 0.1], s.actions.row(0).as_slice().unwrap());
        assert!((lp - s.log_prob[0]).abs() < 1e-8);
    }

    #[test]
    fn density_integrates_to_one() {
        let (m, ls) = (0.4, -0.3);
        let n = 200_000;
        let h = 2.0 / n as f64;
        let total: f64 =
            (0..n).map(|i| -1.0 + (i as f64 + 0.5) * h).map(|a| squashed_log_prob(&[m], &[ls], &[a]).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let head = GaussianHead { action_dim: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let out = Array2::from_shape_fn((2, 6), |_| rng.sample::<f64, _>(StandardNormal));
            let eps = Array2::from_shape_fn((2, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let ca = Array2::from_shape_fn((2, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let cl = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let loss = |o: &Array2<f64>| {
                let s = head.sample(o.view(), eps.clone());
                (&s.actions * &ca).sum() + s.log_prob.iter().zip(&cl).map(|(a, b)| a * b).sum::<f64>()
            };
            let s = head.sample(out.view(), eps.clone());
            let g = head.backward(&s, ca.view(), &cl);
            let h = 1e-5;
            for idx in 0..12 {
                let (r, c) = (idx / 6, idx % 6);
                let mut up = out.clone();
                up[[r, c]] += h;
                let mut dn = out.clone();
                dn[[r, c]] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                let a = g[[r, c]];
                assert!((fd - a).abs() / (fd.abs() + a.abs()).max(1e-6) < 1e-4, "{fd} vs {a}");
            }
        }
    }

    #[test]
    fn clamped_log_std_has_no_gradient() {
        let head = GaussianHead { action_dim: 1 };
        let s = head.sample(array![[0.0, 5.0]].view(), array![[0.3]]);
        let g = head.backward(&s, array![[1.0]].view(), &[1.0]);
        assert_eq!(g[[0, 1]], 0.0);
    }
}
