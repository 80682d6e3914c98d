//! Clamped uniform B-spline parameterization of open-loop action trajectories.
//!
//! A trajectory of `horizon` steps in `u` control dimensions is generated from an
//! `m × u` matrix of control points. The basis matrix `B` (`horizon × m`) depends only on
//! `(m, degree, horizon)`, so it is built once and shared through a process-wide cache;
//! evaluating a trajectory is then the dense product `B · ω`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Result};

/// Largest degree used for trajectory splines (cubic).
pub const DEFAULT_DEGREE: usize = 3;

/// Clamped knot vector with `m + degree + 1` entries on `[0, 1]`.
pub fn clamped_uniform_knots(m: usize, degree: usize) -> Vec<f64> {
    let interior = m - degree - 1;
    let mut knots = Vec::with_capacity(m + degree + 1);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

/// Index `s` of the knot span `[k_s, k_{s+1})` containing `x`, clamped so that the
/// right end of the domain maps to the last non-degenerate span.
fn find_span(knots: &[f64], m: usize, degree: usize, x: f64) -> usize {
    if x >= knots[m] {
        return m - 1;
    }
    let mut lo = degree;
    let mut hi = m;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `degree + 1` non-zero basis values on `span` at parameter `x` (Cox-de Boor,
/// triangular form).
fn nonzero_basis(knots: &[f64], span: usize, degree: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Basis matrix `B` of shape `horizon × m`; row `t` holds the weights at `t / (horizon - 1)`.
pub fn basis_matrix(m: usize, degree: usize, horizon: usize) -> Result<Array2<f64>> {
    if degree == 0 {
        return Err(invalid("spline degree must be at least 1"));
    }
    if m < degree + 1 {
        return Err(invalid(format!("need m >= degree + 1, got m={m}, degree={degree}")));
    }
    if horizon < 2 {
        return Err(invalid(format!("horizon must be >= 2, got {horizon}")));
    }
    let knots = clamped_uniform_knots(m, degree);
    let mut basis = Array2::zeros((horizon, m));
    for t in 0..horizon {
        let x = t as f64 / (horizon - 1) as f64;
        let span = find_span(&knots, m, degree, x);
        let vals = nonzero_basis(&knots, span, degree, x);
        for (k, v) in vals.into_iter().enumerate() {
            basis[[t, span - degree + k]] = v;
        }
    }
    Ok(basis)
}

type BasisCache = HashMap<(usize, usize, usize), Arc<Array2<f64>>>;

/// Cached basis matrix for `(m, degree, horizon)`.
pub fn cached_basis(m: usize, degree: usize, horizon: usize) -> Result<Arc<Array2<f64>>> {
    static CACHE: OnceLock<Mutex<BasisCache>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(b) = cache.lock().expect("basis cache poisoned").get(&(m, degree, horizon)) {
        return Ok(Arc::clone(b));
    }
    let b = Arc::new(basis_matrix(m, degree, horizon)?);
    cache.lock().expect("basis cache poisoned").insert((m, degree, horizon), Arc::clone(&b));
    Ok(b)
}

/// Degree used for `m` control points: cubic, reduced to `m - 1` for short control sets.
pub fn degree_for(m: usize) -> usize {
    DEFAULT_DEGREE.min(m.saturating_sub(1)).max(1)
}

/// Control points of one open-loop trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineParams {
    controls: Array2<f64>,
    degree: usize,
    horizon: usize,
}

impl SplineParams {
    pub fn new(controls: Array2<f64>, degree: usize, horizon: usize) -> Result<Self> {
        let m = controls.nrows();
        if degree == 0 || m < degree + 1 {
            return Err(invalid(format!("need m >= degree + 1, got m={m}, degree={degree}")));
        }
        if controls.ncols() == 0 {
            return Err(invalid("controls need at least one column"));
        }
        if horizon < 2 {
            return Err(invalid(format!("horizon must be >= 2, got {horizon}")));
        }
        if controls.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite control point"));
        }
        Ok(Self { controls, degree, horizon })
    }

    /// Controls with the default degree for their row count.
    pub fn with_default_degree(controls: Array2<f64>, horizon: usize) -> Result<Self> {
        let degree = degree_for(controls.nrows());
        Self::new(controls, degree, horizon)
    }

    /// Builds controls from a flat row-major parameter vector (the CMA-ES search space).
    pub fn from_flat(flat: &[f64], m: usize, u: usize, horizon: usize) -> Result<Self> {
        if flat.len() != m * u {
            return Err(invalid(format!("expected {} parameters, got {}", m * u, flat.len())));
        }
        let controls = Array2::from_shape_vec((m, u), flat.to_vec()).expect("length checked");
        Self::with_default_degree(controls, horizon)
    }

    pub fn controls(&self) -> ArrayView2<'_, f64> {
        self.controls.view()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `B · ω` without clamping to the action box.
    pub fn eval_unclamped(&self) -> Array2<f64> {
        let basis = cached_basis(self.controls.nrows(), self.degree, self.horizon).expect("validated at construction");
        basis.dot(&self.controls)
    }
}

/// Per-timestep actions (`horizon × u`), clamped to `[-1, 1]`.
pub fn eval_trajectory(params: &SplineParams) -> Array2<f64> {
    params.eval_unclamped().mapv(|v| v.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// de Boor's algorithm evaluating the curve point directly from control values.
    fn de_boor(knots: &[f64], controls: &[f64], degree: usize, x: f64) -> f64 {
        let m = controls.len();
        let mut k = degree;
        while k + 1 < m && x >= knots[k + 1] {
            k += 1;
        }
        let mut d: Vec<f64> = (0..=degree).map(|j| controls[j + k - degree]).collect();
        for r in 1..=degree {
            for j in (r..=degree).rev() {
                let i = j + k - degree;
                let denom = knots[i + degree + 1 - r] - knots[i];
                let a = if denom == 0.0 { 0.0 } else { (x - knots[i]) / denom };
                d[j] = (1.0 - a) * d[j - 1] + a * d[j];
            }
        }
        d[degree]
    }

    #[test]
    fn clamped_endpoints_with_two_steps() {
        let b = basis_matrix(4, 3, 2).unwrap();
        assert_eq!(b.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.row(1).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rows_partition_unity() {
        let b = basis_matrix(4, 3, 101).unwrap();
        for row in b.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_de_boor_oracle() {
        let (m, p, horizon) = (5, 3, 50);
        let b = basis_matrix(m, p, horizon).unwrap();
        let knots = clamped_uniform_knots(m, p);
        // unit controls recover each basis function; a generic control vector checks B·ω
        let generic = [0.3, -1.7, 2.2, 0.9, -0.4];
        for t in 0..horizon {
            let x = t as f64 / (horizon - 1) as f64;
            for j in 0..m {
                let mut unit = vec![0.0; m];
                unit[j] = 1.0;
                assert!((b[[t, j]] - de_boor(&knots, &unit, p, x)).abs() < 1e-10);
            }
            let via_basis: f64 = (0..m).map(|j| b[[t, j]] * generic[j]).sum();
            assert!((via_basis - de_boor(&knots, &generic, p, x)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_too_few_controls() {
        assert!(basis_matrix(3, 3, 10).is_err());
        assert!(SplineParams::new(array![[0.0], [1.0]], 2, 10).is_err());
    }

    #[test]
    fn constant_controls_give_constant_trajectory() {
        let p = SplineParams::with_default_degree(Array2::from_elem((5, 2), 0.37), 100).unwrap();
        let tau = eval_trajectory(&p);
        assert!(tau.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn linear_spline_by_hand() {
        let p = SplineParams::new(array![[-1.0], [1.0]], 1, 3).unwrap();
        let tau = eval_trajectory(&p);
        assert_eq!(tau, array![[-1.0], [0.0], [1.0]]);
    }

    #[test]
    fn degree_reduction_for_short_control_sets() {
        assert_eq!(degree_for(5), 3);
        assert_eq!(degree_for(4), 3);
        assert_eq!(degree_for(3), 2);
        assert_eq!(degree_for(2), 1);
    }

    #[test]
    fn clamping_to_action_box() {
        let p = SplineParams::with_default_degree(array![[5.0], [-5.0], [5.0], [-5.0]], 20).unwrap();
        let tau = eval_trajectory(&p);
        assert_eq!(tau[[0, 0]], 1.0);
        assert_eq!(tau[[19, 0]], -1.0);
        assert!(tau.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    fn controls_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
        (4usize..8).prop_flat_map(|m| {
            (Just(m), proptest::collection::vec(-3.0f64..3.0, m * 2), proptest::collection::vec(-3.0f64..3.0, m * 2))
        })
    }

    proptest! {
        #[test]
        fn endpoints_interpolate((m, a, _b) in controls_strategy(), horizon in 2usize..120) {
            let p = SplineParams::from_flat(&a, m, 2, horizon).unwrap();
            let tau = p.eval_unclamped();
            for c in 0..2 {
                prop_assert!((tau[[0, c]] - a[c]).abs() < 1e-12);
                prop_assert!((tau[[horizon - 1, c]] - a[(m - 1) * 2 + c]).abs() < 1e-12);
            }
        }

        #[test]
        fn linear_in_controls((m, a, b) in controls_strategy(), s in -2.0f64..2.0, r in -2.0f64..2.0) {
            let pa = SplineParams::from_flat(&a, m, 2, 37).unwrap().eval_unclamped();
            let pb = SplineParams::from_flat(&b, m, 2, 37).unwrap().eval_unclamped();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + r * y).collect();
            let pm = SplineParams::from_flat(&mix, m, 2, 37).unwrap().eval_unclamped();
            let expect = &pa * s + &pb * r;
            for (x, y) in pm.iter().zip(expect.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn stays_in_control_hull((m, a, _b) in controls_strategy()) {
            let p = SplineParams::from_flat(&a, m, 2, 64).unwrap();
            let tau = p.eval_unclamped();
            for c in 0..2 {
                let col: Vec<f64> = (0..m).map(|j| a[j * 2 + c]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for t in 0..64 {
                    prop_assert!(tau[[t, c]] >= lo - 1e-12 && tau[[t, c]] <= hi + 1e-12);
                }
            }
        }
    }
}
