//! (μ/μ_w, λ)-CMA-ES with the standard default learning rates.
//!
//! The state is a plain value: [`CmaState::ask`] samples a generation and
//! [`CmaState::tell`] returns the updated state. Fitness is maximized.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

const EIGEN_FLOOR: f64 = 1e-12;
const SIGMA_RANGE: (f64, f64) = (1e-30, 1e30);

#[derive(Clone, Debug)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub weights: Vec<f64>,
    pub generation: usize,
    pub popsize: usize,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    /// Eigenvectors of `cov` (columns).
    basis: DMatrix<f64>,
    /// Square roots of the (floored) eigenvalues of `cov`.
    scales: DVector<f64>,
}

/// One sampled generation.
#[derive(Clone, Debug)]
pub struct AskResult {
    pub candidates: Vec<DVector<f64>>,
    /// Standard-normal draws behind each candidate.
    pub z_samples: Vec<DVector<f64>>,
    /// `(candidate - mean) / sigma`, i.e. `B·D·z`.
    steps: Vec<DVector<f64>>,
    generation: usize,
}

/// Log-linear recombination weights `w_k ∝ ln(μ + 1/2) − ln k`, normalized to sum 1.
pub fn recombination_weights(mu: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=mu).map(|k| (mu as f64 + 0.5).ln() - (k as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Number of parents `ceil(elite_ratio · popsize)`, at least one.
pub fn elite_count(popsize: usize, elite_ratio: f64) -> usize {
    ((elite_ratio * popsize as f64 - 1e-9).ceil() as usize).clamp(1, popsize)
}

impl CmaState {
    pub fn new(mean0: &[f64], popsize: usize, elite_ratio: f64, sigma0: f64) -> Result<Self> {
        let dim = mean0.len();
        if dim == 0 {
            return Err(invalid("CMA-ES needs dim >= 1"));
        }
        if popsize < 2 {
            return Err(invalid(format!("popsize must be >= 2, got {popsize}")));
        }
        if !(elite_ratio > 0.0 && elite_ratio <= 1.0) {
            return Err(invalid(format!("elite ratio must lie in (0, 1], got {elite_ratio}")));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(invalid(format!("sigma0 must be positive, got {sigma0}")));
        }
        if mean0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite initial mean"));
        }
        let mu = elite_count(popsize, elite_ratio);
        let weights = recombination_weights(mu);
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let n = dim as f64;

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Ok(Self {
            mean: DVector::from_column_slice(mean0),
            sigma: sigma0,
            cov: DMatrix::identity(dim, dim),
            path_sigma: DVector::zeros(dim),
            path_c: DVector::zeros(dim),
            weights,
            generation: 0,
            popsize,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mu(&self) -> usize {
        self.weights.len()
    }

    pub fn mu_eff(&self) -> f64 {
        self.mu_eff
    }

    /// Draws `popsize` candidates from `N(mean, sigma² · cov)`.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> AskResult {
        let dim = self.dim();
        let mut candidates = Vec::with_capacity(self.popsize);
        let mut z_samples = Vec::with_capacity(self.popsize);
        let mut steps = Vec::with_capacity(self.popsize);
        for _ in 0..self.popsize {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &self.basis * z.component_mul(&self.scales);
            candidates.push(&self.mean + &y * self.sigma);
            z_samples.push(z);
            steps.push(y);
        }
        AskResult { candidates, z_samples, steps, generation: self.generation }
    }

    /// Updates the distribution from the fitness of an [`AskResult`] (higher is better).
    pub fn tell(&self, result: &AskResult, fitness: &[f64]) -> Result<CmaState> {
        if fitness.len() != self.popsize || result.candidates.len() != self.popsize {
            return Err(invalid(format!("expected {} fitness values, got {}", self.popsize, fitness.len())));
        }
        if result.generation != self.generation {
            return Err(invalid("ask result belongs to a different generation"));
        }
        if fitness.iter().any(|f| f.is_nan()) {
            return Err(invalid("NaN fitness"));
        }
        let dim = self.dim();
        let n = dim as f64;
        let order = rank_descending(fitness);
        let parents = &order[..self.mu()];

        let mut y_w = DVector::zeros(dim);
        let mut z_w = DVector::zeros(dim);
        for (w, &k) in self.weights.iter().zip(parents) {
            y_w.axpy(*w, &result.steps[k], 1.0);
            z_w.axpy(*w, &result.z_samples[k], 1.0);
        }

        let mut next = self.clone();
        next.mean = &self.mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B z_w
        let whitened = &self.basis * &z_w;
        next.path_sigma = &self.path_sigma * (1.0 - self.c_sigma)
            + whitened * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        let ps_norm = next.path_sigma.norm();
        let decay = 1.0 - (1.0 - self.c_sigma).powi(2 * (self.generation as i32 + 1));
        let h_sigma = if ps_norm / decay.sqrt() < (1.4 + 2.0 / (n + 1.0)) * self.chi_n { 1.0 } else { 0.0 };
        next.path_c =
            &self.path_c * (1.0 - self.c_c) + &y_w * (h_sigma * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        let mut cov = &self.cov * (1.0 - self.c_1 - self.c_mu + self.c_1 * delta_h);
        cov.ger(self.c_1, &next.path_c, &next.path_c, 1.0);
        for (w, &k) in self.weights.iter().zip(parents) {
            let y = &result.steps[k];
            cov.ger(self.c_mu * w, y, y, 1.0);
        }
        next.cov = symmetrize(cov);

        let log_step = (self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0);
        next.sigma = (self.sigma * log_step.exp()).clamp(SIGMA_RANGE.0, SIGMA_RANGE.1);
        next.generation += 1;
        next.refresh_eigen()?;
        Ok(next)
    }

    fn refresh_eigen(&mut self) -> Result<()> {
        if self.cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite covariance".into()));
        }
        let eig = SymmetricEigen::try_new(self.cov.clone(), 1e-14, 10_000)
            .ok_or_else(|| Error::Numerical("covariance eigendecomposition did not converge".into()))?;
        let largest = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let floor = largest * EIGEN_FLOOR;
        let clamped = eig.eigenvalues.map(|v| v.max(floor));
        if clamped.iter().zip(eig.eigenvalues.iter()).any(|(c, e)| c != e) {
            let d = DMatrix::from_diagonal(&clamped);
            self.cov = symmetrize(&eig.eigenvectors * d * eig.eigenvectors.transpose());
        }
        self.scales = clamped.map(f64::sqrt);
        self.basis = eig.eigenvectors;
        Ok(())
    }

    /// Eigenvalues of the covariance as used for sampling.
    pub fn eigenvalues(&self) -> DVector<f64> {
        self.scales.map(|s| s * s)
    }
}

/// Indices sorted by fitness, best first; ties keep ascending index order.
pub fn rank_descending(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    order
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
