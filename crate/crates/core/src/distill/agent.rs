use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Batch;
use crate::config::DistillConfig;
use crate::error::{Error, Result};
use crate::nn::{polyak, Activation, Adam, GaussianHead, Mlp};
use crate::stats::sigmoid;

/// Per-skill extrinsic weights `σ(λ_i)`; the intrinsic weight is the complement.
#[derive(Clone, Debug, PartialEq)]
pub struct MixWeights {
    pub ext: Vec<f64>,
}

impl MixWeights {
    pub fn from_lambdas(lambdas: &[f64]) -> Self {
        Self { ext: lambdas.iter().map(|&l| sigmoid(l)).collect() }
    }

    /// All weight on the extrinsic critic.
    pub fn extrinsic_only(n: usize) -> Self {
        Self { ext: vec![1.0; n] }
    }

    pub fn intrinsic(&self, z: usize) -> f64 {
        1.0 - self.ext[z]
    }
}

/// `[x | one_hot(z) | extra]` row-wise.
pub fn conditioned_input(
    x: ArrayView2<'_, f64>,
    z: &[usize],
    skills: usize,
    extra: Option<ArrayView2<'_, f64>>,
) -> Array2<f64> {
    let (b, d) = x.dim();
    let e = extra.map_or(0, |a| a.ncols());
    let mut out = Array2::zeros((b, d + skills + e));
    out.slice_mut(s![.., ..d]).assign(&x);
    for (r, &zi) in z.iter().enumerate() {
        out[[r, d + zi]] = 1.0;
    }
    if let Some(a) = extra {
        out.slice_mut(s![.., d + skills..]).assign(&a);
    }
    out
}

/// Independently initialized critics with Polyak-averaged copies.
#[derive(Clone, Debug)]
pub struct CriticEnsemble {
    pub nets: Vec<Mlp>,
    pub targets: Vec<Mlp>,
    opts: Vec<Adam>,
}

impl CriticEnsemble {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], act: Activation, layer_norm: bool, n: usize, rng: &mut R) -> Self {
        let nets: Vec<Mlp> = (0..n).map(|_| Mlp::init(sizes, act, layer_norm, 1.0, rng)).collect();
        let opts = nets.iter().map(|m| Adam::new(m.num_params())).collect();
        Self { targets: nets.clone(), nets, opts }
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    /// Element-wise minimum over the target networks in `subset`.
    pub fn target_min(&self, subset: &[usize], x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let mut out = Array1::from_elem(x.nrows(), f64::INFINITY);
        for &k in subset {
            let q = self.targets[k].predict(x)?;
            ndarray::Zip::from(&mut out).and(q.column(0)).for_each(|o, &v| *o = o.min(v));
        }
        Ok(out)
    }

    /// Mean over members of the squared error against `y`, with per-member gradients.
    pub fn loss_and_grads(&self, x: ArrayView2<'_, f64>, y: &Array1<f64>) -> Result<(f64, Vec<Vec<f64>>)> {
        let b = x.nrows() as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(self.len());
        for net in &self.nets {
            let (q, tape) = net.forward(x)?;
            let diff = &q.column(0) - y;
            loss += diff.mapv(|d| d * d).sum() / b;
            let g = diff.mapv(|d| 2.0 * d / b).insert_axis(Axis(1));
            grads.push(net.backward(&tape, g.view(), true)?.0.expect("parameter gradient requested"));
        }
        Ok((loss / self.len() as f64, grads))
    }

    pub fn apply(&mut self, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        for ((net, opt), g) in self.nets.iter_mut().zip(&mut self.opts).zip(grads) {
            opt.step(net.params_mut(), g, lr)?;
        }
        Ok(())
    }

    pub fn soft_update(&mut self, tau: f64) {
        for (t, n) in self.targets.iter_mut().zip(&self.nets) {
            polyak(t.params_mut(), n.params(), tau);
        }
    }
}

/// Skill-conditioned squashed-Gaussian actor with extrinsic and intrinsic critic
/// ensembles and an auto-tuned temperature.
#[derive(Clone, Debug)]
pub struct Agent {
    pub skills: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub policy: Mlp,
    pub head: GaussianHead,
    policy_opt: Adam,
    pub ext: CriticEnsemble,
    pub int: CriticEnsemble,
    pub log_temp: f64,
    temp_opt: Adam,
    pub target_entropy: f64,
}

pub struct PolicyGrad {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub log_prob_mean: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticReport {
    pub ext_loss: f64,
    pub int_loss: f64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        skills: usize,
        cfg: &DistillConfig,
        rng: &mut R,
    ) -> Self {
        let hidden = vec![cfg.hidden_size; cfg.hidden_depth];
        let pol_sizes: Vec<usize> = std::iter::once(obs_dim + skills)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(2 * act_dim))
            .collect();
        let q_sizes: Vec<usize> = std::iter::once(obs_dim + skills + act_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let policy = Mlp::init(&pol_sizes, cfg.activation, cfg.layer_norm, 0.01, rng);
        let ext = CriticEnsemble::new(&q_sizes, cfg.activation, cfg.layer_norm, cfg.num_critics, rng);
        let int = CriticEnsemble::new(&q_sizes, cfg.activation, cfg.layer_norm, cfg.num_critics, rng);
        Self {
            skills,
            obs_dim,
            act_dim,
            policy_opt: Adam::new(policy.num_params()),
            policy,
            head: GaussianHead { action_dim: act_dim },
            ext,
            int,
            log_temp: cfg.init_temperature.ln(),
            temp_opt: Adam::new(1),
            target_entropy: cfg.target_entropy_per_dim * act_dim as f64,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.log_temp.exp()
    }

    pub fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.act_dim), || rng.sample(StandardNormal))
    }

    /// Actions for a batch of observations; the policy mode when `eps` is `None`.
    pub fn act(&self, obs: ArrayView2<'_, f64>, z: &[usize], eps: Option<Array2<f64>>) -> Result<Array2<f64>> {
        let out = self.policy.predict(conditioned_input(obs, z, self.skills, None).view())?;
        Ok(match eps {
            Some(e) => self.head.sample(out.view(), e).actions,
            None => self.head.mode(out.view()),
        })
    }

    /// Soft TD targets `r + γ(1 − d)(min_{k∈S} Q̄_k(s', a') − ξ log π(a'|s'))`.
    #[allow(clippy::too_many_arguments)]
    pub fn td_targets(
        &self,
        ens: &CriticEnsemble,
        next_obs: ArrayView2<'_, f64>,
        z: &[usize],
        next_eps: Array2<f64>,
        rewards: &Array1<f64>,
        done: &Array1<f64>,
        subset: &[usize],
        gamma: f64,
    ) -> Result<Array1<f64>> {
        let out = self.policy.predict(conditioned_input(next_obs, z, self.skills, None).view())?;
        let sample = self.head.sample(out.view(), next_eps);
        let x = conditioned_input(next_obs, z, self.skills, Some(sample.actions.view()));
        let q = ens.target_min(subset, x.view())?;
        let xi = self.temperature();
        Ok(ndarray::Zip::from(rewards)
            .and(done)
            .and(&q)
            .and(&sample.log_prob)
            .map_collect(|&r, &d, &q, &lp| r + gamma * (1.0 - d) * (q - xi * lp)))
    }

    /// `J = mean(ξ log π(a|s) − Q_mix(s, a))` and its gradient in the policy parameters,
    /// with `Q_mix` mixing the subset means of both critic families per sample.
    pub fn policy_objective(
        &self,
        obs: ArrayView2<'_, f64>,
        z: &[usize],
        eps: Array2<f64>,
        w_ext: &[f64],
        subset_ext: &[usize],
        subset_int: Option<&[usize]>,
    ) -> Result<PolicyGrad> {
        let b = obs.nrows();
        if z.len() != b || w_ext.len() != b {
            return Err(Error::ShapeMismatch("skill and weight vectors must match the batch".into()));
        }
        let xi = self.temperature();
        let (out, tape) = self.policy.forward(conditioned_input(obs, z, self.skills, None).view())?;
        let sample = self.head.sample(out.view(), eps);
        let xc = conditioned_input(obs, z, self.skills, Some(sample.actions.view()));
        let a0 = self.obs_dim + self.skills;
        let mut q_mix = Array1::<f64>::zeros(b);
        let mut dq_da = Array2::<f64>::zeros((b, self.act_dim));
        let mut family = |ens: &CriticEnsemble, subset: &[usize], weight: &dyn Fn(usize) -> f64| -> Result<()> {
            let scale = 1.0 / subset.len() as f64;
            for &k in subset {
                let (q, t) = ens.nets[k].forward(xc.view())?;
                let wcol = Array2::from_shape_fn((b, 1), |(r, _)| weight(r) * scale);
                let (_, dx) = ens.nets[k].backward(&t, wcol.view(), false)?;
                for r in 0..b {
                    q_mix[r] += weight(r) * scale * q[[r, 0]];
                }
                dq_da += &dx.slice(s![.., a0..]);
            }
            Ok(())
        };
        family(&self.ext, subset_ext, &|r| w_ext[r])?;
        if let Some(si) = subset_int {
            family(&self.int, si, &|r| 1.0 - w_ext[r])?;
        }
        let inv_b = 1.0 / b as f64;
        let loss = (xi * &sample.log_prob - &q_mix).sum() * inv_b;
        let d_actions = dq_da.mapv(|g| -g * inv_b);
        let d_logp = vec![xi * inv_b; b];
        let d_out = self.head.backward(&sample, d_actions.view(), &d_logp);
        let grads = self.policy.backward(&tape, d_out.view(), true)?.0.expect("parameter gradient requested");
        Ok(PolicyGrad { loss, grads, log_prob_mean: sample.log_prob.mean().unwrap_or(0.0) })
    }

    /// One critic step per family. `r_int = None` leaves the intrinsic critics untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn critic_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        r_ext: &Array1<f64>,
        r_int: Option<&Array1<f64>>,
        gamma: f64,
        lr: f64,
        tau: f64,
        subset_size: usize,
        rng: &mut R,
    ) -> Result<CriticReport> {
        let eps = self.noise(batch.len(), rng);
        let x = conditioned_input(batch.obs.view(), &batch.z, self.skills, Some(batch.actions.view()));
        let mut report = CriticReport::default();
        let n = self.ext.len();
        let sub = sample(rng, n, subset_size.min(n)).into_vec();
        let y =
            self.td_targets(&self.ext, batch.next_obs.view(), &batch.z, eps.clone(), r_ext, &batch.done, &sub, gamma)?;
        let (loss, grads) = self.ext.loss_and_grads(x.view(), &y)?;
        check_loss(loss, "extrinsic critic")?;
        self.ext.apply(&grads, lr)?;
        self.ext.soft_update(tau);
        report.ext_loss = loss;
        if let Some(ri) = r_int {
            let sub = sample(rng, n, subset_size.min(n)).into_vec();
            let y = self.td_targets(&self.int, batch.next_obs.view(), &batch.z, eps, ri, &batch.done, &sub, gamma)?;
            let (loss, grads) = self.int.loss_and_grads(x.view(), &y)?;
            check_loss(loss, "intrinsic critic")?;
            self.int.apply(&grads, lr)?;
            self.int.soft_update(tau);
            report.int_loss = loss;
        }
        Ok(report)
    }

    /// One actor step on the mixed objective followed by one temperature step.
    #[allow(clippy::too_many_arguments)]
    pub fn policy_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        mix: &MixWeights,
        use_intrinsic: bool,
        lr: f64,
        temp_lr: f64,
        subset_size: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let eps = self.noise(batch.len(), rng);
        let n = self.ext.len();
        let se = sample(rng, n, subset_size.min(n)).into_vec();
        let si = sample(rng, n, subset_size.min(n)).into_vec();
        let w: Vec<f64> = batch.z.iter().map(|&z| mix.ext[z]).collect();
        let pg =
            self.policy_objective(batch.obs.view(), &batch.z, eps, &w, &se, use_intrinsic.then_some(si.as_slice()))?;
        check_loss(pg.loss, "policy")?;
        self.policy_opt.step(self.policy.params_mut(), &pg.grads, lr)?;
        let g = -(pg.log_prob_mean + self.target_entropy);
        let mut lt = [self.log_temp];
        self.temp_opt.step(&mut lt, &[g], temp_lr)?;
        self.log_temp = lt[0].clamp(-20.0, 5.0);
        Ok(pg.loss)
    }

    /// Flat parameter vectors of every network, in a fixed order, with names.
    pub fn named_params(&self) -> Vec<(String, &Mlp)> {
        let mut out = vec![("policy".to_string(), &self.policy)];
        for (fam, ens) in [("q_ext", &self.ext), ("q_int", &self.int)] {
            for (k, n) in ens.nets.iter().enumerate() {
                out.push((format!("{fam}.{k}"), n));
            }
            for (k, n) in ens.targets.iter().enumerate() {
                out.push((format!("{fam}_target.{k}"), n));
            }
        }
        out
    }
}

fn check_loss(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} loss is {loss}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> DistillConfig {
        DistillConfig {
            hidden_size: 8,
            hidden_depth: 2,
            num_critics: 3,
            activation: Activation::Tanh,
            ..DistillConfig::default()
        }
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    #[test]
    fn conditioned_input_layout() {
        let x = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let a = ndarray::array![[9.0], [8.0]];
        let out = conditioned_input(x.view(), &[1, 0], 3, Some(a.view()));
        assert_eq!(out.row(0).to_vec(), vec![1.0, 2.0, 0.0, 1.0, 0.0, 9.0]);
        assert_eq!(out.row(1).to_vec(), vec![3.0, 4.0, 1.0, 0.0, 0.0, 8.0]);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    #[test]
    fn policy_objective_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let mut agent = Agent::new(3, 2, 4, &small_cfg(), &mut rng);
            agent.log_temp = 0.3 * trial as f64 - 0.5;
            for v in agent.policy.params_mut().iter_mut() {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
            let obs = randn(&mut rng, 6, 3);
            let z: Vec<usize> = (0..6).map(|i| i % 4).collect();
            let eps = randn(&mut rng, 6, 2);
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let pg = agent.policy_objective(obs.view(), &z, eps.clone(), &w, &[0, 2], Some(&[1, 2])).unwrap();
            let base = agent.policy.params().to_vec();
            let h = 1e-5;
            for i in (0..base.len()).step_by(3) {
                let mut p = base.clone();
                p[i] += h;
                agent.policy.set_params(&p).unwrap();
                let up = agent.policy_objective(obs.view(), &z, eps.clone(), &w, &[0, 2], Some(&[1, 2])).unwrap().loss;
                p[i] -= 2.0 * h;
                agent.policy.set_params(&p).unwrap();
                let dn = agent.policy_objective(obs.view(), &z, eps.clone(), &w, &[0, 2], Some(&[1, 2])).unwrap().loss;
                let fd = (up - dn) / (2.0 * h);
                assert!(rel_err(fd, pg.grads[i]) < 1e-4, "param {i}: {fd} vs {}", pg.grads[i]);
            }
            agent.policy.set_params(&base).unwrap();
        }
    }

    #[test]
    fn critic_loss_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ens = CriticEnsemble::new(&[5, 8, 8, 1], Activation::Tanh, true, 2, &mut rng);
        let x = randn(&mut rng, 7, 5);
        let y = Array1::from_shape_simple_fn(7, || rng.sample(StandardNormal));
        let (_, grads) = ens.loss_and_grads(x.view(), &y).unwrap();
        let h = 1e-5;
        for (k, gk) in grads.iter().enumerate() {
            let base = ens.nets[k].params().to_vec();
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                ens.nets[k].set_params(&p).unwrap();
                let up = ens.loss_and_grads(x.view(), &y).unwrap().0;
                p[i] -= 2.0 * h;
                ens.nets[k].set_params(&p).unwrap();
                let dn = ens.loss_and_grads(x.view(), &y).unwrap().0;
                // the reported loss averages over members
                let fd = (up - dn) / (2.0 * h) * 2.0;
                assert!(rel_err(fd, gk[i]) < 1e-4);
            }
            ens.nets[k].set_params(&base).unwrap();
        }
    }

    #[test]
    fn extrinsic_only_mix_ignores_intrinsic_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let agent = Agent::new(3, 2, 2, &small_cfg(), &mut rng);
        let obs = randn(&mut rng, 4, 3);
        let eps = randn(&mut rng, 4, 2);
        let a =
            agent.policy_objective(obs.view(), &[0, 1, 0, 1], eps.clone(), &[1.0; 4], &[0, 1], Some(&[0, 1])).unwrap();
        let b = agent.policy_objective(obs.view(), &[0, 1, 0, 1], eps, &[1.0; 4], &[0, 1], None).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.grads.iter().zip(&b.grads) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn myopic_constant_reward_critic_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ens = CriticEnsemble::new(&[3, 16, 1], Activation::Relu, true, 2, &mut rng);
        let x = randn(&mut rng, 32, 3);
        let y = Array1::from_elem(32, 0.7);
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            let (l, g) = ens.loss_and_grads(x.view(), &y).unwrap();
            ens.apply(&g, 1e-2).unwrap();
            loss = l;
        }
        assert!(loss < 1e-4, "{loss}");
    }
}
