use ndarray::Array2;

use super::agent::{conditioned_input, Agent};
use crate::diversity::nn_diversity;
use crate::envs::{Env, Origin, Rollout, Transition};
use crate::error::{invalid, Result};
use crate::nn::{Checkpoint, GaussianHead, Mlp};
use crate::par::Exec;

/// One rollout request: skill, reset seed, whether to jitter the start.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSpec {
    pub skill: usize,
    pub seed: u64,
    pub jitter: bool,
}

/// Runs episodes in lockstep so every step needs a single batched policy call.
pub fn lockstep_rollouts<E, F>(env: &E, episodes: &[EpisodeSpec], exec: Exec, mut policy: F) -> Result<Vec<Rollout>>
where
    E: Env,
    F: FnMut(&Array2<f64>, &[usize]) -> Result<Array2<f64>>,
{
    let spec = env.spec();
    let mut states: Vec<E::State> = episodes.iter().map(|e| env.reset(e.seed, e.jitter)).collect();
    let mut obs: Vec<Vec<f64>> = states.iter().map(|s| env.observe(s)).collect();
    let mut trans: Vec<Vec<Transition>> = vec![Vec::with_capacity(spec.episode_len); episodes.len()];
    let z: Vec<usize> = episodes.iter().map(|e| e.skill).collect();
    let mut out: Vec<Option<Rollout>> = vec![None; episodes.len()];
    let mut collisions = vec![0usize; episodes.len()];
    while out.iter().any(Option::is_none) {
        let live: Vec<usize> = (0..episodes.len()).filter(|&i| out[i].is_none()).collect();
        let mut x = Array2::zeros((live.len(), spec.obs_dim));
        for (r, &i) in live.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&obs[i]));
        }
        let zl: Vec<usize> = live.iter().map(|&i| z[i]).collect();
        let actions = policy(&x, &zl)?;
        let idx: Vec<(usize, usize)> = live.iter().copied().enumerate().collect();
        let steps = exec.map(&idx, |&(r, i)| env.step(&states[i], actions.row(r).as_slice().expect("contiguous")));
        for (r, (i, step)) in live.iter().copied().zip(steps).enumerate() {
            let step = step?;
            collisions[i] += usize::from(step.collision);
            trans[i].push(Transition {
                s: std::mem::take(&mut obs[i]),
                a: actions.row(r).to_vec(),
                r_ext: step.reward,
                features: step.features,
                s_next: step.observation.clone(),
                z: z[i],
                done: step.done,
                origin: Origin::Online,
            });
            obs[i] = step.observation;
            states[i] = step.next_state;
            if step.done {
                let ts = std::mem::take(&mut trans[i]);
                let ret = ts.iter().map(|t| t.r_ext).sum();
                let mut mf = vec![0.0; spec.feature_dim];
                for t in &ts {
                    for (m, f) in mf.iter_mut().zip(&t.features) {
                        *m += f;
                    }
                }
                mf.iter_mut().for_each(|m| *m /= ts.len() as f64);
                out[i] = Some(Rollout { transitions: ts, ret, mean_features: mf, collisions: collisions[i] });
            }
        }
    }
    Ok(out.into_iter().map(|r| r.expect("all episodes finished")).collect())
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    /// Mean undiscounted return per skill.
    pub returns: Vec<f64>,
    /// Expected features per skill, averaged over episodes.
    pub mean_features: Vec<Vec<f64>>,
    pub diversity: f64,
    /// Skill-major: `episodes` rollouts for skill 0, then skill 1, ...
    pub rollouts: Vec<Rollout>,
}

impl EvalResult {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Deterministic (mode-action) evaluation of a skill-conditioned policy network.
pub fn evaluate_network<E: Env>(
    policy: &Mlp,
    skills: usize,
    env: &E,
    episodes: usize,
    seed: u64,
    jitter: bool,
    exec: Exec,
) -> Result<EvalResult> {
    if episodes == 0 || skills < 2 {
        return Err(invalid("evaluation needs at least one episode and two skills"));
    }
    let spec = env.spec();
    if policy.input_dim() != spec.obs_dim + skills || policy.output_dim() != 2 * spec.action_dim {
        return Err(invalid("policy network does not match the environment and skill count"));
    }
    let head = GaussianHead { action_dim: spec.action_dim };
    let eps: Vec<EpisodeSpec> = (0..skills)
        .flat_map(|z| (0..episodes).map(move |k| EpisodeSpec { skill: z, seed: seed.wrapping_add(k as u64), jitter }))
        .collect();
    let rollouts = lockstep_rollouts(env, &eps, exec, |x, z| {
        let out = policy.predict(conditioned_input(x.view(), z, skills, None).view())?;
        Ok(head.mode(out.view()))
    })?;
    let mut returns = vec![0.0; skills];
    let mut mean_features = vec![vec![0.0; spec.feature_dim]; skills];
    for (r, e) in rollouts.iter().zip(&eps) {
        returns[e.skill] += r.ret / episodes as f64;
        for (m, f) in mean_features[e.skill].iter_mut().zip(&r.mean_features) {
            *m += f / episodes as f64;
        }
    }
    let diversity = nn_diversity(&mean_features)?;
    Ok(EvalResult { returns, mean_features, diversity, rollouts })
}

/// Policy-only checkpoint of an agent.
pub fn policy_checkpoint(agent: &Agent) -> Result<Checkpoint> {
    let mut ck = Checkpoint::default();
    ck.set_meta("skills", serde_json::json!(agent.skills))?;
    ck.set_meta("obs_dim", serde_json::json!(agent.obs_dim))?;
    ck.set_meta("act_dim", serde_json::json!(agent.act_dim))?;
    ck.add_mlp("policy", &agent.policy)?;
    Ok(ck)
}

/// Evaluates the policy stored in a checkpoint.
pub fn evaluate_policies<E: Env>(
    ck: &Checkpoint,
    env: &E,
    episodes: usize,
    seed: u64,
    jitter: bool,
    exec: Exec,
) -> Result<EvalResult> {
    let skills: usize = ck.meta_as("skills")?;
    let policy = ck.load_mlp("policy")?;
    evaluate_network(&policy, skills, env, episodes, seed, jitter, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DistillConfig;
    use crate::envs::{rollout, MazeConfig, MazeEnv};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lockstep_matches_sequential_rollouts() {
        let env = MazeEnv::new(MazeConfig::default()).unwrap();
        let eps = [EpisodeSpec { skill: 0, seed: 3, jitter: true }, EpisodeSpec { skill: 1, seed: 4, jitter: true }];
        let pol = |x: &Array2<f64>, z: &[usize]| -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((x.nrows(), 2), |(r, c)| if c == 0 { 1.0 } else { z[r] as f64 - 0.5 }))
        };
        let a = lockstep_rollouts(&env, &eps, Exec::Parallel, pol).unwrap();
        for (e, ra) in eps.iter().zip(&a) {
            let rb =
                rollout(&env, |_, _| vec![1.0, e.skill as f64 - 0.5], e.seed, true, e.skill, Origin::Online).unwrap();
            assert_eq!(ra, &rb);
        }
    }

    #[test]
    fn untrained_policy_has_no_diversity_and_is_deterministic() {
        let env = MazeEnv::new(MazeConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Agent::new(5, 2, 4, &DistillConfig::default(), &mut rng);
        let mut zero = agent.policy.clone();
        let p = vec![0.0; zero.num_params()];
        zero.set_params(&p).unwrap();
        let r = evaluate_network(&zero, 4, &env, 2, 0, true, Exec::Sequential).unwrap();
        assert!(r.diversity < 0.1);
        let ck = policy_checkpoint(&agent).unwrap();
        let a = evaluate_policies(&ck, &env, 2, 9, true, Exec::Parallel).unwrap();
        let b = evaluate_policies(&ck, &env, 2, 9, true, Exec::Sequential).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.diversity, b.diversity);
    }
}
