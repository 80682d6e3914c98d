use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use divcurriculum::cns::{run_cns, CnsSetup};
use divcurriculum::config::{CnsConfig, DistillConfig};
use divcurriculum::distill::{evaluate_network, Agent};
use divcurriculum::diversity::knn_entropy_with;
use divcurriculum::envs::{MazeConfig, MazeEnv};
use divcurriculum::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn cns_iterations(c: &mut Criterion) {
    let env = MazeEnv::new(MazeConfig::default()).unwrap();
    let mut g = c.benchmark_group("cns_10_skills_5_iterations");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        let setup = CnsSetup {
            cfg: CnsConfig { iterations: 5, ..CnsConfig::default() },
            skills: 10,
            alpha: 0.8,
            fixed_blend: false,
            exec,
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_cns(&setup, &env, 0).unwrap()));
    }
    g.finish();
}

fn knn_entropy(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let mut g = c.benchmark_group("knn_entropy_2000_points");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| knn_entropy_with(&pts, 1, exec).unwrap()));
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let env = MazeEnv::new(MazeConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = DistillConfig { hidden_depth: 2, num_critics: 2, ..DistillConfig::default() };
    let agent = Agent::new(5, 2, 10, &cfg, &mut rng);
    let mut g = c.benchmark_group("evaluate_10_skills_4_episodes");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_network(&agent.policy, 10, &env, 4, 0, true, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, cns_iterations, knn_entropy, evaluation);
criterion_main!(benches);
