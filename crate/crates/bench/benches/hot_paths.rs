use advice_loop::coach::plan_shortest;
use advice_loop::env::EnvConfig;
use advice_loop::gridworld::GridGenConfig;
use advice_loop::nnet::{LossSpec, NetConfig, PolicyNet, PpoTerms, Sample};
use advice_loop::pointmaze::{maze_generate, PointConfig};
use advice_loop::ppo::compute_gae;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn batch(env: &EnvConfig, adv: usize, n: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let mut s = env.reset(i as u64).unwrap();
            for _ in 0..rng.random_range(0..10) {
                if s.step(rng.random_range(0..env.n_actions())).unwrap().done() {
                    break;
                }
            }
            let a: Vec<f64> = (0..adv).map(|_| rng.random_range(-1.0..1.0)).collect();
            Sample::new(&s.obs(), &a)
        })
        .collect()
}

fn nets(c: &mut Criterion) {
    for env in [EnvConfig::pointmaze(PointConfig::default()), EnvConfig::gridworld(GridGenConfig::default())] {
        let net = PolicyNet::new(NetConfig::new(env.obs_len(), 8, env.n_actions(), 0));
        let samples = batch(&env, 8, 256);
        let refs: Vec<&Sample> = samples.iter().collect();
        let n = refs.len();
        let actions: Vec<usize> = (0..n).map(|i| i % env.n_actions()).collect();
        let old = vec![-1.5; n];
        let adv: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let ret = vec![0.5; n];
        let mags = env.action_magnitudes();
        let spec = LossSpec::Ppo {
            terms: PpoTerms {
                clip: 0.2,
                value_coef: 0.5,
                entropy_coef: 0.01,
                control_penalty: 0.1,
            },
            actions: &actions,
            old_log_probs: &old,
            advantages: &adv,
            returns: &ret,
            magnitudes: &mags,
        };
        let w = vec![1.0; n];
        let name = format!("{:?}", env.kind).to_lowercase();
        c.bench_function(&format!("{name}/forward_batch_256"), |b| b.iter(|| net.forward_batch(black_box(&refs)).unwrap()));
        c.bench_function(&format!("{name}/ppo_loss_and_grad_256"), |b| {
            b.iter(|| net.loss_and_grad(black_box(&refs), &spec, &w).unwrap())
        });
        c.bench_function(&format!("{name}/env_step"), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            b.iter_batched(
                || env.reset(rng.random()).unwrap(),
                |mut s| {
                    for k in 0..32 {
                        if s.step(k % env.n_actions()).unwrap().done() {
                            break;
                        }
                    }
                    s
                },
                BatchSize::SmallInput,
            )
        });
    }
}

fn planning(c: &mut Criterion) {
    let mazes: Vec<_> = (0..64).map(|s| maze_generate(s, 6, 6).unwrap()).collect();
    c.bench_function("maze/plan_shortest_x64", |b| {
        b.iter(|| {
            for m in &mazes {
                black_box(plan_shortest(m, m.start_cell, m.goal_cell).unwrap());
            }
        })
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r: Vec<f64> = (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..2049).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d: Vec<bool> = (0..2048).map(|_| rng.random_bool(0.02)).collect();
    c.bench_function("ppo/gae_2048", |b| b.iter(|| compute_gae(black_box(&r), &v, &d, 0.99, 0.95).unwrap()));
}

criterion_group!(benches, nets, planning);
criterion_main!(benches);
