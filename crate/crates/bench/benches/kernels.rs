use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use droneam::agents::{Agent, AgentConfig, Algorithm, Batch, Transition};
use droneam::env::{Env, EnvConfig, NormalizerStats, RawAction, ResetMode, OBS_DIM};
use droneam::nn::{Activation, DenseNetwork};

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, sizes) in [
        ("actor_400_300", [13, 400, 300, 3]),
        ("actor_64_64", [13, 64, 64, 3]),
    ] {
        let net = DenseNetwork::new(&sizes, Activation::Relu, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..256 * 13).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = vec![0.01; 256 * 3];
        c.bench_function(&format!("{name}/forward_b256"), |b| {
            b.iter(|| net.forward(black_box(&x), 256).unwrap())
        });
        let cache = net.forward(&x, 256).unwrap();
        c.bench_function(&format!("{name}/backward_b256"), |b| {
            b.iter(|| net.backward(black_box(&cache), &g).unwrap())
        });
    }
}

fn env_step(c: &mut Criterion) {
    let mut env = Env::new(EnvConfig::default(), NormalizerStats::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    env.reset(ResetMode::Training, &mut rng);
    c.bench_function("env/step", |b| {
        b.iter(|| {
            if env.status().is_terminal() {
                env.reset(ResetMode::Training, &mut rng);
            }
            env.step(black_box(RawAction([0.0, 0.0, 0.37]))).unwrap()
        })
    });
}

fn td3_update(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = Batch::from_transitions(
        &(0..256)
            .map(|_| Transition {
                state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                action: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                reward: rng.random_range(-1.0..0.0),
                next_state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                done: false,
            })
            .collect::<Vec<_>>(),
    );
    assert_eq!(batch.states.len(), 256 * OBS_DIM);
    for (name, hidden) in [
        ("td3_update_64_64", vec![64, 64]),
        ("td3_update_400_300", vec![400, 300]),
    ] {
        let mut cfg = AgentConfig::new(Algorithm::Td3);
        cfg.hidden_sizes = hidden;
        let agent = Agent::new(cfg, &mut rng);
        c.bench_function(&format!("agent/{name}_b256"), |b| {
            b.iter_batched(
                || (agent.clone(), ChaCha8Rng::seed_from_u64(3)),
                |(mut a, mut r)| a.update(black_box(&batch), &mut r),
                BatchSize::LargeInput,
            )
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = network, env_step, td3_update
}
criterion_main!(benches);
