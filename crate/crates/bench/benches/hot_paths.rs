use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use crosslayer_core::dqn::{td_targets, train_step, Adam, AdamConfig, NetworkShape, QNetwork, Transition};
use crosslayer_core::sim::Environment;
use crosslayer_core::{Codebook, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 128;

fn transitions(rng: &mut ChaCha8Rng, dim: usize, actions: usize) -> Vec<Transition> {
    (0..BATCH)
        .map(|_| Transition {
            state: (0..dim).map(|_| rng.gen()).collect(),
            action: rng.gen_range(0..actions),
            next_state: (0..dim).map(|_| rng.gen()).collect(),
            reward: rng.gen_range(0.0..50.0),
            terminal: false,
        })
        .collect()
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (dim, actions) in [(40, 80), (80, 800)] {
        let net = QNetwork::init(NetworkShape::q_network(dim, actions), &mut rng);
        let x: Vec<f64> = (0..BATCH * dim).map(|_| rng.gen()).collect();
        c.bench_function(&format!("forward_train_{dim}x{actions}_b{BATCH}"), |b| {
            b.iter(|| net.forward_train_pure(black_box(&x)).unwrap())
        });
        let (out, cache) = net.forward_train_pure(&x).unwrap();
        let mut grads = Vec::new();
        c.bench_function(&format!("backward_{dim}x{actions}_b{BATCH}"), |b| {
            b.iter(|| net.backward(black_box(&cache), black_box(&out), &mut grads))
        });
        let state = &x[..dim];
        c.bench_function(&format!("forward_eval_{dim}x{actions}"), |b| b.iter(|| net.forward_eval(black_box(state)).unwrap()));

        let data = transitions(&mut rng, dim, actions);
        let batch: Vec<&Transition> = data.iter().collect();
        let targets = td_targets(&batch, &net, 0.2);
        c.bench_function(&format!("train_step_{dim}x{actions}_b{BATCH}"), |b| {
            b.iter_batched(
                || (net.clone(), Adam::new(net.params.len(), AdamConfig::default())),
                |(mut online, mut adam)| train_step(&mut online, &mut adam, &batch, &targets, &mut grads),
                BatchSize::LargeInput,
            )
        });
    }
}

fn simulation(c: &mut Criterion) {
    for name in ["a1_30ms", "b2_30ms"] {
        let s = Scenario::preset(name).unwrap();
        let env = Environment::new(&s, 6).unwrap();
        c.bench_function(&format!("run_window_{name}"), |b| {
            b.iter_batched(|| env.clone(), |mut e| e.run_window(), BatchSize::SmallInput)
        });
    }
}

fn codebook(c: &mut Criterion) {
    let cb = Codebook::new(2).unwrap();
    c.bench_function("codebook_roundtrip_k2", |b| {
        b.iter(|| (0..cb.size()).map(|i| cb.encode(&cb.decode(black_box(i)).unwrap()).unwrap()).sum::<usize>())
    });
}

criterion_group!(benches, network, simulation, codebook);
criterion_main!(benches);
