use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use helm_core::dynamics::step;
use helm_core::ppo::{actor_loss_and_grad, compute_gae, Batch, EpisodeRecord, StepRecord};
use helm_core::{MlpParams, ShipModel, ShipState, Status, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mmg_step(c: &mut Criterion) {
    let model = ShipModel::kcs();
    let s = ShipState::straight(Vec2::ZERO, 0.0, model.design_speed(), model.actuator.n_p);
    let dt = 0.3 * model.time_scale();
    c.bench_function("mmg_rk4_step", |b| b.iter(|| step(black_box(&s), black_box(0.2), None, &model, dt).unwrap()));
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = MlpParams::orthogonal(&[4, 128, 128, 1], 1, 1.0, 0.01, &mut rng).unwrap();
    let x = [0.3, -0.2, 0.8, 0.1];
    c.bench_function("mlp_forward_128x128", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let mut grad = vec![0.0; net.len()];
    c.bench_function("mlp_forward_backward_128x128", |b| {
        b.iter(|| {
            let cache = net.forward_cached(black_box(&x)).unwrap();
            net.backward(&cache, &[1.0], &mut grad);
        })
    });

    // One full-batch actor loss evaluation at a typical iteration size.
    let n = 2000;
    let batch = Batch {
        features: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
        actions: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        old_log_probs: vec![-0.5; n],
        advantages: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        returns: vec![0.0; n],
    };
    let mut group = c.benchmark_group("ppo");
    group.sample_size(10);
    group.bench_function("actor_loss_and_grad_2000", |b| b.iter(|| actor_loss_and_grad(&net, &batch, 0.2, 0.2).unwrap()));
    group.finish();
}

fn gae(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut buffer = helm_core::RolloutBuffer::default();
    for _ in 0..50 {
        let steps = (0..160)
            .map(|_| StepRecord {
                features: [0.0; 4],
                action: 0.0,
                log_prob: 0.0,
                reward: rng.random_range(-1.0..1.0),
                value: rng.random_range(-5.0..5.0),
                status: Status::Running,
            })
            .collect();
        let rec = EpisodeRecord {
            start: 0,
            len: 0,
            bootstrap: 0.0,
            total_return: 0.0,
            shaped_return: 0.0,
            status: Status::Horizon,
            sq_cross_track: 0.0,
        };
        buffer.push_episode(steps, rec);
    }
    c.bench_function("gae_50x160", |b| b.iter(|| compute_gae(black_box(&mut buffer), 0.96, 0.95).unwrap()));
}

criterion_group!(benches, mmg_step, network, gae);
criterion_main!(benches);
