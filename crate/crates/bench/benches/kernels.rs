use std::hint::black_box;

use clipnet::losses::bellman_loss_grad;
use clipnet::optimizer::clip;
use clipnet::rl::dqn_update;
use clipnet::{ActivationKind, ClipConfig, GradMode, OptimizerState, StepSchedule};
use clipnet_bench::{inputs, q_net, transitions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn activations(c: &mut Criterion) {
    let xs: Vec<f64> = inputs(1, 1024, 1).remove(0);
    let mut g = c.benchmark_group("activation");
    g.throughput(Throughput::Elements(xs.len() as u64));
    for kind in [
        ActivationKind::tgelu(-2.0, 2.0).unwrap(),
        ActivationKind::Gelu,
        ActivationKind::Sigmoid,
    ] {
        let act = kind.prepare();
        g.bench_function(BenchmarkId::new("value_and_derivative", kind.tag()), |b| {
            b.iter(|| {
                xs.iter()
                    .map(|&x| act.value_and_derivative(black_box(x)))
                    .fold(0.0, |s, (v, d)| s + v + d)
            })
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let xs = inputs(64, 4, 2);
    let mut g = c.benchmark_group("network");
    for widths in [vec![64, 64], vec![256]] {
        let net = q_net(&widths);
        let label = format!("{widths:?}");
        g.bench_function(BenchmarkId::new("predict", &label), |b| {
            b.iter(|| {
                xs.iter()
                    .map(|x| net.predict(black_box(x)).unwrap()[0])
                    .sum::<f64>()
            })
        });
        g.bench_function(BenchmarkId::new("forward_backprop", &label), |b| {
            b.iter(|| {
                xs.iter()
                    .map(|x| {
                        bellman_loss_grad(&net, black_box(x), 1, 1.0, GradMode::Standard)
                            .unwrap()
                            .0
                    })
                    .sum::<f64>()
            })
        });
    }
    g.finish();
}

fn optimizer(c: &mut Criterion) {
    let g_vec: Vec<f64> = inputs(1, 4096, 3).remove(0);
    c.bench_function("clip/4096", |b| {
        b.iter(|| clip(black_box(&g_vec), 1.0).unwrap())
    });

    let batch = transitions(32, 4);
    let mut grp = c.benchmark_group("dqn_update");
    grp.throughput(Throughput::Elements(batch.len() as u64));
    grp.bench_function("64x64/batch32", |b| {
        let mut net = q_net(&[64, 64]);
        let mut opt = OptimizerState::new(
            StepSchedule::Constant { a0: 1e-4 },
            Some(ClipConfig::new(1.0).unwrap()),
        );
        b.iter(|| {
            dqn_update(
                &mut net,
                None,
                black_box(&batch),
                &mut opt,
                0.99,
                GradMode::Standard,
            )
            .unwrap()
            .loss
        })
    });
    grp.finish();
}

criterion_group!(benches, activations, network, optimizer);
criterion_main!(benches);
