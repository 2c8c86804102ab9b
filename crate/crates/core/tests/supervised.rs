use clipnet::run::{stream_rng, NetSpec};
use clipnet::supervised::{
    epoch_permutation, evaluate, gen_blobs, gen_regression, split, train_classification,
    train_regression, Metric, Targets, TrainConfig,
};
use clipnet::telemetry::ce_output_grad_bound;
use clipnet::{ActivationKind, HeadKind, Layout, Mlp, StepSchedule};
use proptest::prelude::*;

/// Plain logistic regression by full-batch gradient descent, written out
/// independently of the library's network code.
fn linear_probe_accuracy(
    data: &clipnet::supervised::Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
) -> f64 {
    let labels = match data.targets() {
        Targets::Labels { labels, .. } => labels.clone(),
        _ => unreachable!(),
    };
    let d = data.dim();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..200 {
        let (mut gw, mut gb) = (vec![0.0; d], 0.0);
        for &i in train_idx {
            let x = &data.inputs()[i];
            let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - labels[i] as f64;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
            gb += err;
        }
        let n = train_idx.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= 0.5 * g / n);
        b -= 0.5 * gb / n;
    }
    let correct = test_idx
        .iter()
        .filter(|&&i| {
            let z: f64 = w
                .iter()
                .zip(&data.inputs()[i])
                .map(|(a, c)| a * c)
                .sum::<f64>()
                + b;
            (z > 0.0) as usize == labels[i]
        })
        .count();
    correct as f64 / test_idx.len() as f64
}

#[test]
fn well_separated_blobs_are_linearly_separable() {
    for (sep, seed) in [(6.0, 0), (8.0, 1), (6.0, 2)] {
        let data = gen_blobs(2000, 5, sep, seed).unwrap();
        let perm = epoch_permutation(data.len(), &mut stream_rng(seed, 9));
        let acc = linear_probe_accuracy(&data, &perm[..1600], &perm[1600..]);
        assert!(acc >= 0.99, "sep {sep}: probe accuracy {acc}");
    }
}

fn classifier_spec(d: usize) -> NetSpec {
    let layout = Layout::uniform(
        d,
        &[16],
        ActivationKind::tgelu(-2.0, 2.0).unwrap(),
        HeadKind::Softmax { k: 2 },
    )
    .unwrap();
    NetSpec::new(layout, StepSchedule::Constant { a0: 0.1 }, None)
}

#[test]
fn classifier_learns_separated_blobs_within_bound() {
    let data = gen_blobs(1000, 4, 6.0, 4).unwrap();
    let spec = classifier_spec(4);
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        eval_every: 10,
        ..Default::default()
    };
    let run = train_classification(&cfg, &spec, &data).unwrap();
    assert!(run.final_metric >= 0.95, "accuracy {}", run.final_metric);
    let bound = ce_output_grad_bound(&spec.layout).unwrap();
    assert!(run
        .telemetry
        .iter()
        .all(|r| r.grad_vb_norm_clipped <= bound + 1e-12));
    assert_eq!(
        run.metrics.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        vec![10, 20, 30]
    );
}

#[test]
fn uniform_predictor_metrics() {
    let data = gen_blobs(200, 3, 2.0, 0).unwrap();
    let net = Mlp::zeros(
        Layout::uniform(3, &[4], ActivationKind::Sigmoid, HeadKind::Softmax { k: 2 }).unwrap(),
    );
    assert_eq!(evaluate(&net, &data, Metric::Accuracy).unwrap(), 0.5);
    assert!((evaluate(&net, &data, Metric::Ce).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(evaluate(&net, &data, Metric::Mse).is_err());
}

#[test]
fn split_partitions_the_data() {
    let data = gen_regression(101, 2, 0.1, 3).unwrap();
    let (tr, te) = split(&data, 0.8, 5).unwrap();
    assert_eq!(tr.len() + te.len(), 101);
    assert_eq!(tr.len(), 81);
    let mut all: Vec<Vec<f64>> = tr.inputs().iter().chain(te.inputs()).cloned().collect();
    let mut orig = data.inputs().to_vec();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(all, orig);
    assert_eq!(split(&data, 0.8, 5).unwrap().0, tr);
}

#[test]
fn regression_runs_are_deterministic_and_tracked() {
    let data = gen_regression(300, 2, 0.05, 1).unwrap();
    let layout = Layout::uniform(2, &[8], ActivationKind::Sigmoid, HeadKind::Scalar).unwrap();
    let spec = NetSpec::new(
        layout,
        StepSchedule::default(),
        Some(clipnet::ClipConfig::new(1.0).unwrap()),
    );
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 10,
        ..Default::default()
    };
    let a = train_regression(&cfg, &spec, &data).unwrap();
    let b = train_regression(&cfg, &spec, &data).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.telemetry, b.telemetry);
    // 240 training records in batches of 10
    assert_eq!(a.tracker.n, 5 * 24);
    assert_eq!(a.telemetry.len(), 5 * 24);
}

proptest! {
    #[test]
    fn permutation_visits_each_record_once(n in 1usize..500, seed in any::<u64>()) {
        let p = epoch_permutation(n, &mut stream_rng(seed, 2));
        let mut seen = vec![false; n];
        for i in &p {
            prop_assert!(!seen[*i]);
            seen[*i] = true;
        }
        prop_assert!(seen.iter().all(|s| *s));
        prop_assert_eq!(p, epoch_permutation(n, &mut stream_rng(seed, 2)));
    }
}
