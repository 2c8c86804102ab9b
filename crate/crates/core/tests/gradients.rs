mod common;

use clipnet::losses::{bellman_loss_grad, ce_loss_grad, mse_loss_grad};
use clipnet::{GradMode, HeadKind, Layout};
use common::*;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 128,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn mse_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let layout = random_layout(&mut r, HeadKind::Scalar, 3, false);
        let net = random_net(&mut r, layout, 0.8);
        let x = uniform_vec(&mut r, net.layout().input_dim(), 1.5);
        let y: f64 = r.random_range(-2.0..2.0);
        prop_assume!(!near_kink(&net, &x, 1e-3));
        let (_, g) = mse_loss_grad(&net, &x, y).unwrap();
        let (vb, wu) = finite_diff(&net, H, |n| mse_loss_grad(n, &x, y).unwrap().0);
        prop_assert!(norm(&g.grad_vb) > 1e-8);
        prop_assert!(rel_err(&g.grad_vb, &vb) < TOL, "vb rel err {}", rel_err(&g.grad_vb, &vb));
        prop_assert!(rel_err(&g.grad_wu, &wu) < TOL || norm(&wu) < 1e-9, "wu rel err {}", rel_err(&g.grad_wu, &wu));
    }

    #[test]
    fn ce_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.random_range(2..=4);
        let layout = random_layout(&mut r, HeadKind::Softmax { k }, 3, false);
        let net = random_net(&mut r, layout, 0.8);
        let x = uniform_vec(&mut r, net.layout().input_dim(), 1.5);
        let y = r.random_range(0..k);
        prop_assume!(!near_kink(&net, &x, 1e-3));
        let (_, g) = ce_loss_grad(&net, &x, y, GradMode::Standard).unwrap();
        let (vb, wu) = finite_diff(&net, H, |n| ce_loss_grad(n, &x, y, GradMode::Standard).unwrap().0);
        prop_assert!(rel_err(&g.grad_vb, &vb) < TOL, "vb rel err {}", rel_err(&g.grad_vb, &vb));
        prop_assert!(rel_err(&g.grad_wu, &wu) < TOL || norm(&wu) < 1e-9, "wu rel err {}", rel_err(&g.grad_wu, &wu));
    }

    #[test]
    fn bellman_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = r.random_range(2..=4);
        let layout = random_layout(&mut r, HeadKind::QValues { m }, 3, false);
        let net = random_net(&mut r, layout, 0.8);
        let x = uniform_vec(&mut r, net.layout().input_dim(), 1.5);
        let a = r.random_range(0..m);
        // target held fixed while differentiating
        let target: f64 = r.random_range(-2.0..2.0);
        prop_assume!(!near_kink(&net, &x, 1e-3));
        let (_, g) = bellman_loss_grad(&net, &x, a, target, GradMode::Standard).unwrap();
        let (vb, wu) = finite_diff(&net, H, |n| bellman_loss_grad(n, &x, a, target, GradMode::Standard).unwrap().0);
        prop_assert!(norm(&g.grad_vb) > 1e-8);
        prop_assert!(rel_err(&g.grad_vb, &vb) < TOL, "vb rel err {}", rel_err(&g.grad_vb, &vb));
        prop_assert!(rel_err(&g.grad_wu, &wu) < TOL || norm(&wu) < 1e-9, "wu rel err {}", rel_err(&g.grad_wu, &wu));
    }
}

/// Partial-derivative table for `f = <v, σ(Wx + u)> + b`, `ℓ = (f - y)²`.
#[test]
fn shallow_backprop_equals_component_table() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let d = r.random_range(1..=5);
        let h = r.random_range(1..=8);
        let act = random_activation(&mut r, false);
        let layout = Layout::new(d, &[h], &[act], HeadKind::Scalar).unwrap();
        let net = random_net(&mut r, layout, 1.0);
        let x = uniform_vec(&mut r, d, 2.0);
        let y: f64 = r.random_range(-1.0..1.0);
        let (_, g) = mse_loss_grad(&net, &x, y).unwrap();

        let (w, u) = net.hidden_params(0);
        let (v, b) = net.head_params();
        let pre: Vec<f64> = (0..h)
            .map(|k| (0..d).map(|j| w[k * d + j] * x[j]).sum::<f64>() + u[k])
            .collect();
        let op: Vec<f64> = pre.iter().map(|z| act.value(*z)).collect();
        let gr: Vec<f64> = pre.iter().map(|z| act.derivative(*z)).collect();
        let f = (0..h).map(|k| v[k] * op[k]).sum::<f64>() + b[0];
        let e = 2.0 * (f - y);

        let mut vb: Vec<f64> = (0..h).map(|k| e * op[k]).collect();
        vb.push(e);
        let mut wu = vec![0.0; h * d + h];
        for k in 0..h {
            for j in 0..d {
                wu[k * d + j] = e * gr[k] * v[k] * x[j];
            }
            wu[h * d + k] = e * gr[k] * v[k];
        }
        for (a, c) in g.grad_vb.iter().zip(&vb).chain(g.grad_wu.iter().zip(&wu)) {
            assert!((a - c).abs() <= 1e-10, "{a} vs {c}");
        }
    }
}
