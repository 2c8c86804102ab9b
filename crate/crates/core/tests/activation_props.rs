mod common;

use clipnet::activations::{act_deriv, act_eval, act_range};
use clipnet::ActivationKind;
use common::*;
use proptest::prelude::*;
use rand::Rng;

// Φ via the Taylor series of erf; shares nothing with the library path.
fn cdf_oracle(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let (mut term, mut sum, mut n) = (z, z, 0.0);
    while term.abs() > 1e-18 {
        n += 1.0;
        term *= -z * z / n;
        sum += term / (2.0 * n + 1.0);
    }
    0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
}

fn tg() -> ActivationKind {
    ActivationKind::tgelu(-2.0, 2.0).unwrap()
}

#[test]
fn reference_values_against_cdf_oracle() {
    let one = act_eval(tg(), 1.0).unwrap();
    assert!((one - cdf_oracle(1.0)).abs() < 1e-6);
    assert!((one - 0.841345).abs() < 1e-6);
    let three = act_eval(tg(), 3.0).unwrap();
    let want = 2.0 * cdf_oracle(2.0) + (1.0 - cdf_oracle(1.0));
    assert!((three - want).abs() < 1e-6);
    assert!((three - 2.113155).abs() < 1e-6);
    assert_eq!(act_eval(tg(), 0.0).unwrap(), 0.0);
    assert_eq!(act_eval(ActivationKind::Sigmoid, 0.0).unwrap(), 0.5);
}

#[test]
fn branch_continuity_at_kinks() {
    let eps = 1e-8;
    let mut r = rng(11);
    let mut kinds = vec![tg()];
    for _ in 0..200 {
        kinds.push(
            ActivationKind::tgelu(r.random_range(-4.0..0.0), r.random_range(0.0..4.0)).unwrap(),
        );
    }
    for k in kinds {
        let ActivationKind::TGelu { t_l, t_r } = k else {
            unreachable!()
        };
        for t in [t_l, 0.0, t_r] {
            let jump = (act_eval(k, t + eps).unwrap() - act_eval(k, t - eps).unwrap()).abs();
            assert!(jump <= 10.0 * eps, "{k} at {t}: jump {jump}");
        }
    }
}

#[test]
fn squashing_over_a_million_draws() {
    let kinds = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::scaled_tanh(2.5).unwrap(),
        tg(),
        ActivationKind::tgelu(-0.7, 3.1).unwrap(),
    ];
    let mut r = rng(5);
    for k in kinds {
        let (lo, hi) = act_range(k);
        for _ in 0..1_000_000 {
            // heavy-tailed draws so both tails are exercised
            let u: f64 = r.random_range(-1.5..1.5);
            let x = 3.0 * u.tan();
            let v = k.value(x);
            assert!(lo <= v && v <= hi, "{k}: {v} outside [{lo}, {hi}] at {x}");
        }
    }
}

#[test]
fn gelu_is_flagged_unbounded() {
    assert_eq!(act_range(ActivationKind::Gelu).1, f64::INFINITY);
    assert!(!ActivationKind::Gelu.is_squashing());
}

proptest! {
    #[test]
    fn symmetric_tgelu_is_odd(t in 0.1f64..4.0, x in -20.0f64..20.0) {
        let k = ActivationKind::tgelu(-t, t).unwrap();
        prop_assert!((k.value(-x) + k.value(x)).abs() <= 1e-15);
        prop_assert!((k.derivative(-x) - k.derivative(x)).abs() <= 1e-15 || (x.abs() - t).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_central_difference(seed in any::<u64>(), x in -8.0f64..8.0) {
        let mut r = rng(seed);
        let k = random_activation(&mut r, false);
        if let ActivationKind::TGelu { t_l, t_r } = k {
            prop_assume!((x - t_l).abs() > 1e-4 && (x - t_r).abs() > 1e-4);
        }
        let h = 1e-6;
        let fd = (act_eval(k, x + h).unwrap() - act_eval(k, x - h).unwrap()) / (2.0 * h);
        let d = act_deriv(k, x).unwrap();
        // relative error, with unit floor where the slope crosses zero
        prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1.0), "{k} at {x}: {d} vs {fd}");
    }

    #[test]
    fn derivative_bound_holds(seed in any::<u64>(), x in -30.0f64..30.0) {
        let mut r = rng(seed);
        let k = random_activation(&mut r, false);
        prop_assert!(k.derivative(x).abs() <= k.derivative_bound() + 1e-15);
    }
}
