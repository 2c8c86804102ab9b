//! Fixtures shared by the kernel benchmarks.

use clipnet::rl::{Action, CartPoleState, Transition};
use clipnet::{init_params, ActivationKind, HeadKind, Layout, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The desk-scale cart-pole Q-network: 4 inputs, tGELU hidden layers, 3 actions.
pub fn q_net(widths: &[usize]) -> Mlp {
    let act = ActivationKind::tgelu(-2.0, 2.0).expect("valid thresholds");
    let layout = Layout::uniform(4, widths, act, HeadKind::QValues { m: 3 }).expect("valid layout");
    let params = init_params(&layout, 1.0, 0).expect("finite init");
    Mlp::new(layout, params).expect("matching params")
}

pub fn random_state<R: Rng>(rng: &mut R) -> CartPoleState {
    CartPoleState {
        x: rng.random_range(-2.4..2.4),
        x_dot: rng.random_range(-2.0..2.0),
        theta: rng.random_range(-0.2..0.2),
        theta_dot: rng.random_range(-2.0..2.0),
    }
}

/// `n` random transitions, one in ten terminal.
pub fn transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Transition {
            s: random_state(&mut rng),
            a: Action::ALL[rng.random_range(0..3)],
            r: 1.0,
            s_next: random_state(&mut rng),
            done: i % 10 == 9,
        })
        .collect()
}

pub fn inputs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}
