#![allow(dead_code)]

use clipnet::{ActivationKind, HeadKind, Layout, Mlp, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_activation<R: Rng>(r: &mut R, squashing_only: bool) -> ActivationKind {
    let n = if squashing_only { 4 } else { 5 };
    match r.random_range(0..n) {
        0 => ActivationKind::Sigmoid,
        1 => ActivationKind::Tanh,
        2 => ActivationKind::scaled_tanh(r.random_range(1.0..3.0)).unwrap(),
        3 => ActivationKind::tgelu(r.random_range(-3.0..-0.5), r.random_range(0.5..3.0)).unwrap(),
        _ => ActivationKind::Gelu,
    }
}

/// Random architecture: 1..=max_depth hidden layers of width 1..=8.
pub fn random_layout<R: Rng>(
    r: &mut R,
    head: HeadKind,
    max_depth: usize,
    squashing_only: bool,
) -> Layout {
    let d = r.random_range(1..=6);
    let depth = r.random_range(1..=max_depth);
    let widths: Vec<usize> = (0..depth).map(|_| r.random_range(1..=8)).collect();
    let acts: Vec<ActivationKind> = (0..depth)
        .map(|_| random_activation(r, squashing_only))
        .collect();
    Layout::new(d, &widths, &acts, head).unwrap()
}

pub fn gaussian_vec<R: Rng>(r: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * r.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn random_net<R: Rng>(r: &mut R, layout: Layout, scale: f64) -> Mlp {
    let p = ParamSet {
        inner: gaussian_vec(r, layout.inner_len(), scale),
        output: gaussian_vec(r, layout.output_len(), scale),
    };
    Mlp::new(layout, p).unwrap()
}

pub fn uniform_vec<R: Rng>(r: &mut R, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-bound..=bound)).collect()
}

/// True when some tGELU pre-activation sits within `margin` of a kink.
pub fn near_kink(net: &Mlp, x: &[f64], margin: f64) -> bool {
    let (_, cache) = net.forward(x).unwrap();
    cache
        .pre_activations()
        .iter()
        .zip(net.layout().hidden())
        .any(|(pre, l)| match l.activation {
            ActivationKind::TGelu { t_l, t_r } => pre
                .iter()
                .any(|z| (z - t_l).abs() < margin || (z - t_r).abs() < margin),
            _ => false,
        })
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

/// Central differences of `loss` with respect to every parameter,
/// returned as (output block, inner block).
pub fn finite_diff(net: &Mlp, h: f64, loss: impl Fn(&Mlp) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut work = net.clone();
    let mut vb = Vec::with_capacity(net.params.output.len());
    for i in 0..net.params.output.len() {
        let v = net.params.output[i];
        work.params.output[i] = v + h;
        let up = loss(&work);
        work.params.output[i] = v - h;
        let down = loss(&work);
        work.params.output[i] = v;
        vb.push((up - down) / (2.0 * h));
    }
    let mut wu = Vec::with_capacity(net.params.inner.len());
    for i in 0..net.params.inner.len() {
        let v = net.params.inner[i];
        work.params.inner[i] = v + h;
        let up = loss(&work);
        work.params.inner[i] = v - h;
        let down = loss(&work);
        work.params.inner[i] = v;
        wu.push((up - down) / (2.0 * h));
    }
    (vb, wu)
}
