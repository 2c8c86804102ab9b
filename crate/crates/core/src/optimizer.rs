//! Two-track SGD: norm-clipped steps on the output block θ^vb, plain steps
//! on the inner block θ^Wu.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::network::{l2_norm, GradSplit, Layout, ParamSet};

/// Clipping constant λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub lambda: f64,
}

impl ClipConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!(
                "clipping constant must be in (0, inf), got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// Step-size sequence a(n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `a0 / (1 + n / tau)^kappa`; summable squares for `kappa in (0.5, 1]`.
    PolyDecay { a0: f64, tau: f64, kappa: f64 },
    /// Constant rate. Does not have summable squares.
    Constant { a0: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::PolyDecay {
            a0: 0.05,
            tau: 1e4,
            kappa: 0.75,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::PolyDecay { a0, tau, kappa } => {
                if !(a0 > 0.0 && a0.is_finite() && tau > 0.0 && tau.is_finite()) {
                    return Err(Error::Config(
                        "poly schedule needs a0 > 0 and tau > 0".into(),
                    ));
                }
                if !(kappa > 0.5 && kappa <= 1.0) {
                    return Err(Error::Config(format!(
                        "poly schedule needs kappa in (0.5, 1], got {kappa}"
                    )));
                }
            }
            StepSchedule::Constant { a0 } => {
                if !(a0 > 0.0 && a0.is_finite()) {
                    return Err(Error::Config("constant schedule needs a0 > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether the schedule satisfies the Robbins-Monro conditions.
    pub fn is_robbins_monro(&self) -> bool {
        matches!(self, StepSchedule::PolyDecay { .. })
    }

    pub fn value(&self, n: u64) -> f64 {
        schedule_value(*self, n)
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::PolyDecay { a0, tau, kappa } => write!(f, "poly:{a0}:{tau}:{kappa}"),
            StepSchedule::Constant { a0 } => write!(f, "const:{a0}"),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |p: &str| -> Result<f64> {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad number {p:?} in schedule {s:?}")))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        let sch = match parts.as_slice() {
            ["poly", a0, tau, kappa] => StepSchedule::PolyDecay {
                a0: num(a0)?,
                tau: num(tau)?,
                kappa: num(kappa)?,
            },
            ["const", a0] => StepSchedule::Constant { a0: num(a0)? },
            _ => return Err(Error::Config(format!("unknown schedule {s:?}"))),
        };
        sch.validate()?;
        Ok(sch)
    }
}

pub fn schedule_value(s: StepSchedule, n: u64) -> f64 {
    match s {
        StepSchedule::PolyDecay { a0, tau, kappa } => a0 / (1.0 + n as f64 / tau).powf(kappa),
        StepSchedule::Constant { a0 } => a0,
    }
}

/// Step counter, schedule and clipping rule of one training run.
///
/// `clip = None` gives unclipped SGD on both blocks, the baseline used for
/// non-squashing networks.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    n: u64,
    pub schedule: StepSchedule,
    pub clip: Option<ClipConfig>,
}

impl OptimizerState {
    pub fn new(schedule: StepSchedule, clip: Option<ClipConfig>) -> Self {
        Self {
            n: 0,
            schedule,
            clip,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.n
    }

    /// a(n) for the next step.
    pub fn rate(&self) -> f64 {
        schedule_value(self.schedule, self.n)
    }

    pub fn lambda(&self) -> f64 {
        self.clip.map_or(f64::INFINITY, |c| c.lambda)
    }
}

/// What one optimizer step applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub a_n: f64,
    /// Norm of the (clipped, averaged) direction applied to θ^vb.
    pub vb_step_norm: f64,
    /// Norm of the direction applied to θ^Wu.
    pub wu_step_norm: f64,
    /// `‖θ^vb(n+1) - θ^vb(n)‖` as realised in floating point.
    pub vb_displacement: f64,
}

fn check_finite(g: &[f64], what: &str) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(what, "gradient has non-finite entries"))
    }
}

/// Scales `g` in place to norm at most λ. Returns the resulting norm.
pub fn clip_in_place(g: &mut [f64], lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Domain(format!(
            "clipping constant must be positive, got {lambda}"
        )));
    }
    check_finite(g, "clip input")?;
    let norm = l2_norm(g);
    if norm <= lambda {
        return Ok(norm);
    }
    let orig = g.to_vec();
    let mut scale = lambda / norm;
    loop {
        for (o, v) in g.iter_mut().zip(&orig) {
            *o = v * scale;
        }
        let n = l2_norm(g);
        // rounding can leave the result one ulp above λ
        if n <= lambda {
            return Ok(n);
        }
        scale = scale.next_down();
    }
}

/// `g / max(‖g‖/λ, 1)`.
pub fn clip(g: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, lambda)?;
    Ok(out)
}

fn apply(p: &mut ParamSet, vb_dir: &[f64], wu_dir: &[f64], a: f64) -> f64 {
    let mut disp = 0.0;
    for (w, d) in p.output.iter_mut().zip(vb_dir) {
        let next = *w - a * d;
        disp += (next - *w) * (next - *w);
        *w = next;
    }
    for (w, d) in p.inner.iter_mut().zip(wu_dir) {
        *w -= a * d;
    }
    disp.sqrt()
}

/// Single-sample update.
pub fn step(p: &mut ParamSet, g: &GradSplit, st: &mut OptimizerState) -> Result<StepReport> {
    step_minibatch(p, std::slice::from_ref(g), st)
}

/// Running sums for a mini-batch step. Each sample's θ^vb gradient is
/// clipped on entry; θ^Wu gradients are summed as is.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    vb: Vec<f64>,
    wu: Vec<f64>,
    buf: Vec<f64>,
    count: usize,
}

impl BatchAccumulator {
    pub fn new(p: &ParamSet) -> Self {
        Self {
            vb: vec![0.0; p.output.len()],
            wu: vec![0.0; p.inner.len()],
            buf: vec![0.0; p.output.len()],
            count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn clear(&mut self) {
        self.vb.iter_mut().for_each(|v| *v = 0.0);
        self.wu.iter_mut().for_each(|v| *v = 0.0);
        self.count = 0;
    }

    pub fn add(&mut self, g: &GradSplit, clip: Option<ClipConfig>) -> Result<()> {
        if self.vb.len() != g.grad_vb.len() || self.wu.len() != g.grad_wu.len() {
            return Err(Error::Layout(format!(
                "gradient blocks ({}, {}) do not match parameters ({}, {})",
                g.grad_vb.len(),
                g.grad_wu.len(),
                self.vb.len(),
                self.wu.len()
            )));
        }
        check_finite(&g.grad_vb, "output-block gradient")?;
        check_finite(&g.grad_wu, "inner-block gradient")?;
        self.buf.copy_from_slice(&g.grad_vb);
        if let Some(c) = clip {
            clip_in_place(&mut self.buf, c.lambda)?;
        }
        for (acc, v) in self.vb.iter_mut().zip(&self.buf) {
            *acc += v;
        }
        for (acc, v) in self.wu.iter_mut().zip(&g.grad_wu) {
            *acc += v;
        }
        self.count += 1;
        Ok(())
    }
}

/// Applies the averaged directions held by `acc` and clears it.
pub fn step_accumulated(
    p: &mut ParamSet,
    acc: &mut BatchAccumulator,
    st: &mut OptimizerState,
) -> Result<StepReport> {
    if acc.count == 0 {
        return Err(Error::Usage("mini-batch is empty".into()));
    }
    if p.output.len() != acc.vb.len() || p.inner.len() != acc.wu.len() {
        return Err(Error::Layout(
            "accumulator does not match parameters".into(),
        ));
    }
    let inv = 1.0 / acc.count as f64;
    acc.vb.iter_mut().for_each(|v| *v *= inv);
    acc.wu.iter_mut().for_each(|v| *v *= inv);
    let a = st.rate();
    let disp = apply(p, &acc.vb, &acc.wu, a);
    st.n += 1;
    let report = StepReport {
        a_n: a,
        vb_step_norm: l2_norm(&acc.vb),
        wu_step_norm: l2_norm(&acc.wu),
        vb_displacement: disp,
    };
    acc.clear();
    Ok(report)
}

/// Mini-batch update: each sample's θ^vb gradient is clipped before
/// averaging; θ^Wu gradients are averaged as is.
pub fn step_minibatch(
    p: &mut ParamSet,
    grads: &[GradSplit],
    st: &mut OptimizerState,
) -> Result<StepReport> {
    if grads.is_empty() {
        return Err(Error::Usage("mini-batch is empty".into()));
    }
    let mut acc = BatchAccumulator::new(p);
    for g in grads {
        acc.add(g, st.clip)?;
    }
    step_accumulated(p, &mut acc, st)
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Random initialization with `‖θ(0)‖ <= λ`.
///
/// Every weight and bias is `scale * z` with `z` standard normal truncated
/// to `[-2, 2]` and `scale = 1/sqrt(fan_in)`. If the resulting vector is
/// longer than λ it is rescaled to norm `λ (1 - 1e-9)`.
pub fn init_params(layout: &Layout, lambda: f64, seed: u64) -> Result<ParamSet> {
    ClipConfig::new(lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::zeros(layout);
    let mut off = 0;
    for l in layout.hidden() {
        let scale = 1.0 / (l.in_dim as f64).sqrt();
        let n = l.out_dim * (l.in_dim + 1);
        for w in &mut p.inner[off..off + n] {
            *w = scale * truncated_normal(&mut rng);
        }
        off += n;
    }
    let scale = 1.0 / (layout.last_width() as f64).sqrt();
    for w in &mut p.output {
        *w = scale * truncated_normal(&mut rng);
    }
    let norm = (l2_norm(&p.inner).powi(2) + l2_norm(&p.output).powi(2)).sqrt();
    if norm > lambda {
        let s = lambda * (1.0 - 1e-9) / norm;
        p.inner
            .iter_mut()
            .chain(p.output.iter_mut())
            .for_each(|w| *w *= s);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::network::{param_norm, HeadKind};

    fn layout() -> Layout {
        Layout::uniform(3, &[4, 2], ActivationKind::Tanh, HeadKind::QValues { m: 2 }).unwrap()
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(&[0.3, 0.4], 1.0).unwrap(), vec![0.3, 0.4]);
        let c = clip(&[3.0, 4.0], 1.0).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip(&[0.0, 0.0, 0.0], 1.0).unwrap(), vec![0.0; 3]);
        assert!(clip(&[f64::NAN], 1.0).is_err());
        assert!(clip(&[1.0], 0.0).is_err());
    }

    #[test]
    fn zero_gradient_step() {
        let l = layout();
        let mut p = init_params(&l, 1.0, 3).unwrap();
        let before = p.clone();
        let mut st = OptimizerState::new(
            StepSchedule::Constant { a0: 0.1 },
            Some(ClipConfig::default()),
        );
        step(&mut p, &GradSplit::zeros(&l), &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn clip_halves_double_norm_gradient() {
        let l = layout();
        let mut p = ParamSet::zeros(&l);
        let mut g = GradSplit::zeros(&l);
        let lambda = 0.7;
        g.grad_vb[0] = 2.0 * lambda;
        let mut st = OptimizerState::new(
            StepSchedule::Constant { a0: 0.1 },
            Some(ClipConfig::new(lambda).unwrap()),
        );
        let rep = step(&mut p, &g, &mut st).unwrap();
        assert!((rep.vb_displacement - 0.1 * lambda).abs() < 1e-15);
    }

    #[test]
    fn single_step_hand_arithmetic() {
        let l = Layout::uniform(1, &[1], ActivationKind::Tanh, HeadKind::Scalar).unwrap();
        let mut p = ParamSet::zeros(&l);
        let g = GradSplit {
            grad_vb: vec![3.0, 4.0],
            grad_wu: vec![1.0, -2.0],
        };
        let mut st = OptimizerState::new(
            StepSchedule::Constant { a0: 0.5 },
            Some(ClipConfig::new(1.0).unwrap()),
        );
        step(&mut p, &g, &mut st).unwrap();
        assert!((p.output[0] + 0.3).abs() < 1e-15 && (p.output[1] + 0.4).abs() < 1e-15);
        assert_eq!(p.inner, vec![-0.5, 1.0]);
    }

    #[test]
    fn minibatch_cases() {
        let l = layout();
        let mut st = OptimizerState::new(
            StepSchedule::Constant { a0: 0.2 },
            Some(ClipConfig::default()),
        );
        assert!(step_minibatch(&mut ParamSet::zeros(&l), &[], &mut st).is_err());

        let mut g = GradSplit::zeros(&l);
        g.grad_vb
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 - 3.0);
        g.grad_wu
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.01 * i as f64);
        let mut a = init_params(&l, 1.0, 1).unwrap();
        let mut b = a.clone();
        let mut sa = st.clone();
        step(&mut a, &g, &mut sa).unwrap();
        step_minibatch(&mut b, std::slice::from_ref(&g), &mut st).unwrap();
        assert_eq!(a, b);

        let mut neg = g.clone();
        neg.scale(-1.0);
        let mut p = ParamSet::zeros(&l);
        let mut st = OptimizerState::new(
            StepSchedule::Constant { a0: 0.2 },
            Some(ClipConfig::default()),
        );
        let rep = step_minibatch(&mut p, &[g, neg], &mut st).unwrap();
        assert_eq!(rep.vb_displacement, 0.0);
        assert!(p.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::PolyDecay {
            a0: 0.1,
            tau: 1000.0,
            kappa: 0.75,
        };
        assert_eq!(schedule_value(s, 0), 0.1);
        assert!((schedule_value(s, 1000) - 0.1 / 2f64.powf(0.75)).abs() < 1e-15);
        assert!((schedule_value(s, 1000) - 0.05946).abs() < 1e-5);
        let c = StepSchedule::Constant { a0: 0.01 };
        assert_eq!(schedule_value(c, 0), 0.01);
        assert_eq!(schedule_value(c, 123_456_789), 0.01);
        assert!(!c.is_robbins_monro());
        assert!("poly:0.1:10:0.4".parse::<StepSchedule>().is_err());
        assert_eq!(
            "poly:0.05:10000:0.75".parse::<StepSchedule>().unwrap(),
            StepSchedule::default()
        );
        assert_eq!("const:0.01".parse::<StepSchedule>().unwrap(), c);
    }

    #[test]
    fn init_is_bounded_truncated_and_deterministic() {
        let l = layout();
        for seed in 0..20 {
            for lambda in [0.1, 1.0, 50.0] {
                let p = init_params(&l, lambda, seed).unwrap();
                assert!(param_norm(&p).total <= lambda);
                assert_eq!(p, init_params(&l, lambda, seed).unwrap());
            }
            let p = init_params(&l, 1e6, seed).unwrap();
            let mut off = 0;
            for spec in l.hidden() {
                let bound = 2.0 / (spec.in_dim as f64).sqrt();
                let n = spec.out_dim * (spec.in_dim + 1);
                assert!(p.inner[off..off + n].iter().all(|w| w.abs() <= bound));
                off += n;
            }
            let bound = 2.0 / (l.last_width() as f64).sqrt();
            assert!(p.output.iter().all(|w| w.abs() <= bound));
        }
        assert_ne!(
            init_params(&l, 1.0, 0).unwrap(),
            init_params(&l, 1.0, 1).unwrap()
        );
    }
}
