//! Runtime stability telemetry.
//!
//! [`SubmartingaleTracker`] maintains the two envelope processes
//!
//! ```text
//!   Ψ^vb(n) = ‖θ^vb(0)‖ + Σ_{m<n} a(m) ‖g(m)‖
//!   Ψ^Wu(n) = ‖θ^Wu(0)‖ + Σ_{m<n} a(m) K (1 + ‖θ^vb(m)‖²)
//! ```
//!
//! where `g(m)` is the clipped output-block direction actually applied, and
//! the quadratic variation `Σ a(m)² K² (1 + ‖θ^vb(m)‖²)²`. At every step it
//! checks that each envelope dominates the running supremum of its block
//! norm. A violation is an optimizer bug and is reported as
//! [`Error::InvariantBreach`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::GradMode;
use crate::network::{param_norm, Layout, ParamSet};
use crate::optimizer::StepReport;

/// Absolute slack for floating-point comparisons in the invariants.
pub const ARITH_SLACK: f64 = 1e-12;

fn slack(scale: f64) -> f64 {
    ARITH_SLACK * scale.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleTracker {
    pub psi_vb: f64,
    /// `None` when no growth constant is available (non-squashing nets).
    pub psi_wu: Option<f64>,
    pub qv: f64,
    pub n: u64,
    pub sup_norm_vb: f64,
    pub sup_norm_wu: f64,
    pub k: Option<f64>,
    /// Running `Σ a(m)²`.
    pub s: f64,
    /// Clipping constant, `+inf` for unclipped runs.
    pub lambda: f64,
}

impl SubmartingaleTracker {
    pub fn new(lambda: f64, k: Option<f64>, vb0: f64, wu0: f64) -> Self {
        Self {
            psi_vb: vb0,
            psi_wu: k.map(|_| wu0),
            qv: 0.0,
            n: 0,
            sup_norm_vb: vb0,
            sup_norm_wu: wu0,
            k,
            s: 0.0,
            lambda,
        }
    }

    /// Adds `a_n ‖g‖` to Ψ^vb and folds `vb_norm` (the post-step norm) into
    /// the running supremum.
    pub fn update_psi_vb(&mut self, a_n: f64, clipped_grad_norm: f64, vb_norm: f64) -> Result<()> {
        if clipped_grad_norm > self.lambda + ARITH_SLACK {
            return Err(Error::InvariantBreach(format!(
                "step {}: applied output-block gradient norm {clipped_grad_norm} exceeds lambda {}",
                self.n, self.lambda
            )));
        }
        self.psi_vb += a_n * clipped_grad_norm;
        self.sup_norm_vb = self.sup_norm_vb.max(vb_norm);
        if self.psi_vb + slack(self.psi_vb) < self.sup_norm_vb {
            return Err(Error::InvariantBreach(format!(
                "step {}: psi_vb {} below sup ‖θ^vb‖ {}",
                self.n, self.psi_vb, self.sup_norm_vb
            )));
        }
        Ok(())
    }

    /// Adds `a_n K (1 + vb_norm²)` to Ψ^Wu, where `vb_norm` is the pre-step
    /// output-block norm; `wu_norm` is the post-step inner-block norm.
    pub fn update_psi_wu(&mut self, a_n: f64, vb_norm: f64, wu_norm: f64) -> Result<()> {
        self.sup_norm_wu = self.sup_norm_wu.max(wu_norm);
        let (Some(k), Some(psi)) = (self.k, self.psi_wu.as_mut()) else {
            return Ok(());
        };
        let growth = k * (1.0 + vb_norm * vb_norm);
        *psi += a_n * growth;
        self.qv += a_n * a_n * growth * growth;
        if *psi + slack(*psi) < self.sup_norm_wu {
            return Err(Error::InvariantBreach(format!(
                "step {}: psi_wu {} below sup ‖θ^Wu‖ {}",
                self.n, *psi, self.sup_norm_wu
            )));
        }
        Ok(())
    }

    /// Records one optimizer step: both envelopes, `S` and the step count.
    pub fn observe(
        &mut self,
        a_n: f64,
        clipped_grad_norm: f64,
        vb_before: f64,
        vb_after: f64,
        wu_after: f64,
    ) -> Result<()> {
        self.update_psi_vb(a_n, clipped_grad_norm, vb_after)?;
        self.update_psi_wu(a_n, vb_before, wu_after)?;
        self.s += a_n * a_n;
        self.n += 1;
        Ok(())
    }
}

/// `exp(-x² / (λ² S))`, the tail bound on `P(Ψ^vb(n) >= x)`.
pub fn ha_tail_bound(x: f64, lambda: f64, s: f64) -> f64 {
    let c = lambda * lambda * s;
    if c == 0.0 {
        // limit as S -> 0: no room to deviate
        return if x == 0.0 { 1.0 } else { 0.0 };
    }
    (-(x * x) / c).exp()
}

/// `B(k) = k ∫_0^∞ x^(k-1) exp(-x²/(λ² S)) dx` by adaptive quadrature.
pub fn moment_bound_b(k: u32, lambda: f64, s: f64) -> f64 {
    assert!(k >= 1, "moment order starts at 1");
    let c = lambda * lambda * s;
    // x = sqrt(c) t turns the integral into c^(k/2) ∫ t^(k-1) e^(-t²) dt
    let km1 = (k - 1) as i32;
    let f = |t: f64| t.powi(km1) * (-t * t).exp();
    let peak = (0.5 * (k as f64 - 1.0)).sqrt();
    let upper = peak + 40.0_f64.sqrt() + 4.0;
    let integral = adaptive_simpson(&f, 0.0, upper, 1e-15, 50);
    k as f64 * c.powf(0.5 * k as f64) * integral
}

/// Closed form `(k/2) (λ² S)^(k/2) Γ(k/2)` of [`moment_bound_b`].
pub fn moment_bound_closed_form(k: u32, lambda: f64, s: f64) -> f64 {
    let c = lambda * lambda * s;
    let h = 0.5 * k as f64;
    h * c.powf(h) * libm::tgamma(h)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    // split first so the recursion starts from a resolved grid
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (flo, fhi) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(f, lo, flo, hi, fhi);
            rec(
                f,
                lo,
                flo,
                hi,
                fhi,
                m,
                fm,
                whole,
                tol / pieces as f64,
                depth,
            )
        })
        .sum()
}

/// What the growth constant has to cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetBound {
    /// Squared error with `|y| <= y_max`.
    Regression { y_max: f64 },
    /// Softmax cross-entropy (logit error norm at most sqrt 2).
    CrossEntropy,
    /// Sample Bellman loss with `|r| <= r_max` and a target bootstrapped
    /// from the same network.
    Bellman {
        gamma: f64,
        r_max: f64,
        mode: GradMode,
    },
}

/// Growth constant K with, for inputs in `[-x_max, x_max]^d`,
///
/// * `|f(x, θ)| <= K (1 + ‖θ^vb‖)`
/// * `‖∇_vb ℓ‖ <= K (1 + ‖θ^vb‖)`
/// * `‖∇_Wu ℓ‖ <= K (1 + ‖θ^vb‖²)`
///
/// With `R = sqrt(h s_max² + 1)` (bound on `‖(σ, 1)‖` for the last hidden
/// layer of width `h`) and `X = max_l g_l sqrt(1 + d_l x_l²)` over hidden
/// layers (fan-in `d_l`, input bound `x_l`, derivative bound `g_l`):
///
/// ```text
///   regression     K = 2 (R + y_max) max(R, X)
///   cross-entropy  K = sqrt 2 max(R, X)
///   bellman        K = 2 ((1 + γ) R + r_max) max(R, X) [· sqrt M for the summed-row variant]
/// ```
///
/// For one hidden layer the three inequalities follow from Cauchy-Schwarz.
/// With more hidden layers the inner-block inequality is not implied (the
/// gradient of early layers also scales with later inner weights); the
/// constant is then a heuristic and the tracker checks dominance at runtime.
pub fn growth_constant_k(layout: &Layout, x_max: f64, target: TargetBound) -> Result<f64> {
    if !layout.all_squashing() {
        return Err(Error::Unsupported(
            "growth constant needs squashing activations on every hidden layer".into(),
        ));
    }
    if !(x_max.is_finite() && x_max >= 0.0) {
        return Err(Error::Domain(format!(
            "x_max must be finite and non-negative, got {x_max}"
        )));
    }
    let last = layout.hidden().last().expect("layout has hidden layers");
    let s_last = last.activation.range().abs_max();
    let r = ((last.out_dim as f64) * s_last * s_last + 1.0).sqrt();
    let mut x_bound = x_max;
    let mut input_factor: f64 = 0.0;
    for l in layout.hidden() {
        let g = l.activation.derivative_bound();
        input_factor = input_factor.max(g * (1.0 + l.in_dim as f64 * x_bound * x_bound).sqrt());
        x_bound = l.activation.range().abs_max();
    }
    let q = r.max(input_factor);
    let k = match target {
        TargetBound::Regression { y_max } => 2.0 * (r + y_max.abs()) * q,
        TargetBound::CrossEntropy => std::f64::consts::SQRT_2 * q,
        TargetBound::Bellman { gamma, r_max, mode } => {
            let rows = match mode {
                GradMode::Standard => 1.0,
                GradMode::Alternate => (layout.head_width() as f64).sqrt(),
            };
            2.0 * ((1.0 + gamma) * r + r_max.abs()) * q * rows
        }
    };
    Ok(k)
}

/// `sqrt(2 (h s_max² + 1))`, the bound on the cross-entropy output-block
/// gradient for a squashing last hidden layer of width `h`.
pub fn ce_output_grad_bound(layout: &Layout) -> Result<f64> {
    let last = layout.hidden().last().expect("layout has hidden layers");
    if !last.activation.is_squashing() {
        return Err(Error::Unsupported(
            "output gradient bound needs a squashing last layer".into(),
        ));
    }
    let s = last.activation.range().abs_max();
    Ok((2.0 * ((last.out_dim as f64) * s * s + 1.0)).sqrt())
}

/// Empirical k-th moment of the output-block sup-norm paired with `B(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub k: u32,
    pub empirical: f64,
    pub bound: f64,
    pub runs: usize,
}

/// Averages `(sup_m ‖θ^vb(m)‖)^k` over runs. Each trace is the sequence
/// of observed output-block norms (or running suprema) of one run.
pub fn empirical_moments(traces: &[Vec<f64>], k: u32, lambda: f64, s: f64) -> Result<MomentReport> {
    if traces.is_empty() {
        return Err(Error::Usage(
            "moment estimate needs at least one run".into(),
        ));
    }
    let sups: Vec<f64> = traces
        .iter()
        .map(|t| t.iter().cloned().fold(0.0, f64::max))
        .collect();
    Ok(moments_from_sups(&sups, k, lambda, s))
}

pub fn moments_from_sups(sups: &[f64], k: u32, lambda: f64, s: f64) -> MomentReport {
    let empirical = sups.iter().map(|v| v.powi(k as i32)).sum::<f64>() / sups.len() as f64;
    MomentReport {
        k,
        empirical,
        bound: moment_bound_b(k, lambda, s),
        runs: sups.len(),
    }
}

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Half-width of a 99% binomial interval for a proportion whose true value
/// is at most `p_max`: `z sqrt(p(1-p)/n)` at the worst admissible `p`.
pub fn binomial_half_width(p_max: f64, n: usize) -> f64 {
    let p = p_max.clamp(0.0, 0.5);
    Z99 * (p * (1.0 - p) / n as f64).sqrt()
}

/// One row of the cross-seed tail-frequency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub multiple: f64,
    pub x: f64,
    pub frequency: f64,
    pub bound: f64,
    pub half_width: f64,
    pub pass: bool,
}

/// Compares the empirical frequency of `{Ψ^vb(N) >= x}` with the tail bound
/// at `x = multiple · λ sqrt(S)` for each multiple.
pub fn tail_frequency_check(
    psi_final: &[f64],
    lambda: f64,
    s: f64,
    multiples: &[f64],
) -> Vec<TailCheck> {
    let n = psi_final.len();
    multiples
        .iter()
        .map(|&m| {
            let x = m * lambda * s.sqrt();
            let hits = psi_final.iter().filter(|&&p| p >= x).count();
            let frequency = hits as f64 / n.max(1) as f64;
            let bound = ha_tail_bound(x, lambda, s);
            let half_width = binomial_half_width(bound, n.max(1));
            TailCheck {
                multiple: m,
                x,
                frequency,
                bound,
                half_width,
                pass: frequency <= bound + half_width,
            }
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One telemetry record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: u64,
    pub a_n: f64,
    pub norm_vb: f64,
    pub norm_wu: f64,
    pub psi_vb: f64,
    pub psi_wu: Option<f64>,
    pub qv: f64,
    pub grad_vb_norm_clipped: f64,
    pub grad_wu_norm: f64,
    pub loss: f64,
}

/// Feeds optimizer steps into a tracker and keeps every `stride`-th row.
///
/// Besides the envelope checks it asserts the per-step output-block
/// displacement bound `‖θ^vb(n+1) - θ^vb(n)‖ <= a(n) λ`.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub tracker: SubmartingaleTracker,
    pub rows: Vec<TelemetryRow>,
    stride: u64,
}

impl Recorder {
    pub fn new(tracker: SubmartingaleTracker, stride: u64) -> Self {
        Self {
            tracker,
            rows: Vec::new(),
            stride: stride.max(1),
        }
    }

    pub fn record(
        &mut self,
        vb_before: f64,
        report: &StepReport,
        after: &ParamSet,
        loss: f64,
    ) -> Result<()> {
        let step = self.tracker.n;
        let bound = report.a_n * self.tracker.lambda;
        if report.vb_displacement > bound + ARITH_SLACK {
            return Err(Error::InvariantBreach(format!(
                "step {step}: output-block displacement {} exceeds a(n) lambda = {bound}",
                report.vb_displacement
            )));
        }
        let norms = param_norm(after);
        self.tracker.observe(
            report.a_n,
            report.vb_step_norm,
            vb_before,
            norms.vb,
            norms.wu,
        )?;
        if step.is_multiple_of(self.stride) {
            self.rows.push(TelemetryRow {
                step,
                a_n: report.a_n,
                norm_vb: norms.vb,
                norm_wu: norms.wu,
                psi_vb: self.tracker.psi_vb,
                psi_wu: self.tracker.psi_wu,
                qv: self.tracker.qv,
                grad_vb_norm_clipped: report.vb_step_norm,
                grad_wu_norm: report.wu_step_norm,
                loss,
            });
        }
        Ok(())
    }
}
