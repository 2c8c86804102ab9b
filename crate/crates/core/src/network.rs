//! Dense feedforward networks with an explicit inner/output parameter split.
//!
//! Parameters live in two flat buffers. `inner` (θ^Wu) holds every hidden
//! layer, `output` (θ^vb) holds the head. Within each block the order is
//! layer by layer, and for a layer: the weight matrix row-major
//! `(out_dim, in_dim)` followed by its bias vector. For a shallow regression
//! net that gives `inner = (W_11..W_hd, u_1..u_h)` and
//! `output = (v_1..v_h, b)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::error::{Error, Result};

/// One hidden layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationKind,
}

/// Output head of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Regression output `f(x, θ) = <σ, v> + b`.
    Scalar,
    /// Softmax over `k >= 2` classes.
    Softmax { k: usize },
    /// One Q-value per action, `M >= 1`.
    QValues { m: usize },
}

impl HeadKind {
    /// Width of the linear head.
    pub fn width(&self) -> usize {
        match *self {
            HeadKind::Scalar => 1,
            HeadKind::Softmax { k } => k,
            HeadKind::QValues { m } => m,
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Scalar => write!(f, "scalar"),
            HeadKind::Softmax { k } => write!(f, "softmax:{k}"),
            HeadKind::QValues { m } => write!(f, "q:{m}"),
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown head tag {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let head = match parts.as_slice() {
            ["scalar"] => HeadKind::Scalar,
            ["softmax", k] => HeadKind::Softmax {
                k: k.parse().map_err(|_| bad())?,
            },
            ["q", m] => HeadKind::QValues {
                m: m.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        match head {
            HeadKind::Softmax { k } if k < 2 => Err(Error::Config("softmax needs k >= 2".into())),
            HeadKind::QValues { m } if m < 1 => Err(Error::Config("q head needs m >= 1".into())),
            h => Ok(h),
        }
    }
}

/// Architecture of an [`Mlp`]: hidden layers plus head.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    input_dim: usize,
    hidden: Vec<LayerSpec>,
    head: HeadKind,
}

impl Layout {
    /// Builds a layout from hidden widths and one activation per layer.
    pub fn new(
        input_dim: usize,
        widths: &[usize],
        activations: &[ActivationKind],
        head: HeadKind,
    ) -> Result<Self> {
        if widths.len() != activations.len() {
            return Err(Error::Layout(format!(
                "{} hidden widths but {} activations",
                widths.len(),
                activations.len()
            )));
        }
        let mut hidden = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for (&w, &activation) in widths.iter().zip(activations) {
            hidden.push(LayerSpec {
                in_dim: prev,
                out_dim: w,
                activation,
            });
            prev = w;
        }
        Self::from_layers(input_dim, hidden, head)
    }

    /// Same activation on every hidden layer.
    pub fn uniform(
        input_dim: usize,
        widths: &[usize],
        activation: ActivationKind,
        head: HeadKind,
    ) -> Result<Self> {
        Self::new(input_dim, widths, &vec![activation; widths.len()], head)
    }

    pub fn from_layers(input_dim: usize, hidden: Vec<LayerSpec>, head: HeadKind) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Layout("input dimension must be positive".into()));
        }
        if hidden.is_empty() {
            return Err(Error::Layout(
                "at least one hidden layer is required (inner block would be empty)".into(),
            ));
        }
        let mut prev = input_dim;
        for (i, l) in hidden.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Layout(format!(
                    "hidden layer {i} has a zero dimension"
                )));
            }
            if l.in_dim != prev {
                return Err(Error::Layout(format!(
                    "hidden layer {i} expects {} inputs but receives {prev}",
                    l.in_dim
                )));
            }
            l.activation.validate()?;
            prev = l.out_dim;
        }
        match head {
            HeadKind::Softmax { k } if k < 2 => {
                return Err(Error::Layout("softmax head needs k >= 2".into()))
            }
            HeadKind::QValues { m: 0 } => {
                return Err(Error::Layout("q head needs at least one action".into()))
            }
            _ => {}
        }
        Ok(Self {
            input_dim,
            hidden,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[LayerSpec] {
        &self.hidden
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    /// Width of the last hidden layer (the head's fan-in).
    pub fn last_width(&self) -> usize {
        self.hidden.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn head_width(&self) -> usize {
        self.head.width()
    }

    pub fn inner_len(&self) -> usize {
        self.hidden.iter().map(|l| l.out_dim * (l.in_dim + 1)).sum()
    }

    pub fn output_len(&self) -> usize {
        self.head_width() * (self.last_width() + 1)
    }

    /// Offset of hidden layer `i` inside the inner block.
    fn inner_offset(&self, i: usize) -> usize {
        self.hidden[..i]
            .iter()
            .map(|l| l.out_dim * (l.in_dim + 1))
            .sum()
    }

    /// Whether every hidden activation is squashing.
    pub fn all_squashing(&self) -> bool {
        self.hidden.iter().all(|l| l.activation.is_squashing())
    }
}

/// Network weights θ = (θ^Wu, θ^vb).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// θ^Wu, all hidden layers.
    pub inner: Vec<f64>,
    /// θ^vb, the head.
    pub output: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            inner: vec![0.0; layout.inner_len()],
            output: vec![0.0; layout.output_len()],
        }
    }

    pub fn matches(&self, layout: &Layout) -> bool {
        self.inner.len() == layout.inner_len() && self.output.len() == layout.output_len()
    }

    pub fn all_finite(&self) -> bool {
        self.inner.iter().chain(&self.output).all(|v| v.is_finite())
    }
}

/// Euclidean norms of the parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamNorms {
    pub total: f64,
    pub vb: f64,
    pub wu: f64,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norms of θ, θ^vb and θ^Wu.
pub fn param_norm(p: &ParamSet) -> ParamNorms {
    let vb = l2_norm(&p.output);
    let wu = l2_norm(&p.inner);
    ParamNorms {
        total: (vb * vb + wu * wu).sqrt(),
        vb,
        wu,
    }
}

/// Concatenates `inner` then `output`.
pub fn flatten(p: &ParamSet) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.inner.len() + p.output.len());
    v.extend_from_slice(&p.inner);
    v.extend_from_slice(&p.output);
    v
}

/// Inverse of [`flatten`].
pub fn load(layout: &Layout, v: &[f64]) -> Result<ParamSet> {
    let (ni, no) = (layout.inner_len(), layout.output_len());
    if v.len() != ni + no {
        return Err(Error::Layout(format!(
            "expected {} parameters, got {}",
            ni + no,
            v.len()
        )));
    }
    Ok(ParamSet {
        inner: v[..ni].to_vec(),
        output: v[ni..].to_vec(),
    })
}

/// Loss gradient split along the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSplit {
    /// Aligned with [`ParamSet::output`].
    pub grad_vb: Vec<f64>,
    /// Aligned with [`ParamSet::inner`].
    pub grad_wu: Vec<f64>,
}

impl GradSplit {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            grad_vb: vec![0.0; layout.output_len()],
            grad_wu: vec![0.0; layout.inner_len()],
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.grad_vb.iter_mut().for_each(|g| *g *= c);
        self.grad_wu.iter_mut().for_each(|g| *g *= c);
    }

    pub fn all_finite(&self) -> bool {
        self.grad_vb
            .iter()
            .chain(&self.grad_wu)
            .all(|v| v.is_finite())
    }
}

/// Head output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Scalar(f64),
    Probabilities(Vec<f64>),
    QValues(Vec<f64>),
}

impl HeadOutput {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            HeadOutput::Scalar(v) => std::slice::from_ref(v),
            HeadOutput::Probabilities(p) => p,
            HeadOutput::QValues(q) => q,
        }
    }
}

/// Per-call activations retained for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Post-activations σ^op per hidden layer.
    post: Vec<Vec<f64>>,
    /// σ'(σ^ip) per hidden layer.
    slope: Vec<Vec<f64>>,
    /// Pre-activations σ^ip per hidden layer.
    pre: Vec<Vec<f64>>,
    /// Linear head output (logits for softmax).
    logits: Vec<f64>,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[Vec<f64>] {
        &self.post
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|c| (c - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|z| *z /= sum);
    out
}

/// Network: architecture plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layout: Layout,
    pub params: ParamSet,
}

impl Mlp {
    pub fn new(layout: Layout, params: ParamSet) -> Result<Self> {
        if !params.matches(&layout) {
            return Err(Error::Layout(format!(
                "parameter blocks ({}, {}) do not fit layout ({}, {})",
                params.inner.len(),
                params.output.len(),
                layout.inner_len(),
                layout.output_len()
            )));
        }
        Ok(Self { layout, params })
    }

    pub fn zeros(layout: Layout) -> Self {
        let params = ParamSet::zeros(&layout);
        Self { layout, params }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} components, network expects {}",
                x.len(),
                self.layout.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "input",
                "input vector has non-finite entries",
            ));
        }
        Ok(())
    }

    /// Evaluates the linear head without keeping a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for (i, l) in self.layout.hidden.iter().enumerate() {
            let off = self.layout.inner_offset(i);
            let w = &self.params.inner[off..off + l.out_dim * l.in_dim];
            let b =
                &self.params.inner[off + l.out_dim * l.in_dim..off + l.out_dim * (l.in_dim + 1)];
            let act = l.activation.prepare();
            let mut next = Vec::with_capacity(l.out_dim);
            for r in 0..l.out_dim {
                let z = dot(&w[r * l.in_dim..(r + 1) * l.in_dim], &cur) + b[r];
                next.push(act.value(z));
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("hidden layer {i}"),
                    "activation overflow",
                ));
            }
            cur = next;
        }
        let logits = self.head_linear(&cur);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("output layer", "head output overflow"));
        }
        Ok(logits)
    }

    /// Q-values (or the scalar output) for `x`.
    pub fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }

    fn head_linear(&self, h: &[f64]) -> Vec<f64> {
        let hw = h.len();
        let out = &self.params.output;
        let m = self.layout.head_width();
        let bias = &out[m * hw..];
        (0..m)
            .map(|i| dot(&out[i * hw..(i + 1) * hw], h) + bias[i])
            .collect()
    }

    /// Full forward pass returning the head output and the backprop cache.
    pub fn forward(&self, x: &[f64]) -> Result<(HeadOutput, ForwardCache)> {
        self.check_input(x)?;
        let n = self.layout.hidden.len();
        let mut cache = ForwardCache {
            input: x.to_vec(),
            post: Vec::with_capacity(n),
            slope: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            logits: Vec::new(),
        };
        for (i, l) in self.layout.hidden.iter().enumerate() {
            let off = self.layout.inner_offset(i);
            let w = &self.params.inner[off..off + l.out_dim * l.in_dim];
            let b =
                &self.params.inner[off + l.out_dim * l.in_dim..off + l.out_dim * (l.in_dim + 1)];
            let src = if i == 0 {
                &cache.input
            } else {
                &cache.post[i - 1]
            };
            let mut pre = Vec::with_capacity(l.out_dim);
            let mut post = Vec::with_capacity(l.out_dim);
            let mut slope = Vec::with_capacity(l.out_dim);
            let act = l.activation.prepare();
            for r in 0..l.out_dim {
                let z = dot(&w[r * l.in_dim..(r + 1) * l.in_dim], src) + b[r];
                let (s, g) = act.value_and_derivative(z);
                pre.push(z);
                post.push(s);
                slope.push(g);
            }
            if pre.iter().chain(&post).any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("hidden layer {i}"),
                    "activation overflow",
                ));
            }
            cache.pre.push(pre);
            cache.post.push(post);
            cache.slope.push(slope);
        }
        cache.logits = self.head_linear(cache.post.last().expect("layout has hidden layers"));
        if cache.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("output layer", "head output overflow"));
        }
        let out = match self.layout.head {
            HeadKind::Scalar => HeadOutput::Scalar(cache.logits[0]),
            HeadKind::Softmax { .. } => HeadOutput::Probabilities(softmax(&cache.logits)),
            HeadKind::QValues { .. } => HeadOutput::QValues(cache.logits.clone()),
        };
        Ok((out, cache))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.input.len() == self.layout.input_dim
            && cache.post.len() == self.layout.hidden.len()
            && cache
                .post
                .iter()
                .zip(&self.layout.hidden)
                .all(|(p, l)| p.len() == l.out_dim)
            && cache.logits.len() == self.layout.head_width();
        if ok {
            Ok(())
        } else {
            Err(Error::Usage(
                "forward cache does not belong to this network; run forward first".into(),
            ))
        }
    }

    /// Gradient of `<head_grad, logits>` with respect to θ.
    ///
    /// `head_grad` is taken with respect to the linear head output (the
    /// logits for a softmax head).
    pub fn backprop(&self, cache: &ForwardCache, head_grad: &[f64]) -> Result<GradSplit> {
        let mut g = GradSplit::zeros(&self.layout);
        self.backprop_into(cache, head_grad, head_grad, &mut g)?;
        Ok(g)
    }

    /// Backprop with separate head gradients for the output block and for
    /// the signal sent into the hidden layers. Ordinary reverse mode passes
    /// the same vector twice; the printed-formula loss variants do not.
    /// Accumulates into `g`.
    pub fn backprop_into(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        inner_grad: &[f64],
        g: &mut GradSplit,
    ) -> Result<()> {
        self.check_cache(cache)?;
        let m = self.layout.head_width();
        if out_grad.len() != m || inner_grad.len() != m {
            return Err(Error::Dimension(format!(
                "head gradient has length {} / {}, head width is {m}",
                out_grad.len(),
                inner_grad.len()
            )));
        }
        if g.grad_vb.len() != self.layout.output_len() || g.grad_wu.len() != self.layout.inner_len()
        {
            return Err(Error::Layout(
                "gradient buffer does not match layout".into(),
            ));
        }
        let h = cache.post.last().expect("layout has hidden layers");
        let hw = h.len();
        let out = &self.params.output;
        for (i, &d) in out_grad.iter().enumerate().take(m) {
            if d != 0.0 {
                for (gj, hj) in g.grad_vb[i * hw..(i + 1) * hw].iter_mut().zip(h) {
                    *gj += d * hj;
                }
                g.grad_vb[m * hw + i] += d;
            }
        }
        // delta w.r.t. the last hidden post-activation
        let mut delta = vec![0.0; hw];
        for i in 0..m {
            let d = inner_grad[i];
            if d != 0.0 {
                for (dj, vij) in delta.iter_mut().zip(&out[i * hw..(i + 1) * hw]) {
                    *dj += d * vij;
                }
            }
        }
        for li in (0..self.layout.hidden.len()).rev() {
            let l = &self.layout.hidden[li];
            for (d, s) in delta.iter_mut().zip(&cache.slope[li]) {
                *d *= s;
            }
            let src = if li == 0 {
                &cache.input
            } else {
                &cache.post[li - 1]
            };
            let off = self.layout.inner_offset(li);
            let nw = l.out_dim * l.in_dim;
            {
                let gw = &mut g.grad_wu[off..off + nw + l.out_dim];
                for r in 0..l.out_dim {
                    let d = delta[r];
                    if d != 0.0 {
                        for (gk, xk) in gw[r * l.in_dim..(r + 1) * l.in_dim].iter_mut().zip(src) {
                            *gk += d * xk;
                        }
                    }
                    gw[nw + r] += d;
                }
            }
            if li > 0 {
                let w = &self.params.inner[off..off + nw];
                let mut prev = vec![0.0; l.in_dim];
                for r in 0..l.out_dim {
                    let d = delta[r];
                    if d != 0.0 {
                        for (pk, wk) in prev.iter_mut().zip(&w[r * l.in_dim..(r + 1) * l.in_dim]) {
                            *pk += d * wk;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Elementwise view of hidden layer `i` as `(weights, bias)`.
    pub fn hidden_params(&self, i: usize) -> (&[f64], &[f64]) {
        let l = &self.layout.hidden[i];
        let off = self.layout.inner_offset(i);
        let nw = l.out_dim * l.in_dim;
        (
            &self.params.inner[off..off + nw],
            &self.params.inner[off + nw..off + nw + l.out_dim],
        )
    }

    /// `(weights, bias)` of the head.
    pub fn head_params(&self) -> (&[f64], &[f64]) {
        let nw = self.layout.head_width() * self.layout.last_width();
        (&self.params.output[..nw], &self.params.output[nw..])
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// serialization

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerSidecar {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: String,
}

/// JSON description accompanying a raw parameter file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayoutSidecar {
    pub input_dim: usize,
    pub hidden: Vec<LayerSidecar>,
    pub head: String,
    pub inner_len: usize,
    pub output_len: usize,
    pub ordering: String,
}

impl LayoutSidecar {
    pub fn from_layout(layout: &Layout) -> Self {
        Self {
            input_dim: layout.input_dim,
            hidden: layout
                .hidden
                .iter()
                .map(|l| LayerSidecar {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    activation: l.activation.tag(),
                })
                .collect(),
            head: layout.head.to_string(),
            inner_len: layout.inner_len(),
            output_len: layout.output_len(),
            ordering:
                "inner block then output block; per layer: weights row-major (out, in), then bias"
                    .into(),
        }
    }

    pub fn to_layout(&self) -> Result<Layout> {
        let hidden = self
            .hidden
            .iter()
            .map(|l| {
                Ok(LayerSpec {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    activation: l.activation.parse()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = Layout::from_layers(self.input_dim, hidden, self.head.parse()?)?;
        if layout.inner_len() != self.inner_len || layout.output_len() != self.output_len {
            return Err(Error::Layout(
                "sidecar block lengths disagree with its layers".into(),
            ));
        }
        Ok(layout)
    }
}

/// Little-endian f64 encoding of [`flatten`].
pub fn params_to_bytes(p: &ParamSet) -> Vec<u8> {
    flatten(p).iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn params_from_bytes(layout: &Layout, bytes: &[u8]) -> Result<ParamSet> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Layout(format!(
            "parameter file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    load(layout, &flat)
}

/// Reads a `params.bin` + `params.json` pair.
pub fn read_params(bin: &Path, sidecar: &Path) -> Result<Mlp> {
    let meta: LayoutSidecar = serde_json::from_slice(&std::fs::read(sidecar)?)?;
    let layout = meta.to_layout()?;
    let params = params_from_bytes(&layout, &std::fs::read(bin)?)?;
    Mlp::new(layout, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig_net(head: HeadKind) -> Mlp {
        Mlp::zeros(Layout::uniform(3, &[4], ActivationKind::Sigmoid, head).unwrap())
    }

    #[test]
    fn zero_params_scalar_head() {
        let net = sig_net(HeadKind::Scalar);
        let (out, cache) = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, HeadOutput::Scalar(0.0));
        assert!(cache.post_activations()[0].iter().all(|&s| s == 0.5));
    }

    #[test]
    fn zero_params_softmax_is_uniform() {
        let net = sig_net(HeadKind::Softmax { k: 2 });
        let (out, _) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out, HeadOutput::Probabilities(vec![0.5, 0.5]));
    }

    #[test]
    fn one_unit_hand_evaluation() {
        let layout = Layout::uniform(1, &[1], ActivationKind::Sigmoid, HeadKind::Scalar).unwrap();
        // inner = (W, u), output = (v, b)
        let net = Mlp::new(
            layout,
            ParamSet {
                inner: vec![1.0, 0.0],
                output: vec![1.0, 0.0],
            },
        )
        .unwrap();
        let (out, _) = net.forward(&[0.0]).unwrap();
        assert_eq!(out, HeadOutput::Scalar(0.5));
    }

    #[test]
    fn dimension_and_numeric_errors() {
        let net = sig_net(HeadKind::Scalar);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension(_))));
        let mut big = net.clone();
        big.params.output.iter_mut().for_each(|v| *v = f64::MAX);
        match big.forward(&[0.0, 0.0, 0.0]) {
            Err(Error::Numeric { layer, .. }) => assert_eq!(layer, "output layer"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn zero_head_grad_gives_zero_gradient() {
        let mut net = sig_net(HeadKind::QValues { m: 3 });
        net.params
            .inner
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.1 * i as f64);
        net.params
            .output
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = -0.05 * i as f64);
        let (_, cache) = net.forward(&[0.5, 0.1, -0.2]).unwrap();
        let g = net.backprop(&cache, &[0.0, 0.0, 0.0]).unwrap();
        assert!(g.grad_vb.iter().chain(&g.grad_wu).all(|&v| v == 0.0));
    }

    #[test]
    fn foreign_cache_is_rejected() {
        let a = sig_net(HeadKind::Scalar);
        let b =
            Mlp::zeros(Layout::uniform(3, &[5], ActivationKind::Tanh, HeadKind::Scalar).unwrap());
        let (_, cache) = b.forward(&[0.0; 3]).unwrap();
        assert!(matches!(a.backprop(&cache, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn norms() {
        let layout = Layout::uniform(1, &[1], ActivationKind::Tanh, HeadKind::Scalar).unwrap();
        let p = ParamSet::zeros(&layout);
        let n = param_norm(&p);
        assert_eq!((n.total, n.vb, n.wu), (0.0, 0.0, 0.0));
        let p = ParamSet {
            inner: vec![0.0, 0.0],
            output: vec![3.0, 4.0],
        };
        let n = param_norm(&p);
        assert_eq!((n.vb, n.total), (5.0, 5.0));
    }

    #[test]
    fn flatten_order_matches_manual_trace() {
        // 1 input, 1 hidden unit, scalar head: inner = (W_11, u_1), output = (v_1, b)
        let layout = Layout::uniform(1, &[1], ActivationKind::Tanh, HeadKind::Scalar).unwrap();
        let p = load(&layout, &[10.0, 20.0, 30.0, 40.0]).unwrap();
        let net = Mlp::new(layout.clone(), p.clone()).unwrap();
        let (w, u) = net.hidden_params(0);
        let (v, b) = net.head_params();
        assert_eq!(
            (w, u, v, b),
            (&[10.0][..], &[20.0][..], &[30.0][..], &[40.0][..])
        );
        assert_eq!(flatten(&p), vec![10.0, 20.0, 30.0, 40.0]);
        assert!(load(&layout, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn empty_inner_layout_rejected() {
        assert!(Layout::uniform(3, &[], ActivationKind::Tanh, HeadKind::Scalar).is_err());
        assert!(Layout::uniform(0, &[2], ActivationKind::Tanh, HeadKind::Scalar).is_err());
        assert!(Layout::uniform(3, &[2, 0], ActivationKind::Tanh, HeadKind::Scalar).is_err());
        assert!(
            Layout::uniform(3, &[2], ActivationKind::Tanh, HeadKind::Softmax { k: 1 }).is_err()
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let layout = Layout::new(
            4,
            &[8, 3],
            &[
                ActivationKind::TGelu {
                    t_l: -1.0,
                    t_r: 1.0,
                },
                ActivationKind::Sigmoid,
            ],
            HeadKind::QValues { m: 3 },
        )
        .unwrap();
        let meta = LayoutSidecar::from_layout(&layout);
        let json = serde_json::to_string(&meta).unwrap();
        let back: LayoutSidecar = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_layout().unwrap(), layout);
        let mut p = ParamSet::zeros(&layout);
        p.inner[3] = -0.125;
        p.output[2] = 1e-300;
        let bytes = params_to_bytes(&p);
        assert_eq!(bytes.len(), 8 * (layout.inner_len() + layout.output_len()));
        assert_eq!(params_from_bytes(&layout, &bytes).unwrap(), p);
        assert!(params_from_bytes(&layout, &bytes[..7]).is_err());
    }

    #[test]
    fn head_tags() {
        for t in ["scalar", "softmax:2", "q:3"] {
            assert_eq!(t.parse::<HeadKind>().unwrap().to_string(), t);
        }
        assert!("softmax:1".parse::<HeadKind>().is_err());
        assert!("q:0".parse::<HeadKind>().is_err());
    }
}
