//! Squared-error, cross-entropy and sample Bellman losses with gradients.
//!
//! Cross-entropy and Bellman losses come in two modes. `Standard` is the
//! exact derivative of the loss. `Alternate` reproduces alternative
//! closed-form tables: a label-free logit gradient `z_i - z_{i'}` for
//! binary cross-entropy, and an inner-layer signal summed over all action
//! rows for the Bellman loss. Neither variant is the derivative of its loss;
//! they exist for side-by-side experiments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GradSplit, HeadKind, HeadOutput, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradMode {
    #[default]
    Standard,
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    CrossEntropy { mode: GradMode },
    Bellman { gamma: f64, mode: GradMode },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::Bellman { gamma, .. } = *self {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(Error::Config(format!(
                    "discount must lie in [0, 1], got {gamma}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Mse => write!(f, "mse"),
            LossKind::CrossEntropy {
                mode: GradMode::Standard,
            } => write!(f, "ce"),
            LossKind::CrossEntropy {
                mode: GradMode::Alternate,
            } => write!(f, "ce-alt"),
            LossKind::Bellman {
                gamma,
                mode: GradMode::Standard,
            } => write!(f, "bellman:{gamma}"),
            LossKind::Bellman {
                gamma,
                mode: GradMode::Alternate,
            } => {
                write!(f, "bellman-alt:{gamma}")
            }
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let gamma = |g: &str| -> Result<f64> {
            g.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad discount in loss tag {s:?}")))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        let kind = match parts.as_slice() {
            ["mse"] => LossKind::Mse,
            ["ce"] => LossKind::CrossEntropy {
                mode: GradMode::Standard,
            },
            ["ce-alt"] => LossKind::CrossEntropy {
                mode: GradMode::Alternate,
            },
            ["bellman", g] => LossKind::Bellman {
                gamma: gamma(g)?,
                mode: GradMode::Standard,
            },
            ["bellman-alt", g] => LossKind::Bellman {
                gamma: gamma(g)?,
                mode: GradMode::Alternate,
            },
            _ => return Err(Error::Config(format!("unknown loss tag {s:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

fn head_error(net: &Mlp, want: &str) -> Error {
    Error::Usage(format!(
        "{want} loss requires a matching head, network has {}",
        net.layout().head()
    ))
}

/// `(f(x) - y)^2` and its gradient.
pub fn mse_loss_grad(net: &Mlp, x: &[f64], y: f64) -> Result<(f64, GradSplit)> {
    if net.layout().head() != HeadKind::Scalar {
        return Err(head_error(net, "mse"));
    }
    let (out, cache) = net.forward(x)?;
    let f = match out {
        HeadOutput::Scalar(f) => f,
        _ => unreachable!("scalar head"),
    };
    let err = f - y;
    let g = net.backprop(&cache, &[2.0 * err])?;
    Ok((err * err, g))
}

/// `-log z_y` and its gradient.
pub fn ce_loss_grad(net: &Mlp, x: &[f64], y: usize, mode: GradMode) -> Result<(f64, GradSplit)> {
    let k = match net.layout().head() {
        HeadKind::Softmax { k } => k,
        _ => return Err(head_error(net, "cross-entropy")),
    };
    if y >= k {
        return Err(Error::Usage(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    if mode == GradMode::Alternate && k != 2 {
        return Err(Error::Unsupported(
            "the label-free logit gradient is defined for binary heads only".into(),
        ));
    }
    let (out, cache) = net.forward(x)?;
    let z = match out {
        HeadOutput::Probabilities(z) => z,
        _ => unreachable!("softmax head"),
    };
    let logits = cache.logits();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|c| (c - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[y];
    let g = net.backprop(&cache, &ce_logit_grad(&z, y, mode)?)?;
    Ok((loss, g))
}

/// Logit gradient used by [`ce_loss_grad`] for probabilities `z`.
pub fn ce_logit_grad(z: &[f64], y: usize, mode: GradMode) -> Result<Vec<f64>> {
    match mode {
        GradMode::Standard => Ok(z
            .iter()
            .enumerate()
            .map(|(i, zi)| zi - if i == y { 1.0 } else { 0.0 })
            .collect()),
        GradMode::Alternate if z.len() == 2 => Ok(vec![z[0] - z[1], z[1] - z[0]]),
        GradMode::Alternate => Err(Error::Unsupported(
            "the label-free logit gradient is defined for binary heads only".into(),
        )),
    }
}

/// `r` if `done`, else `r + γ max_a' Q(x', a')`. No gradient flows through it.
pub fn bellman_target(
    target_net: &Mlp,
    x_next: &[f64],
    r: f64,
    gamma: f64,
    done: bool,
) -> Result<f64> {
    if !matches!(target_net.layout().head(), HeadKind::QValues { .. }) {
        return Err(head_error(target_net, "bellman"));
    }
    if done || gamma == 0.0 {
        return Ok(r);
    }
    let q = target_net.q_values(x_next)?;
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(r + gamma * best)
}

/// `(Q(x, a) - target)^2` and its semi-gradient.
pub fn bellman_loss_grad(
    net: &Mlp,
    x: &[f64],
    action: usize,
    target: f64,
    mode: GradMode,
) -> Result<(f64, GradSplit)> {
    let m = match net.layout().head() {
        HeadKind::QValues { m } => m,
        _ => return Err(head_error(net, "bellman")),
    };
    if action >= m {
        return Err(Error::Usage(format!(
            "action {action} out of range for {m} actions"
        )));
    }
    let (_, cache) = net.forward(x)?;
    let delta = cache.logits()[action] - target;
    let mut out_grad = vec![0.0; m];
    out_grad[action] = 2.0 * delta;
    let inner_grad = match mode {
        GradMode::Standard => out_grad.clone(),
        GradMode::Alternate => vec![2.0 * delta; m],
    };
    let mut g = GradSplit::zeros(net.layout());
    net.backprop_into(&cache, &out_grad, &inner_grad, &mut g)?;
    Ok((delta * delta, g))
}
