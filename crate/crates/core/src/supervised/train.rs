//! Epoch loops for the regression and classification tracks.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::losses::{ce_loss_grad, mse_loss_grad, GradMode};
use crate::network::{l2_norm, param_norm, softmax, HeadKind, Mlp};
use crate::optimizer::{step_accumulated, BatchAccumulator, OptimizerState};
use crate::run::{check_total, stream_rng, NetSpec, RunArtifacts};
use crate::telemetry::{
    ce_output_grad_bound, growth_constant_k, Recorder, SubmartingaleTracker, TargetBound,
    ARITH_SLACK,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Reduced to the training-set size when larger.
    pub batch_size: usize,
    /// Evaluate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Share of records used for training; the rest is the test split.
    pub train_fraction: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, whatever the epoch count.
    pub max_steps: Option<u64>,
    pub telemetry_stride: u64,
    pub grad_mode: GradMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 256,
            eval_every: 1,
            train_fraction: 0.8,
            seed: 0,
            max_steps: None,
            telemetry_stride: 1,
            grad_mode: GradMode::Standard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_total(self.epochs, "epochs")?;
        check_total(self.batch_size, "batch_size")?;
        check_total(self.eval_every, "eval_every")?;
        check_total(self.telemetry_stride as usize, "telemetry_stride")?;
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Mse,
    Accuracy,
    Ce,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mse => "mse",
            Metric::Accuracy => "accuracy",
            Metric::Ce => "ce",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "accuracy" => Ok(Metric::Accuracy),
            "ce" => Ok(Metric::Ce),
            _ => Err(Error::Config(format!("unknown metric '{s}'"))),
        }
    }
}

/// Mean of `metric` over `data`. Accuracy predicts the lowest index among
/// tied top probabilities.
pub fn evaluate(net: &Mlp, data: &Dataset, metric: Metric) -> Result<f64> {
    let head = net.layout().head();
    let mut total = 0.0;
    match (metric, data.targets(), head) {
        (Metric::Mse, Targets::Real(y), HeadKind::Scalar) => {
            for (x, t) in data.inputs().iter().zip(y) {
                let f = net.predict(x)?[0];
                total += (f - t) * (f - t);
            }
        }
        (
            Metric::Accuracy | Metric::Ce,
            Targets::Labels { labels, classes },
            HeadKind::Softmax { k },
        ) if *classes <= k => {
            for (x, &c) in data.inputs().iter().zip(labels) {
                let z = softmax(&net.predict(x)?);
                total += match metric {
                    Metric::Accuracy => (crate::rl::dqn::argmax(&z) == c) as u8 as f64,
                    _ => -z[c].ln(),
                };
            }
        }
        _ => {
            return Err(Error::Usage(format!(
                "metric {metric} does not fit head {head} with these targets"
            )))
        }
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_metric: f64,
}

pub const EPOCH_COLUMNS: [&str; 3] = ["epoch", "train_loss", "test_metric"];

/// Seeded permutation of `0..n`.
pub fn epoch_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

const STREAM_SPLIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

/// Train/test split by a seeded permutation. With `train_fraction = 1`
/// the test split is the training set.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let perm = epoch_permutation(data.len(), &mut stream_rng(seed, STREAM_SPLIT));
    let n_train = ((data.len() as f64 * train_fraction).round() as usize).clamp(1, data.len());
    let train = data.subset(&perm[..n_train])?;
    let test = if n_train == data.len() {
        train.clone()
    } else {
        data.subset(&perm[n_train..])?
    };
    Ok((train, test))
}

enum Track {
    Regression,
    Classification { bound: Option<f64> },
}

fn run_track(
    cfg: &TrainConfig,
    spec: &NetSpec,
    data: &Dataset,
    track: Track,
    mut net: Mlp,
) -> Result<RunArtifacts<EpochRow>> {
    cfg.validate()?;
    if net.layout() != &spec.layout {
        return Err(Error::Layout(
            "initial network does not match the net spec".into(),
        ));
    }
    data.check_bounds()?;
    if data.dim() != spec.layout.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, network expects {}",
            data.dim(),
            spec.layout.input_dim()
        )));
    }
    let (train, test) = split(data, cfg.train_fraction, cfg.seed)?;
    let metric = match track {
        Track::Regression => Metric::Mse,
        Track::Classification { .. } => Metric::Accuracy,
    };
    let (mut opt, mut rec) = match track {
        Track::Regression => {
            let rec = spec.recorder(
                &net,
                data.x_max(),
                TargetBound::Regression {
                    y_max: data.y_max(),
                },
                cfg.telemetry_stride,
            );
            (spec.optimizer()?, rec)
        }
        Track::Classification { bound } => {
            // plain SGD; a valid output-gradient bound takes the place of λ
            let k = growth_constant_k(&spec.layout, data.x_max(), TargetBound::CrossEntropy).ok();
            let norms = param_norm(&net.params);
            let lambda = bound.unwrap_or(f64::INFINITY);
            let tracker = SubmartingaleTracker::new(lambda, k, norms.vb, norms.wu);
            spec.schedule.validate()?;
            (
                OptimizerState::new(spec.schedule, None),
                Recorder::new(tracker, cfg.telemetry_stride),
            )
        }
    };
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let batch = cfg.batch_size.min(train.len());
    let mut acc = BatchAccumulator::new(&net.params);
    let mut metrics = Vec::new();
    let max_steps = cfg.max_steps.unwrap_or(u64::MAX);
    let mut stop = max_steps == 0;

    for epoch in 1..=cfg.epochs {
        if stop {
            break;
        }
        let perm = epoch_permutation(train.len(), &mut shuffle_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in perm.chunks(batch) {
            let mut batch_loss = 0.0;
            for &i in chunk {
                let x = &train.inputs()[i];
                let (l, g) = match (&track, train.targets()) {
                    (Track::Regression, Targets::Real(y)) => mse_loss_grad(&net, x, y[i])?,
                    (Track::Classification { bound }, Targets::Labels { labels, .. }) => {
                        let (l, g) = ce_loss_grad(&net, x, labels[i], cfg.grad_mode)?;
                        if let Some(b) = bound {
                            let n = l2_norm(&g.grad_vb);
                            if n > b + ARITH_SLACK {
                                return Err(Error::InvariantBreach(format!(
                                    "step {}: cross-entropy output gradient norm {n} exceeds bound {b}",
                                    opt.step_count()
                                )));
                            }
                        }
                        (l, g)
                    }
                    _ => {
                        return Err(Error::Usage(
                            "targets do not match the training track".into(),
                        ))
                    }
                };
                batch_loss += l;
                acc.add(&g, opt.clip)?;
            }
            let vb_before = l2_norm(&net.params.output);
            let report = step_accumulated(&mut net.params, &mut acc, &mut opt)?;
            rec.record(
                vb_before,
                &report,
                &net.params,
                batch_loss / chunk.len() as f64,
            )?;
            loss_sum += batch_loss;
            seen += chunk.len();
            if opt.step_count() >= max_steps {
                stop = true;
                break;
            }
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs || stop {
            metrics.push(EpochRow {
                epoch,
                train_loss: loss_sum / seen.max(1) as f64,
                test_metric: evaluate(&net, &test, metric)?,
            });
        }
    }
    let final_metric = match metrics.last() {
        Some(r) => r.test_metric,
        None => evaluate(&net, &test, metric)?,
    };
    Ok(RunArtifacts {
        metrics,
        telemetry: rec.rows,
        events: Vec::new(),
        net,
        tracker: rec.tracker,
        final_metric,
    })
}

/// Squared-error training with the clipped output-layer update.
pub fn train_regression(
    cfg: &TrainConfig,
    spec: &NetSpec,
    data: &Dataset,
) -> Result<RunArtifacts<EpochRow>> {
    train_regression_from(cfg, spec, data, spec.init(cfg.seed)?)
}

/// [`train_regression`] from a given starting network.
pub fn train_regression_from(
    cfg: &TrainConfig,
    spec: &NetSpec,
    data: &Dataset,
    net: Mlp,
) -> Result<RunArtifacts<EpochRow>> {
    if spec.layout.head() != HeadKind::Scalar {
        return Err(Error::Usage(format!(
            "regression needs a scalar head, got {}",
            spec.layout.head()
        )));
    }
    if !matches!(data.targets(), Targets::Real(_)) {
        return Err(Error::Usage("regression needs real-valued targets".into()));
    }
    run_track(cfg, spec, data, Track::Regression, net)
}

/// Cross-entropy training with plain SGD on both blocks. For a squashing
/// last hidden layer every per-sample output gradient is checked against
/// `sqrt(2 (h s_max² + 1))`; a violation is an invariant breach.
pub fn train_classification(
    cfg: &TrainConfig,
    spec: &NetSpec,
    data: &Dataset,
) -> Result<RunArtifacts<EpochRow>> {
    let k = match spec.layout.head() {
        HeadKind::Softmax { k } => k,
        other => {
            return Err(Error::Usage(format!(
                "classification needs a softmax head, got {other}"
            )))
        }
    };
    match data.classes() {
        Some(c) if c <= k => {}
        Some(c) => {
            return Err(Error::Usage(format!(
                "{c} classes do not fit a {k}-way head"
            )))
        }
        None => return Err(Error::Usage("classification needs labelled data".into())),
    }
    let bound = ce_output_grad_bound(&spec.layout).ok();
    run_track(
        cfg,
        spec,
        data,
        Track::Classification { bound },
        spec.init(cfg.seed)?,
    )
}
