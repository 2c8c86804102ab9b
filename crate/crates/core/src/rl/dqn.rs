//! Deep Q-learning on cart-pole with a clipped output layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cartpole::{Action, CartPole, CartPoleState, MAX_EPISODE_STEPS, X_LIMIT};
use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::losses::{bellman_loss_grad, bellman_target, GradMode};
use crate::network::{l2_norm, HeadKind, Mlp};
use crate::optimizer::{
    step_accumulated, BatchAccumulator, OptimizerState, StepReport, StepSchedule,
};
use crate::run::{check_total, stream_rng, Event, NetSpec, RunArtifacts, EXPLOSION};
use crate::telemetry::TargetBound;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_end: 0.1,
            anneal_steps: 100_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.eps_end)
            && (0.0..=1.0).contains(&self.eps_start)
            && self.eps_end <= self.eps_start;
        if !ok {
            return Err(Error::Config(format!(
                "epsilon schedule needs 0 <= end <= start <= 1, got {} -> {}",
                self.eps_start, self.eps_end
            )));
        }
        Ok(())
    }

    /// Linear interpolation from start to end over `anneal_steps`, then flat.
    pub fn value(&self, n: u64) -> f64 {
        if self.anneal_steps == 0 {
            return self.eps_end;
        }
        let frac = n.min(self.anneal_steps) as f64 / self.anneal_steps as f64;
        self.eps_start - (self.eps_start - self.eps_end) * frac
    }
}

pub fn epsilon(sch: &EpsilonSchedule, n: u64) -> f64 {
    sch.value(n)
}

/// How Bellman targets are produced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum TargetMode {
    /// Bootstrap from the network being trained.
    #[default]
    None,
    /// Hard copy every `sync_every` updates.
    Periodic { sync_every: u64 },
    /// `target <- rho target + (1 - rho) net` after every update.
    Polyak { rho: f64 },
}

impl TargetMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetMode::None => Ok(()),
            TargetMode::Periodic { sync_every } => check_total(sync_every as usize, "sync_every"),
            TargetMode::Polyak { rho } if rho > 0.0 && rho < 1.0 => Ok(()),
            TargetMode::Polyak { rho } => Err(Error::Config(format!(
                "polyak rho must lie in (0, 1), got {rho}"
            ))),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetMode::None => write!(f, "none"),
            TargetMode::Periodic { sync_every } => write!(f, "periodic:{sync_every}"),
            TargetMode::Polyak { rho } => write!(f, "polyak:{rho}"),
        }
    }
}

impl FromStr for TargetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad target mode '{s}'"));
        let mode = match s.split_once(':') {
            None if s == "none" => TargetMode::None,
            Some(("periodic", n)) => TargetMode::Periodic {
                sync_every: n.parse().map_err(|_| bad())?,
            },
            Some(("polyak", r)) => TargetMode::Polyak {
                rho: r.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Brings cart position, velocities and pole angle to order one; the angle
/// and position factors are the termination limits.
pub const OBS_SCALE: [f64; 4] = [1.0 / X_LIMIT, 1.0 / 3.0, 1.0 / 0.21, 1.0 / 3.0];

/// Step sizes for the cart-pole Q-network.
pub const DQN_SCHEDULE: StepSchedule = StepSchedule::PolyDecay {
    a0: 0.002,
    tau: 1e5,
    kappa: 0.75,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub target: TargetMode,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub max_episode_steps: u32,
    pub total_steps: u64,
    pub replay_capacity: usize,
    /// Updates start once the buffer holds this many transitions
    /// (never fewer than `batch_size`).
    pub learning_starts: usize,
    pub epsilon: EpsilonSchedule,
    pub grad_mode: GradMode,
    /// Stop at the first non-finite loss instead of recording it.
    pub fail_fast: bool,
    pub telemetry_stride: u64,
    /// Bound on observation components assumed by the growth constant.
    pub state_bound: f64,
    /// Per-component factors applied to the state before it reaches the
    /// network (x, x_dot, theta, theta_dot).
    pub obs_scale: [f64; 4],
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            target: TargetMode::None,
            eval_every: 5000,
            eval_episodes: 5,
            max_episode_steps: MAX_EPISODE_STEPS,
            total_steps: 150_000,
            replay_capacity: 100_000,
            learning_starts: 1000,
            epsilon: EpsilonSchedule::default(),
            grad_mode: GradMode::Standard,
            fail_fast: false,
            telemetry_stride: 1,
            state_bound: 10.0,
            obs_scale: OBS_SCALE,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        check_total(self.batch_size, "batch_size")?;
        check_total(self.eval_every as usize, "eval_every")?;
        check_total(self.eval_episodes, "eval_episodes")?;
        check_total(self.max_episode_steps as usize, "max_episode_steps")?;
        check_total(self.replay_capacity, "replay_capacity")?;
        check_total(self.telemetry_stride as usize, "telemetry_stride")?;
        if !(self.state_bound > 0.0 && self.state_bound.is_finite()) {
            return Err(Error::Config(
                "state_bound must be positive and finite".into(),
            ));
        }
        if self.obs_scale.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config(
                "obs_scale entries must be positive and finite".into(),
            ));
        }
        self.target.validate()?;
        self.epsilon.validate()
    }
}

fn q_net_check(net: &Mlp) -> Result<()> {
    match net.layout().head() {
        HeadKind::QValues { m: 3 } if net.layout().input_dim() == 4 => Ok(()),
        other => Err(Error::Usage(format!(
            "cart-pole needs a 4-input network with head q:3, got input {} and head {other}",
            net.layout().input_dim()
        ))),
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice. Greedy ties go to the lowest action index.
pub fn select_action<R: Rng>(
    net: &Mlp,
    s: &CartPoleState,
    eps: f64,
    rng: &mut R,
) -> Result<Action> {
    q_net_check(net)?;
    if rng.random::<f64>() < eps {
        return Action::from_index(rng.random_range(0..3));
    }
    Action::from_index(argmax(&net.q_values(&s.to_vec())?))
}

/// Outcome of one [`dqn_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnUpdate {
    pub loss: f64,
    pub report: StepReport,
}

/// Bellman targets from `target_net` (or `net` itself), per-sample
/// semi-gradients, then one clipped mini-batch step.
pub fn dqn_update(
    net: &mut Mlp,
    target_net: Option<&Mlp>,
    batch: &[Transition],
    opt: &mut OptimizerState,
    gamma: f64,
    mode: GradMode,
) -> Result<DqnUpdate> {
    if batch.is_empty() {
        return Err(Error::Usage("dqn update needs a non-empty batch".into()));
    }
    let bootstrap = target_net.unwrap_or(net);
    let targets = batch
        .iter()
        .map(|t| bellman_target(bootstrap, &t.s_next.to_vec(), t.r, gamma, t.done))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = BatchAccumulator::new(&net.params);
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(&targets) {
        let (l, g) = bellman_loss_grad(net, &t.s.to_vec(), t.a.index(), *y, mode)?;
        loss += l;
        acc.add(&g, opt.clip)?;
    }
    let report = step_accumulated(&mut net.params, &mut acc, opt)?;
    Ok(DqnUpdate {
        loss: loss / batch.len() as f64,
        report,
    })
}

/// Moves `target_net` towards `net` according to `mode`.
pub fn sync_target(net: &Mlp, target_net: &mut Mlp, mode: TargetMode) -> Result<()> {
    if net.layout() != target_net.layout() {
        return Err(Error::Layout(
            "target network layout differs from the online network".into(),
        ));
    }
    match mode {
        TargetMode::None | TargetMode::Periodic { .. } => target_net.params = net.params.clone(),
        TargetMode::Polyak { rho } => {
            let mix = |t: &mut Vec<f64>, s: &Vec<f64>| {
                t.iter_mut()
                    .zip(s)
                    .for_each(|(a, b)| *a = rho * *a + (1.0 - rho) * b)
            };
            mix(&mut target_net.params.inner, &net.params.inner);
            mix(&mut target_net.params.output, &net.params.output);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnMetricRow {
    pub env_step: u64,
    pub eval_mean_total_reward: f64,
    pub eval_mean_discounted_reward: f64,
    pub epsilon: f64,
    /// Mean loss over the updates since the previous row; empty if none.
    pub bellman_loss_mean: Option<f64>,
}

pub const DQN_METRIC_COLUMNS: [&str; 5] = [
    "env_step",
    "eval_mean_total_reward",
    "eval_mean_discounted_reward",
    "epsilon",
    "bellman_loss_mean",
];

/// Componentwise rescaled copy of `s`.
pub fn scale_state(s: &CartPoleState, c: &[f64; 4]) -> CartPoleState {
    CartPoleState {
        x: s.x * c[0],
        x_dot: s.x_dot * c[1],
        theta: s.theta * c[2],
        theta_dot: s.theta_dot * c[3],
    }
}

/// Greedy action, falling back to `Left` if the network output is not finite.
fn greedy(net: &Mlp, s: &CartPoleState) -> Action {
    match net.q_values(&s.to_vec()) {
        Ok(q) => Action::ALL[argmax(&q)],
        Err(_) => Action::Left,
    }
}

/// Mean total and discounted return of greedy episodes.
pub fn evaluate_policy(
    net: &Mlp,
    env: &mut CartPole,
    episodes: usize,
    gamma: f64,
    obs_scale: &[f64; 4],
) -> Result<(f64, f64)> {
    let (mut total, mut disc) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut s = env.reset();
        let mut discount = 1.0;
        loop {
            let out = env.step(greedy(net, &scale_state(&s, obs_scale)))?;
            total += out.reward;
            disc += discount * out.reward;
            discount *= gamma;
            if out.done {
                break;
            }
            s = out.state;
        }
    }
    Ok((total / episodes as f64, disc / episodes as f64))
}

/// Best mean evaluation return seen in a metrics table.
pub fn best_eval(rows: &[DqnMetricRow]) -> f64 {
    rows.iter()
        .map(|r| r.eval_mean_total_reward)
        .fold(f64::NEG_INFINITY, f64::max)
}

const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_REPLAY: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Full training loop: act, store, sample, update every environment step,
/// greedy evaluation every `eval_every` steps (and at step 0). Replay
/// stores scaled observations.
///
/// Episodes that end only at the step limit still bootstrap from their last
/// state. A non-finite loss or network output is recorded as an explosion
/// event and the run continues, unless `fail_fast` is set.
pub fn train_dqn(cfg: &DqnConfig, spec: &NetSpec, seed: u64) -> Result<RunArtifacts<DqnMetricRow>> {
    cfg.validate()?;
    let mut net = spec.init(seed)?;
    q_net_check(&net)?;
    let mut opt = spec.optimizer()?;
    let bound = TargetBound::Bellman {
        gamma: cfg.gamma,
        r_max: 1.0,
        mode: cfg.grad_mode,
    };
    let mut rec = spec.recorder(&net, cfg.state_bound, bound, cfg.telemetry_stride);
    let mut target = match cfg.target {
        TargetMode::None => None,
        _ => Some(net.clone()),
    };
    let mut env = CartPole::from_rng(stream_rng(seed, STREAM_ENV), cfg.max_episode_steps);
    let mut eval_env = CartPole::from_rng(stream_rng(seed, STREAM_EVAL), cfg.max_episode_steps);
    let mut policy_rng = stream_rng(seed, STREAM_POLICY);
    let mut replay_rng = stream_rng(seed, STREAM_REPLAY);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut events = Vec::new();
    let mut metrics = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    let mut push_eval =
        |net: &Mlp, step: u64, loss: Option<f64>, metrics: &mut Vec<DqnMetricRow>| -> Result<()> {
            let (total, disc) = evaluate_policy(
                net,
                &mut eval_env,
                cfg.eval_episodes,
                cfg.gamma,
                &cfg.obs_scale,
            )?;
            metrics.push(DqnMetricRow {
                env_step: step,
                eval_mean_total_reward: total,
                eval_mean_discounted_reward: disc,
                epsilon: cfg.epsilon.value(step),
                bellman_loss_mean: loss,
            });
            Ok(())
        };
    push_eval(&net, 0, None, &mut metrics)?;

    let explode = |step: u64, detail: String, events: &mut Vec<Event>| -> Result<()> {
        if cfg.fail_fast {
            return Err(Error::numeric(
                "bellman loss",
                format!("step {step}: {detail}"),
            ));
        }
        events.push(Event {
            step,
            kind: EXPLOSION.into(),
            detail,
        });
        Ok(())
    };

    let obs = |s: &CartPoleState| scale_state(s, &cfg.obs_scale);
    let mut s = obs(&env.state());
    let warmup = cfg.learning_starts.max(cfg.batch_size);
    for step in 0..cfg.total_steps {
        let eps = cfg.epsilon.value(step);
        let a = match select_action(&net, &s, eps, &mut policy_rng) {
            Ok(a) => a,
            Err(Error::Numeric { layer, detail }) => {
                explode(step, format!("{layer}: {detail}"), &mut events)?;
                Action::from_index(policy_rng.random_range(0..3))?
            }
            Err(e) => return Err(e),
        };
        let out = env.step(a)?;
        let s_next = obs(&out.state);
        buffer.push(Transition {
            s,
            a,
            r: out.reward,
            s_next,
            done: out.done && !out.truncated,
        });
        s = if out.done { obs(&env.reset()) } else { s_next };

        if buffer.len() >= warmup {
            let batch = buffer.sample(cfg.batch_size, &mut replay_rng)?;
            let vb_before = l2_norm(&net.params.output);
            match dqn_update(
                &mut net,
                target.as_ref(),
                &batch,
                &mut opt,
                cfg.gamma,
                cfg.grad_mode,
            ) {
                Ok(u) => {
                    rec.record(vb_before, &u.report, &net.params, u.loss)?;
                    if u.loss.is_finite() {
                        loss_sum += u.loss;
                        loss_count += 1;
                    } else {
                        explode(step, format!("non-finite loss {}", u.loss), &mut events)?;
                    }
                    if let Some(t) = target.as_mut() {
                        let due = match cfg.target {
                            TargetMode::Periodic { sync_every } => {
                                opt.step_count() % sync_every == 0
                            }
                            _ => true,
                        };
                        if due {
                            sync_target(&net, t, cfg.target)?;
                        }
                    }
                }
                Err(Error::Numeric { layer, detail }) => {
                    explode(step, format!("{layer}: {detail}"), &mut events)?;
                }
                Err(e) => return Err(e),
            }
        }

        if (step + 1) % cfg.eval_every == 0 {
            let loss = (loss_count > 0).then(|| loss_sum / loss_count as f64);
            push_eval(&net, step + 1, loss, &mut metrics)?;
            loss_sum = 0.0;
            loss_count = 0;
        }
    }

    let final_metric = metrics
        .last()
        .map_or(f64::NAN, |r| r.eval_mean_total_reward);
    Ok(RunArtifacts {
        metrics,
        telemetry: rec.rows,
        events,
        net,
        tracker: rec.tracker,
        final_metric,
    })
}
