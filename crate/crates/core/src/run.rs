//! Types shared by the training tracks.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layout, Mlp, ParamSet};
use crate::optimizer::{init_params, ClipConfig, OptimizerState, StepSchedule};
use crate::telemetry::{
    growth_constant_k, Recorder, SubmartingaleTracker, TargetBound, TelemetryRow,
};

/// Architecture plus the optimizer settings tied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub layout: Layout,
    pub schedule: StepSchedule,
    /// `None` trains both blocks with plain SGD.
    pub clip: Option<ClipConfig>,
    /// Norm bound on the initial parameter vector.
    pub init_radius: f64,
}

impl NetSpec {
    pub fn new(layout: Layout, schedule: StepSchedule, clip: Option<ClipConfig>) -> Self {
        let init_radius = clip.map_or(1.0, |c| c.lambda);
        Self {
            layout,
            schedule,
            clip,
            init_radius,
        }
    }

    pub fn optimizer(&self) -> Result<OptimizerState> {
        self.schedule.validate()?;
        Ok(OptimizerState::new(self.schedule, self.clip))
    }

    pub fn init(&self, seed: u64) -> Result<Mlp> {
        let p: ParamSet = init_params(&self.layout, self.init_radius, seed)?;
        Mlp::new(self.layout.clone(), p)
    }

    /// Recorder for a fresh run, with the growth constant when available.
    pub fn recorder(&self, net: &Mlp, x_max: f64, target: TargetBound, stride: u64) -> Recorder {
        let k = growth_constant_k(&self.layout, x_max, target).ok();
        let norms = crate::network::param_norm(&net.params);
        let lambda = self.clip.map_or(f64::INFINITY, |c| c.lambda);
        Recorder::new(
            SubmartingaleTracker::new(lambda, k, norms.vb, norms.wu),
            stride,
        )
    }
}

/// Something noteworthy that happened during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub kind: String,
    pub detail: String,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts<M> {
    pub metrics: Vec<M>,
    pub telemetry: Vec<TelemetryRow>,
    pub events: Vec<Event>,
    pub net: Mlp,
    pub tracker: SubmartingaleTracker,
    pub final_metric: f64,
}

impl<M> RunArtifacts<M> {
    pub fn explosions(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EXPLOSION).count()
    }
}

pub const EXPLOSION: &str = "explosion";

/// Independent random stream `stream` for run `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializes rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(rows, header, &mut buf)?;
    Ok(buf)
}

pub const TELEMETRY_COLUMNS: [&str; 10] = [
    "step",
    "a_n",
    "norm_vb",
    "norm_wu",
    "psi_vb",
    "psi_wu",
    "qv",
    "grad_vb_norm_clipped",
    "grad_wu_norm",
    "loss",
];

pub const EVENT_COLUMNS: [&str; 3] = ["step", "kind", "detail"];

pub(crate) fn check_total(total: usize, what: &str) -> Result<()> {
    if total == 0 {
        Err(Error::Config(format!("{what} must be positive")))
    } else {
        Ok(())
    }
}
