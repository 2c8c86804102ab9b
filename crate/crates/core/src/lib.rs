//! Two-block gradient clipping for small multilayer perceptrons.
//!
//! The output block (last linear layer) is updated with a clipped gradient,
//! the inner block with plain SGD. Telemetry tracks envelope processes that
//! dominate the block norms.

pub mod activations;
pub mod error;
pub mod losses;
pub mod network;
pub mod optimizer;
pub mod rl;
pub mod run;
pub mod supervised;
pub mod telemetry;

pub use activations::{ActRange, ActivationKind};
pub use error::{Error, Result};
pub use losses::{GradMode, LossKind};
pub use network::{
    flatten, load, param_norm, ForwardCache, GradSplit, HeadKind, HeadOutput, LayerSpec, Layout,
    LayoutSidecar, Mlp, ParamNorms, ParamSet,
};
pub use optimizer::{init_params, ClipConfig, OptimizerState, StepReport, StepSchedule};
pub use telemetry::{SubmartingaleTracker, TargetBound, TelemetryRow};
