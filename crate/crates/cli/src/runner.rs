//! Multi-seed execution and per-seed output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use clipnet::network::{params_to_bytes, LayoutSidecar};
use clipnet::rl::{train_dqn, DQN_METRIC_COLUMNS};
use clipnet::run::{csv_bytes, NetSpec, RunArtifacts, EVENT_COLUMNS, TELEMETRY_COLUMNS};
use clipnet::supervised::{train_classification, train_regression, Dataset, EPOCH_COLUMNS};
use clipnet::telemetry::{moments_from_sups, MomentReport};
use clipnet::HeadKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Track};
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "experiment.cfg";
pub const SEED_FILES: [&str; 6] = [
    "metrics.csv",
    "telemetry.csv",
    "events.csv",
    "params.bin",
    "params.json",
    "summary.json",
];

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub track: String,
    pub seed: u64,
    /// Last evaluation; empty when it was not finite.
    pub final_metric: Option<f64>,
    pub sup_norm_vb: f64,
    pub sup_norm_wu: f64,
    pub psi_vb_final: f64,
    pub psi_wu_final: Option<f64>,
    pub explosions: usize,
    pub moments: Vec<MomentReport>,
    /// Output-gradient bound used by the tracker; empty when unbounded.
    pub lambda: Option<f64>,
    /// `Σ a(m)^2` over the steps taken.
    pub sum_sq_steps: f64,
    pub steps: u64,
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
    pub fail_fast: bool,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Inputs shared by every seed, built before anything touches the disk.
struct Prepared {
    spec: NetSpec,
    data: Option<Dataset>,
}

fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    match cfg.track {
        Track::Dqn => Ok(Prepared {
            spec: cfg.net_spec(4, HeadKind::QValues { m: 3 })?,
            data: None,
        }),
        Track::Regress | Track::Classify => {
            let data = cfg.dataset()?;
            let head = match (cfg.track, data.classes()) {
                (Track::Regress, None) => HeadKind::Scalar,
                (Track::Classify, Some(k)) => HeadKind::Softmax { k },
                _ => {
                    return Err(CliError::Config(
                        "data targets do not match the track".into(),
                    ))
                }
            };
            Ok(Prepared {
                spec: cfg.net_spec(data.dim(), head)?,
                data: Some(data),
            })
        }
    }
}

fn write_seed<M: Serialize>(
    dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    run: &RunArtifacts<M>,
    metric_columns: &[&str],
) -> CliResult<SeedSummary> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let t = &run.tracker;
    let lambda = finite(t.lambda);
    let moments = match lambda {
        Some(l) => cfg
            .moments
            .iter()
            .map(|&k| moments_from_sups(&[t.sup_norm_vb], k, l, t.s))
            .collect(),
        None => Vec::new(),
    };
    let summary = SeedSummary {
        track: cfg.track.to_string(),
        seed,
        final_metric: finite(run.final_metric),
        sup_norm_vb: t.sup_norm_vb,
        sup_norm_wu: t.sup_norm_wu,
        psi_vb_final: t.psi_vb,
        psi_wu_final: t.psi_wu,
        explosions: run.explosions(),
        moments,
        lambda,
        sum_sq_steps: t.s,
        steps: t.n,
        config: cfg.to_map(),
    };
    write_atomic(
        &dir.join("metrics.csv"),
        &csv_bytes(&run.metrics, metric_columns)?,
    )?;
    write_atomic(
        &dir.join("telemetry.csv"),
        &csv_bytes(&run.telemetry, &TELEMETRY_COLUMNS)?,
    )?;
    write_atomic(
        &dir.join("events.csv"),
        &csv_bytes(&run.events, &EVENT_COLUMNS)?,
    )?;
    write_atomic(&dir.join("params.bin"), &params_to_bytes(&run.net.params))?;
    let sidecar = LayoutSidecar::from_layout(run.net.layout());
    write_atomic(
        &dir.join("params.json"),
        &serde_json::to_vec_pretty(&sidecar)?,
    )?;
    write_atomic(
        &dir.join("summary.json"),
        &serde_json::to_vec_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn run_seed(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    seed: u64,
    opts: &RunOptions,
) -> CliResult<SeedSummary> {
    let dir = seed_dir(&opts.out, seed);
    match cfg.track {
        Track::Dqn => {
            let mut d = cfg.dqn.clone();
            d.fail_fast = opts.fail_fast;
            let run = train_dqn(&d, &prep.spec, seed)?;
            write_seed(&dir, cfg, seed, &run, &DQN_METRIC_COLUMNS)
        }
        Track::Regress | Track::Classify => {
            let data = prep.data.as_ref().expect("supervised tracks carry data");
            let mut t = cfg.train.clone();
            t.seed = seed;
            let run = if cfg.track == Track::Regress {
                train_regression(&t, &prep.spec, data)?
            } else {
                train_classification(&t, &prep.spec, data)?
            };
            write_seed(&dir, cfg, seed, &run, &EPOCH_COLUMNS)
        }
    }
}

/// Runs every seed of `cfg`. Configuration problems are reported before any
/// file is created. Seeds run on up to `jobs` threads; with `fail_fast` the
/// seeds not yet started are skipped after the first failure.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Vec<SeedSummary>> {
    if opts.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let prep = prepare(cfg)?;

    fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    write_atomic(&opts.out.join(CONFIG_FILE), cfg.to_text().as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let abort = AtomicBool::new(false);
    let results: Vec<(u64, Option<CliResult<SeedSummary>>)> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                if abort.load(Ordering::SeqCst) {
                    return (seed, None);
                }
                let r = run_seed(cfg, &prep, seed, opts);
                if r.is_err() && opts.fail_fast {
                    abort.store(true, Ordering::SeqCst);
                }
                (seed, Some(r))
            })
            .collect()
    });

    let total = results.len();
    let mut summaries = Vec::new();
    let (mut failed, mut breach) = (0, false);
    for (seed, r) in results {
        match r {
            Some(Ok(s)) => summaries.push(s),
            Some(Err(e)) => {
                eprintln!("seed {seed}: {e}");
                breach |= e.exit_code() == 3;
                failed += 1;
            }
            None => {
                eprintln!("seed {seed}: skipped after an earlier failure");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Runs {
            failed,
            total,
            breach,
        });
    }
    Ok(summaries)
}
