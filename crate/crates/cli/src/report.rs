//! Cross-seed summary of a completed experiment directory.

use std::fs;
use std::path::Path;

use clipnet::telemetry::{mean_sd, moment_bound_b, tail_frequency_check, MomentReport, TailCheck};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{seed_dir, write_atomic, SeedSummary, CONFIG_FILE, SEED_FILES};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub final_metric: Option<f64>,
    pub sup_norm_vb: f64,
    pub psi_vb_final: f64,
    pub explosions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub track: String,
    pub seeds: Vec<SeedFinal>,
    /// Mean and population SD of the final metric; empty if any seed has none.
    pub final_mean: Option<f64>,
    pub final_sd: Option<f64>,
    pub sup_norm_vb_mean: f64,
    pub sup_norm_vb_sd: f64,
    pub explosions_total: usize,
    pub lambda: Option<f64>,
    pub sum_sq_steps: f64,
    /// One entry per configured multiple of `λ sqrt(S)`.
    pub tail_checks: Vec<TailCheck>,
    /// Cross-seed mean of `(sup ‖θ^vb‖)^k` against `B(k)`.
    pub moments: Vec<MomentReport>,
}

/// Aggregates per-seed summaries. Tail checks and moments need a finite λ
/// and the same `S` on every seed.
pub fn aggregate(
    summaries: &[SeedSummary],
    multiples: &[f64],
    orders: &[u32],
) -> CliResult<Report> {
    let first = summaries
        .first()
        .ok_or_else(|| CliError::Config("report needs at least one completed seed".into()))?;
    let s = first.sum_sq_steps;
    let lambda = first.lambda;
    for x in summaries {
        if x.track != first.track {
            return Err(CliError::Config(
                "summaries come from different tracks".into(),
            ));
        }
        if x.lambda != lambda || (x.sum_sq_steps - s).abs() > 1e-9 * s.abs().max(1.0) {
            return Err(CliError::Config(format!(
                "seed {} ran with a different λ or step-size sum than seed {}",
                x.seed, first.seed
            )));
        }
    }
    let finals: Option<Vec<f64>> = summaries.iter().map(|x| x.final_metric).collect();
    let (final_mean, final_sd) = match finals {
        Some(f) => {
            let (m, sd) = mean_sd(&f);
            (Some(m), Some(sd))
        }
        None => (None, None),
    };
    let sups: Vec<f64> = summaries.iter().map(|x| x.sup_norm_vb).collect();
    let (sup_norm_vb_mean, sup_norm_vb_sd) = mean_sd(&sups);
    let psi: Vec<f64> = summaries.iter().map(|x| x.psi_vb_final).collect();
    let (tail_checks, moments) = match lambda {
        Some(l) => (
            tail_frequency_check(&psi, l, s, multiples),
            orders
                .iter()
                .map(|&k| MomentReport {
                    k,
                    empirical: sups.iter().map(|v| v.powi(k as i32)).sum::<f64>()
                        / sups.len() as f64,
                    bound: moment_bound_b(k, l, s),
                    runs: sups.len(),
                })
                .collect(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    Ok(Report {
        track: first.track.clone(),
        seeds: summaries
            .iter()
            .map(|x| SeedFinal {
                seed: x.seed,
                final_metric: x.final_metric,
                sup_norm_vb: x.sup_norm_vb,
                psi_vb_final: x.psi_vb_final,
                explosions: x.explosions,
            })
            .collect(),
        final_mean,
        final_sd,
        sup_norm_vb_mean,
        sup_norm_vb_sd,
        explosions_total: summaries.iter().map(|x| x.explosions).sum(),
        lambda,
        sum_sq_steps: s,
        tail_checks,
        moments,
    })
}

/// Reads every seed of the experiment in `out`, writes `report.json` and
/// returns its contents. Absent files are listed together in the error.
pub fn report(out: &Path) -> CliResult<Report> {
    let cfg_path = out.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path)
        .map_err(|_| CliError::Missing(vec![cfg_path.display().to_string()]))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let missing: Vec<String> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| SEED_FILES.iter().map(move |f| seed_dir(out, seed).join(f)))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }
    let summaries = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let p = seed_dir(out, seed).join("summary.json");
            let bytes = fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            Ok(serde_json::from_slice(&bytes)?)
        })
        .collect::<CliResult<Vec<SeedSummary>>>()?;
    let report = aggregate(&summaries, &cfg.tail_multiples, &cfg.moments)?;
    write_atomic(&out.join(REPORT_FILE), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
