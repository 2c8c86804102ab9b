use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clipnet_cli::{report, run, CliError, CliResult, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(
    name = "clipnet",
    version,
    about = "Run and summarize clipped-SGD experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Treat explosions as errors and stop scheduling seeds after a failure.
        #[arg(long)]
        fail_fast: bool,
    },
    /// Aggregate a finished experiment directory into report.json.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            fail_fast,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.or_else(|| cfg.out_dir.clone()).ok_or_else(|| {
                CliError::Config("no output directory: pass --out or set out_dir".into())
            })?;
            let summaries = run(
                &cfg,
                &RunOptions {
                    out,
                    jobs,
                    fail_fast,
                },
            )?;
            for s in summaries {
                let metric = s.final_metric.map_or("n/a".into(), |m| format!("{m:.6}"));
                println!(
                    "seed {}: final {metric}, sup|vb| {:.4}, explosions {}",
                    s.seed, s.sup_norm_vb, s.explosions
                );
            }
        }
        Command::Report { out } => {
            let r = report(&out)?;
            if let (Some(m), Some(sd)) = (r.final_mean, r.final_sd) {
                println!("{} seeds: final metric {m:.6} ± {sd:.6}", r.seeds.len());
            }
            for t in &r.tail_checks {
                let verdict = if t.pass { "pass" } else { "fail" };
                println!(
                    "tail x = {:.4}: frequency {:.4} vs bound {:.4} + {:.4} ({verdict})",
                    t.x, t.frequency, t.bound, t.half_width
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
