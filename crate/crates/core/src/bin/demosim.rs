use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use demosim::harness::{self, ExperimentConfig, SweepAxis};
use demosim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "demosim",
    version,
    about = "Simulate decoupled-momentum data-parallel training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment and write its metrics.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one experiment per value of a single axis.
    Sweep {
        config: PathBuf,
        /// compression, chunk_size, top_k, sign, dtype, scheme or bandwidth (Mbps).
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; defaults to the standard grid for the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the built-in oracle checks.
    Verify,
}

#[derive(Args)]
struct Overrides {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
}

impl Overrides {
    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.replicator.seed = seed;
        }
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = overrides.apply(harness::load_config(&config)?)?;
            let out = harness::run_experiment(&cfg, &cfg.output.dir)?;
            let s = &out.summary;
            println!(
                "{} steps, final train loss {}, val loss {}, inter-node bytes {}, sim time {:.3}s -> {}",
                s.steps_completed,
                fmt_opt(s.final_train_loss),
                fmt_opt(s.final_val_loss),
                s.traffic.inter_bytes,
                s.traffic.sim_time_s,
                cfg.output.dir.display()
            );
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            overrides,
        } => {
            let cfg = overrides.apply(harness::load_config(&config)?)?;
            let values = if values.is_empty() {
                harness::sweep::default_values(axis)
            } else {
                values
            };
            let report = harness::sweep(&cfg, axis, &values, &cfg.output.dir)?;
            for p in &report.points {
                println!(
                    "{axis}={}: {} (val loss {}, inter-node bytes {}, sim time {:.3}s)",
                    p.value,
                    p.status,
                    fmt_opt(p.final_val_loss),
                    p.inter_bytes,
                    p.sim_time_s
                );
            }
            match report.failures() {
                0 => Ok(()),
                n => Err(Error::Protocol(format!(
                    "{n} of {} sweep points failed",
                    report.points.len()
                ))),
            }
        }
        Command::Verify => {
            let report = harness::verify();
            print!("{report}");
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::Protocol("verification failed".into()))
            }
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
