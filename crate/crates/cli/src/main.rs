use std::path::PathBuf;
use std::process::ExitCode;

use calmed_mhdb::calming::CalmingFamily;
use calmed_mhdb::io::{
    load_sweep_plan, run_riccati, run_simulation, run_sweep, run_verify, sweep_workers, IoError, Overrides,
    RunConfig, VerifyOptions,
};
use clap::{Args, Parser, Subcommand};

/// Calmed MHD-Boussinesq solver and verification tools.
#[derive(Parser)]
#[command(name = "calmed-mhdb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write energy.csv, snapshots and summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
        /// steps between checkpoints
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// continue from a checkpoint written by the same configuration
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run an epsilon sweep against the uncalmed reference; writes sweep.csv and ratefit.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Compare the closed-form calmed Riccati solution with numerical integration.
    Riccati {
        #[arg(long, default_value_t = 1.0)]
        y0: f64,
        /// comma-separated; 0 selects the uncalmed equation
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.01])]
        epsilon: Vec<f64>,
        /// comma-separated evaluation times
        #[arg(long = "t", value_delimiter = ',', default_values_t = [0.0, 0.5, 0.9, 2.0, 5.0])]
        times: Vec<f64>,
        /// also write riccati.csv here
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check the calming hypotheses and the structural identities.
    Verify {
        /// comma-separated families (default: every calmed family)
        #[arg(long, value_delimiter = ',')]
        calming: Vec<CalmingFamily>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.1, 0.01])]
        epsilon: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// grid for the identity checks
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// seeded random fields for the identity checks
        #[arg(long, default_value_t = 10)]
        fields: u64,
        #[arg(long, hide = true)]
        corrupt_constant: bool,
    },
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    calming: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long)]
    snapshot_every: Option<u64>,
}

impl RunOverrides {
    fn into_overrides(self, checkpoint_every: Option<u64>) -> Overrides {
        Overrides {
            output_dir: self.output_dir,
            epsilon: self.epsilon,
            calming: self.calming,
            grid: self.grid,
            dt: self.dt,
            t_final: self.t_final,
            seed: self.seed,
            record_every: self.record_every,
            snapshot_every: self.snapshot_every,
            checkpoint_every,
        }
    }
}

fn fail(err: IoError) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn run(command: Command) -> Result<ExitCode, IoError> {
    match command {
        Command::Simulate {
            config,
            overrides,
            checkpoint_every,
            resume,
        } => {
            let cfg = RunConfig::load(&config, &overrides.into_overrides(checkpoint_every))?;
            let summary = run_simulation(&cfg, resume.as_deref())?;
            println!(
                "finished step {} (t = {}), energy {:.6e}; output in {}",
                summary.final_step,
                summary.final_t,
                summary.final_record.energy(),
                cfg.output_dir.display()
            );
        }
        Command::Sweep { config, overrides } => {
            if overrides.snapshot_every.is_some() {
                eprintln!("note: --snapshot-every has no effect on a sweep");
            }
            let mut ov = overrides.into_overrides(None);
            ov.snapshot_every = None;
            let (plan, out) = load_sweep_plan(&config, &ov)?;
            let workers = sweep_workers()?;
            let report = run_sweep(&plan, &out, workers)?;
            println!("{:>10} {:>14} {:>14}", "epsilon", "e_inf", "e_int");
            for e in &report.entries {
                println!("{:>10.4e} {:>14.6e} {:>14.6e}", e.epsilon, e.e_inf, e.e_int);
            }
            if report.all_zero {
                println!("all errors are exactly zero");
            }
            if let (Some(a), Some(b)) = (&report.fit_inf, &report.fit_int) {
                println!("slope e_inf {:.4} (r^2 {:.5}), e_int {:.4} (r^2 {:.5})", a.slope, a.r_squared, b.slope, b.r_squared);
            }
            if !report.is_monotone() {
                println!("warning: e_inf grows along the ladder at epsilon {:?}", report.monotonicity_violations);
            }
        }
        Command::Riccati {
            y0,
            epsilon,
            times,
            output_dir,
        } => {
            let (_, table) = run_riccati(y0, &epsilon, &times, output_dir.as_deref())?;
            print!("{table}");
        }
        Command::Verify {
            calming,
            epsilon,
            samples,
            grid,
            fields,
            corrupt_constant,
        } => {
            let opts = VerifyOptions {
                families: if calming.is_empty() { CalmingFamily::CALMED.to_vec() } else { calming },
                epsilons: epsilon,
                samples,
                identity_fields: fields,
                n: grid,
                corrupt_constant,
            };
            let outcome = run_verify(&opts)?;
            for line in &outcome.lines {
                println!("{line}");
            }
            if !outcome.passed {
                eprintln!("verification failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    run(cli.command).unwrap_or_else(fail)
}
