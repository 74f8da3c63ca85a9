use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use risdma_core::bench::{self, ExperimentSpec};

/// SAR-constrained SE maximization experiments for RIS + DMA uplinks.
#[derive(Parser)]
#[command(name = "risdma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Configuration file (`key = value` lines).
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (default: `$RISDMA_OUT_DIR/<experiment>.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run(RunOpts),
    /// Print the default configuration.
    Defaults {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the deterministic equivalent against Monte Carlo.
    DeCheck(RunOpts),
}

fn load(opts: &RunOpts) -> Result<ExperimentSpec, String> {
    let mut spec = bench::load_config(&opts.config).map_err(|e| format!("{}: {e}", opts.config.display()))?;
    if let Some(seed) = opts.seed {
        spec.seeds = vec![seed];
    }
    Ok(spec)
}

fn run(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Defaults { out } => {
            let text = ExperimentSpec::default().to_config_string();
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Run(opts) => {
            let spec = load(&opts)?;
            let out = bench::resolve_output(opts.out.as_deref(), &spec, &format!("{}.csv", spec.experiment.id()));
            let rows = bench::run_experiment(&spec, opts.jobs).map_err(|e| e.to_string())?;
            bench::write_results(&rows, &out).map_err(|e| format!("{}: {e}", out.display()))?;
            let failed: Vec<_> = rows.iter().filter(|r| r.is_error()).collect();
            eprintln!("{} rows written to {}", rows.len(), out.display());
            if failed.is_empty() {
                Ok(())
            } else {
                for r in &failed {
                    eprintln!(
                        "failed: seed {} pmax {} dBm D {} {}: {}",
                        r.seed,
                        r.pmax_dbm,
                        r.sar_budget,
                        r.variant,
                        r.error.as_deref().unwrap_or("")
                    );
                }
                Err(format!("{} of {} rows failed", failed.len(), rows.len()))
            }
        }
        Command::DeCheck(opts) => {
            let spec = load(&opts)?;
            let out = bench::resolve_output(opts.out.as_deref(), &spec, "de_check.csv");
            let rows = bench::de_accuracy_report(&spec, opts.jobs).map_err(|e| e.to_string())?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            }
            std::fs::write(&out, bench::de_report_csv(&rows)).map_err(|e| format!("{}: {e}", out.display()))?;
            eprintln!("{} rows written to {}", rows.len(), out.display());
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(format!("{failed} of {} rows failed", rows.len()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
