use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use draa_core::config::{ExperimentConfig, SweepSpec};
use draa_core::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "draa", version, about = "Multi-agent bandit simulations under adversarial corruption")]
struct Cli {
    /// Worker threads for seeds and sweep points (0 = all cores).
    #[arg(long, global = true, env = "DRAA_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output.dir`.
        #[arg(long, env = "DRAA_OUTPUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and write an aggregated table.
    Sweep {
        spec: PathBuf,
        #[arg(long, env = "DRAA_OUTPUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite against a config.
    Verify {
        config: PathBuf,
        /// Also write the reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print a run summary.
    Show { summary: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            if code == 3 {
                eprintln!("error: internal invariant violation");
            }
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

fn output_dir(flag: Option<PathBuf>, configured: &Path) -> PathBuf {
    flag.unwrap_or_else(|| configured.to_owned())
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { config, out } => {
            let prepared = harness::prepare_file(&config)?;
            let dir = output_dir(out, &prepared.config.output.dir);
            let summaries = harness::run(&prepared, &dir)?;
            for s in &summaries {
                println!(
                    "seed {:>6}  regret {:>14.3}  corruption {:>12.3}  comm {:>4}  epochs {}",
                    s.seed, s.total_regret, s.corruption.total, s.comm_cost, s.num_epochs
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Sweep { spec, out } => {
            let spec = SweepSpec::load(&spec).map_err(HarnessError::from)?;
            let dir = output_dir(out, &spec.base.output.dir);
            let rows = harness::sweep(&spec, &dir)?;
            for r in &rows {
                println!(
                    "point {:>3} [{}]  regret {:.3} ± {:.3}  comm {:.1}  corruption {:.3}",
                    r.point,
                    r.labels.join(", "),
                    r.mean_regret,
                    r.stderr_regret,
                    r.mean_comm_cost,
                    r.mean_corruption
                );
            }
            println!("wrote {}", dir.join("sweep.csv").display());
        }
        Command::Verify { config, json } => {
            let prepared = ExperimentConfig::load(&config).and_then(|c| c.prepare()).map_err(HarnessError::from)?;
            let reports = harness::verify(&prepared)?;
            print!("{}", harness::render_reports(&reports));
            if let Some(path) = json {
                let text = harness::reports_json(&reports)?;
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} checks, {} failed", reports.len(), failed);
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Show { summary } => {
            let s = harness::load_summary(&summary)?;
            print!("{}", harness::render_summary(&s));
        }
    }
    Ok(ExitCode::SUCCESS)
}
