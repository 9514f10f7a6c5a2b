use clap::{Parser, Subcommand, ValueEnum};
use evnsp_core::config::RunConfig;
use evnsp_core::diagnostics::{write_csv_header, write_csv_row};
use evnsp_core::verify::{self, OperatorSet, Suite, VerifyOptions};
use evnsp_core::{runner, runtime, Error};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "evnsp", version, about = "Damped elastic Navier-Stokes-Poisson solver on a periodic slab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration and write diagnostics and snapshots.
    Run {
        config: PathBuf,
        /// Continue from a snapshot written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the convergence suites and report measured orders.
    Verify {
        /// Suite to run; repeat for several. Defaults to all.
        #[arg(long = "suite")]
        suites: Vec<String>,
        /// Cell counts across the slab, coarsest first.
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64])]
        levels: Vec<usize>,
        /// Swap in a first-order gradient to check that the operator suite fails.
        #[arg(long)]
        inject_broken_stencil: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Write the initial state of a configuration without integrating.
    Init {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one diagnostics row for a stored snapshot.
    Diag { snapshot: PathBuf, config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

/// Failure with the run position, when there is one.
struct Failure {
    error: Error,
    at: Option<(u64, f64)>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, at: None }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprint!("{}", f.error.report(f.at));
            ExitCode::from(f.error.exit_code() as u8)
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(path)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    runtime::init()?;
    match command {
        Command::Run { config, resume } => {
            let cfg = load(&config)?;
            let summary = runner::run(&cfg, resume.as_deref())
                .map_err(|a| Failure { error: a.error, at: Some((a.step, a.time)) })?;
            println!(
                "completed {} steps to t = {} in {}; E_total {:.6e} -> {:.6e}",
                summary.steps,
                summary.time,
                summary.out_dir.display(),
                summary.first.e_total,
                summary.last.e_total
            );
        }
        Command::Verify { suites, levels, inject_broken_stencil, format } => {
            let suites = if suites.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suites.iter().map(|s| Suite::parse(s)).collect::<Result<Vec<_>, _>>()?
            };
            let operators = if inject_broken_stencil { OperatorSet::broken_gradient() } else { OperatorSet::standard() };
            let report = verify::run(&suites, &VerifyOptions { levels, operators });
            match format {
                Format::Json => {
                    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Verification(e.to_string()))?;
                    let _ = writeln!(std::io::stdout(), "{text}");
                }
                Format::Text => {
                    for s in &report.suites {
                        println!("[{}] {} ({:.1} s)", s.suite, if s.passed { "PASS" } else { "FAIL" }, s.seconds);
                        if let Some(e) = &s.error {
                            println!("  error: {e}");
                        }
                        for c in &s.checks {
                            println!("  {c}");
                        }
                    }
                    println!("total {:.1} s", report.seconds);
                }
            }
            report.into_result()?;
        }
        Command::Init { config, out } => {
            let cfg = load(&config)?;
            runner::write_initial(&cfg, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Diag { snapshot, config } => {
            let cfg = load(&config)?;
            let rec = runner::diagnose(&cfg, &snapshot)?;
            let mut out = std::io::stdout().lock();
            write_csv_header(&mut out, cfg.bipolar).map_err(Error::from)?;
            write_csv_row(&mut out, &rec).map_err(Error::from)?;
            out.flush().map_err(Error::from)?;
        }
    }
    Ok(())
}
