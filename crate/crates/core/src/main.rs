use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spectralflow::check::{format_table, run_all};
use spectralflow::cli::{self, CHECKPOINT, RUN_CSV, SUMMARY_CSV};
use spectralflow::config::DEFAULT_REFERENCE_GRID;
use spectralflow::plot::PlotOptions;
use spectralflow::potentials::PotentialSpec;
use spectralflow::reference::{ReferenceSolution, DEFAULT_TOL};

#[derive(Parser)]
#[command(name = "spectralflow", version, about = "Ground eigenpairs of -Laplacian + W by particle gradient flow")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One flow; writes run.csv, run.json and final.ckpt.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reference_file: Option<PathBuf>,
    },
    /// Independent runs with seeds seed, seed+1, ...; writes a summary CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to `[output] runs`.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        reference_file: Option<PathBuf>,
    },
    /// Finite-difference ground eigenpair on the unit square.
    Reference {
        #[arg(long)]
        potential: PotentialSpec,
        #[arg(long, default_value_t = DEFAULT_REFERENCE_GRID)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invariant suite; exit status 0 iff every check passes.
    Check,
    /// SVG of one metric against step for run or sweep CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "rayleigh")]
        metric: String,
        #[arg(long)]
        log: bool,
        /// Draws the reference eigenvalue as a horizontal rule.
        #[arg(long)]
        reference_file: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> spectralflow::Result<ExitCode> {
    match args.command {
        Command::Run { config, out, seed, reference_file } => {
            let cfg = cli::load_config(&config, seed)?;
            let reference = cli::load_reference(&cfg, reference_file.as_deref())?;
            let out = cli::output_dir(&cfg, out.as_deref());
            let record = cli::cmd_run(&cfg, reference.as_ref(), &out)?;
            let last = record.final_row();
            println!("steps      {}", last.step);
            println!("sigma_mu   {:.6}", last.sigma_mu);
            println!("rayleigh   {:.6}", last.rayleigh);
            if let Some(r) = &reference {
                println!("reference  {:.6}  (N = {})", r.lambda, r.intervals);
                println!("l2_error   {:.6}", last.l2_error);
            }
            println!("wrote {} and {}", out.join(RUN_CSV).display(), out.join(CHECKPOINT).display());
            if let Some(msg) = &record.incomplete {
                eprintln!("run stopped early: {msg}");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out, runs, seed, parallel, reference_file } => {
            let cfg = cli::load_config(&config, seed)?;
            let reference = cli::load_reference(&cfg, reference_file.as_deref())?;
            let out = cli::output_dir(&cfg, out.as_deref());
            let runs = runs.unwrap_or(cfg.output.runs);
            let (_, summary) = cli::cmd_sweep(&cfg, runs, reference.as_ref(), &out, parallel)?;
            let (mean, var) = summary.column("rayleigh").expect("rayleigh is a sweep metric");
            if let (Some(m), Some(v)) = (mean.last(), var.last()) {
                println!("runs {}  rayleigh mean {m:.6}  variance {v:.3e}", summary.runs);
            }
            println!("config hash {}", summary.config_hash);
            println!("wrote {}", out.join(SUMMARY_CSV).display());
            if !summary.incomplete.is_empty() {
                eprintln!("runs stopped early: {:?}", summary.incomplete);
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Reference { potential, grid, tol, out } => {
            let (sol, rich) = cli::cmd_reference(&potential, grid, tol, &out)?;
            println!("lambda({grid}) = {:.10}  residual {:.2e}", sol.lambda, sol.residual);
            if let Some(r) = rich {
                if r.degenerate {
                    println!("richardson: degenerate sequence, lambda = {:.10}", r.extrapolated);
                } else {
                    println!("richardson: order {:.3}, extrapolated {:.10}", r.order, r.extrapolated);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let outcomes = run_all();
            print!("{}", format_table(&outcomes));
            Ok(if outcomes.iter().all(|o| o.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Plot { csv, out, metric, log, reference_file } => {
            let reference = reference_file.map(ReferenceSolution::read).transpose()?.map(|r| r.lambda);
            let opts = PlotOptions { metric, log_y: log, reference, ..PlotOptions::default() };
            cli::cmd_plot(&csv, &out, &opts)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
