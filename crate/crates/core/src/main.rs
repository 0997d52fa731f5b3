use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use bridgelab::config::{RunConfig, Solver};
use bridgelab::data::DatasetSpec;
use bridgelab::error::{Error, Result};
use bridgelab::oracles::{
    gaussian_bridge_conditioning, nonmemoryless_terminal_cost_check, product_coupling, random_problem,
    sinkhorn_static_sb, total_variation, DiscreteBridgeProblem,
};
use bridgelab::rng::RngStream;
use bridgelab::run::{self, EvalOptions, RunDir, SampleOptions};
use bridgelab::sde::fmt17;
use bridgelab::ScheduleParams;

#[derive(Parser)]
#[command(name = "bridgelab", version, about = "Adjoint Schrödinger bridge matching at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration; the run directory is `<runs-root>/<name>`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Existing run directory (alternative to --config).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    runs_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the forward control and terminal corrector.
    TrainStage1(RunArgs),
    /// Fit the backward control by bridge matching.
    TrainStage2(RunArgs),
    /// Distill the backward control into a one-step generator.
    Distill(RunArgs),
    /// Draw samples with the backward solver.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        nfe: usize,
        #[arg(long, value_enum, default_value_t = SolverArg::Em)]
        solver: SolverArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
    /// Compute metrics.json (and plots) for a trained run.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Backward NFE values; replaces the configured list.
        #[arg(long, value_delimiter = ',')]
        nfe: Option<Vec<usize>>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Re-emit plots/*.svg from an evaluated run.
    Plot(RunArgs),
    /// Print exact reference computations as JSON.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        which: DataCommand,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Static bridge on a finite support: Sinkhorn vs terminal-cost tilting.
    Discrete {
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the VP transition kernel on a grid over [-2, 2] instead of a
        /// random kernel.
        #[arg(long)]
        beta_max: Option<f64>,
    },
    /// Bridge moments from Gaussian conditioning.
    Bridge {
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 4.0)]
        beta_max: f64,
        #[arg(long, default_value_t = 0.1)]
        beta_min: f64,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Write samples as CSV to stdout (or --out).
    Dump {
        #[arg(long, value_enum, default_value_t = DatasetArg::Ring)]
        dataset: DatasetArg,
        /// Take the dataset from a run configuration instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Em,
    Heun,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Ring,
    Moons,
    Checkerboard,
    Gaussian,
}

fn open_run(args: &RunArgs) -> Result<RunDir> {
    match (&args.config, &args.run) {
        (Some(c), None) => RunDir::create(&args.runs_root, RunConfig::load(c)?),
        (None, Some(r)) => {
            if !r.join(run::CONFIG_FILE).exists() {
                return Err(Error::Missing(r.join(run::CONFIG_FILE)));
            }
            RunDir::open(r)
        }
        _ => Err(Error::Config("give exactly one of --config or --run".into())),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string(v)?)?;
    Ok(())
}

fn oracle_discrete(size: usize, seed: u64, beta_max: Option<f64>) -> Result<()> {
    if size == 0 {
        return Err(Error::Config("size must be positive".into()));
    }
    let mut rng = RngStream::new(seed);
    let problem = match beta_max {
        None => random_problem(size, size, &mut rng)?,
        Some(b) => {
            let params = ScheduleParams::new(b, 0.1, 1)?;
            let grid: Vec<f64> = (0..size)
                .map(|i| if size == 1 { 0.0 } else { -2.0 + 4.0 * i as f64 / (size - 1) as f64 })
                .collect();
            let base = random_problem(size, size, &mut rng)?;
            DiscreteBridgeProblem::from_vp(&params, grid.clone(), grid, base.mu, base.nu)?
        }
    };
    let sol = sinkhorn_static_sb(&problem, 100_000, 1e-10)?;
    let check = nonmemoryless_terminal_cost_check(&problem, &sol)?;
    let product = product_coupling(problem.mu.view(), problem.nu.view());
    print_json(&json!({
        "problem": problem,
        "sinkhorn": sol,
        "terminal_cost": check.terminal_cost,
        "tilted": check.tilted,
        "tv_tilted_vs_sinkhorn": check.residual,
        "tv_sinkhorn_vs_product": total_variation(sol.coupling.view(), product.view()),
    }))
}

fn data_dump(dataset: DatasetSpec, n: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let x = dataset.sample(n, &mut RngStream::new(seed).fork("data"));
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record((0..x.ncols()).map(|k| format!("x{k}")))?;
    for row in x.outer_iter() {
        w.write_record(row.iter().map(|&v| fmt17(v)))?;
    }
    w.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainStage1(args) => {
            let run = open_run(&args)?;
            let out = run::train_stage1(&run)?;
            let last = out.history.last();
            print_json(&json!({
                "stage": "stage1",
                "run": run.root,
                "iterations": out.history.len(),
                "am_loss": last.map(|r| r.am_loss),
                "cm_loss": last.map(|r| r.cm_loss),
            }))
        }
        Command::TrainStage2(args) => {
            let run = open_run(&args)?;
            let out = run::train_stage2(&run)?;
            print_json(&json!({
                "stage": "stage2",
                "run": run.root,
                "iterations": out.history.len(),
                "bm_loss": out.history.last().map(|r| r.bm_loss),
            }))
        }
        Command::Distill(args) => {
            let run = open_run(&args)?;
            let out = run::distill(&run)?;
            print_json(&json!({
                "stage": "distill",
                "run": run.root,
                "warmup_mse": out.warmup_mse,
                "evals": out.evals,
            }))
        }
        Command::Sample { run: args, nfe, solver, seed, n } => {
            let run = open_run(&args)?;
            let solver = match solver {
                SolverArg::Em => Solver::Em,
                SolverArg::Heun => Solver::Heun,
            };
            let (summary, _) = run::sample(&run, &SampleOptions { nfe, solver, seed, n })?;
            print_json(&serde_json::to_value(summary)?)
        }
        Command::Eval { run: args, nfe, no_plots } => {
            let run = open_run(&args)?;
            let m = run::evaluate(&run, &EvalOptions { nfe, plots: !no_plots })?;
            print_json(&serde_json::to_value(m)?)
        }
        Command::Plot(args) => {
            let run = open_run(&args)?;
            let written = bridgelab::plot::emit_plots(&run.root)?;
            print_json(&json!({ "plots": written }))
        }
        Command::Oracle { which } => match which {
            OracleCommand::Discrete { size, seed, beta_max } => oracle_discrete(size, seed, beta_max),
            OracleCommand::Bridge { t, beta_max, beta_min } => {
                let params = ScheduleParams::new(beta_max, beta_min, 1)?;
                let m = gaussian_bridge_conditioning(&params, t)?;
                print_json(&json!({ "t": t, "beta_max": beta_max, "beta_min": beta_min, "moments": m }))
            }
        },
        Command::Data { which } => match which {
            DataCommand::Dump { dataset, config, n, seed, out } => {
                let spec = match config {
                    Some(c) => RunConfig::load(&c)?.dataset,
                    None => match dataset {
                        DatasetArg::Ring => DatasetSpec::GaussianRing8,
                        DatasetArg::Moons => DatasetSpec::TwoMoons,
                        DatasetArg::Checkerboard => DatasetSpec::Checkerboard,
                        DatasetArg::Gaussian => DatasetSpec::IsotropicGaussian { scale: 1.0, dim: 2 },
                    },
                };
                data_dump(spec, n, seed, out.as_deref())
            }
        },
    }
}

/// `error kind=<tag> exit=<code> message="<text>"` on one line.
fn diagnostic(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ").replace('"', "'");
    format!("error kind={} exit={} message=\"{}\"", e.kind(), e.exit_code(), msg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let first = e.to_string().lines().next().unwrap_or("").replace('"', "'");
                eprintln!("error kind=usage exit=2 message=\"{first}\"");
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
