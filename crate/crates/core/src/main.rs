use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use brinkman_dg::driver::{self, check, DriverError, Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "brinkman-dg", version, about = "IPDG Stokes-Brinkman eigenvalue experiments")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single assembly and eigensolve.
    Solve(RunArgs),
    /// Stabilization sweep over the penalty parameter.
    Sweep(RunArgs),
    /// Uniform refinement convergence study.
    Converge(RunArgs),
    /// Adaptive refinement loop.
    Adapt(RunArgs),
    /// Acceptance suite.
    Check {
        /// Criterion identifiers to run (for example `1 6a 9`); all if omitted.
        #[arg(long, num_args = 1..)]
        only: Vec<String>,
    },
}

fn load(args: &RunArgs, experiment: Experiment) -> Result<RunConfig, DriverError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if cfg.experiment != experiment {
        return Err(DriverError::Config(format!(
            "configuration is for {:?}, not {:?}",
            cfg.experiment, experiment
        )));
    }
    if let Some(out) = &args.out {
        cfg.output.dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<bool, DriverError> {
    match command {
        Command::Solve(a) => {
            let r = driver::run_solve(&load(&a, Experiment::Solve)?)?;
            println!("dofs {}, elements {}", r.dofs, r.elements);
            for p in &r.spectrum.pairs {
                println!("{:.10} {:+.3e}i  {}", p.lambda.re, p.lambda.im, p.class);
            }
        }
        Command::Sweep(a) => {
            let cfg = load(&a, Experiment::Sweep)?;
            let t = driver::run_sweep(&cfg, &cfg.sweep.a_grid)?;
            for s in &t.summary {
                let clean = s.smallest_clean_a.map_or("none".into(), |a| a.to_string());
                println!("epsilon {:2}, kappa {:e}: smallest clean a = {clean}", s.epsilon, s.kappa);
            }
            for f in &t.failures {
                println!("failed: a = {}, epsilon = {}, kappa = {:e}: {}", f.0, f.1, f.2, f.3);
            }
        }
        Command::Converge(a) => {
            let cfg = load(&a, Experiment::Converge)?;
            let t = driver::run_convergence(&cfg, &cfg.converge.n_list)?;
            println!("reference: {}", t.reference_source);
            for (i, r) in t.rates.iter().enumerate() {
                match r {
                    Some(r) => println!("lambda_{}: {:.10}, h-rate {:.3}", i + 1, t.reference[i], r.h_rate),
                    None => println!("lambda_{}: {:.10}, no rate", i + 1, t.reference[i]),
                }
            }
        }
        Command::Adapt(a) => {
            let r = driver::run_adapt(&load(&a, Experiment::Adapt)?)?;
            for x in &r.run.records {
                println!("iter {:2}: dof {:7}, lambda_h {:.10}, eta {:.4e}", x.iter, x.dof, x.lambda_h, x.eta);
            }
            if let Some(f) = &r.tail_fit {
                println!("error slope against dof: {:.3}", f.dof_slope);
            }
            if let Some(f) = &r.run.failure {
                println!("stopped early: {f}");
                return Ok(false);
            }
        }
        Command::Check { only } => {
            if let Some(bad) = only.iter().find(|o| *o != "6" && !check::CRITERIA.contains(&o.as_str())) {
                return Err(DriverError::Config(format!("unknown criterion {bad}")));
            }
            let results = check::run_selected(&only);
            for r in &results {
                println!("{r}");
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
