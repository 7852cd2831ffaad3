use clap::{Parser, Subcommand};
use neb::cli;
use neb::config::RunConfig;
use neb::selftest::FaultInjection;
use neb::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Shrinkage estimation for count data: fit on a CSV, reproduce the
/// simulation studies, or run the built-in health checks.
#[derive(Debug, Parser)]
#[command(name = "neb", version, about)]
struct Args {
    /// TOML config file supplying defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed for anything random.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Thread cap for parallel sections (0 = runtime default).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the estimator on a count CSV (column `y`, optional constant `m`).
    Estimate {
        /// Input CSV path.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Model family: poisson or binomial.
        #[arg(long)]
        model: Option<String>,
        /// Binomial trial count (alternative to an `m` column).
        #[arg(long)]
        m: Option<u32>,
        /// Loss index: 0 squared error, 1 scaled squared error.
        #[arg(long)]
        k: Option<u8>,
        /// Fixed bandwidth instead of a grid search.
        #[arg(long)]
        lambda: Option<f64>,
        /// Grid lower end.
        #[arg(long)]
        grid_lo: Option<f64>,
        /// Grid upper end.
        #[arg(long)]
        grid_hi: Option<f64>,
        /// Number of grid points.
        #[arg(long)]
        grid_points: Option<usize>,
        /// Drop the monotonicity rows (ablation).
        #[arg(long)]
        no_monotone: bool,
    },
    /// Monte-Carlo comparison of estimators on a built-in scenario.
    Simulate {
        /// Scenario id: P1..P4 (Poisson), B1..B4 (Binomial).
        #[arg(long)]
        scenario: Option<String>,
        /// Loss index: 0 or 1.
        #[arg(long)]
        k: Option<u8>,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Monte-Carlo repetitions.
        #[arg(long)]
        reps: Option<usize>,
        /// Estimators: neb, neb-or, robbins, bayes-oracle.
        #[arg(long, value_delimiter = ',')]
        estimators: Vec<String>,
        /// Risk-table format: csv, text or json.
        #[arg(long)]
        format: Option<String>,
    },
    /// Run the fast identity/oracle/solver checks and exit nonzero on failure.
    Selftest {
        /// Deliberately corrupt the kernel convention to prove the
        /// equivalence check can fail.
        #[arg(long)]
        inject_kernel_fault: bool,
    },
}

fn merged_config(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.io.out_dir = Some(out.display().to_string());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    match &args.command {
        Command::Estimate {
            input,
            model,
            m,
            k,
            lambda,
            grid_lo,
            grid_hi,
            grid_points,
            no_monotone,
        } => {
            if let Some(input) = input {
                cfg.io.input = Some(input.display().to_string());
            }
            if let Some(model) = model {
                cfg.model.family = model.clone();
            }
            if let Some(m) = m {
                cfg.model.m = Some(*m);
            }
            if let Some(k) = k {
                cfg.model.k = *k;
            }
            if let Some(lambda) = lambda {
                cfg.grid.fixed = Some(*lambda);
            }
            if let Some(lo) = grid_lo {
                cfg.grid.lo = *lo;
            }
            if let Some(hi) = grid_hi {
                cfg.grid.hi = *hi;
            }
            if let Some(points) = grid_points {
                cfg.grid.points = *points;
            }
            if *no_monotone {
                cfg.constraints.monotone = false;
            }
        }
        Command::Simulate {
            scenario,
            k,
            n,
            reps,
            estimators,
            format,
        } => {
            if let Some(scenario) = scenario {
                cfg.sim.scenario = Some(scenario.clone());
            }
            if let Some(k) = k {
                cfg.model.k = *k;
            }
            if !n.is_empty() {
                cfg.sim.n = n.clone();
            }
            if let Some(reps) = reps {
                cfg.sim.reps = *reps;
            }
            if !estimators.is_empty() {
                cfg.sim.estimators = estimators.clone();
            }
            if let Some(format) = format {
                cfg.io.format = format.clone();
            }
        }
        Command::Selftest { .. } => {}
    }
    if cfg.io.format.is_empty() {
        cfg.io.format = "csv".into();
    }
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let cfg = match merged_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
        {
            eprintln!("warning: thread pool: {e}");
        }
    }
    let result = match &args.command {
        Command::Estimate { .. } => cli::cmd_estimate(&cfg).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
        Command::Simulate { .. } => cli::cmd_simulate(&cfg).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
        Command::Selftest {
            inject_kernel_fault,
        } => {
            let faults = FaultInjection {
                kernel_convention: *inject_kernel_fault,
            };
            match cli::cmd_selftest(faults, std::io::stdout()) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::from(1),
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
