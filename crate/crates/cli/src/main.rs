use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgGroup, CommandFactory, Parser};
use svhpsl_core::harness::{self, aggregate, emit_front, log_path, run_stem, RunOptions, OUT_DIR_ENV};
use svhpsl_core::scalarize::IdealMode;
use svhpsl_core::{builtin, load_problem, Execution, KernelKind, Problem, RunConfig};

/// Pareto set learning for expensive multi-objective optimization.
///
/// Runs one optimization per seed, writes a line-delimited JSON log per run
/// and an aggregate of the log hypervolume difference across seeds.
#[derive(Parser, Debug)]
#[command(name = "svh-psl", version)]
#[command(group(ArgGroup::new("source").required(true).args(["problem", "problem_spec"])))]
struct Cli {
    /// Builtin problem: zdt1, zdt2, zdt3, zdt4, zdt6 or vlmop2.
    #[arg(long)]
    problem: Option<String>,

    /// Problem specification file.
    #[arg(long, value_name = "FILE", conflicts_with = "n_var")]
    problem_spec: Option<PathBuf>,

    /// First seed; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,

    /// Decision dimension for builtin problems.
    #[arg(long)]
    n_var: Option<usize>,

    #[arg(long, default_value_t = 20)]
    n_init: usize,

    /// Outer iterations.
    #[arg(long, default_value_t = 20)]
    iters: usize,

    #[arg(long, default_value_t = 5)]
    batch: usize,

    #[arg(long, default_value_t = 10)]
    particles: usize,

    #[arg(long, default_value_t = 1000)]
    candidates: usize,

    #[arg(long, default_value_t = 250)]
    inner_steps: usize,

    /// Kernel-gradient weight.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,

    /// LCB exploration weight.
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,

    #[arg(long, value_enum, default_value = "local")]
    kernel: KernelArg,

    /// Ideal point rule: `optimistic` keeps it below surrogate predictions
    /// during training; `observed` fixes it at the best observed values minus
    /// a margin for the whole iteration.
    #[arg(long, value_enum, default_value = "optimistic")]
    ideal: IdealArg,

    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    xi: f64,

    /// Hidden layer width of the Pareto set model.
    #[arg(long, default_value_t = 256)]
    hidden: usize,

    /// LHD reference point, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    ref_point: Option<Vec<f64>>,

    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
    out: PathBuf,

    /// Checkpoint the model after every iteration.
    #[arg(long)]
    checkpoint: bool,

    /// Write a plot-ready front file per run with this many preferences.
    #[arg(long, value_name = "RESOLUTION", num_args = 0..=1, default_missing_value = "100")]
    emit_front: Option<usize>,

    /// Disable data-parallel inner loops.
    #[arg(long)]
    sequential: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum KernelArg {
    Local,
    Global,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum IdealArg {
    Observed,
    Optimistic,
}

impl From<IdealArg> for IdealMode {
    fn from(k: IdealArg) -> Self {
        match k {
            IdealArg::Observed => IdealMode::Observed,
            IdealArg::Optimistic => IdealMode::Optimistic,
        }
    }
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Local => KernelKind::Local,
            KernelArg::Global => KernelKind::Global,
        }
    }
}

fn usage_error(kind: ErrorKind, message: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, message).exit()
}

fn load(cli: &Cli) -> svhpsl_core::Result<Problem> {
    match (&cli.problem, &cli.problem_spec) {
        (Some(name), None) => builtin(name, cli.n_var),
        (None, Some(path)) => load_problem(path),
        _ => unreachable!("clap enforces exactly one problem source"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let problem = match load(&cli) {
        Ok(p) => p,
        Err(svhpsl_core::Error::Lookup(name)) => usage_error(
            ErrorKind::InvalidValue,
            format!("unknown problem `{name}`; builtins are {}", svhpsl_core::problem::BUILTINS.join(", ")),
        ),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let config = RunConfig {
        problem: problem.name().to_string(),
        seed: cli.seed,
        n_init: cli.n_init,
        iterations: cli.iters,
        inner_steps: cli.inner_steps,
        particles: cli.particles,
        candidates: cli.candidates,
        batch: cli.batch,
        alpha: cli.alpha,
        lcb_lambda: cli.lambda,
        kernel: cli.kernel.into(),
        ideal: cli.ideal.into(),
        learning_rate: cli.xi,
        hidden: cli.hidden,
        ref_point: cli.ref_point.clone(),
        execution: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    if let Err(e) = config.validate() {
        usage_error(ErrorKind::ArgumentConflict, e);
    }
    if cli.seeds == 0 {
        usage_error(ErrorKind::InvalidValue, "--seeds must be at least 1");
    }
    if matches!(&config.ref_point, Some(r) if r.len() != problem.n_obj()) {
        usage_error(
            ErrorKind::InvalidValue,
            format!("--ref-point needs {} values", problem.n_obj()),
        );
    }
    if cli.emit_front == Some(0) {
        usage_error(ErrorKind::InvalidValue, "--emit-front resolution must be positive");
    }

    let options = RunOptions {
        out_dir: Some(cli.out.clone()),
        checkpoint_every_iteration: cli.checkpoint,
    };
    let mut logs = Vec::new();
    let mut failed = false;
    for seed in cli.seed..cli.seed + cli.seeds {
        let cfg = RunConfig { seed, ..config.clone() };
        let path = log_path(&cli.out, &cfg);
        match harness::run(problem.clone(), cfg.clone(), &options) {
            Ok(out) => {
                let last = out.log.records.last().expect("initial record");
                let lhd = last.lhd.map_or_else(|| "null".to_string(), |v| format!("{v:.4}"));
                println!(
                    "seed {seed}: {} evaluations, final LHD {lhd}, log {}",
                    last.evaluations,
                    path.display()
                );
                if let Some(res) = cli.emit_front {
                    let front = emit_front(&out.log, &path, &problem, res).and_then(|dump| {
                        let p = cli.out.join(format!("{}_front.txt", run_stem(&cfg)));
                        std::fs::write(&p, dump.to_text())?;
                        Ok(p)
                    });
                    match front {
                        Ok(p) => println!("seed {seed}: front {}", p.display()),
                        Err(e) => {
                            eprintln!("error: seed {seed}: front emission failed: {e}");
                            failed = true;
                        }
                    }
                }
                logs.push(out.log);
            }
            Err(e) => {
                eprintln!("error: seed {seed}: {e} (partial log at {})", path.display());
                failed = true;
            }
        }
    }

    if !logs.is_empty() {
        let refs: Vec<_> = logs.iter().collect();
        match aggregate(&refs).and_then(|a| a.write(&cli.out)) {
            Ok(p) => println!("aggregate {}", p.display()),
            Err(e) => {
                eprintln!("error: aggregation failed: {e}");
                failed = true;
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
