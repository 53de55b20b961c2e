use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fraclab::harness::{self, ExperimentConfig, Output, EXIT_USAGE};
use fraclab::Result;

#[derive(Parser, Debug)]
#[command(name = "fraclab", version, about = "Fractional heat kernels, mild solutions and solvability checks")]
struct Cli {
    /// TOML experiment file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "FRACLAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "FRACLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kernel table and self-checks.
    Kernel {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Run normalization, Chapman-Kolmogorov and bound checks.
        #[arg(long)]
        check: bool,
    },
    /// Case label and optimal singularity for (N, θ, p, q).
    Classify {
        #[command(flatten)]
        problem: ProblemArgs,
    },
    /// Tabulate the singular profile of the configured case.
    Profile {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Also fit and write a majorant comparison function for F.
        #[arg(long)]
        comparison: bool,
    },
    /// Picard iteration of the mild formulation.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Bisect the data coefficient between existence and blow-up.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        c_lo: Option<f64>,
        #[arg(long)]
        c_hi: Option<f64>,
        /// Stop when c+/c- <= 1 + tol.
        #[arg(long)]
        bisect_tol: Option<f64>,
    },
    /// Build a supersolution and check it against the Duhamel operator.
    VerifySuper {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// A, B or C.
        #[arg(long)]
        family: Option<String>,
        #[arg(long = "R")]
        r: Option<f64>,
        /// Shift L in Φ(μ + L) for family B.
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Necessary and sufficient conditions on the configured data.
    CheckConditions {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct ProblemArgs {
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    p: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    q: Option<f64>,
    #[arg(long = "L")]
    l: Option<f64>,
    /// prototype or zero.
    #[arg(long)]
    nonlinearity: Option<String>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// profile, dirac, constant, zero or file.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    coefficient: Option<f64>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long = "K")]
    background: Option<f64>,
    #[arg(long)]
    data_file: Option<String>,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long = "M")]
    steps: Option<usize>,
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long)]
    mollification: Option<usize>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    u_max: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ProblemArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        set(&mut c.problem.n, self.n);
        set(&mut c.problem.theta, self.theta);
        set(&mut c.problem.p, self.p);
        set(&mut c.problem.q, self.q);
        set(&mut c.problem.l, self.l);
        set(&mut c.problem.nonlinearity, self.nonlinearity);
    }
}

impl DataArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        set(&mut c.data.kind, self.data);
        set(&mut c.data.coefficient, self.coefficient);
        set(&mut c.data.cutoff, self.cutoff);
        set(&mut c.data.background, self.background);
        if self.data_file.is_some() {
            c.data.file = self.data_file;
        }
    }
}

impl SolverArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        let s = &mut c.solver;
        set(&mut s.half_width, self.half_width);
        set(&mut s.points, self.points);
        set(&mut s.horizon, self.horizon);
        set(&mut s.steps, self.steps);
        set(&mut s.u_max, self.u_max);
        set(&mut s.tolerance, self.tolerance);
        if self.truncation.is_some() {
            s.truncation = self.truncation;
        }
        if self.mollification.is_some() {
            s.mollification = self.mollification;
        }
        if self.max_sweeps.is_some() {
            s.max_sweeps = self.max_sweeps;
        }
    }
}

enum Action {
    Kernel { check: bool },
    Classify,
    Profile { comparison: bool },
    Solve,
    Sweep,
    VerifySuper,
    CheckConditions,
}

/// Folds the subcommand's flags into the config and keeps what is left.
fn apply_overrides(cfg: &mut ExperimentConfig, command: Command) -> Action {
    match command {
        Command::Kernel { problem, check } => {
            problem.apply(cfg);
            Action::Kernel { check }
        }
        Command::Classify { problem } => {
            problem.apply(cfg);
            Action::Classify
        }
        Command::Profile { problem, data, comparison } => {
            problem.apply(cfg);
            data.apply(cfg);
            Action::Profile { comparison }
        }
        Command::Solve { problem, data, solver } => {
            problem.apply(cfg);
            data.apply(cfg);
            solver.apply(cfg);
            Action::Solve
        }
        Command::Sweep { problem, data, solver, c_lo, c_hi, bisect_tol } => {
            problem.apply(cfg);
            data.apply(cfg);
            solver.apply(cfg);
            set(&mut cfg.sweep.c_lo, c_lo);
            set(&mut cfg.sweep.c_hi, c_hi);
            set(&mut cfg.sweep.tolerance, bisect_tol);
            Action::Sweep
        }
        Command::VerifySuper { problem, data, solver, family, r, shift, alpha } => {
            problem.apply(cfg);
            data.apply(cfg);
            solver.apply(cfg);
            set(&mut cfg.supersolution.family, family);
            set(&mut cfg.supersolution.options.r, r);
            set(&mut cfg.supersolution.options.l, shift);
            set(&mut cfg.supersolution.options.alpha, alpha);
            Action::VerifySuper
        }
        Command::CheckConditions { problem, data, gamma, epsilon, alpha } => {
            problem.apply(cfg);
            data.apply(cfg);
            set(&mut cfg.conditions.gamma, gamma);
            set(&mut cfg.conditions.epsilon, epsilon);
            if alpha.is_some() {
                cfg.conditions.alpha = alpha;
            }
            Action::CheckConditions
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.out.is_some() {
        cfg.output.dir = cli.out.as_ref().map(|p| p.display().to_string());
    }
    if cli.workers.is_some() {
        cfg.sweep.workers = cli.workers;
    }
    let action = apply_overrides(&mut cfg, cli.command);
    cfg.params()?;
    let dir = PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| "fraclab-out".into()));
    let out = Output::new(&cfg, dir)?;
    out.text("config.toml", &cfg.to_toml())?;
    let workers = cfg.sweep.workers.unwrap_or_else(rayon::current_num_threads);
    match action {
        Action::Kernel { check } => harness::cmd_kernel(&cfg, &out, check),
        Action::Classify => harness::cmd_classify(&cfg, &out),
        Action::Profile { comparison } => harness::cmd_profile(&cfg, &out, comparison),
        Action::Solve => harness::cmd_solve(&cfg, &out),
        Action::Sweep => harness::cmd_sweep(&cfg, &out, workers),
        Action::VerifySuper => harness::cmd_verify_super(&cfg, &out),
        Action::CheckConditions => harness::cmd_check_conditions(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
