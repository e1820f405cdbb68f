//! Benchmark harness for the chain-coupled optimal control solver:
//! instance generation, single solves, solver-comparison sweeps, and
//! sweep-count studies, with CSV output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chainopt::ipm::{self, InnerSolver, IpmConfig};
use chainopt::problem::{self, MsdConfig, ProblemInstance};

/// Fixed column order of the benchmark CSV; `status` records per-cell
/// failures so sweeps can keep going.
const CSV_HEADER: &str = "N,T,seed,solver,L,newton_steps,max_inner_iters,avg_inner_iters,total_time_s,per_newton_time_s,final_mu,final_cost,status";
const CSV_SCHEMA: &str = "# schema=1";

#[derive(Parser)]
#[command(name = "chainopt", version, about = "Chain-coupled LQ optimal control benchmark harness")]
struct Cli {
    /// Worker threads for the solver's parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mass-spring-damper chain instance file.
    Generate(GenerateArgs),
    /// Solve one instance file and print a benchmark record.
    Solve(SolveArgs),
    /// Sweep a grid of sizes, solvers, and seeds; emit CSV.
    Bench(BenchArgs),
    /// Sweep the preconditioner sweep count on fixed instances; emit CSV.
    #[command(name = "sweep-l")]
    SweepL(SweepLArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of subsystems (chain length).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Horizon length.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
    /// Forward-Euler step of the generator.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Position box half-width.
    #[arg(long, default_value_t = 4.0)]
    position_bound: f64,
    /// Input box half-width.
    #[arg(long, default_value_t = 2.0)]
    input_bound: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    Pcg,
    Jacobi,
    Direct,
    Dense,
}

impl SolverKind {
    fn to_inner(self, sweeps: usize) -> InnerSolver {
        match self {
            SolverKind::Pcg => InnerSolver::Pcg { sweeps },
            SolverKind::Jacobi => InnerSolver::Jacobi,
            SolverKind::Direct => InnerSolver::DirectLdl,
            SolverKind::Dense => InnerSolver::Dense,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SolverKind::Pcg => "pcg",
            SolverKind::Jacobi => "jacobi",
            SolverKind::Direct => "direct",
            SolverKind::Dense => "dense",
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file produced by `generate`.
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "pcg")]
    solver: SolverKind,
    /// Preconditioner sweep count (pcg only).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    l: u64,
    #[arg(long, default_value_t = 1e-6)]
    eps_ipm: f64,
    /// Residual tolerance of the iterative inner solvers.
    #[arg(long, default_value_t = 1e-9)]
    eps_pcg: f64,
    #[arg(long, default_value_t = 50)]
    max_newton: usize,
    /// Cap on inner iterations (default: ten times N*T).
    #[arg(long)]
    inner_iter_max: Option<usize>,
    /// Append the record to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero the wall-clock columns for byte-reproducible output.
    #[arg(long)]
    redact_timings: bool,
    /// Suppress the per-step progress lines on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated grid of sizes, run as N = T.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 20, 50, 100, 200])]
    grid: Vec<usize>,
    /// Add the full-scale 1000 point to the grid.
    #[arg(long)]
    large: bool,
    /// Solvers to run: `pcg[:L]`, `jacobi`, `direct`, `dense`.
    #[arg(long, value_delimiter = ',', default_values_t = vec![String::from("pcg:2"), String::from("jacobi")])]
    solvers: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1e-6)]
    eps_ipm: f64,
    #[arg(long, default_value_t = 1e-9)]
    eps_pcg: f64,
    /// Cap on inner iterations (default: ten times N*T).
    #[arg(long)]
    inner_iter_max: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a whitespace-separated data file for plotting.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
    #[arg(long)]
    redact_timings: bool,
}

#[derive(Args)]
struct SweepLArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Horizon (defaults to `n`).
    #[arg(long)]
    t: Option<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64])]
    seeds: Vec<u64>,
    /// Sweep counts to compare; at least one required.
    #[arg(long = "l-list", value_delimiter = ',', required = true, num_args = 1..)]
    l_list: Vec<usize>,
    #[arg(long, default_value_t = 1e-6)]
    eps_ipm: f64,
    #[arg(long, default_value_t = 1e-9)]
    eps_pcg: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    redact_timings: bool,
}

struct BenchRecord {
    n: usize,
    t: usize,
    seed: u64,
    solver: String,
    sweeps: usize,
    newton_steps: usize,
    max_inner: usize,
    avg_inner: f64,
    total_time: Duration,
    per_newton_time: Duration,
    final_mu: f64,
    final_cost: f64,
    status: String,
}

impl BenchRecord {
    fn to_csv(&self, redact: bool) -> String {
        let (total, per_step) = if redact {
            (0.0, 0.0)
        } else {
            (self.total_time.as_secs_f64(), self.per_newton_time.as_secs_f64())
        };
        format!(
            "{},{},{},{},{},{},{},{:.3},{:.6},{:.6},{:.6e},{:.12e},{}",
            self.n,
            self.t,
            self.seed,
            self.solver,
            self.sweeps,
            self.newton_steps,
            self.max_inner,
            self.avg_inner,
            total,
            per_step,
            self.final_mu,
            self.final_cost,
            self.status
        )
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {path:?}")),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_one(
    inst: &ProblemInstance,
    seed: u64,
    solver: SolverKind,
    sweeps: usize,
    cfg: &IpmConfig,
) -> BenchRecord {
    let label = solver.name().to_string();
    // Only the preconditioned solver has a sweep count.
    let sweeps = if solver == SolverKind::Pcg { sweeps } else { 0 };
    match ipm::solve(inst, cfg) {
        Ok(out) => BenchRecord {
            n: inst.n_subsystems(),
            t: inst.horizon(),
            seed,
            solver: label,
            sweeps,
            newton_steps: out.stats.newton_steps,
            max_inner: out.stats.max_inner_iterations(),
            avg_inner: out.stats.avg_inner_iterations(),
            total_time: out.stats.total_time,
            per_newton_time: out.stats.avg_step_time(2),
            final_mu: out.stats.final_mu,
            final_cost: out.stats.final_cost,
            status: if out.stats.converged { "converged".into() } else { "max_newton".into() },
        },
        Err(e) => BenchRecord {
            n: inst.n_subsystems(),
            t: inst.horizon(),
            seed,
            solver: label,
            sweeps,
            newton_steps: 0,
            max_inner: 0,
            avg_inner: 0.0,
            total_time: Duration::ZERO,
            per_newton_time: Duration::ZERO,
            final_mu: f64::NAN,
            final_cost: f64::NAN,
            status: format!("error: {e}").replace(',', ";"),
        },
    }
}

fn parse_solver_spec(spec: &str) -> Result<(SolverKind, usize)> {
    let (name, sweeps) = match spec.split_once(':') {
        Some((name, l)) => (name, l.parse::<usize>().context("sweep count in solver spec")?),
        None => (spec, 2),
    };
    let kind = match name {
        "pcg" => SolverKind::Pcg,
        "jacobi" => SolverKind::Jacobi,
        "direct" => SolverKind::Direct,
        "dense" => SolverKind::Dense,
        other => bail!("unknown solver {other:?} (expected pcg[:L], jacobi, direct, dense)"),
    };
    if sweeps == 0 {
        bail!("sweep count must be at least 1");
    }
    Ok((kind, sweeps))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let config = MsdConfig {
        step: args.step,
        position_bound: args.position_bound,
        input_bound: args.input_bound,
        ..MsdConfig::default()
    };
    let inst = problem::msd_chain(args.n as usize, args.t as usize, args.seed, &config)?;
    let report = problem::validate(&inst);
    if !report.is_empty() {
        bail!("generated instance failed validation: {}", report[0]);
    }
    inst.write_file(&args.out)?;
    let dual_rows: usize =
        (0..inst.n_subsystems()).map(|j| inst.con_len(j)).sum();
    println!(
        "wrote {:?}: N={} T={} primal_variables={} inequality_rows={}",
        args.out,
        inst.n_subsystems(),
        inst.horizon(),
        inst.primal_var_count(),
        dual_rows,
    );
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode> {
    let inst = ProblemInstance::read_file(&args.instance)
        .with_context(|| format!("reading {:?}", args.instance))?;
    let report = problem::validate(&inst);
    if !report.is_empty() {
        bail!("instance failed validation: {}", report[0]);
    }
    let cfg = IpmConfig {
        eps_ipm: args.eps_ipm,
        eps_inner: args.eps_pcg,
        max_newton: args.max_newton,
        inner: args.solver.to_inner(args.l as usize),
        inner_iter_max: args.inner_iter_max,
        log_progress: !args.quiet,
        ..IpmConfig::default()
    };
    let seed = 0; // unknown for externally supplied files; recorded as 0
    let record = run_one(&inst, seed, args.solver, args.l as usize, &cfg);
    let mut text = String::new();
    writeln!(text, "{CSV_SCHEMA}")?;
    writeln!(text, "{CSV_HEADER}")?;
    writeln!(text, "{}", record.to_csv(args.redact_timings))?;
    emit(&args.out, &text)?;
    if record.status.starts_with("error") {
        bail!("{}", record.status);
    }
    Ok(if record.status == "converged" { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut grid = args.grid.clone();
    if args.large {
        grid.push(1000);
    }
    let solvers: Vec<(SolverKind, usize)> =
        args.solvers.iter().map(|s| parse_solver_spec(s)).collect::<Result<_>>()?;
    let mut text = String::new();
    writeln!(text, "{CSV_SCHEMA}")?;
    writeln!(text, "{CSV_HEADER}")?;
    let mut records = Vec::new();
    for &size in &grid {
        for &(solver, sweeps) in &solvers {
            for &seed in &args.seeds {
                let inst = problem::msd_chain(size, size, seed, &MsdConfig::default())?;
                let cfg = IpmConfig {
                    eps_ipm: args.eps_ipm,
                    eps_inner: args.eps_pcg,
                    inner: solver.to_inner(sweeps),
                    inner_iter_max: args.inner_iter_max,
                    log_progress: false,
                    ..IpmConfig::default()
                };
                let record = run_one(&inst, seed, solver, sweeps, &cfg);
                writeln!(text, "{}", record.to_csv(args.redact_timings))?;
                records.push(record);
            }
        }
    }
    emit(&args.out, &text)?;
    if let Some(path) = &args.gnuplot {
        let mut data = String::from(
            "# N T seed solver L newton_steps max_inner avg_inner total_s per_newton_s\n",
        );
        for r in &records {
            let (total, per) = if args.redact_timings {
                (0.0, 0.0)
            } else {
                (r.total_time.as_secs_f64(), r.per_newton_time.as_secs_f64())
            };
            writeln!(
                data,
                "{} {} {} {} {} {} {} {:.3} {:.6} {:.6}",
                r.n, r.t, r.seed, r.solver, r.sweeps, r.newton_steps, r.max_inner, r.avg_inner,
                total, per
            )?;
        }
        std::fs::write(path, data).with_context(|| format!("writing {path:?}"))?;
    }
    Ok(())
}

fn cmd_sweep_l(args: SweepLArgs) -> Result<()> {
    let n = args.n as usize;
    let t = args.t.map(|v| v as usize).unwrap_or(n);
    let mut text = String::new();
    writeln!(text, "{CSV_SCHEMA}")?;
    writeln!(text, "N,T,seed,L,max_pcg_iters,avg_pcg_iters,newton_steps,total_time_s,status")?;
    for &seed in &args.seeds {
        let inst = problem::msd_chain(n, t, seed, &MsdConfig::default())?;
        for &sweeps in &args.l_list {
            if sweeps == 0 {
                bail!("sweep count must be at least 1");
            }
            let cfg = IpmConfig {
                eps_ipm: args.eps_ipm,
                eps_inner: args.eps_pcg,
                inner: InnerSolver::Pcg { sweeps },
                log_progress: false,
                ..IpmConfig::default()
            };
            match ipm::solve(&inst, &cfg) {
                Ok(out) => {
                    let total =
                        if args.redact_timings { 0.0 } else { out.stats.total_time.as_secs_f64() };
                    writeln!(
                        text,
                        "{},{},{},{},{},{:.3},{},{:.6},{}",
                        n,
                        t,
                        seed,
                        sweeps,
                        out.stats.max_inner_iterations(),
                        out.stats.avg_inner_iterations(),
                        out.stats.newton_steps,
                        total,
                        if out.stats.converged { "converged" } else { "max_newton" }
                    )?;
                }
                Err(e) => {
                    writeln!(
                        text,
                        "{},{},{},{},0,0.000,0,0.000000,error: {}",
                        n,
                        t,
                        seed,
                        sweeps,
                        format!("{e}").replace(',', ";")
                    )?;
                }
            }
        }
    }
    emit(&args.out, &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()
        {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args).map(|()| ExitCode::SUCCESS),
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args).map(|()| ExitCode::SUCCESS),
        Command::SweepL(args) => cmd_sweep_l(args).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
