//! `ipdecomp` command line: generate instances, solve them, run benchmark sweeps.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ipdecomp::harness::{self, append_csv, run_bench, run_method, write_csv, BenchRow, Method, RunConfig};
use ipdecomp::{AdiConfig, Error, Family, GenSpec, Mode, PathConfig, Result, SeparableProblem};

#[derive(Parser)]
#[command(name = "ipdecomp", version, about = "Interior-point Lagrangian decomposition for separable convex programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write its problem file.
    Gen(GenArgs),
    /// Solve a problem file with one method.
    Solve(SolveArgs),
    /// Run every method on every generated instance and emit a CSV table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Network,
    Quadratic,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Network => Family::Network,
            FamilyArg::Quadratic => Family::Quadratic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dip,
    Adi,
    Oracle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dip => Method::Dip,
            MethodArg::Adi => Method::Adi,
            MethodArg::Oracle => Method::Oracle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Short,
    Long,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    m1: usize,
    #[arg(long)]
    n1: usize,
    #[arg(long = "N")]
    n_blocks: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Solver settings shared by `solve` and `bench`.
#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    t0: f64,
    /// Target gap: stop once t·N_φ ≤ eps.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Centering tolerance on the Newton decrement.
    #[arg(long = "eps-v")]
    eps_v: Option<f64>,
    /// Block-solve inexactness: KKT residual ≤ t·eps_x.
    #[arg(long = "eps-x")]
    eps_x: Option<f64>,
    /// Long-step reduction factor (short-step mode derives its own).
    #[arg(long, default_value_t = 0.85)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Long)]
    mode: ModeArg,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long = "max-outer")]
    max_outer: Option<usize>,
    #[arg(long = "max-inner")]
    max_inner: Option<usize>,
    /// ADI penalty weight ρ.
    #[arg(long)]
    penalty: Option<f64>,
    /// ADI multiplier step.
    #[arg(long = "ascent-step")]
    ascent_step: Option<f64>,
    #[arg(long = "max-sweeps")]
    max_sweeps: Option<usize>,
    /// ADI stopping tolerance; defaults to eps.
    #[arg(long = "adi-tol")]
    adi_tol: Option<f64>,
}

impl SolverArgs {
    fn config(&self) -> RunConfig {
        let mut path = PathConfig {
            t0: self.t0,
            eps: self.eps,
            tau: self.tau,
            mode: match self.mode {
                ModeArg::Short => Mode::ShortStep,
                ModeArg::Long => Mode::LongStep,
            },
            threads: self.threads,
            ..Default::default()
        };
        if let Some(v) = self.eps_v {
            path.eps_v = v;
        }
        if let Some(v) = self.eps_x {
            path.block.eps_x = v;
        }
        if let Some(v) = self.max_outer {
            path.max_outer = v;
        }
        if let Some(v) = self.max_inner {
            path.max_inner = v;
        }
        let mut adi = AdiConfig { tol: self.adi_tol.unwrap_or(self.eps), ..Default::default() };
        if let Some(v) = self.penalty {
            adi.penalty = v;
        }
        if let Some(v) = self.ascent_step {
            adi.ascent_step = v;
        }
        if let Some(v) = self.max_sweeps {
            adi.max_sweeps = v;
        }
        RunConfig { path, adi }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Problem file written by `gen`.
    problem: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Dip)]
    method: MethodArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// Report output path; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Append a table row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Instance families to generate.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FamilyArg::Network, FamilyArg::Quadratic])]
    family: Vec<FamilyArg>,
    /// Shapes as `m1:n1:N`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5:10:3,10:20:5,20:50:10")]
    sizes: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Dip, MethodArg::Adi])]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("size {s:?} is not m1:n1:N"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let num = |p: &str| p.trim().parse::<usize>().map_err(|_| bad());
    Ok((num(parts[0])?, num(parts[1])?, num(parts[2])?))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec =
        GenSpec { family: args.family.into(), m1: args.m1, n1: args.n1, n_blocks: args.n_blocks, seed: args.seed };
    spec.validate()?;
    let problem = spec.generate()?;
    write_output(args.out.as_deref(), &(problem.to_json()? + "\n"))
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let problem = SeparableProblem::load(&args.problem)?;
    let method = Method::from(args.method);
    let start = Instant::now();
    let result = run_method(&problem, method, &args.solver.config());
    let wall = start.elapsed().as_secs_f64();
    if let Some(csv) = &args.csv {
        append_csv(&[BenchRow::from_result(harness::shape(&problem), method, &result, wall)], csv)?;
    }
    let report = result?;
    eprintln!(
        "{method}: objective {:.10e}, gap bound {}, residual {:.2e}, fct_evals {}",
        report.objective,
        report.gap_bound.map_or("n/a".into(), |g| format!("{g:.3e}")),
        report.primal_residual,
        report.fct_evals
    );
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    write_output(args.report.as_deref(), &text)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let sizes = args.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    let mut specs = Vec::new();
    for &family in &args.family {
        for &(m1, n1, n_blocks) in &sizes {
            let spec = GenSpec { family: family.into(), m1, n1, n_blocks, seed: args.seed };
            spec.validate()?;
            specs.push(spec);
        }
    }
    let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    let rows = run_bench(&specs, &methods, &args.solver.config());
    match &args.out {
        Some(p) => write_csv(&rows, std::fs::File::create(p)?),
        None => write_csv(&rows, io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
