//! Method dispatch and benchmark tables.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{adi_solve, oracle_optimum, AdiConfig};
use crate::error::{Error, Result};
use crate::generators::GenSpec;
use crate::path_following::{solve, with_threads, PathConfig, SolveReport};
use crate::problem::{validate_rank, SeparableProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dip,
    Adi,
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dip => "dip",
            Method::Adi => "adi",
            Method::Oracle => "oracle",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dip" => Ok(Method::Dip),
            "adi" => Ok(Method::Adi),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method {other:?} (expected dip, adi or oracle)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub path: PathConfig,
    pub adi: AdiConfig,
}

/// Process exit code for an error: 2 invalid input, 3 iteration budget
/// exhausted, 4 IO, 1 numerical breakdown.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MaxIterExceeded { .. } => 3,
        Error::Io(_) => 4,
        Error::HessianNotPd(_) | Error::DomainViolation => 1,
        _ => 2,
    }
}

/// Validates the rank condition, then runs `method`.
pub fn run_method(problem: &SeparableProblem, method: Method, config: &RunConfig) -> Result<SolveReport> {
    let report = validate_rank(problem)?;
    if !report.passed() {
        return Err(Error::RankDeficient(format!(
            "local matrices full rank: {:?}, coupling rank {} of {}",
            report.local_full_rank,
            report.coupling_rank,
            problem.coupling_rows()
        )));
    }
    match method {
        Method::Dip => solve(problem, &config.path),
        Method::Adi => with_threads(config.path.threads, || adi_solve(problem, &config.adi)),
        Method::Oracle => {
            let start = Instant::now();
            let o = oracle_optimum(problem)?;
            let xs = problem.split(&o.x_star);
            let t = *o.t_grid.last().expect("oracle grid is never empty");
            Ok(SolveReport {
                method: "oracle".into(),
                x_final: xs.iter().map(|v| v.iter().copied().collect()).collect(),
                lambda_final: vec![],
                t_final: t,
                gap_bound: Some(t * problem.barrier_complexity()),
                objective: o.f_star,
                primal_residual: problem.coupling_residual(&xs).norm(),
                outer_iters: o.t_grid.len(),
                inner_iters_total: 0,
                block_iters_total: 0,
                fct_evals: 0,
                short_step_violations: 0,
                trace: vec![],
                wall_time: start.elapsed().as_secs_f64(),
            })
        }
    }
}

/// One benchmark run. `status` is `ok`, `budget` (iteration budget
/// exhausted) or `error`; counts are empty unless the run finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m1: usize,
    pub n1: usize,
    #[serde(rename = "N")]
    pub n_blocks: usize,
    pub method: Method,
    pub fct_evals: Option<usize>,
    pub outer_iters: Option<usize>,
    pub wall_time_s: f64,
    pub gap_bound: Option<f64>,
    pub primal_residual: Option<f64>,
    pub status: String,
}

pub const CSV_HEADER: &str = "m1,n1,N,method,fct_evals,outer_iters,wall_time_s,gap_bound,primal_residual,status";

/// `(m1, n1, N)` of a loaded instance: the first block's shape and the
/// number of blocks sharing it. A network's aggregate-load block is not
/// counted.
pub fn shape(problem: &SeparableProblem) -> (usize, usize, usize) {
    let first = &problem.blocks()[0];
    let (m1, n1) = (first.local_rows(), first.dim());
    let n = problem.blocks().iter().filter(|b| b.local_rows() == m1 && b.dim() == n1).count();
    (m1, n1, n)
}

impl BenchRow {
    pub fn from_result(
        (m1, n1, n_blocks): (usize, usize, usize),
        method: Method,
        result: &Result<SolveReport>,
        wall: f64,
    ) -> Self {
        let base = BenchRow {
            m1,
            n1,
            n_blocks,
            method,
            fct_evals: None,
            outer_iters: None,
            wall_time_s: wall,
            gap_bound: None,
            primal_residual: None,
            status: "error".into(),
        };
        match result {
            Ok(r) => BenchRow {
                fct_evals: Some(r.fct_evals),
                outer_iters: Some(r.outer_iters),
                gap_bound: r.gap_bound,
                primal_residual: Some(r.primal_residual),
                status: "ok".into(),
                ..base
            },
            Err(Error::MaxIterExceeded { .. }) => BenchRow { status: "budget".into(), ..base },
            Err(_) => base,
        }
    }
}

/// Runs every method on every generated instance. Failures become rows;
/// the sweep continues.
pub fn run_bench(specs: &[GenSpec], methods: &[Method], config: &RunConfig) -> Vec<BenchRow> {
    let mut rows = Vec::with_capacity(specs.len() * methods.len());
    for spec in specs {
        let problem = spec.generate();
        for &method in methods {
            let start = Instant::now();
            let result = match &problem {
                Ok(p) => run_method(p, method, config),
                Err(e) => Err(Error::GenInfeasible(e.to_string())),
            };
            if let Err(e) = &result {
                log::warn!("{method} on {}x{}x{}: {e}", spec.m1, spec.n1, spec.n_blocks);
            }
            rows.push(BenchRow::from_result(
                (spec.m1, spec.n1, spec.n_blocks),
                method,
                &result,
                start.elapsed().as_secs_f64(),
            ));
        }
    }
    rows
}

pub fn write_csv<W: io::Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows to a CSV file, writing the header only for a new or empty file.
pub fn append_csv(rows: &[BenchRow], path: &std::path::Path) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
