//! Reference solvers.
//!
//! * The oracle solves the full coupled barrier problem
//!   `min f(x) + tφ(x) s.t. D_A x = a, Bx = b` by Newton's method on the
//!   whole KKT system, without decomposition. Desk scale only.
//! * ADI runs Gauss-Seidel block minimization of the augmented Lagrangian
//!   `f(x) + ⟨λ, Bx−b⟩ + ρ/2‖Bx−b‖²` followed by a multiplier ascent step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::block_solver::{BlockOptions, InnerStep, Subproblem};
use crate::error::{Error, Result};
use crate::functions::{BoxBarrier, BoxSet, SmoothFn};
use crate::path_following::SolveReport;
use crate::problem::{find_interior_point, interior_point, SeparableProblem};

const ORACLE_MAX_ITERS: usize = 200;
/// The oracle t-grid stops once `t·N_φ` falls below this, or earlier at the
/// last level Newton can still resolve in double precision.
pub const ORACLE_GAP: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub t_grid: Vec<f64>,
    pub central_points: Vec<DVector<f64>>,
    pub kkt_residuals: Vec<f64>,
}

/// All equality constraints `[D_A; B] x = [a; b]` and the stacked box.
struct Stacked {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    bounds: BoxSet,
}

fn stack(problem: &SeparableProblem) -> Stacked {
    let n = problem.num_vars();
    let m = problem.coupling_rows();
    let p: usize = problem.blocks().iter().map(|b| b.local_rows()).sum();
    let mut matrix = DMatrix::zeros(p + m, n);
    let mut rhs = DVector::zeros(p + m);
    let (mut lower, mut upper) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut row, mut col) = (0, 0);
    for b in problem.blocks() {
        let (pi, ni) = (b.local_rows(), b.dim());
        matrix.view_mut((row, col), (pi, ni)).copy_from(&b.local_matrix);
        rhs.rows_mut(row, pi).copy_from(&b.local_rhs);
        matrix.view_mut((p, col), (m, ni)).copy_from(&b.coupling_matrix);
        lower.extend_from_slice(&b.bounds.lower);
        upper.extend_from_slice(&b.bounds.upper);
        row += pi;
        col += ni;
    }
    rhs.rows_mut(p, m).copy_from(problem.coupling_rhs());
    Stacked { matrix, rhs, bounds: BoxSet { lower, upper } }
}

struct Monolithic<'a> {
    problem: &'a SeparableProblem,
    sys: Stacked,
}

impl Monolithic<'_> {
    fn value(&self, x: &DVector<f64>, t: f64) -> Result<f64> {
        let xs = self.problem.split(x);
        Ok(self.problem.objective_value(&xs)? + t * BoxBarrier::new(&self.sys.bounds).value(x)?)
    }

    fn derivatives(&self, x: &DVector<f64>, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let mut off = 0;
        for (b, xi) in self.problem.blocks().iter().zip(self.problem.split(x)) {
            let e = b.objective.eval(&xi)?;
            let ni = b.dim();
            g.rows_mut(off, ni).copy_from(&e.gradient);
            h.view_mut((off, off), (ni, ni)).copy_from(&e.hessian);
            off += ni;
        }
        let (_, pg, pd) = BoxBarrier::new(&self.sys.bounds).grad_and_diag(x)?;
        g += t * pg;
        for i in 0..n {
            h[(i, i)] += t * pd[i];
        }
        Ok((g, h))
    }

    /// Newton with backtracking from a strictly interior, feasible `x`.
    ///
    /// The KKT matrix is equilibrated (unit Hessian diagonal, unit constraint
    /// rows) before the LU solve; at small `t` the barrier curvature spans many
    /// orders of magnitude. Stops when `(F/t)`'s Newton decrement `dec²/t`
    /// is below `1e-16`, or when `F` itself is resolved (`dec² ≤ 1e-12(1+|F|)`)
    /// and progress stalls.
    fn center(&self, t: f64, mut x: DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let e = &self.sys.matrix;
        let (n, r) = (e.ncols(), e.nrows());
        let mut stalled = 0;
        for _ in 0..ORACLE_MAX_ITERS {
            let (g, h) = self.derivatives(&x, t)?;
            let d = DVector::from_fn(n, |i, _| 1.0 / h[(i, i)].sqrt());
            let ed = e * DMatrix::from_diagonal(&d);
            let s = DVector::from_fn(r, |i, _| {
                let nrm = ed.row(i).norm();
                if nrm > 0.0 {
                    1.0 / nrm
                } else {
                    1.0
                }
            });
            let sed = DMatrix::from_diagonal(&s) * &ed;
            let mut kkt = DMatrix::zeros(n + r, n + r);
            kkt.view_mut((0, 0), (n, n)).copy_from(&DMatrix::from_fn(n, n, |i, j| d[i] * h[(i, j)] * d[j]));
            kkt.view_mut((0, n), (n, r)).copy_from(&sed.transpose());
            kkt.view_mut((n, 0), (r, n)).copy_from(&sed);
            let mut rv = DVector::zeros(n + r);
            rv.rows_mut(0, n).copy_from(&(-g.component_mul(&d)));
            rv.rows_mut(n, r).copy_from(&(&self.sys.rhs - e * &x).component_mul(&s));
            let lu = kkt.clone().lu();
            let singular = || Error::HessianNotPd("oracle KKT matrix");
            let mut sol = lu.solve(&rv).ok_or_else(singular)?;
            for _ in 0..2 {
                let corr = lu.solve(&(&rv - &kkt * &sol)).ok_or_else(singular)?;
                sol += corr;
            }
            let dx = sol.rows(0, n).component_mul(&d);
            let w = sol.rows(n, r).component_mul(&s);
            let kkt_res = (&g + e.tr_mul(&w)).norm();
            let dec2 = dx.dot(&(&h * &dx)).max(0.0);
            let f0 = self.value(&x, t)?;
            if dec2 <= 1e-16 * t || (dec2 <= 1e-12 * (1.0 + f0.abs()) && stalled >= 3) {
                return Ok((x, kkt_res));
            }
            let slope = g.dot(&dx).min(0.0);
            let mut step = (0.99 * self.sys.bounds.max_step(&x, &dx)).min(1.0);
            // sufficient decrease up to the resolution of F
            let noise = 1e-13 * (1.0 + f0.abs());
            loop {
                let trial = &x + step * &dx;
                if let Ok(v) = self.value(&trial, t) {
                    if v <= f0 + 0.25 * step * slope + noise {
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-16 {
                    if dec2 <= 1e-12 * (1.0 + f0.abs()) {
                        return Ok((x, kkt_res));
                    }
                    return Err(Error::MaxIterExceeded { what: "oracle line search", limit: 53 });
                }
            }
            stalled = if step < 0.5 || -slope <= noise { stalled + 1 } else { 0 };
            x += step * dx;
        }
        Err(Error::MaxIterExceeded { what: "oracle Newton", limit: ORACLE_MAX_ITERS })
    }

    fn start(&self) -> Result<DVector<f64>> {
        interior_point(&self.sys.matrix, &self.sys.rhs, &self.sys.bounds)
    }
}

/// Central point `x(t) = argmin { f + tφ : D_A x = a, Bx = b }` as one
/// stacked vector.
pub fn oracle_central_point(problem: &SeparableProblem, t: f64) -> Result<DVector<f64>> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("barrier parameter must be positive, got {t}")));
    }
    let mono = Monolithic { problem, sys: stack(problem) };
    Ok(mono.center(t, mono.start()?)?.0)
}

/// Follows the central path over `t = 1, 0.1, …` until `t·N_φ ≤ 1e-8`.
///
/// When Newton stops resolving a level (the barrier curvature outgrows double
/// precision) the previous level is returned; its `t` sets the certified gap.
pub fn oracle_optimum(problem: &SeparableProblem) -> Result<OracleResult> {
    let mono = Monolithic { problem, sys: stack(problem) };
    let n_phi = problem.barrier_complexity();
    let mut x = mono.start()?;
    let mut res = OracleResult {
        x_star: x.clone(),
        f_star: f64::NAN,
        t_grid: vec![],
        central_points: vec![],
        kkt_residuals: vec![],
    };
    let mut t = 1.0;
    loop {
        let (xc, kkt) = match mono.center(t, x.clone()) {
            Ok(c) => c,
            Err(e @ Error::MaxIterExceeded { .. }) if !res.t_grid.is_empty() => {
                log::warn!("oracle stops at t = {:e}: {e}", t * 10.0);
                break;
            }
            Err(e) => return Err(e),
        };
        x = xc;
        res.t_grid.push(t);
        res.central_points.push(x.clone());
        res.kkt_residuals.push(kkt);
        if t * n_phi <= ORACLE_GAP {
            break;
        }
        t /= 10.0;
    }
    res.f_star = problem.objective_value(&problem.split(&x))?;
    res.x_star = x;
    Ok(res)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdiConfig {
    /// Quadratic penalty weight `ρ`.
    pub penalty: f64,
    /// Multiplier update `λ ← λ + ascent_step·ρ·(Bx − b)`.
    pub ascent_step: f64,
    pub max_sweeps: usize,
    /// Bound on both `‖Bx − b‖` and the change of `f` between sweeps.
    pub tol: f64,
    /// Fixed barrier weight keeping block iterates interior.
    pub t_barrier: f64,
    pub lambda0: Option<DVector<f64>>,
    pub x0: Option<Vec<DVector<f64>>>,
}

impl Default for AdiConfig {
    fn default() -> Self {
        AdiConfig {
            penalty: 1.0,
            ascent_step: 1.0,
            max_sweeps: 5000,
            tol: 1e-4,
            t_barrier: 1e-6,
            lambda0: None,
            x0: None,
        }
    }
}

/// Alternating-direction baseline. One `fct_eval` is one Gauss-Seidel sweep.
pub fn adi_solve(problem: &SeparableProblem, config: &AdiConfig) -> Result<SolveReport> {
    let start = Instant::now();
    if !(config.penalty > 0.0 && config.ascent_step > 0.0 && config.t_barrier > 0.0 && config.tol > 0.0) {
        return Err(Error::Config("ADI penalty, ascent step, barrier weight and tol must be positive".into()));
    }
    let m = problem.coupling_rows();
    let b = problem.coupling_rhs();
    let rho = config.penalty;
    let mut lambda = config.lambda0.clone().unwrap_or_else(|| DVector::zeros(m));
    if lambda.len() != m {
        return Err(Error::DimensionMismatch(format!("lambda0 has length {}, expected {m}", lambda.len())));
    }
    let mut xs: Vec<DVector<f64>> = match &config.x0 {
        Some(x0) => x0.clone(),
        None => problem.blocks().iter().map(find_interior_point).collect::<Result<_>>()?,
    };
    // absolute stationarity tolerance 1e-10 on each block solve
    let opts = BlockOptions { eps_x: 1e-10 / config.t_barrier, max_iters: 200, step: InnerStep::Backtracking };
    let mut contrib: Vec<DVector<f64>> =
        problem.blocks().iter().zip(&xs).map(|(blk, x)| &blk.coupling_matrix * x).collect();
    let mut total = contrib.iter().fold(DVector::zeros(m), |acc, v| acc + v);
    let mut f_prev = problem.objective_value(&xs)?;
    let mut block_iters = 0;

    for sweep in 1..=config.max_sweeps {
        for (i, blk) in problem.blocks().iter().enumerate() {
            let others = &total - &contrib[i] - b;
            let sub = Subproblem {
                block: blk,
                t: config.t_barrier,
                linear: blk.coupling_matrix.tr_mul(&(&lambda + rho * others)),
                proximal: Some(rho * blk.coupling_matrix.tr_mul(&blk.coupling_matrix)),
            };
            let sol = sub.solve(Some(&xs[i]), &opts)?;
            block_iters += sol.inner_iters;
            let new_contrib = &blk.coupling_matrix * &sol.x;
            total += &new_contrib - &contrib[i];
            contrib[i] = new_contrib;
            xs[i] = sol.x;
        }
        // recompute the sum to avoid drift from incremental updates
        total = contrib.iter().fold(DVector::zeros(m), |acc, v| acc + v);
        let residual = &total - b;
        lambda += config.ascent_step * rho * &residual;
        let f = problem.objective_value(&xs)?;
        let r = residual.norm();
        log::trace!("adi sweep {sweep}: residual {r:.3e} f {f:.6e}");
        if r <= config.tol && (f - f_prev).abs() <= config.tol {
            return Ok(SolveReport {
                method: "adi".into(),
                x_final: xs.iter().map(|v| v.iter().copied().collect()).collect(),
                lambda_final: lambda.iter().copied().collect(),
                t_final: config.t_barrier,
                gap_bound: None,
                objective: f,
                primal_residual: r,
                outer_iters: sweep,
                inner_iters_total: 0,
                block_iters_total: block_iters,
                fct_evals: sweep,
                short_step_violations: 0,
                trace: vec![],
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        f_prev = f;
    }
    Err(Error::MaxIterExceeded { what: "ADI sweeps", limit: config.max_sweeps })
}
