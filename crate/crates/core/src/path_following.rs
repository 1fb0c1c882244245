//! Newton path-following on the augmented dual.
//!
//! The driver centers at `t0`, then repeatedly shrinks `t ← τt` and re-centers
//! with damped Newton steps until `t·N_φ ≤ ε`. At that point
//! `0 ≤ f(x(t)) − f* ≤ t·N_φ`.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::block_solver::BlockOptions;
use crate::dual_newton::{DualEvaluator, DualState};
use crate::error::{Error, Result};
use crate::functions::ScConstants;
use crate::problem::SeparableProblem;

/// `δ* = 2 − √3`, the boundary of the quadratic-convergence region.
pub const DELTA_STAR: f64 = 0.267_949_192_431_122_8;

/// Damped Newton step length: `1/(1+δ)` above `δ*`, a full step below.
pub fn step_size(delta: f64) -> f64 {
    if delta > DELTA_STAR {
        1.0 / (1.0 + delta)
    } else {
        1.0
    }
}

/// Reduction factor `2c/(2c+1)`, `c = 1/4 + 2ξ/δ* + η`, under which one full
/// Newton step per update keeps the iterate centered.
pub fn short_step_factor(sc: &ScConstants) -> f64 {
    let c = 0.25 + 2.0 * sc.xi / DELTA_STAR + sc.eta;
    2.0 * c / (2.0 * c + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ShortStep,
    LongStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathConfig {
    pub t0: f64,
    /// Starting multiplier; zero when `None`.
    pub lambda0: Option<DVector<f64>>,
    /// Target gap `ε`; the run stops once `t·N_φ ≤ ε`.
    pub eps: f64,
    /// Centering tolerance on the decrement (long-step mode only).
    pub eps_v: f64,
    /// Long-step reduction factor.
    pub tau: f64,
    pub mode: Mode,
    pub max_outer: usize,
    pub max_inner: usize,
    pub block: BlockOptions,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            t0: 1.0,
            lambda0: None,
            eps: 1e-4,
            eps_v: DELTA_STAR / 2.0,
            tau: 0.85,
            mode: Mode::LongStep,
            max_outer: 10_000,
            max_inner: 100,
            block: BlockOptions::default(),
            threads: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.eps_v > 0.0) {
            return bad(format!("eps_v must be positive, got {}", self.eps_v));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0,1), got {}", self.tau));
        }
        if !(self.block.eps_x > 0.0) {
            return bad(format!("eps_x must be positive, got {}", self.block.eps_x));
        }
        if let Some(l) = &self.lambda0 {
            if l.len() != m {
                return Err(Error::DimensionMismatch(format!("lambda0 has length {}, expected {m}", l.len())));
            }
        }
        Ok(())
    }

    /// `(τ, ε_V)` actually used by the run.
    pub fn schedule(&self, sc: &ScConstants) -> (f64, f64) {
        match self.mode {
            Mode::ShortStep => (short_step_factor(sc), DELTA_STAR / 2.0),
            Mode::LongStep => (self.tau, self.eps_v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Initial centering at `t0`.
    Center,
    /// First sweep after a reduction of `t`.
    Update,
    /// Re-centering sweeps after an update.
    Inner,
    /// Final centering that drives the coupling residual to zero.
    Polish,
}

/// One dual evaluation and the step taken from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: Stage,
    pub outer: usize,
    pub t: f64,
    pub delta: f64,
    pub dual_value: f64,
    pub grad_norm: f64,
    /// Step length applied to the Newton direction; 0 if no step was taken.
    pub step: f64,
    /// `‖λ⁺ − λ‖` of that step.
    pub lambda_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub x_final: Vec<Vec<f64>>,
    pub lambda_final: Vec<f64>,
    pub t_final: f64,
    /// Certified bound `t_final·N_φ` on `f(x_final) − f*`; absent for
    /// methods without a certificate.
    pub gap_bound: Option<f64>,
    pub objective: f64,
    /// `‖Σ B_i x_i − b‖`.
    pub primal_residual: f64,
    pub outer_iters: usize,
    /// Newton steps on the multiplier.
    pub inner_iters_total: usize,
    /// Newton steps inside the block subproblems.
    pub block_iters_total: usize,
    pub fct_evals: usize,
    /// Updates after which the decrement exceeded `δ*` (short-step mode).
    pub short_step_violations: usize,
    pub trace: Vec<TraceRecord>,
    pub wall_time: f64,
}

pub fn certified_gap(report: &SolveReport) -> Option<f64> {
    report.gap_bound
}

fn record(st: &DualState, stage: Stage, outer: usize, step: f64) -> TraceRecord {
    TraceRecord {
        stage,
        outer,
        t: st.t,
        delta: st.decrement,
        dual_value: st.value,
        grad_norm: st.grad.norm(),
        step,
        lambda_step: step * st.newton_dir.norm(),
    }
}

struct Centering<'t> {
    trace: &'t mut Vec<TraceRecord>,
    steps: usize,
}

impl Centering<'_> {
    /// Damped Newton from `st` until `δ ≤ eps_v`. The first record is tagged
    /// `first`, later ones `rest`.
    ///
    /// With `defer`, a full step from `δ` with `(δ/(1−δ))² ≤ eps_v` is taken
    /// without a confirming sweep: quadratic-phase contraction already
    /// certifies `δ⁺ ≤ eps_v`. The returned λ is then ahead of the returned
    /// state; callers that sweep at a new `t` next lose nothing.
    fn run(
        &mut self,
        ev: &mut DualEvaluator,
        mut st: DualState,
        eps_v: f64,
        budget: usize,
        (first, rest, outer): (Stage, Stage, usize),
        defer: bool,
    ) -> Result<(DualState, DVector<f64>)> {
        let mut stage = first;
        for _ in 0..budget {
            if st.decrement <= eps_v {
                self.trace.push(record(&st, stage, outer, 0.0));
                let lambda = st.lambda.clone();
                return Ok((st, lambda));
            }
            let sigma = step_size(st.decrement);
            self.trace.push(record(&st, stage, outer, sigma));
            let lambda = &st.lambda + sigma * &st.newton_dir;
            self.steps += 1;
            if defer && sigma == 1.0 && contraction_bound(st.decrement) <= eps_v {
                return Ok((st, lambda));
            }
            st = ev.evaluate(st.t, &lambda)?;
            stage = rest;
        }
        if st.decrement <= eps_v {
            self.trace.push(record(&st, stage, outer, 0.0));
            let lambda = st.lambda.clone();
            return Ok((st, lambda));
        }
        Err(Error::MaxIterExceeded { what: "dual centering", limit: budget })
    }
}

/// Decrement bound `δ²/(1−δ)²` after a full Newton step from `δ < 1`.
pub fn contraction_bound(delta: f64) -> f64 {
    (delta / (1.0 - delta)).powi(2)
}

/// Centers at fixed `t` from `lambda_init`; returns the state and the number
/// of Newton steps taken.
pub fn center(
    ev: &mut DualEvaluator,
    t: f64,
    lambda_init: &DVector<f64>,
    eps_v: f64,
    budget: usize,
) -> Result<(DualState, usize)> {
    let mut trace = Vec::new();
    let mut c = Centering { trace: &mut trace, steps: 0 };
    let st = ev.evaluate(t, lambda_init)?;
    let (st, _) = c.run(ev, st, eps_v, budget, (Stage::Center, Stage::Center, 0), false)?;
    Ok((st, c.steps))
}

/// Coupling residual targeted by the final centering, relative to `1+‖b‖`.
pub const POLISH_TOL: f64 = 1e-9;
/// Block inexactness used by the final centering.
pub const POLISH_EPS_X: f64 = 1e-12;
/// Residual accepted when the polish target cannot be reached.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Runs the path-following method.
pub fn solve(problem: &SeparableProblem, config: &PathConfig) -> Result<SolveReport> {
    with_threads(config.threads, || solve_in_pool(problem, config))
}

/// Runs `f` on a dedicated pool of `threads` workers (0: the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

fn solve_in_pool(problem: &SeparableProblem, config: &PathConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let m = problem.coupling_rows();
    config.validate(m)?;
    let n_phi = problem.barrier_complexity();
    let sc = problem.sc_constants();
    let (tau, eps_v) = config.schedule(sc);
    let mut ev = DualEvaluator::new(problem, config.block);
    let mut trace = Vec::new();

    if m == 0 {
        return solve_uncoupled(problem, config, tau, start);
    }

    let lambda0 = config.lambda0.clone().unwrap_or_else(|| DVector::zeros(m));
    let mut t = config.t0;
    let mut c = Centering { trace: &mut trace, steps: 0 };
    let st = ev.evaluate(t, &lambda0)?;
    let more = t * n_phi > config.eps;
    let (mut st, mut lambda) = c.run(&mut ev, st, eps_v, config.max_inner, (Stage::Center, Stage::Center, 0), more)?;
    let mut outer = 0;
    let mut violations = 0;

    while t * n_phi > config.eps {
        if outer == config.max_outer {
            return Err(Error::MaxIterExceeded { what: "outer path-following", limit: config.max_outer });
        }
        outer += 1;
        t *= tau;
        // later updates sweep at (τt, λ); only the last iterate needs its own sweep
        let more = t * n_phi > config.eps;
        let upd = ev.evaluate(t, &lambda)?;
        match config.mode {
            Mode::ShortStep => {
                if upd.decrement > DELTA_STAR + 1e-8 {
                    violations += 1;
                    log::warn!("outer {outer}: decrement {} after update exceeds δ*", upd.decrement);
                }
                let sigma = step_size(upd.decrement);
                c.trace.push(record(&upd, Stage::Update, outer, sigma));
                lambda = &upd.lambda + sigma * &upd.newton_dir;
                c.steps += 1;
                st = upd;
            }
            Mode::LongStep => {
                (st, lambda) =
                    c.run(&mut ev, upd, eps_v, config.max_inner, (Stage::Update, Stage::Inner, outer), more)?;
            }
        }
        log::debug!("outer {outer}: t={t:.3e} δ={:.3e} fct_evals={}", st.decrement, ev.fct_evals);
    }
    // the polish target is below the gradient error of loosely solved blocks
    ev.options.eps_x = ev.options.eps_x.min(POLISH_EPS_X);
    if lambda != st.lambda {
        st = ev.evaluate(t, &lambda)?;
    }

    // centering at t_final to make the primal point feasible
    let target = POLISH_TOL * (1.0 + problem.coupling_rhs().norm());
    let accept = FEASIBILITY_TOL * (1.0 + problem.coupling_rhs().norm());
    let mut best = st.grad.norm();
    let mut stall = 0;
    for _ in 0..config.max_inner {
        let g = st.grad.norm();
        if g <= target || (stall >= 3 && g <= accept) {
            break;
        }
        let sigma = step_size(st.decrement);
        c.trace.push(record(&st, Stage::Polish, outer, sigma));
        let lambda = &st.lambda + sigma * &st.newton_dir;
        st = ev.evaluate(t, &lambda)?;
        c.steps += 1;
        if st.grad.norm() < 0.5 * best {
            best = st.grad.norm();
            stall = 0;
        } else {
            stall += 1;
        }
    }
    c.trace.push(record(&st, Stage::Polish, outer, 0.0));
    let residual = st.grad.norm();
    if residual > accept {
        return Err(Error::MaxIterExceeded { what: "final centering", limit: config.max_inner });
    }
    let steps = c.steps;

    Ok(SolveReport {
        method: "dip".into(),
        objective: problem.objective_value(&st.x)?,
        x_final: st.x.iter().map(|v| v.iter().copied().collect()).collect(),
        lambda_final: st.lambda.iter().copied().collect(),
        t_final: t,
        gap_bound: Some(t * n_phi),
        primal_residual: residual,
        outer_iters: outer,
        inner_iters_total: steps,
        block_iters_total: ev.block_iters,
        fct_evals: ev.fct_evals,
        short_step_violations: violations,
        trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Without coupling rows the blocks are independent barrier problems; `t` is
/// reduced with warm-started block solves only.
fn solve_uncoupled(problem: &SeparableProblem, config: &PathConfig, tau: f64, start: Instant) -> Result<SolveReport> {
    let n_phi = problem.barrier_complexity();
    let ev = DualEvaluator::new(problem, config.block);
    let lambda = DVector::zeros(0);
    let mut t = config.t0;
    let mut xs: Vec<DVector<f64>> = Vec::new();
    let mut sweeps = 0;
    let mut block_iters = 0;
    let mut outer = 0;
    loop {
        let sols: Vec<_> = problem
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| crate::block_solver::solve_block(b, t, &lambda, xs.get(i), &config.block))
            .collect::<Result<_>>()?;
        sweeps += 1;
        block_iters += sols.iter().map(|s| s.inner_iters).sum::<usize>();
        xs = sols.into_iter().map(|s| s.x).collect();
        if t * n_phi <= config.eps {
            break;
        }
        if outer == config.max_outer {
            return Err(Error::MaxIterExceeded { what: "outer path-following", limit: config.max_outer });
        }
        outer += 1;
        t *= tau;
    }
    drop(ev);
    Ok(SolveReport {
        method: "dip".into(),
        objective: problem.objective_value(&xs)?,
        x_final: xs.iter().map(|v| v.iter().copied().collect()).collect(),
        lambda_final: vec![],
        t_final: t,
        gap_bound: Some(t * n_phi),
        primal_residual: 0.0,
        outer_iters: outer,
        inner_iters_total: 0,
        block_iters_total: block_iters,
        fct_evals: sweeps,
        short_step_violations: 0,
        trace: vec![],
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{BoxSet, Objective};
    use crate::problem::Block;
    use nalgebra::DMatrix;

    fn sc_for(n: usize, obj: Objective) -> ScConstants {
        let b = Block::unconstrained(obj, BoxSet::uniform(n, 0.0, 1.0).unwrap(), DMatrix::zeros(1, n)).unwrap();
        ScConstants::derive(&[b]).unwrap()
    }

    #[test]
    fn step_size_branches() {
        assert_eq!(step_size(1.0), 0.5);
        assert_eq!(step_size(0.2), 1.0);
        assert!((step_size(0.3) - 1.0 / 1.3).abs() < 1e-15);
        assert_eq!(step_size(DELTA_STAR), 1.0);
        assert!((DELTA_STAR - (2.0 - 3f64.sqrt())).abs() < 1e-16);
    }

    #[test]
    fn short_step_factor_values() {
        let sc = sc_for(1, Objective::zero(1));
        let tau = short_step_factor(&sc);
        // ξ = 2√2, η = √2 + 1/2
        let c = 0.25 + 2.0 * 2.0 * 2f64.sqrt() / DELTA_STAR + 2f64.sqrt() + 0.5;
        assert!((c - 23.27588).abs() < 1e-5);
        assert!((tau - 2.0 * c / (2.0 * c + 1.0)).abs() < 1e-15);
        assert!((tau - 0.9790).abs() < 1e-4);

        let tiny = ScConstants { xi: 1e-12, eta: 1e-12, ..sc };
        assert!((short_step_factor(&tiny) - 1.0 / 3.0).abs() < 1e-9);
        let doubled = ScConstants { xi: 2.0 * sc.xi, ..sc };
        assert!(short_step_factor(&doubled) > tau);
    }

    #[test]
    fn quadratic_phase_arithmetic() {
        let d: f64 = 0.2;
        assert!((d * d / ((1.0 - d) * (1.0 - d)) - 0.0625).abs() < 1e-15);
        let ds = DELTA_STAR;
        assert!((ds * ds / ((1.0 - ds) * (1.0 - ds)) - ds / 2.0).abs() < 1e-15);
    }

    fn two_block_qp() -> SeparableProblem {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mk = |c: [f64; 2], a: [f64; 2], rhs: f64| {
            Block::new(
                Objective::quadratic(&q, &DVector::from_row_slice(&c)),
                BoxSet::uniform(2, 0.0, 2.0).unwrap(),
                DMatrix::from_row_slice(1, 2, &a),
                DVector::from_element(1, rhs),
                DMatrix::identity(2, 2),
            )
            .unwrap()
        };
        SeparableProblem::new(
            vec![mk([-1.0, 0.5], [1.0, 1.0], 1.5), mk([0.2, -0.8], [1.0, -1.0], 0.1)],
            DVector::from_row_slice(&[1.6, 1.5]),
        )
        .unwrap()
    }

    #[test]
    fn long_step_reaches_target() {
        let p = two_block_qp();
        let cfg = PathConfig::default();
        let r = solve(&p, &cfg).unwrap();
        assert!(r.gap_bound.unwrap() <= cfg.eps);
        assert!(r.t_final * p.barrier_complexity() <= cfg.eps);
        assert!(r.t_final * p.barrier_complexity() / 0.85 > cfg.eps);
        assert!(r.primal_residual <= FEASIBILITY_TOL * (1.0 + p.coupling_rhs().norm()));
        assert_eq!(certified_gap(&r), r.gap_bound);
        for rec in r.trace.iter().filter(|r| r.step == 0.0 && r.stage != Stage::Polish) {
            assert!(rec.delta <= cfg.eps_v);
        }
        for (blk, x) in p.blocks().iter().zip(&r.x_final) {
            let x = DVector::from_column_slice(x);
            assert!(blk.bounds.contains_strictly(&x));
            assert!((&blk.local_matrix * &x - &blk.local_rhs).amax() < 1e-10);
        }
    }

    #[test]
    fn short_step_properties() {
        let p = two_block_qp();
        let cfg = PathConfig { mode: Mode::ShortStep, eps: 1e-3, ..Default::default() };
        let r = solve(&p, &cfg).unwrap();
        let tau = short_step_factor(p.sc_constants());
        let expect = ((p.barrier_complexity() * cfg.t0 / cfg.eps).ln() / (1.0 / tau).ln()).ceil() as usize;
        assert!(r.outer_iters.abs_diff(expect) <= 2);
        assert_eq!(r.short_step_violations, 0);
        let updates: Vec<_> = r.trace.iter().filter(|x| x.stage == Stage::Update).collect();
        assert_eq!(updates.len(), r.outer_iters);
        assert!(updates.iter().all(|u| u.delta <= DELTA_STAR + 1e-8 && u.step == 1.0));
        assert!(r.trace.iter().all(|x| x.stage != Stage::Inner));
    }

    #[test]
    fn threshold_arithmetic() {
        // N_φ = 20, ε = 1e-3: stop once t ≤ 5e-5
        let blk =
            Block::unconstrained(Objective::zero(10), BoxSet::uniform(10, 0.0, 1.0).unwrap(), DMatrix::zeros(0, 10))
                .unwrap();
        let p = SeparableProblem::new(vec![blk], DVector::zeros(0)).unwrap();
        assert_eq!(p.barrier_complexity(), 20.0);
        let r = solve(&p, &PathConfig { eps: 1e-3, ..Default::default() }).unwrap();
        assert!(r.t_final <= 5e-5 && r.t_final / 0.85 > 5e-5);
        assert!((r.gap_bound.unwrap() - 20.0 * r.t_final).abs() < 1e-18);
    }

    #[test]
    fn centering_returns_immediately_when_centered() {
        let p = two_block_qp();
        let mut ev = DualEvaluator::new(&p, BlockOptions::default());
        let (st, _) = center(&mut ev, 0.5, &DVector::zeros(2), 1e-10, 100).unwrap();
        let before = ev.fct_evals;
        let (again, iters) = center(&mut ev, 0.5, &st.lambda, 1e-10, 100).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(ev.fct_evals, before + 1);
        assert!(again.decrement <= 1e-10);
    }

    #[test]
    fn centering_budget_exhaustion() {
        let p = two_block_qp();
        let mut ev = DualEvaluator::new(&p, BlockOptions::default());
        let r = center(&mut ev, 1e-3, &DVector::from_element(2, 50.0), 1e-12, 1);
        assert!(matches!(r, Err(Error::MaxIterExceeded { .. })));
    }

    #[test]
    fn damped_decrease_and_quadratic_contraction() {
        let p = two_block_qp();
        let r = solve(&p, &PathConfig { eps: 1e-5, ..Default::default() }).unwrap();
        let alpha = p.sc_constants().alpha;
        let mut damped = 0;
        for w in r.trace.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.step == 0.0 || a.t != b.t {
                continue;
            }
            if a.delta > DELTA_STAR {
                damped += 1;
                let w = a.delta - a.delta.ln_1p();
                assert!(b.dual_value - a.dual_value <= -(4.0 * a.t / (alpha * alpha)) * w + 1e-8);
            } else {
                assert!(b.delta <= a.delta * a.delta / (1.0 - a.delta).powi(2) + 1e-6);
            }
        }
        let _ = damped;
    }

    #[test]
    fn config_validation() {
        let p = two_block_qp();
        for cfg in [
            PathConfig { t0: 0.0, ..Default::default() },
            PathConfig { tau: 1.0, ..Default::default() },
            PathConfig { eps: -1.0, ..Default::default() },
            PathConfig { lambda0: Some(DVector::zeros(3)), ..Default::default() },
        ] {
            assert!(solve(&p, &cfg).is_err());
        }
    }

    #[test]
    fn report_round_trips() {
        let p = two_block_qp();
        let r = solve(&p, &PathConfig { eps: 1e-2, ..Default::default() }).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: SolveReport = serde_json::from_str(&s).unwrap();
        assert_eq!(r, back);
    }
}
