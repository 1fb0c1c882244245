//! Augmented dual function `d(t,λ) = ⟨λ,b⟩ + Σ d_i(t,λ)` and its Newton data.
//!
//! Gradient and Hessian are
//!
//! ```text
//! ∇d   = b − Σ B_i x_i(t,λ)
//! ∇²d  = Σ B_i [H_i⁻¹ − H_i⁻¹A_iᵀ(A_iH_i⁻¹A_iᵀ)⁻¹A_iH_i⁻¹] B_iᵀ
//! ```
//!
//! with every block term formed from the Cholesky factors kept in
//! [`BlockSolution`]. Block work runs on the rayon pool; reductions are summed
//! in block order so results do not depend on the thread count.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::block_solver::{dual_value_contribution, solve_block, BlockOptions, BlockSolution};
use crate::error::{Error, Result};
use crate::functions::ScConstants;
use crate::problem::{Block, SeparableProblem};

/// Dual data at one `(t, λ)`.
#[derive(Clone, Debug)]
pub struct DualState {
    pub t: f64,
    pub lambda: DVector<f64>,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub newton_dir: DVector<f64>,
    pub decrement: f64,
    pub value: f64,
    /// Block minimizers `x_i(t,λ)`.
    pub x: Vec<DVector<f64>>,
    /// Dual evaluations performed up to and including this one.
    pub fct_evals: usize,
}

/// `G_i = B_i [H⁻¹ − H⁻¹Aᵀ S⁻¹ A H⁻¹] B_iᵀ`, with `W = L_H⁻¹B_iᵀ`,
/// `C = L_H⁻¹A_iᵀ`, `Z = L_S⁻¹CᵀW`, so that `G_i = WᵀW − ZᵀZ`.
pub fn block_dual_hessian(block: &Block, sol: &BlockSolution) -> Result<DMatrix<f64>> {
    let l = sol.chol_h.l_dirty();
    let w = l.solve_lower_triangular(&block.coupling_matrix.transpose()).ok_or(Error::HessianNotPd("block Hessian"))?;
    let mut g = w.tr_mul(&w);
    if let Some(chol_s) = &sol.chol_s {
        let c =
            l.solve_lower_triangular(&block.local_matrix.transpose()).ok_or(Error::HessianNotPd("block Hessian"))?;
        let z = chol_s
            .l_dirty()
            .solve_lower_triangular(&c.tr_mul(&w))
            .ok_or(Error::HessianNotPd("Schur complement A H⁻¹ Aᵀ"))?;
        g -= z.tr_mul(&z);
    }
    Ok(g)
}

/// Builds the dual state from block solutions computed at exactly `(t, λ)`.
pub fn assemble(
    problem: &SeparableProblem,
    t: f64,
    lambda: &DVector<f64>,
    solutions: &[BlockSolution],
) -> Result<DualState> {
    let blocks = problem.blocks();
    if solutions.len() != blocks.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} block solutions for {} blocks",
            solutions.len(),
            blocks.len()
        )));
    }
    let m = problem.coupling_rows();
    let parts: Vec<(DVector<f64>, DMatrix<f64>, f64)> = blocks
        .par_iter()
        .zip(solutions.par_iter())
        .map(|(blk, sol)| {
            Ok((
                &blk.coupling_matrix * &sol.x,
                block_dual_hessian(blk, sol)?,
                dual_value_contribution(sol, blk, t, lambda)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut grad = problem.coupling_rhs().clone();
    let mut hess = DMatrix::zeros(m, m);
    let mut value = lambda.dot(problem.coupling_rhs());
    for (bx, g, d) in &parts {
        grad -= bx;
        hess += g;
        value += d;
    }
    // remove roundoff asymmetry before factoring
    let hess = (&hess + hess.transpose()) * 0.5;
    let chol = hess.clone().cholesky().ok_or(Error::HessianNotPd("dual Hessian"))?;
    let mut state = DualState {
        t,
        lambda: lambda.clone(),
        grad,
        hess,
        chol,
        newton_dir: DVector::zeros(m),
        decrement: 0.0,
        value,
        x: solutions.iter().map(|s| s.x.clone()).collect(),
        fct_evals: 0,
    };
    state.newton_dir = newton_direction(&state);
    state.decrement = newton_decrement(&state, problem.sc_constants());
    Ok(state)
}

/// `Δλ = −(∇²d)⁻¹∇d`, with one step of iterative refinement.
pub fn newton_direction(state: &DualState) -> DVector<f64> {
    let mut dir = -state.chol.solve(&state.grad);
    let r = &state.hess * &dir + &state.grad;
    dir -= state.chol.solve(&r);
    dir
}

/// `δ(t,λ) = α(t)/2 · √(∇dᵀ(∇²d)⁻¹∇d)`.
pub fn newton_decrement(state: &DualState, sc: &ScConstants) -> f64 {
    let q = -state.grad.dot(&state.newton_dir);
    0.5 * sc.alpha_t(state.t) * q.max(0.0).sqrt()
}

/// Evaluates the dual function, warm-starting each block from its previous
/// minimizer and counting evaluations.
#[derive(Clone, Debug)]
pub struct DualEvaluator<'a> {
    problem: &'a SeparableProblem,
    pub options: BlockOptions,
    warm: Vec<Option<DVector<f64>>>,
    pub fct_evals: usize,
    pub block_iters: usize,
}

impl<'a> DualEvaluator<'a> {
    pub fn new(problem: &'a SeparableProblem, options: BlockOptions) -> Self {
        DualEvaluator { problem, options, warm: vec![None; problem.blocks().len()], fct_evals: 0, block_iters: 0 }
    }

    pub fn problem(&self) -> &'a SeparableProblem {
        self.problem
    }

    /// Solves all blocks at `(t, λ)` without touching the warm starts or counters.
    pub fn block_solutions(&self, t: f64, lambda: &DVector<f64>) -> Result<Vec<BlockSolution>> {
        if lambda.len() != self.problem.coupling_rows() {
            return Err(Error::DimensionMismatch(format!(
                "multiplier has length {}, expected {}",
                lambda.len(),
                self.problem.coupling_rows()
            )));
        }
        self.problem
            .blocks()
            .par_iter()
            .zip(self.warm.par_iter())
            .map(|(blk, w)| solve_block(blk, t, lambda, w.as_ref(), &self.options))
            .collect()
    }

    /// One full sweep: all block solves plus assembly.
    pub fn evaluate(&mut self, t: f64, lambda: &DVector<f64>) -> Result<DualState> {
        let sols = self.block_solutions(t, lambda)?;
        self.fct_evals += 1;
        self.block_iters += sols.iter().map(|s| s.inner_iters).sum::<usize>();
        let mut state = assemble(self.problem, t, lambda, &sols)?;
        state.fct_evals = self.fct_evals;
        for (w, s) in self.warm.iter_mut().zip(sols) {
            *w = Some(s.x);
        }
        Ok(state)
    }

    /// Dual value only, for probing; does not update warm starts or counters.
    pub fn value(&self, t: f64, lambda: &DVector<f64>) -> Result<f64> {
        let sols = self.block_solutions(t, lambda)?;
        let mut v = lambda.dot(self.problem.coupling_rhs());
        for (blk, s) in self.problem.blocks().iter().zip(&sols) {
            v += dual_value_contribution(s, blk, t, lambda)?;
        }
        Ok(v)
    }
}
