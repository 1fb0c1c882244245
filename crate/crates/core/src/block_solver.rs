//! Per-block barrier subproblem
//!
//! ```text
//! x_i(t,λ) = argmin { f_i(x) + t φ_i(x) + ⟨λ, B_i x⟩ : A_i x = a_i, x ∈ int X_i }
//! ```
//!
//! solved by equality-constrained Newton. Each iterate eliminates the KKT
//! system through the Cholesky factor of `H = ∇²f + t∇²φ` and the Schur
//! complement `A H⁻¹ Aᵀ`; both factors at the returned point are kept for the
//! dual Hessian assembly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::functions::{BoxBarrier, MRule, SmoothFn};
use crate::path_following::{step_size, DELTA_STAR};
use crate::problem::{find_interior_point, Block};

pub const DEFAULT_EPS_X: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 200;
/// Squared local decrement below which a stalled iteration counts as converged.
pub const ROUNDOFF_DEC2: f64 = 1e-8;

/// Step-length rule of the inner Newton iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerStep {
    /// `σ = 1/(1+δ)` above `δ* = 2−√3`, full step below, with `δ` the
    /// decrement normalized by the block's self-concordance parameter.
    Damped,
    /// Full step once `δ ≤ δ*`, Armijo backtracking on the subproblem
    /// objective outside that region. Far from the minimizer at small `t` it needs far fewer steps than
    /// the damped rule, so it is the default.
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOptions {
    /// Inexactness: stop once the KKT residual is at most `t·eps_x`.
    pub eps_x: f64,
    pub max_iters: usize,
    pub step: InnerStep,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions { eps_x: DEFAULT_EPS_X, max_iters: DEFAULT_MAX_ITERS, step: InnerStep::Backtracking }
    }
}

/// Minimizer of a block subproblem and the factorizations at that point.
#[derive(Clone, Debug)]
pub struct BlockSolution {
    pub x: DVector<f64>,
    /// Multiplier of the local equalities (empty when the block has none).
    pub nu: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub chol_h: Cholesky<f64, Dyn>,
    /// Factor of `A H⁻¹ Aᵀ`; `None` without local equalities.
    pub chol_s: Option<Cholesky<f64, Dyn>>,
    pub kkt_residual: f64,
    pub inner_iters: usize,
    pub residual_history: Vec<f64>,
}

/// A block subproblem with an optional extra linear term and convex
/// quadratic term: `f + tφ + ⟨linear, x⟩ + ½xᵀPx`.
#[derive(Clone, Debug)]
pub struct Subproblem<'a> {
    pub block: &'a Block,
    pub t: f64,
    pub linear: DVector<f64>,
    pub proximal: Option<DMatrix<f64>>,
}

impl<'a> Subproblem<'a> {
    /// The dual-decomposition subproblem at `(t, λ)`: linear term `B_iᵀλ`.
    pub fn lagrangian(block: &'a Block, t: f64, lambda: &DVector<f64>) -> Self {
        Subproblem { block, t, linear: block.coupling_matrix.tr_mul(lambda), proximal: None }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let mut v = self.block.objective.value(x)?
            + self.t * BoxBarrier::new(&self.block.bounds).value(x)?
            + self.linear.dot(x);
        if let Some(p) = &self.proximal {
            v += 0.5 * x.dot(&(p * x));
        }
        Ok(v)
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let f = self.block.objective.eval(x)?;
        let (_, pg, pd) = BoxBarrier::new(&self.block.bounds).grad_and_diag(x)?;
        let mut scale = f.gradient.norm() + self.t * pg.norm() + self.linear.norm();
        let mut g = f.gradient + self.t * pg + &self.linear;
        let mut h = f.hessian;
        for i in 0..h.nrows() {
            h[(i, i)] += self.t * pd[i];
        }
        if let Some(p) = &self.proximal {
            let px = p * x;
            scale += px.norm();
            g += px;
            h += p;
        }
        Ok((g, h, scale))
    }

    /// Self-concordance parameter of the subproblem objective at this `t`.
    fn m_param(&self) -> f64 {
        MRule::for_objective(&self.block.objective).m_t(self.t)
    }

    pub fn solve(&self, warm_start: Option<&DVector<f64>>, opts: &BlockOptions) -> Result<BlockSolution> {
        let block = self.block;
        let t = self.t;
        if !(t > 0.0) {
            return Err(Error::Config(format!("barrier parameter must be positive, got {t}")));
        }
        let mut x = match warm_start {
            Some(w) if block.bounds.contains_strictly(w) => w.clone(),
            _ => find_interior_point(block)?,
        };
        let a_mat = &block.local_matrix;
        let p = block.local_rows();
        let mut history = Vec::new();
        let (mut best_dec2, mut stalled) = (f64::INFINITY, 0);

        for iter in 0..=opts.max_iters {
            let (g, h, scale) = self.derivatives(&x)?;
            let chol_h = h.clone().cholesky().ok_or(Error::HessianNotPd("block Hessian"))?;
            let (dx, nu, chol_s, r_norm) = if p == 0 {
                (-chol_h.solve(&g), DVector::zeros(0), None, 0.0)
            } else {
                let c = chol_h
                    .l_dirty()
                    .solve_lower_triangular(&a_mat.transpose())
                    .ok_or(Error::HessianNotPd("block Hessian"))?;
                let s = c.tr_mul(&c);
                let chol_s = s.cholesky().ok_or(Error::HessianNotPd("Schur complement A H⁻¹ Aᵀ"))?;
                let r = &block.local_rhs - a_mat * &x;
                let (dx, w) = equilibrated_kkt(&h, a_mat, &g, &r)?;
                (dx, w, Some(chol_s), r.amax())
            };
            let stationarity = if p == 0 { g.clone() } else { &g + a_mat.tr_mul(&nu) };
            let residual = stationarity.norm();
            history.push(residual);
            let floor = 1e-14 * (scale + a_mat.tr_mul(&nu).norm());
            // roundoff scale of A x
            let ax_scale = 1.0 + block.local_rhs.amax() + (a_mat.abs() * x.abs()).amax();
            let stationary = residual <= (t * opts.eps_x).max(floor);
            // When the decrement of f/t + φ stops contracting, x is the
            // floating-point minimizer up to the accuracy the Schur complement
            // allows, and the residual sits on its roundoff floor.
            let local_dec2 = dx.dot(&(&h * &dx)).max(0.0) / t;
            if local_dec2 < 0.5 * best_dec2 {
                best_dec2 = local_dec2;
                stalled = 0;
            } else {
                stalled += 1;
            }
            let at_floor = stalled >= 3 && local_dec2 <= opts.eps_x.max(ROUNDOFF_DEC2) && r_norm <= 1e-9 * ax_scale;
            if (stationary && r_norm <= 1e-12 * ax_scale) || at_floor {
                return Ok(BlockSolution {
                    x,
                    nu,
                    hessian: h,
                    chol_h,
                    chol_s,
                    kkt_residual: residual,
                    inner_iters: iter,
                    residual_history: history,
                });
            }
            if iter == opts.max_iters {
                break;
            }

            let cap = 0.99 * block.bounds.max_step(&x, &dx);
            let delta = 0.5 * self.m_param() * dx.dot(&(&h * &dx)).max(0.0).sqrt();
            let step = match opts.step {
                InnerStep::Damped => step_size(delta).min(cap),
                // quadratic region: the full step is safe, and f differences
                // there are below what a line search can resolve
                InnerStep::Backtracking if delta <= DELTA_STAR => cap.min(1.0),
                InnerStep::Backtracking => {
                    let f0 = self.value(&x)?;
                    let slope = g.dot(&dx).min(0.0);
                    let mut s = cap.min(1.0);
                    // sufficient decrease up to the resolution of f
                    let noise = 1e-13 * (1.0 + f0.abs());
                    while s > 1e-16 {
                        match self.value(&(&x + s * &dx)) {
                            Ok(v) if v <= f0 + 0.25 * s * slope + noise => break,
                            _ => s *= 0.5,
                        }
                    }
                    if s <= 1e-16 {
                        // no progress possible in floating point
                        0.0
                    } else {
                        s
                    }
                }
            };
            if step == 0.0 {
                break;
            }
            x += step * &dx;
        }
        Err(Error::MaxIterExceeded { what: "block Newton", limit: opts.max_iters })
    }
}

/// Newton step of `min gᵀdx + ½dxᵀH dx` s.t. `A dx = r`, returning `(dx, w)`
/// with `H dx + Aᵀw = −g`. Columns are scaled by `1/√H_jj` and rows of `A` to
/// unit norm before an LU solve with two refinement steps; near the boundary
/// the diagonal of `H` spans many orders of magnitude and the unscaled
/// Schur complement loses most of its digits.
fn equilibrated_kkt(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, p) = (a.ncols(), a.nrows());
    let d = DVector::from_fn(n, |i, _| 1.0 / h[(i, i)].sqrt());
    let ad = a * DMatrix::from_diagonal(&d);
    let s = DVector::from_fn(p, |i, _| {
        let nrm = ad.row(i).norm();
        if nrm > 0.0 {
            1.0 / nrm
        } else {
            1.0
        }
    });
    let sad = DMatrix::from_diagonal(&s) * &ad;
    let mut kkt = DMatrix::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(&DMatrix::from_fn(n, n, |i, j| d[i] * h[(i, j)] * d[j]));
    kkt.view_mut((0, n), (n, p)).copy_from(&sad.transpose());
    kkt.view_mut((n, 0), (p, n)).copy_from(&sad);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-g.component_mul(&d)));
    rhs.rows_mut(n, p).copy_from(&r.component_mul(&s));
    let lu = kkt.clone().lu();
    let singular = || Error::HessianNotPd("block KKT matrix");
    let mut sol = lu.solve(&rhs).ok_or_else(singular)?;
    for _ in 0..2 {
        sol += lu.solve(&(&rhs - &kkt * &sol)).ok_or_else(singular)?;
    }
    Ok((sol.rows(0, n).component_mul(&d), sol.rows(n, p).component_mul(&s)))
}

/// Solves the block subproblem at `(t, λ)`.
pub fn solve_block(
    block: &Block,
    t: f64,
    lambda: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
    opts: &BlockOptions,
) -> Result<BlockSolution> {
    Subproblem::lagrangian(block, t, lambda).solve(warm_start, opts)
}

/// `d_i(t,λ) = −f_i(x) − tφ_i(x) − ⟨λ, B_i x⟩` at the block minimizer.
pub fn dual_value_contribution(sol: &BlockSolution, block: &Block, t: f64, lambda: &DVector<f64>) -> Result<f64> {
    let f = block.objective.value(&sol.x)?;
    let phi = BoxBarrier::new(&block.bounds).value(&sol.x)?;
    Ok(-f - t * phi - lambda.dot(&(&block.coupling_matrix * &sol.x)))
}
