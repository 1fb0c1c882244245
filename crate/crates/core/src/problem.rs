//! Separable problem instances
//!
//! ```text
//! min Σ f_i(x_i)   s.t.  Σ B_i x_i = b,  A_i x_i = a_i,  x_i ∈ X_i (boxes)
//! ```
//!
//! together with the rank validation of the block-angular constraint matrix,
//! the slack transformation for coupling inequalities and a phase-I search
//! for strictly interior points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functions::{BoxBarrier, BoxSet, Objective, ScConstants, SmoothFn};

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// One subsystem: objective, box, local equalities `A x = a` and coupling columns `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub objective: Objective,
    pub bounds: BoxSet,
    pub local_matrix: DMatrix<f64>,
    pub local_rhs: DVector<f64>,
    pub coupling_matrix: DMatrix<f64>,
}

impl Block {
    pub fn new(
        objective: Objective,
        bounds: BoxSet,
        local_matrix: DMatrix<f64>,
        local_rhs: DVector<f64>,
        coupling_matrix: DMatrix<f64>,
    ) -> Result<Self> {
        let b = Block { objective, bounds, local_matrix, local_rhs, coupling_matrix };
        b.validate()?;
        Ok(b)
    }

    /// Block without local equalities.
    pub fn unconstrained(objective: Objective, bounds: BoxSet, coupling_matrix: DMatrix<f64>) -> Result<Self> {
        let n = bounds.dim();
        Self::new(objective, bounds, DMatrix::zeros(0, n), DVector::zeros(0), coupling_matrix)
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn local_rows(&self) -> usize {
        self.local_matrix.nrows()
    }

    fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let n = self.dim();
        if n == 0 {
            return Err(Error::DimensionMismatch("block has no variables".into()));
        }
        self.objective.validate(n)?;
        if self.local_matrix.ncols() != n || self.coupling_matrix.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "block has {n} variables but A has {} columns and B has {}",
                self.local_matrix.ncols(),
                self.coupling_matrix.ncols()
            )));
        }
        if self.local_rhs.len() != self.local_rows() {
            return Err(Error::DimensionMismatch(format!(
                "A has {} rows but a has {} entries",
                self.local_rows(),
                self.local_rhs.len()
            )));
        }
        if self.local_rows() >= n {
            return Err(Error::DimensionMismatch(format!(
                "local equalities need fewer rows than variables ({} >= {n})",
                self.local_rows()
            )));
        }
        if let Objective::TotalDelay { capacity } = &self.objective {
            let inside =
                self.bounds.lower.iter().zip(&self.bounds.upper).zip(capacity).all(|((&l, &u), &d)| l >= 0.0 && u <= d);
            if !inside {
                return Err(Error::BadBox("total delay box must lie inside [0, capacity]".into()));
            }
        }
        Ok(())
    }
}

/// Full instance: ordered blocks and the coupling right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableProblem {
    blocks: Vec<Block>,
    coupling_rhs: DVector<f64>,
    barrier_complexity: f64,
    sc: ScConstants,
}

impl SeparableProblem {
    pub fn new(blocks: Vec<Block>, coupling_rhs: DVector<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::DimensionMismatch("problem has no blocks".into()));
        }
        let m = coupling_rhs.len();
        for (i, b) in blocks.iter().enumerate() {
            if b.coupling_matrix.nrows() != m {
                return Err(Error::DimensionMismatch(format!(
                    "block {i}: B has {} rows, b has {m} entries",
                    b.coupling_matrix.nrows()
                )));
            }
        }
        let barrier_complexity = blocks.iter().map(|b| b.bounds.barrier_complexity()).sum();
        let sc = ScConstants::derive(&blocks)?;
        Ok(SeparableProblem { blocks, coupling_rhs, barrier_complexity, sc })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn coupling_rhs(&self) -> &DVector<f64> {
        &self.coupling_rhs
    }

    /// Number of coupling rows `m`.
    pub fn coupling_rows(&self) -> usize {
        self.coupling_rhs.len()
    }

    pub fn num_vars(&self) -> usize {
        self.blocks.iter().map(Block::dim).sum()
    }

    /// `Σ m_i + m`.
    pub fn num_constraints(&self) -> usize {
        self.blocks.iter().map(Block::local_rows).sum::<usize>() + self.coupling_rows()
    }

    /// `N_φ = Σ N_i`.
    pub fn barrier_complexity(&self) -> f64 {
        self.barrier_complexity
    }

    pub fn sc_constants(&self) -> &ScConstants {
        &self.sc
    }

    /// `Σ f_i(x_i)`.
    pub fn objective_value(&self, xs: &[DVector<f64>]) -> Result<f64> {
        self.blocks.iter().zip(xs).map(|(b, x)| b.objective.value(x)).sum()
    }

    /// `Σ B_i x_i − b`.
    pub fn coupling_residual(&self, xs: &[DVector<f64>]) -> DVector<f64> {
        let mut r = -self.coupling_rhs.clone();
        for (b, x) in self.blocks.iter().zip(xs) {
            r += &b.coupling_matrix * x;
        }
        r
    }

    /// Splits a stacked vector into per-block pieces.
    pub fn split(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for b in &self.blocks {
            out.push(x.rows(off, b.dim()).into_owned());
            off += b.dim();
        }
        out
    }

    pub fn stack(xs: &[DVector<f64>]) -> DVector<f64> {
        DVector::from_iterator(xs.iter().map(|x| x.len()).sum(), xs.iter().flat_map(|x| x.iter().copied()))
    }
}

/// Rank status of the block-angular matrix `[D_A; B]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    /// Full-row-rank status of every `A_i`.
    pub local_full_rank: Vec<bool>,
    /// Full-row-rank status of `B·U`, `U` spanning the null space of `D_A`.
    pub coupling_full_rank: bool,
    /// Numerical rank of `B·U`.
    pub coupling_rank: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.coupling_full_rank && self.local_full_rank.iter().all(|&ok| ok)
    }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Rank with the relative threshold `RANK_TOL`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Orthonormal basis of the null space of `a` (columns of the result).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to a square matrix so the SVD returns a complete right basis.
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cols: Vec<_> = (0..n)
        .filter(|&k| svd.singular_values[k] <= RANK_TOL * smax || smax == 0.0)
        .map(|k| v_t.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Checks that every `A_i` and `B·U` have full row rank, which is equivalent
/// to full row rank of `[D_A; B]`.
pub fn validate_rank(problem: &SeparableProblem) -> Result<ValidationReport> {
    let m = problem.coupling_rows();
    let mut local_full_rank = Vec::with_capacity(problem.blocks().len());
    let mut bu_cols = Vec::new();
    for (i, b) in problem.blocks().iter().enumerate() {
        if b.coupling_matrix.nrows() != m || b.local_matrix.ncols() != b.dim() {
            return Err(Error::DimensionMismatch(format!("block {i} is malformed")));
        }
        local_full_rank.push(numerical_rank(&b.local_matrix) == b.local_rows());
        let u = null_space(&b.local_matrix);
        let bu = &b.coupling_matrix * u;
        bu_cols.extend(bu.column_iter().map(|c| c.into_owned()));
    }
    let coupling_rank = if m == 0 || bu_cols.is_empty() { 0 } else { numerical_rank(&DMatrix::from_columns(&bu_cols)) };
    Ok(ValidationReport { local_full_rank, coupling_full_rank: coupling_rank == m, coupling_rank })
}

/// Upper bound on the slack of `Σ B_i x_i ≤ b` over the boxes:
/// `‖b‖₁ + Σ_i ‖B_i‖₁·‖X_i‖∞` with entrywise 1-norms.
pub fn sufficient_slack_upper(problem: &SeparableProblem) -> f64 {
    let reach = |b: &Block| b.bounds.lower.iter().chain(&b.bounds.upper).map(|v| v.abs()).fold(0.0, f64::max);
    problem.coupling_rhs().lp_norm(1)
        + problem
            .blocks()
            .iter()
            .map(|b| b.coupling_matrix.iter().map(|v| v.abs()).sum::<f64>() * reach(b))
            .sum::<f64>()
}

/// Turns `Σ B_i x_i ≤ b` into an equality by appending a slack block with
/// `B = I`, zero objective and the box `slack_bounds = [0, s̄]`.
pub fn add_slack_block(problem: &SeparableProblem, slack_bounds: BoxSet) -> Result<SeparableProblem> {
    let m = problem.coupling_rows();
    if slack_bounds.dim() != m {
        return Err(Error::DimensionMismatch(format!(
            "slack box has {} coordinates, coupling has {m} rows",
            slack_bounds.dim()
        )));
    }
    if slack_bounds.lower.iter().any(|&l| l != 0.0) || slack_bounds.upper.iter().any(|&u| u <= 0.0) {
        return Err(Error::BadSlackBounds);
    }
    let slack = Block::unconstrained(Objective::zero(m), slack_bounds, DMatrix::identity(m, m))?;
    let mut blocks = problem.blocks().to_vec();
    blocks.push(slack);
    SeparableProblem::new(blocks, problem.coupling_rhs().clone())
}

/// Strictly interior point of a block.
pub fn find_interior_point(block: &Block) -> Result<DVector<f64>> {
    interior_point(&block.local_matrix, &block.local_rhs, &block.bounds)
}

const PHASE1_MAX_ITERS: usize = 200;

/// Phase I: minimizes the box barrier subject to `A x = a`, starting at the
/// box center and taking infeasible-start Newton steps until the equalities
/// hold, then Newton steps with backtracking towards the analytic center.
pub fn interior_point(a: &DMatrix<f64>, rhs: &DVector<f64>, bounds: &BoxSet) -> Result<DVector<f64>> {
    let n = bounds.dim();
    let p = a.nrows();
    if a.ncols() != n || rhs.len() != p {
        return Err(Error::DimensionMismatch("phase I data has inconsistent shapes".into()));
    }
    let barrier = BoxBarrier::new(bounds);
    let feas_tol = 1e-11 * (1.0 + rhs.amax());
    let mut x = bounds.center();

    for _ in 0..PHASE1_MAX_ITERS {
        let (value, g, d) = barrier.grad_and_diag(&x)?;
        if value > 1e12 {
            return Err(Error::Infeasible("barrier value exceeded 1e12".into()));
        }
        let r = rhs - a * &x;
        let feasible = r.amax() <= feas_tol;
        let dx = if p == 0 {
            -g.component_div(&d)
        } else {
            let mut kkt = DMatrix::zeros(n + p, n + p);
            kkt.view_mut((0, 0), (n, n)).set_diagonal(&d);
            kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
            kkt.view_mut((n, 0), (p, n)).copy_from(a);
            let mut rv = DVector::zeros(n + p);
            rv.rows_mut(0, n).copy_from(&(-&g));
            rv.rows_mut(n, p).copy_from(&r);
            let sol =
                kkt.lu().solve(&rv).ok_or_else(|| Error::RankDeficient("phase I KKT system is singular".into()))?;
            sol.rows(0, n).into_owned()
        };
        let dec2 = dx.dot(&dx.component_mul(&d));
        if feasible && dec2 <= 1e-20 {
            break;
        }
        let cap = 0.99 * bounds.max_step(&x, &dx);
        let mut step = cap.min(1.0);
        if feasible {
            let slope = g.dot(&dx);
            loop {
                let trial = &x + step * &dx;
                if let Ok(v) = barrier.value(&trial) {
                    if v <= value + 0.25 * step * slope {
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
            if step < 1e-14 {
                break;
            }
        }
        x += step * &dx;
        if !bounds.contains_strictly(&x) {
            return Err(Error::Infeasible("iterate reached the box boundary".into()));
        }
    }

    let r = rhs - a * &x;
    if r.amax() > 1e-10 * (1.0 + rhs.amax()) {
        return Err(Error::Infeasible(format!("equality residual {:.3e}", r.amax())));
    }
    if bounds.min_relative_slack(&x) < 1e-9 {
        return Err(Error::Infeasible("no point with interior slack satisfies the equalities".into()));
    }
    Ok(x)
}
