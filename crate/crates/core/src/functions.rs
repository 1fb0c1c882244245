//! Objective and barrier functions with exact first, second and third
//! derivatives, plus numeric checks of self-concordance and of
//! compatibility with the box barrier.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Block;

/// Compatibility constant of the total delay function with the box barrier.
pub const DELAY_COMPATIBILITY: f64 = 3.0;

/// Axis-aligned box `[lower, upper]` with nonempty interior and finite bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxSet { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::BadBox(format!(
                "lower has {} entries, upper has {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::BadBox(format!("coordinate {i} has an infinite bound")));
            }
            if l >= u {
                return Err(Error::BadBox(format!("coordinate {i}: {l} >= {u}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)))
    }

    pub fn contains_strictly(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&xi, (&l, &u))| xi > l && xi < u)
    }

    /// Largest `s` such that `x + s*dx` stays inside the closed box.
    pub fn max_step(&self, x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
        let mut s = f64::INFINITY;
        for i in 0..self.dim() {
            if dx[i] > 0.0 {
                s = s.min((self.upper[i] - x[i]) / dx[i]);
            } else if dx[i] < 0.0 {
                s = s.min((self.lower[i] - x[i]) / dx[i]);
            }
        }
        s
    }

    /// Smallest distance to the boundary divided by the coordinate width.
    pub fn min_relative_slack(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|i| {
                let w = self.upper[i] - self.lower[i];
                ((x[i] - self.lower[i]).min(self.upper[i] - x[i])) / w
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Barrier complexity of the logarithmic box barrier.
    pub fn barrier_complexity(&self) -> f64 {
        2.0 * self.dim() as f64
    }
}

/// Value, gradient and Hessian at a point.
#[derive(Clone, Debug)]
pub struct Eval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// A convex function with analytic derivatives up to third order.
pub trait SmoothFn {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn eval(&self, x: &DVector<f64>) -> Result<Eval>;
    /// `∇³f(x)[h,h,h]`.
    fn third_directional(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64>;
}

/// Block objective. Serialized with a `kind` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// `cᵀx`
    Linear { c: Vec<f64> },
    /// `½xᵀQx + cᵀx`, `Q` symmetric positive semidefinite, stored as rows.
    Quadratic { q: Vec<Vec<f64>>, c: Vec<f64> },
    /// `Σ y_j / (d_j − y_j)` on `0 ≤ y < d`.
    TotalDelay { capacity: Vec<f64> },
}

impl Objective {
    pub fn zero(n: usize) -> Self {
        Objective::Linear { c: vec![0.0; n] }
    }

    pub fn quadratic(q: &DMatrix<f64>, c: &DVector<f64>) -> Self {
        Objective::Quadratic {
            q: (0..q.nrows()).map(|i| q.row(i).iter().copied().collect()).collect(),
            c: c.iter().copied().collect(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Objective::Linear { .. } => "linear",
            Objective::Quadratic { .. } => "quadratic",
            Objective::TotalDelay { .. } => "total_delay",
        }
    }

    fn q_matrix(q: &[Vec<f64>]) -> DMatrix<f64> {
        let n = q.len();
        DMatrix::from_fn(n, n, |i, j| q[i][j])
    }

    /// Checks shape, symmetry/semidefiniteness and capacity positivity.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Objective::Linear { c } => {
                if c.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "linear objective has {} coefficients, block has {n} variables",
                        c.len()
                    )));
                }
            }
            Objective::Quadratic { q, c } => {
                if c.len() != n || q.len() != n || q.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch(format!("quadratic objective is not {n}x{n}")));
                }
                let qm = Self::q_matrix(q);
                let scale = qm.norm().max(f64::MIN_POSITIVE);
                if (&qm - qm.transpose()).norm() > 1e-12 * scale {
                    return Err(Error::NotConvex("Q is not symmetric".into()));
                }
                if n > 0 {
                    let min_eig = qm.symmetric_eigenvalues().min();
                    if min_eig < -1e-10 * scale {
                        return Err(Error::NotConvex(format!("Q has eigenvalue {min_eig:.3e}")));
                    }
                }
            }
            Objective::TotalDelay { capacity } => {
                if capacity.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "total delay has {} capacities, block has {n} variables",
                        capacity.len()
                    )));
                }
                if let Some(d) = capacity.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
                    return Err(Error::NotConvex(format!("capacity {d} is not positive")));
                }
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        match self {
            Objective::Linear { c } | Objective::Quadratic { c, .. } => c.len(),
            Objective::TotalDelay { capacity } => capacity.len(),
        }
    }

    fn check_delay_domain(capacity: &[f64], y: &DVector<f64>) -> Result<()> {
        if y.iter().zip(capacity).all(|(&yj, &d)| yj >= 0.0 && yj < d) {
            Ok(())
        } else {
            Err(Error::DomainViolation)
        }
    }
}

impl SmoothFn for Objective {
    fn dim(&self) -> usize {
        self.dimension()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(match self {
            Objective::Linear { c } => c.iter().zip(x.iter()).map(|(a, b)| a * b).sum(),
            Objective::Quadratic { q, c } => {
                let qm = Self::q_matrix(q);
                let cv = DVector::from_column_slice(c);
                0.5 * x.dot(&(&qm * x)) + cv.dot(x)
            }
            Objective::TotalDelay { capacity } => {
                Self::check_delay_domain(capacity, x)?;
                x.iter().zip(capacity).map(|(&y, &d)| y / (d - y)).sum()
            }
        })
    }

    fn eval(&self, x: &DVector<f64>) -> Result<Eval> {
        let n = x.len();
        Ok(match self {
            Objective::Linear { c } => {
                Eval { value: self.value(x)?, gradient: DVector::from_column_slice(c), hessian: DMatrix::zeros(n, n) }
            }
            Objective::Quadratic { q, c } => {
                let qm = Self::q_matrix(q);
                let qx = &qm * x;
                let cv = DVector::from_column_slice(c);
                Eval { value: 0.5 * x.dot(&qx) + cv.dot(x), gradient: qx + cv, hessian: qm }
            }
            Objective::TotalDelay { capacity } => {
                Self::check_delay_domain(capacity, x)?;
                let mut value = 0.0;
                let mut gradient = DVector::zeros(n);
                let mut hessian = DMatrix::zeros(n, n);
                for j in 0..n {
                    let (y, d) = (x[j], capacity[j]);
                    let s = d - y;
                    value += y / s;
                    gradient[j] = d / (s * s);
                    hessian[(j, j)] = 2.0 * d / (s * s * s);
                }
                Eval { value, gradient, hessian }
            }
        })
    }

    fn third_directional(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        match self {
            Objective::Linear { .. } | Objective::Quadratic { .. } => Ok(0.0),
            Objective::TotalDelay { capacity } => {
                Self::check_delay_domain(capacity, x)?;
                Ok((0..x.len())
                    .map(|j| {
                        let s = capacity[j] - x[j];
                        6.0 * capacity[j] / s.powi(4) * h[j].powi(3)
                    })
                    .sum())
            }
        }
    }
}

/// Logarithmic barrier `−Σ log((u−x)(x−l))` of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBarrier<'a> {
    pub bounds: &'a BoxSet,
}

impl<'a> BoxBarrier<'a> {
    pub fn new(bounds: &'a BoxSet) -> Self {
        BoxBarrier { bounds }
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if self.bounds.contains_strictly(x) {
            Ok(())
        } else {
            Err(Error::DomainViolation)
        }
    }

    /// Gradient and Hessian diagonal, without allocating the dense Hessian.
    pub fn grad_and_diag(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        self.check(x)?;
        let n = x.len();
        let mut value = 0.0;
        let mut g = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let up = self.bounds.upper[i] - x[i];
            let lo = x[i] - self.bounds.lower[i];
            value -= (up * lo).ln();
            g[i] = 1.0 / up - 1.0 / lo;
            d[i] = 1.0 / (up * up) + 1.0 / (lo * lo);
        }
        Ok((value, g, d))
    }

    /// `sqrt(Σ h_i²/(u_i−x_i)² + h_i²/(x_i−l_i)²)`, the local barrier norm of `h`.
    pub fn local_norm(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        let (_, _, d) = self.grad_and_diag(x)?;
        Ok(d.iter().zip(h.iter()).map(|(di, hi)| di * hi * hi).sum::<f64>().sqrt())
    }
}

impl SmoothFn for BoxBarrier<'_> {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        Ok(-(0..x.len()).map(|i| ((self.bounds.upper[i] - x[i]) * (x[i] - self.bounds.lower[i])).ln()).sum::<f64>())
    }

    fn eval(&self, x: &DVector<f64>) -> Result<Eval> {
        let (value, gradient, d) = self.grad_and_diag(x)?;
        Ok(Eval { value, gradient, hessian: DMatrix::from_diagonal(&d) })
    }

    fn third_directional(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        Ok(2.0
            * (0..x.len())
                .map(|i| {
                    let up = self.bounds.upper[i] - x[i];
                    let lo = x[i] - self.bounds.lower[i];
                    h[i].powi(3) / up.powi(3) - h[i].powi(3) / lo.powi(3)
                })
                .sum::<f64>())
    }
}

/// `f + t·φ_box`, the barrier-smoothed block objective.
pub struct Penalized<'a> {
    pub objective: &'a Objective,
    pub barrier: BoxBarrier<'a>,
    pub t: f64,
}

impl SmoothFn for Penalized<'_> {
    fn dim(&self) -> usize {
        self.barrier.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.objective.value(x)? + self.t * self.barrier.value(x)?)
    }

    fn eval(&self, x: &DVector<f64>) -> Result<Eval> {
        let f = self.objective.eval(x)?;
        let p = self.barrier.eval(x)?;
        Ok(Eval {
            value: f.value + self.t * p.value,
            gradient: f.gradient + self.t * p.gradient,
            hessian: f.hessian + self.t * p.hessian,
        })
    }

    fn third_directional(&self, x: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        Ok(self.objective.third_directional(x, h)? + self.t * self.barrier.third_directional(x, h)?)
    }
}

/// Outcome of a sampled inequality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub samples: usize,
    pub failures: usize,
    /// Largest observed `lhs / rhs`; values above one are violations.
    pub worst_ratio: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Draws an interior point, half the time uniformly and half the time close
/// to a randomly chosen face so that boundary behaviour is exercised.
fn sample_interior(rng: &mut ChaCha8Rng, bounds: &BoxSet) -> DVector<f64> {
    DVector::from_iterator(
        bounds.dim(),
        bounds.lower.iter().zip(&bounds.upper).map(|(&l, &u)| {
            let w = u - l;
            if rng.random_bool(0.5) {
                l + w * rng.random_range(1e-3..1.0 - 1e-3)
            } else {
                let dist = w * 10f64.powf(-rng.random_range(1.0..8.0));
                if rng.random_bool(0.5) {
                    l + dist
                } else {
                    u - dist
                }
            }
        }),
    )
}

fn sample_direction(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Samples `|∇³f[h,h,h]| ≤ M (hᵀ∇²f h)^{3/2}` over the interior of `domain`.
pub fn check_self_concordance(
    f: &dyn SmoothFn,
    domain: &BoxSet,
    m: f64,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_interior(&mut rng, domain);
        let h = sample_direction(&mut rng, domain.dim());
        let third = f.third_directional(&x, &h)?.abs();
        let curv = h.dot(&(&f.eval(&x)?.hessian * &h)).max(0.0);
        let rhs = m * curv.powf(1.5);
        let ratio = if rhs > 0.0 {
            third / rhs
        } else if third == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(ratio);
        if third > rhs * (1.0 + 1e-8) {
            failures += 1;
        }
    }
    Ok(CheckReport { samples, failures, worst_ratio: worst })
}

/// Samples the compatibility inequality
/// `|∇³ψ[h,h,h]| ≤ β·hᵀ∇²ψh·sqrt(Σ h_i²/(u_i−x_i)² + h_i²/(x_i−l_i)²)`.
pub fn check_compatibility(
    f: &Objective,
    bounds: &BoxSet,
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    if let Objective::TotalDelay { capacity } = f {
        let fits = bounds.lower.iter().zip(&bounds.upper).zip(capacity).all(|((&l, &u), &d)| l >= 0.0 && u <= d);
        if !fits {
            return Err(Error::BadBox("box must lie inside [0, capacity]".into()));
        }
    }
    let barrier = BoxBarrier::new(bounds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_interior(&mut rng, bounds);
        let h = sample_direction(&mut rng, bounds.dim());
        let lhs = f.third_directional(&x, &h)?.abs();
        let curv = h.dot(&(&f.eval(&x)?.hessian * &h));
        let rhs = beta * curv * barrier.local_norm(&x, &h)?;
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(ratio);
        if lhs > rhs * (1.0 + 1e-8) {
            failures += 1;
        }
    }
    Ok(CheckReport { samples, failures, worst_ratio: worst })
}

/// How the self-concordance parameter of `f + tφ` scales with `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MRule {
    /// Linear or quadratic objective: `M_t = 2/√t`.
    Barrier,
    /// Objective β-compatible with the box barrier: `M_t = 2(1+β)/√t`.
    Compatible { beta: f64 },
}

impl MRule {
    pub fn m_t(self, t: f64) -> f64 {
        match self {
            MRule::Barrier => 2.0 / t.sqrt(),
            MRule::Compatible { beta } => 2.0 * (1.0 + beta) / t.sqrt(),
        }
    }

    pub fn for_objective(objective: &Objective) -> Self {
        match objective {
            Objective::Linear { .. } | Objective::Quadratic { .. } => MRule::Barrier,
            Objective::TotalDelay { .. } => MRule::Compatible { beta: DELAY_COMPATIBILITY },
        }
    }
}

/// Parameters of the self-concordant family `d(t,·)`:
/// `α(t) = α/√t`, `ξ(t) = ξ/t`, `η(t) = η/t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScConstants {
    pub alpha: f64,
    pub xi: f64,
    pub eta: f64,
    pub beta: f64,
    pub m_rule: MRule,
}

impl ScConstants {
    /// Derives the family constants from the block objectives and barrier
    /// complexities. With `N_max = max_i N_i`: `ξ = α√N_max`,
    /// `η = (α/2)√N_max + 1/2`.
    pub fn derive(blocks: &[Block]) -> Result<Self> {
        let mut rule = MRule::Barrier;
        let mut n_max: f64 = 0.0;
        for b in blocks {
            match MRule::for_objective(&b.objective) {
                MRule::Barrier => {}
                compat @ MRule::Compatible { .. } => rule = compat,
            }
            n_max = n_max.max(b.bounds.barrier_complexity());
        }
        let (alpha, beta) = match rule {
            MRule::Barrier => (2.0, 0.0),
            MRule::Compatible { beta } => (2.0 * (1.0 + beta), beta),
        };
        let root = n_max.sqrt();
        Ok(ScConstants { alpha, xi: alpha * root, eta: 0.5 * alpha * root + 0.5, beta, m_rule: rule })
    }

    pub fn alpha_t(&self, t: f64) -> f64 {
        self.alpha / t.sqrt()
    }

    pub fn m_t(&self, t: f64) -> f64 {
        self.m_rule.m_t(t)
    }
}
