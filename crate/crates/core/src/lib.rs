//! Interior-point Lagrangian decomposition for separable convex programs
//!
//! ```text
//! min Σ f_i(x_i)   s.t.   Σ B_i x_i = b,   A_i x_i = a_i,   x_i ∈ X_i
//! ```
//!
//! Box constraints are smoothed with logarithmic barriers; the coupling
//! constraints are dualized, and the resulting smooth dual function is
//! minimized by Newton path-following while the blocks are solved in
//! parallel.

pub mod baselines;
pub mod block_solver;
pub mod dual_newton;
pub mod error;
pub mod format;
pub mod functions;
pub mod generators;
pub mod harness;
pub mod path_following;
pub mod problem;

pub use baselines::{adi_solve, oracle_central_point, oracle_optimum, AdiConfig, OracleResult};
pub use block_solver::{solve_block, BlockOptions, BlockSolution, InnerStep};
pub use dual_newton::{DualEvaluator, DualState};
pub use error::{Error, Result};
pub use functions::{BoxSet, Objective, ScConstants};
pub use generators::{Family, GenSpec};
pub use path_following::{solve, Mode, PathConfig, SolveReport};
pub use problem::{Block, SeparableProblem};
