//! JSON problem files.
//!
//! ```json
//! {
//!   "blocks": [
//!     {
//!       "objective": { "kind": "quadratic", "q": [[1.0, 0.0], [0.0, 1.0]], "c": [0.0, 0.0] },
//!       "box": { "lower": [0.0, 0.0], "upper": [1.0, 1.0] },
//!       "A": { "shape": [1, 2], "rows": [[1.0, 1.0]] },
//!       "a": [1.0],
//!       "B": { "shape": [1, 2], "rows": [[1.0, 0.0]] }
//!     }
//!   ],
//!   "b": [0.5]
//! }
//! ```
//!
//! Objective kinds are `linear` (`c`), `quadratic` (`q`, `c`) and
//! `total_delay` (`capacity`). Unknown fields are rejected.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{BoxSet, Objective};
use crate::problem::{Block, SeparableProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub shape: [usize; 2],
    pub rows: Vec<Vec<f64>>,
}

impl MatrixFile {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixFile { shape: [m.nrows(), m.ncols()], rows: m.row_iter().map(|r| r.iter().copied().collect()).collect() }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let [r, c] = self.shape;
        if self.rows.len() != r || self.rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch(format!("matrix data does not match shape [{r}, {c}]")));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| self.rows[i][j]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub objective: Objective,
    #[serde(rename = "box")]
    pub bounds: BoxSet,
    #[serde(rename = "A")]
    pub local_matrix: MatrixFile,
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub coupling_matrix: MatrixFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub blocks: Vec<BlockFile>,
    pub b: Vec<f64>,
}

impl From<&SeparableProblem> for ProblemFile {
    fn from(p: &SeparableProblem) -> Self {
        ProblemFile {
            blocks: p
                .blocks()
                .iter()
                .map(|b| BlockFile {
                    objective: b.objective.clone(),
                    bounds: b.bounds.clone(),
                    local_matrix: MatrixFile::from_matrix(&b.local_matrix),
                    a: b.local_rhs.iter().copied().collect(),
                    coupling_matrix: MatrixFile::from_matrix(&b.coupling_matrix),
                })
                .collect(),
            b: p.coupling_rhs().iter().copied().collect(),
        }
    }
}

impl TryFrom<ProblemFile> for SeparableProblem {
    type Error = Error;

    fn try_from(f: ProblemFile) -> Result<Self> {
        let blocks = f
            .blocks
            .into_iter()
            .map(|b| {
                Block::new(
                    b.objective,
                    b.bounds,
                    b.local_matrix.to_matrix()?,
                    DVector::from_vec(b.a),
                    b.coupling_matrix.to_matrix()?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        SeparableProblem::new(blocks, DVector::from_vec(f.b))
    }
}

impl SeparableProblem {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ProblemFile = serde_json::from_str(s)?;
        f.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
