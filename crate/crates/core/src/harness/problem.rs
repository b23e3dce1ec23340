//! Problem files: JSON with keys `m, blocks, objective, constraints, start,
//! solution, notes` in that order. Serialization is canonical, so parsing
//! and re-serializing a file written by this module gives identical bytes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{self, ObjectiveModel};
use crate::polytope::{BlockStructure, Polyhedron};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// `quadratic` or `registry:<name>`.
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub m: usize,
    pub blocks: Vec<usize>,
    pub objective: ObjectiveSpec,
    pub constraints: ConstraintSpec,
    pub start: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<Vec<f64>>,
    #[serde(default)]
    pub notes: String,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::InvalidProblem(format!(
            "{what} has a row of length {}, expected {ncols}",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Canonical pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn build(&self) -> Result<Problem> {
        Problem::from_file(self.clone())
    }
}

/// A parsed problem ready for the solvers.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub objective: ObjectiveModel,
    pub polyhedron: Polyhedron,
    pub start: DVector<f64>,
    pub solution: Option<DVector<f64>>,
}

impl Problem {
    pub fn from_file(file: ProblemFile) -> Result<Self> {
        let m = file.m;
        let blocks = BlockStructure::new(file.blocks.clone())?;
        if blocks.total() != m {
            return Err(Error::InvalidProblem(format!(
                "block dimensions sum to {}, but m = {m}",
                blocks.total()
            )));
        }
        let q = matrix_from_rows(&file.objective.q, m, "Q")?;
        if q.nrows() != m {
            return Err(Error::InvalidProblem(format!("Q has {} rows, expected {m}", q.nrows())));
        }
        let vec_of = |v: &[f64], what: &str| -> Result<DVector<f64>> {
            if v.len() != m {
                return Err(Error::InvalidProblem(format!("{what} has length {}, expected {m}", v.len())));
            }
            Ok(DVector::from_row_slice(v))
        };
        let c = vec_of(&file.objective.c, "c")?;
        let objective = match file.objective.kind.as_str() {
            "quadratic" => ObjectiveModel::quadratic(q, c, blocks.clone())?,
            other => match other.strip_prefix("registry:") {
                Some(name) => objectives::registry(name, q, c, blocks.clone())?,
                None => {
                    return Err(Error::InvalidProblem(format!("unknown objective type '{other}'")));
                }
            },
        };
        let a = matrix_from_rows(&file.constraints.a, m, "A")?;
        let b = DVector::from_row_slice(&file.constraints.b);
        let polyhedron = Polyhedron::new(a, b, blocks)?;
        let start = vec_of(&file.start, "start")?;
        let solution = file.solution.as_deref().map(|s| vec_of(s, "solution")).transpose()?;
        Ok(Self {
            file,
            objective,
            polyhedron,
            start,
            solution,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ProblemFile::load(path)?.build()
    }
}
