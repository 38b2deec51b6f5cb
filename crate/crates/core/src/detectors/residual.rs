use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{principal_basis, residual_project, residual_width, PrincipalBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub basis: PrincipalBasis,
    pub fraction: f64,
}

impl ResidualModel {
    pub fn fit(train: ArrayView2<f64>, fraction: f64) -> Result<Self> {
        residual_width(train.ncols(), fraction)?;
        Ok(Self {
            basis: principal_basis(train)?,
            fraction,
        })
    }

    /// `‖q · W⊥‖`.
    pub fn score(&self, queries: ArrayView2<f64>) -> Result<Array1<f64>> {
        let p = residual_project(&self.basis, queries, self.fraction)?;
        Ok(p.outer_iter().map(|r| r.dot(&r).sqrt()).collect())
    }
}

pub fn residual_norm(
    train: ArrayView2<f64>,
    queries: ArrayView2<f64>,
    keep_smallest_fraction: f64,
) -> Result<Array1<f64>> {
    ResidualModel::fit(train, keep_smallest_fraction)?.score(queries)
}
