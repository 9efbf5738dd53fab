//! Estimation quality and cost metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::StateVector;

/// Covariances with a condition number above this are regularized before inversion.
pub const NEES_CONDITION_LIMIT: f64 = 1e12;

/// Root mean square of the error over `dims`, averaged across steps.
pub fn rmse(estimates: &[StateVector], truths: &[StateVector], dims: &[usize]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truths.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::EmptySet);
    }
    let total: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| e.distance_sq_on(t, dims))
        .sum();
    Ok((total / estimates.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nees {
    pub value: f64,
    /// The covariance was near-singular and got a small diagonal loading.
    pub regularized: bool,
}

/// Normalized estimation error squared `e^T C^-1 e`, `e = estimate - truth`
/// over `dims`. `covariance` must be expressed over the same `dims`.
pub fn nees(estimate: &StateVector, covariance: &DMatrix<f64>, truth: &StateVector, dims: &[usize]) -> Nees {
    let d = dims.len();
    assert_eq!(covariance.shape(), (d, d), "covariance must match the selected dims");
    let e = DVector::from_iterator(d, dims.iter().map(|&i| estimate[i] - truth[i]));

    let sym = (covariance + covariance.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let singular = min.is_nan() || min <= 0.0 || max / min > NEES_CONDITION_LIMIT;

    let c = if singular {
        let scale = if sym.trace() > 0.0 { sym.trace() / d as f64 } else { 1.0 };
        sym + DMatrix::identity(d, d) * (1e-9 * scale)
    } else {
        sym
    };
    let value = match c.clone().cholesky() {
        Some(chol) => e.dot(&chol.solve(&e)),
        None => {
            // loading did not make it positive definite; fall back to the pseudo-inverse
            let pinv = c.pseudo_inverse(1e-300).unwrap_or_else(|_| DMatrix::zeros(d, d));
            e.dot(&(pinv * &e))
        }
    };
    Nees {
        value: value.max(0.0),
        regularized: singular,
    }
}

/// `100 (n_pf - n_cpf) / n_pf`. Negative when CPF used more particles.
pub fn reduction_percent(n_pf: f64, n_cpf: f64) -> f64 {
    100.0 * (n_pf - n_cpf) / n_pf
}

/// Per-step record of one filter run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub estimate: StateVector,
    pub truth: StateVector,
    pub n_selected: usize,
    pub k_occupied: usize,
    pub nees: f64,
    pub nees_regularized: bool,
    pub collapsed: bool,
    /// Mean-square distance ratio to the truth across the rejuvenation move.
    /// `None` when no rejuvenation ran.
    pub contraction: Option<f64>,
}

/// Summary of one filter run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub position_rmse: f64,
    pub avg_particles: f64,
    pub avg_nees: f64,
    pub avg_occupied: f64,
    pub regularized_steps: usize,
    pub collapsed_steps: usize,
    pub steps: Vec<StepRecord>,
}

impl RunMetrics {
    pub fn from_steps(steps: Vec<StepRecord>, position_dims: &[usize]) -> Result<Self> {
        let estimates: Vec<StateVector> = steps.iter().map(|s| s.estimate.clone()).collect();
        let truths: Vec<StateVector> = steps.iter().map(|s| s.truth.clone()).collect();
        let position_rmse = rmse(&estimates, &truths, position_dims)?;
        let t = steps.len() as f64;
        let mean = |f: &dyn Fn(&StepRecord) -> f64| steps.iter().map(f).sum::<f64>() / t;
        Ok(RunMetrics {
            position_rmse,
            avg_particles: mean(&|s| s.n_selected as f64),
            avg_nees: mean(&|s| s.nees),
            avg_occupied: mean(&|s| s.k_occupied as f64),
            regularized_steps: steps.iter().filter(|s| s.nees_regularized).count(),
            collapsed_steps: steps.iter().filter(|s| s.collapsed).count(),
            steps,
        })
    }

    /// All summary values are finite.
    pub fn is_finite(&self) -> bool {
        [self.position_rmse, self.avg_particles, self.avg_nees, self.avg_occupied]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
