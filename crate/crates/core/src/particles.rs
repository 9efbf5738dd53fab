//! States, weighted particle sets and weighted moments.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Sums of normalized weights must land within this distance of one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A point in state space. Inline storage covers the 1D and 4D models without
/// heap allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(SmallVec<[f64; 4]>);

impl StateVector {
    /// Builds a state, rejecting empty or non-finite input.
    pub fn new(components: impl Into<Vec<f64>>) -> Result<Self> {
        let components: Vec<f64> = components.into();
        if components.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
        }
        if let Some((index, &value)) = components.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteState { index, value });
        }
        Ok(StateVector(SmallVec::from_vec(components)))
    }

    /// Builds a state without validation. Used on hot paths where the inputs
    /// are already known to be finite.
    pub fn from_slice(components: &[f64]) -> Self {
        debug_assert!(!components.is_empty());
        StateVector(SmallVec::from_slice(components))
    }

    pub fn scalar(value: f64) -> Self {
        StateVector(SmallVec::from_slice(&[value]))
    }

    pub fn zeros(dim: usize) -> Self {
        StateVector(SmallVec::from_elem(0.0, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean distance to `other`.
    pub fn distance_sq(&self, other: &StateVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Squared distance restricted to `dims`.
    pub fn distance_sq_on(&self, other: &StateVector, dims: &[usize]) -> f64 {
        dims.iter()
            .map(|&d| {
                let e = self.0[d] - other.0[d];
                e * e
            })
            .sum()
    }
}

impl Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl IndexMut<usize> for StateVector {
    fn index_mut(&mut self, index: usize) -> &mut f64 {
        &mut self.0[index]
    }
}

impl From<f64> for StateVector {
    fn from(value: f64) -> Self {
        StateVector::scalar(value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub state: StateVector,
    pub weight: f64,
}

impl Particle {
    pub fn new(state: StateVector, weight: f64) -> Self {
        Particle { state, weight }
    }
}

/// A weighted sample approximation of a distribution.
///
/// Stored as parallel state and weight vectors. A set is never empty and all
/// states share one dimension. Weights are nonnegative and finite but only
/// sum to one after [`ParticleSet::normalized`] or when built by a routine
/// that says so.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    states: Vec<StateVector>,
    weights: Vec<f64>,
    dim: usize,
}

impl ParticleSet {
    pub fn new(particles: Vec<Particle>) -> Result<Self> {
        let (states, weights) = particles.into_iter().map(|p| (p.state, p.weight)).unzip();
        Self::from_parts(states, weights)
    }

    pub fn from_parts(states: Vec<StateVector>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptySet);
        }
        if states.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: states.len(),
                right: weights.len(),
            });
        }
        let dim = states[0].dim();
        if let Some(bad) = states.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        check_weights(&weights)?;
        Ok(ParticleSet { states, weights, dim })
    }

    /// Equal weights `1/n` on every state.
    pub fn uniform(states: Vec<StateVector>) -> Result<Self> {
        let n = states.len().max(1);
        let weights = vec![1.0 / n as f64; states.len()];
        Self::from_parts(states, weights)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateVector, f64)> + '_ {
        self.states.iter().zip(self.weights.iter().copied())
    }

    pub fn to_particles(&self) -> Vec<Particle> {
        self.iter().map(|(s, w)| Particle::new(s.clone(), w)).collect()
    }

    pub fn into_parts(self) -> (Vec<StateVector>, Vec<f64>) {
        (self.states, self.weights)
    }

    /// Returns the set with its weights rescaled to sum to one.
    pub fn normalized(self) -> Result<Self> {
        let weights = normalize_weights(&self.weights)?;
        Ok(ParticleSet { weights, ..self })
    }

    /// Replaces the weights, keeping the states.
    pub fn with_weights(self, weights: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.states, weights)
    }

    /// Replaces the states, keeping the weights.
    pub fn with_states(self, states: Vec<StateVector>) -> Result<Self> {
        Self::from_parts(states, self.weights)
    }

    /// Effective sample size `1 / sum(w^2)` of normalized weights.
    pub fn ess(&self) -> f64 {
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        if sq > 0.0 {
            1.0 / sq
        } else {
            0.0
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    match weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        Some((index, &value)) => Err(Error::InvalidWeight { index, value }),
        None => Ok(()),
    }
}

/// Rescales nonnegative weights to sum to one.
///
/// Returns [`Error::AllZeroWeights`] when the total is zero, which in a filter
/// means every particle was assigned zero likelihood.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    if !total.is_finite() {
        // Rescale before summing so huge-but-finite weights do not overflow.
        let max = weights.iter().copied().fold(0.0_f64, f64::max);
        let scaled: Vec<f64> = weights.iter().map(|w| w / max).collect();
        return normalize_weights(&scaled);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Componentwise `sum_i w_i x_i`. Weights are taken as given (normalized).
pub fn weighted_mean(set: &ParticleSet) -> StateVector {
    let mut mean = StateVector::zeros(set.dim());
    for (state, w) in set.iter() {
        for (m, x) in mean.as_mut_slice().iter_mut().zip(state.as_slice()) {
            *m += w * x;
        }
    }
    mean
}

/// Weighted covariance `sum_i w_i (x_i - mu)(x_i - mu)^T` over the selected
/// dimensions. The result may be singular; consumers decide how to cope.
pub fn weighted_covariance(set: &ParticleSet, dims: &[usize]) -> DMatrix<f64> {
    let mean = weighted_mean(set);
    let d = dims.len();
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (state, w) in set.iter() {
        for (c, &dim) in centered.iter_mut().zip(dims) {
            *c = state[dim] - mean[dim];
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += w * centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    cov
}
