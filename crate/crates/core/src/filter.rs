//! Bootstrap particle filter: predict with the transition prior, reweight by
//! the likelihood, resample with a systematic comb.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Observation, StateSpaceModel};
use crate::particles::{normalize_weights, weighted_mean, ParticleSet, StateVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleScheme {
    #[default]
    Systematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfConfig {
    pub scheme: ResampleScheme,
    /// Resample when `ESS / N` drops below this fraction. `1.0` resamples every step.
    pub ess_threshold: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            scheme: ResampleScheme::Systematic,
            ess_threshold: 0.5,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(Error::config(format!(
                "ess_threshold must lie in (0, 1], got {}",
                self.ess_threshold
            )));
        }
        Ok(())
    }

    fn wants_resample(&self, set: &ParticleSet) -> bool {
        self.ess_threshold >= 1.0 || set.ess() < self.ess_threshold * set.len() as f64
    }
}

/// Advances every particle through the transition prior. Weights are kept.
pub fn predict<M, R>(set: &ParticleSet, model: &M, rng: &mut R) -> ParticleSet
where
    M: StateSpaceModel,
    R: Rng + ?Sized,
{
    let states = set.states().iter().map(|x| model.transition_sample(x, rng)).collect();
    ParticleSet::from_parts(states, set.weights().to_vec()).expect("prediction keeps set shape")
}

/// Multiplies each weight by `p(z | x_i)` and renormalizes.
///
/// Fails with [`Error::AllZeroWeights`] when no particle explains `z`.
pub fn reweight<M: StateSpaceModel>(set: &ParticleSet, z: &Observation, model: &M) -> Result<ParticleSet> {
    let raw: Vec<f64> = set.iter().map(|(x, w)| w * model.likelihood(x, z)).collect();
    let weights = normalize_weights(&raw)?;
    set.clone().with_weights(weights)
}

/// [`reweight`], falling back to uniform weights on likelihood collapse.
/// The flag reports whether the fallback was taken.
pub fn reweight_or_reset<M: StateSpaceModel>(
    set: &ParticleSet,
    z: &Observation,
    model: &M,
) -> Result<(ParticleSet, bool)> {
    match reweight(set, z, model) {
        Ok(s) => Ok((s, false)),
        Err(Error::AllZeroWeights) => Ok((ParticleSet::uniform(set.states().to_vec())?, true)),
        Err(e) => Err(e),
    }
}

/// Systematic (comb) resampling: one uniform offset, `n_out` evenly spaced
/// teeth. Index `i` is copied `floor` or `ceil` of `n_out * w_i` times.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n_out: usize, rng: &mut R) -> Vec<usize> {
    assert!(!weights.is_empty(), "cannot resample from an empty weight vector");
    let last_positive = weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("weights must have positive mass");
    let offset: f64 = rng.random();
    systematic_indices(weights, n_out, offset, last_positive)
}

fn systematic_indices(weights: &[f64], n_out: usize, offset: f64, last_positive: usize) -> Vec<usize> {
    let step = 1.0 / n_out as f64;
    let mut out = Vec::with_capacity(n_out);
    let mut i = 0;
    let mut cumulative = weights[0];
    for j in 0..n_out {
        let u = (offset + j as f64) * step;
        while cumulative <= u && i < last_positive {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// Draws `n_out` equally weighted particles from `set` by systematic resampling.
pub fn resample<R: Rng + ?Sized>(set: &ParticleSet, n_out: usize, rng: &mut R) -> Result<ParticleSet> {
    let idx = systematic_resample(set.weights(), n_out, rng);
    let states = idx.into_iter().map(|i| set.states()[i].clone()).collect();
    ParticleSet::uniform(states)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PfStep {
    pub set: ParticleSet,
    pub estimate: StateVector,
    pub resampled: bool,
    /// The likelihood collapsed and weights were reset to uniform.
    pub collapsed: bool,
}

/// One fixed-size bootstrap step: predict, reweight, resample if the ESS
/// fraction falls below the threshold, then take the weighted mean.
pub fn pf_step<M, R>(set: &ParticleSet, z: &Observation, model: &M, config: &PfConfig, rng: &mut R) -> Result<PfStep>
where
    M: StateSpaceModel,
    R: Rng + ?Sized,
{
    let predicted = predict(set, model, rng);
    let (weighted, collapsed) = reweight_or_reset(&predicted, z, model)?;
    let resampled = config.wants_resample(&weighted);
    let set = if resampled {
        resample(&weighted, weighted.len(), rng)?
    } else {
        weighted
    };
    let estimate = weighted_mean(&set);
    Ok(PfStep {
        set,
        estimate,
        resampled,
        collapsed,
    })
}
