//! Histogram occupancy and KLD-adaptive sample sizing.
//!
//! The required sample count for `k` occupied bins is
//!
//! ```text
//! N >= (k - 1 + ln(2 / delta)) / (2 * epsilon)
//! ```
//!
//! [`kld_sample`] draws particles one at a time, tracks which bins they land
//! in and stops as soon as the count meets the bound for the current `k`.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::particles::{ParticleSet, StateVector};

pub type BinIndex = SmallVec<[i64; 4]>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KldConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Bin width for each binned dimension, in state units.
    pub bin_width: Vec<f64>,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for KldConfig {
    fn default() -> Self {
        KldConfig {
            epsilon: 0.05,
            delta: 0.01,
            bin_width: vec![0.25],
            n_min: 50,
            n_max: 5000,
        }
    }
}

impl KldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.bin_width.is_empty() || self.bin_width.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::config("bin_width entries must be positive"));
        }
        if !(1 <= self.n_min && self.n_min <= self.n_max) {
            return Err(Error::config(format!(
                "need 1 <= n_min <= n_max, got n_min={} n_max={}",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }
}

/// The unclamped bound `(k - 1 + ln(2/delta)) / (2 epsilon)`.
pub fn kld_bound_raw(k: usize, epsilon: f64, delta: f64) -> f64 {
    (k as f64 - 1.0 + (2.0 / delta).ln()) / (2.0 * epsilon)
}

/// Required particle count for `k` occupied bins, rounded up and clamped to
/// `[n_min, n_max]`.
pub fn kld_bound(k: usize, config: &KldConfig) -> usize {
    let raw = kld_bound_raw(k.max(1), config.epsilon, config.delta).ceil();
    let raw = if raw >= config.n_max as f64 {
        config.n_max
    } else {
        raw as usize
    };
    raw.clamp(config.n_min, config.n_max)
}

/// A regular grid of half-open bins `[origin + j h, origin + (j + 1) h)` over
/// a subset of state dimensions, together with the set of bins seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramGrid {
    origin: StateVector,
    bin_width: Vec<f64>,
    dims: Vec<usize>,
    occupied: HashSet<BinIndex>,
}

impl HistogramGrid {
    /// `bin_width[i]` applies to state dimension `dims[i]`.
    pub fn new(origin: StateVector, bin_width: Vec<f64>, dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.len() != bin_width.len() {
            return Err(Error::config(format!(
                "grid needs one bin width per binned dimension ({} dims, {} widths)",
                dims.len(),
                bin_width.len()
            )));
        }
        if let Some(&d) = dims.iter().find(|&&d| d >= origin.dim()) {
            return Err(Error::DimensionMismatch {
                expected: origin.dim(),
                actual: d + 1,
            });
        }
        if bin_width.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::config("bin widths must be positive"));
        }
        Ok(HistogramGrid {
            origin,
            bin_width,
            dims,
            occupied: HashSet::new(),
        })
    }

    /// Grid anchored at the origin of a `state_dim`-dimensional space.
    pub fn anchored_at_zero(state_dim: usize, dims: &[usize], bin_width: &[f64]) -> Result<Self> {
        Self::new(StateVector::zeros(state_dim), bin_width.to_vec(), dims.to_vec())
    }

    /// Same geometry, no occupied bins.
    pub fn empty_like(&self) -> Self {
        HistogramGrid {
            occupied: HashSet::new(),
            ..self.clone()
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bin_index(&self, x: &StateVector) -> BinIndex {
        self.dims
            .iter()
            .zip(&self.bin_width)
            .map(|(&d, h)| ((x[d] - self.origin[d]) / h).floor() as i64)
            .collect()
    }

    /// Marks the bin of `x` as occupied. Returns `true` if it was new.
    pub fn insert(&mut self, x: &StateVector) -> bool {
        let idx = self.bin_index(x);
        self.occupied.insert(idx)
    }

    /// Number of occupied bins.
    pub fn k(&self) -> usize {
        self.occupied.len()
    }

    pub fn occupied(&self) -> &HashSet<BinIndex> {
        &self.occupied
    }
}

/// Number of distinct bins touched by the particles of `set`, regardless of
/// their weights.
pub fn count_occupied(set: &ParticleSet, template: &HistogramGrid) -> usize {
    let mut grid = template.empty_like();
    for x in set.states() {
        grid.insert(x);
    }
    grid.k()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KldSample {
    /// Equally weighted draws.
    pub set: ParticleSet,
    /// Occupied bins at termination.
    pub k: usize,
    /// Number of draws, equal to `set.len()`.
    pub n: usize,
}

/// Draws from `source` until the count meets [`kld_bound`] for the number of
/// occupied bins, or `n_max` is reached.
pub fn kld_sample<R, F>(mut source: F, config: &KldConfig, template: &HistogramGrid, rng: &mut R) -> Result<KldSample>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> StateVector,
{
    let mut grid = template.empty_like();
    let mut states = Vec::with_capacity(config.n_min);
    let mut required = kld_bound(1, config);
    loop {
        let x = source(rng);
        if grid.insert(&x) {
            required = kld_bound(grid.k(), config);
        }
        states.push(x);
        if states.len() >= required {
            break;
        }
    }
    let n = states.len();
    let k = grid.k();
    Ok(KldSample {
        set: ParticleSet::uniform(states)?,
        k,
        n,
    })
}

/// Draws ancestor indices with probability proportional to their weights.
#[derive(Clone, Debug)]
pub struct AncestorSampler {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl AncestorSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let mut total = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                total += w;
                total
            })
            .collect();
        let last_positive = weights.iter().rposition(|&w| w > 0.0).ok_or(Error::AllZeroWeights)?;
        Ok(AncestorSampler {
            cumulative,
            last_positive,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.cumulative[self.last_positive];
        let u: f64 = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.last_positive)
    }
}

/// A KLD source that resamples finished states from a weighted set.
pub fn weighted_source<R: Rng + ?Sized>(set: &ParticleSet) -> Result<impl FnMut(&mut R) -> StateVector + '_> {
    let sampler = AncestorSampler::new(set.weights())?;
    Ok(move |rng: &mut R| set.states()[sampler.sample(rng)].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngContract;
    use rand_distr::{Distribution, Normal};

    fn cfg(n_min: usize, n_max: usize) -> KldConfig {
        KldConfig {
            n_min,
            n_max,
            ..KldConfig::default()
        }
    }

    #[test]
    fn bin_index_examples() {
        let g = HistogramGrid::new(StateVector::scalar(0.0), vec![1.0], vec![0]).unwrap();
        assert_eq!(g.bin_index(&StateVector::scalar(0.0)).as_slice(), &[0]);
        assert_eq!(g.bin_index(&StateVector::scalar(0.999)).as_slice(), &[0]);
        assert_eq!(g.bin_index(&StateVector::scalar(1.0)).as_slice(), &[1]);

        let g2 = HistogramGrid::new(StateVector::zeros(2), vec![2.0, 2.0], vec![0, 1]).unwrap();
        let x = StateVector::new(vec![3.5, -0.1]).unwrap();
        assert_eq!(g2.bin_index(&x).as_slice(), &[1, -1]);

        let origin = StateVector::new(vec![0.3, -7.0]).unwrap();
        let g3 = HistogramGrid::new(origin.clone(), vec![0.5, 0.5], vec![0, 1]).unwrap();
        assert_eq!(g3.bin_index(&origin).as_slice(), &[0, 0]);
    }

    #[test]
    fn grid_over_position_dims_ignores_velocity() {
        let g = HistogramGrid::anchored_at_zero(4, &[0, 2], &[0.5, 0.5]).unwrap();
        let a = StateVector::from_slice(&[1.2, 100.0, -0.2, 5.0]);
        let b = StateVector::from_slice(&[1.2, -100.0, -0.2, -5.0]);
        assert_eq!(g.bin_index(&a), g.bin_index(&b));
        assert_eq!(g.bin_index(&a).as_slice(), &[2, -1]);
    }

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(HistogramGrid::new(StateVector::zeros(2), vec![1.0], vec![0, 1]).is_err());
        assert!(HistogramGrid::new(StateVector::zeros(2), vec![1.0], vec![2]).is_err());
        assert!(HistogramGrid::new(StateVector::zeros(1), vec![0.0], vec![0]).is_err());
    }

    #[test]
    fn bound_examples() {
        let c = cfg(1, 100_000);
        assert_eq!(kld_bound(1, &c), 53);
        assert_eq!(kld_bound(11, &c), 153);
        assert_eq!(kld_bound(11, &c) - kld_bound(1, &c), 100);
        assert!((kld_bound_raw(11, 0.05, 0.01) - kld_bound_raw(1, 0.05, 0.01) - 100.0).abs() < 1e-9);
        let clamped = cfg(500, 5000);
        assert_eq!(kld_bound(1, &clamped), 500);
        assert_eq!(kld_bound(10_000, &clamped), 5000);
    }

    #[test]
    fn bound_is_monotone() {
        let c = cfg(1, usize::MAX);
        let mut prev_raw = f64::NEG_INFINITY;
        let mut prev = 0;
        for k in 1..5000 {
            let raw = kld_bound_raw(k, c.epsilon, c.delta);
            assert!(raw > prev_raw);
            let b = kld_bound(k, &c);
            assert!(b >= prev);
            prev_raw = raw;
            prev = b;
        }
    }

    #[test]
    fn count_occupied_examples() {
        let g = HistogramGrid::anchored_at_zero(1, &[0], &[1.0]).unwrap();
        let same = ParticleSet::uniform(vec![StateVector::scalar(0.4); 9]).unwrap();
        assert_eq!(count_occupied(&same, &g), 1);
        let pts: Vec<StateVector> = [0.1, 1.1, 2.1].iter().map(|&v| StateVector::scalar(v)).collect();
        assert_eq!(count_occupied(&ParticleSet::uniform(pts.clone()).unwrap(), &g), 3);
        let weighted = ParticleSet::from_parts(pts, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(count_occupied(&weighted, &g), 3);
    }

    #[test]
    fn single_bin_source_stops_at_bound() {
        let g = HistogramGrid::anchored_at_zero(1, &[0], &[1.0]).unwrap();
        let mut rng = RngContract::new(1, 0).rng();
        for n_min in [1, 20, 53, 80] {
            let out = kld_sample(|_: &mut _| StateVector::scalar(0.5), &cfg(n_min, 5000), &g, &mut rng).unwrap();
            assert_eq!(out.k, 1);
            assert_eq!(out.n, n_min.max(53));
            assert_eq!(out.set.len(), out.n);
        }
    }

    #[test]
    fn wide_source_terminates_at_n_max() {
        let g = HistogramGrid::anchored_at_zero(1, &[0], &[0.01]).unwrap();
        let mut rng = RngContract::new(2, 0).rng();
        let wide = Normal::new(0.0, 100.0).unwrap();
        let out = kld_sample(
            |r: &mut _| StateVector::scalar(wide.sample(r)),
            &cfg(10, 100),
            &g,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.n, 100);
        assert!(out.set.weights().iter().all(|&w| w == 0.01));
    }

    #[test]
    fn narrow_source_selects_fewer_than_wide() {
        let g = HistogramGrid::anchored_at_zero(1, &[0], &[0.25]).unwrap();
        let config = KldConfig::default();
        let mean_n = |std: f64, seed: u64| {
            let dist = Normal::new(0.0, std).unwrap();
            let mut rng = RngContract::new(seed, 0).rng();
            (0..100)
                .map(|_| {
                    kld_sample(|r: &mut _| StateVector::scalar(dist.sample(r)), &config, &g, &mut rng)
                        .unwrap()
                        .n as f64
                })
                .sum::<f64>()
                / 100.0
        };
        let narrow = mean_n(0.1, 3);
        let wide = mean_n(10.0, 3);
        assert!(narrow < wide, "narrow {narrow} wide {wide}");
    }

    #[test]
    fn output_matches_source_bin_frequencies() {
        // 5-bin source, 1e5 draws, chi-square goodness of fit at alpha = 0.01
        let probs = [0.1, 0.2, 0.3, 0.25, 0.15];
        let weights: Vec<f64> = probs.to_vec();
        let sampler = AncestorSampler::new(&weights).unwrap();
        let g = HistogramGrid::anchored_at_zero(1, &[0], &[1.0]).unwrap();
        let n = 100_000;
        let mut rng = RngContract::new(4, 0).rng();
        let out = kld_sample(
            |r: &mut _| StateVector::scalar(sampler.sample(r) as f64 + 0.5),
            &cfg(n, n),
            &g,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.n, n);
        let mut counts = [0usize; 5];
        for x in out.set.states() {
            counts[x[0].floor() as usize] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // upper 1% point of chi-square with 4 degrees of freedom
        const CHI2_4DOF_99: f64 = 13.2767;
        assert!(chi2 < CHI2_4DOF_99, "chi2 = {chi2}");
    }

    #[test]
    fn ancestor_sampler_skips_zero_weights() {
        let s = AncestorSampler::new(&[0.0, 0.5, 0.0, 0.5, 0.0]).unwrap();
        let mut rng = RngContract::new(9, 0).rng();
        for _ in 0..10_000 {
            let i = s.sample(&mut rng);
            assert!(i == 1 || i == 3);
        }
        assert!(AncestorSampler::new(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(KldConfig::default().validate().is_ok());
        for bad in [
            KldConfig {
                epsilon: 0.0,
                ..KldConfig::default()
            },
            KldConfig {
                delta: 1.0,
                ..KldConfig::default()
            },
            KldConfig {
                bin_width: vec![],
                ..KldConfig::default()
            },
            KldConfig {
                n_min: 0,
                ..KldConfig::default()
            },
            KldConfig {
                n_min: 10,
                n_max: 5,
                ..KldConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
