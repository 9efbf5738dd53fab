//! Numerical checks of the contraction and occupancy arguments behind
//! CSO-rejuvenated KLD sampling.
//!
//! Two threads run through this module:
//!
//! 1. **Occupancy.** For `N` i.i.d. draws from bin probabilities `p`, the
//!    expected number of occupied bins is `sum_j f_N(p_j)` with
//!    `f_N(p) = 1 - (1 - p)^N`. `f_N` is concave, so by Karamata's inequality
//!    a more concentrated (majorizing) `p` occupies fewer bins on average.
//!    [`expected_occupied_exact`] is checked against exhaustive enumeration
//!    ([`brute_force_occupied`]) and the inequality is swept over constructed
//!    majorizing pairs.
//!
//! 2. **Contraction.** Synthetic populations that satisfy the leader-alignment
//!    conditions are pushed through the real CSO moves from [`crate::cso`],
//!    and the measured mean-square displacement ratios are compared with their
//!    closed forms.
//!
//! [`run_suite`] bundles everything into a [`TheoryReport`].

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cso::{self, CsoConfig, CsoHooks};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kld::{self, BinIndex, HistogramGrid, KldConfig};
use crate::particles::{ParticleSet, StateVector};
use crate::rng::{derive_seed, RngContract};

/// Equality tolerance for probability vectors and prefix sums.
pub const PROB_TOL: f64 = 1e-12;

/// Largest enumeration [`brute_force_occupied`] will attempt.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Constants of the contraction model. Displacements are measured from
/// `x_star` in one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionAssumptions {
    pub x_star: f64,
    /// Alignment holds for particles at least this far from `x_star`.
    pub r0: f64,
    /// Leaders sit at `c d` with `c` in `[0, alpha]`.
    pub alpha: f64,
    pub l1: f64,
    pub l2: f64,
    pub gamma: f64,
    pub lambda_max: f64,
    pub rho_h: f64,
    pub rho_c: f64,
    pub rho: f64,
    pub b: f64,
    /// Bound on the rooster jitter variance.
    pub b_r: f64,
}

impl ContractionAssumptions {
    /// Derives the role and global contraction constants for fixed hen steps
    /// `(s1, s2)`, chick cap `lambda_max`, rooster variance `b_r` and role
    /// probabilities `(pi_r, pi_h, pi_c)`.
    ///
    /// The hen and chick factors are the worst case over leader offsets in
    /// `[0, alpha]`.
    #[allow(clippy::too_many_arguments)]
    pub fn derive(
        x_star: f64,
        r0: f64,
        alpha: f64,
        s1: f64,
        s2: f64,
        lambda_max: f64,
        b_r: f64,
        role_probs: (f64, f64, f64),
    ) -> Result<Self> {
        let rho_h = hen_second_moment(s1, s2, alpha, alpha)
            .max(hen_second_moment(s1, s2, 0.0, 0.0))
            .max(hen_second_moment(s1, s2, alpha, 0.0))
            .max(hen_second_moment(s1, s2, 0.0, alpha));
        let rho_c = chick_second_moment(lambda_max, alpha).max(chick_second_moment(lambda_max, 0.0));
        let (pi_r, pi_h, pi_c) = role_probs;
        let a = ContractionAssumptions {
            x_star,
            r0,
            alpha,
            l1: s1,
            l2: s2,
            gamma: (s1 + s2).min(0.999_999),
            lambda_max,
            rho_h,
            rho_c,
            rho: pi_r + pi_h * rho_h + pi_c * rho_c,
            b: pi_r * b_r,
            b_r,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("gamma", self.gamma)?;
        unit("lambda_max", self.lambda_max)?;
        unit("rho_h", self.rho_h)?;
        unit("rho_c", self.rho_c)?;
        unit("rho", self.rho)?;
        for (name, v) in [
            ("r0", self.r0),
            ("l1", self.l1),
            ("l2", self.l2),
            ("b", self.b),
            ("b_r", self.b_r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.l1 + self.l2 < self.gamma {
            return Err(Error::config("step caps must satisfy l1 + l2 >= gamma"));
        }
        Ok(())
    }
}

/// `E[A^2]` for `A = 1 - s1 r1 (1 - c_r) - s2 r2 (1 - c_h)` with independent
/// `r1, r2 ~ U[0, 1]`.
pub fn hen_second_moment(s1: f64, s2: f64, c_r: f64, c_h: f64) -> f64 {
    let a = s1 * (1.0 - c_r);
    let b = s2 * (1.0 - c_h);
    1.0 - a - b + a * a / 3.0 + b * b / 3.0 + a * b / 2.0
}

/// `E[(1 - lambda (1 - c_m))^2]` for `lambda ~ U[0, lambda_max]`.
pub fn chick_second_moment(lambda_max: f64, c_m: f64) -> f64 {
    let a = (1.0 - c_m) * lambda_max;
    1.0 - a + a * a / 3.0
}

/// Bin probabilities. Always normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinProbabilityVector(Vec<f64>);

impl BinProbabilityVector {
    /// Accepts nonnegative entries summing to one within `1e-9` and
    /// renormalizes them exactly.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::EmptySet);
        }
        if let Some((index, &value)) = probabilities
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::InvalidWeight { index, value });
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("bin probabilities sum to {total}, not 1")));
        }
        Ok(BinProbabilityVector(probabilities.iter().map(|p| p / total).collect()))
    }

    /// Normalizes arbitrary nonnegative counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(BinProbabilityVector(
            counts.iter().map(|&c| c as f64 / total as f64).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries sorted in non-increasing order.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

/// Probability that a bin of mass `p` stays empty after `n` draws, `(1 - p)^n`.
pub fn miss_probability(p: f64, n: u32) -> f64 {
    if p >= 1.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * (-p).ln_1p()).exp()
}

/// `f_N(p) = 1 - (1 - p)^N`: probability that a bin of mass `p` is hit.
pub fn f_n(p: f64, n: u32) -> f64 {
    if p >= 1.0 {
        return 1.0 - miss_probability(p, n);
    }
    -(n as f64 * (-p).ln_1p()).exp_m1()
}

/// Expected number of occupied bins after `n` i.i.d. draws.
pub fn expected_occupied_exact(p: &BinProbabilityVector, n: u32) -> f64 {
    p.as_slice().iter().map(|&pj| f_n(pj, n)).sum()
}

/// Expected number of occupied bins by enumerating all `m^n` outcome tuples.
///
/// Independent of the closed form: it never evaluates `(1 - p)^n`.
pub fn brute_force_occupied(p: &BinProbabilityVector, n: u32) -> Result<f64> {
    let m = p.len();
    let outcomes = (m as f64).powi(n as i32);
    if outcomes > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            outcomes,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut hits = vec![0u32; m];
    let mut acc = NeumaierSum::default();
    enumerate_outcomes(p.as_slice(), n, 1.0, 0, &mut hits, &mut acc);
    Ok(acc.total())
}

fn enumerate_outcomes(p: &[f64], remaining: u32, prob: f64, distinct: usize, hits: &mut [u32], acc: &mut NeumaierSum) {
    if remaining == 0 {
        acc.add(prob * distinct as f64);
        return;
    }
    for j in 0..p.len() {
        if p[j] == 0.0 {
            continue;
        }
        let fresh = hits[j] == 0;
        hits[j] += 1;
        enumerate_outcomes(p, remaining - 1, prob * p[j], distinct + fresh as usize, hits, acc);
        hits[j] -= 1;
    }
}

/// Compensated summation.
#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `p` majorizes `q`: after zero-padding to a common length and sorting
/// descending, every prefix sum of `p` is at least that of `q`, and the
/// totals agree.
pub fn majorizes(p: &BinProbabilityVector, q: &BinProbabilityVector) -> bool {
    let m = p.len().max(q.len());
    let pad = |v: &BinProbabilityVector| {
        let mut s = v.sorted_desc();
        s.resize(m, 0.0);
        s
    };
    let (ps, qs) = (pad(p), pad(q));
    let (mut cp, mut cq) = (0.0, 0.0);
    for (a, b) in ps.iter().zip(&qs) {
        cp += a;
        cq += b;
        if cp < cq - PROB_TOL {
            return false;
        }
    }
    (cp - cq).abs() <= PROB_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KaramataReport {
    pub n: u32,
    pub expected_k_p: f64,
    pub expected_k_q: f64,
    /// `E[K_q] - E[K_p]`, nonnegative when the inequality holds.
    pub slack: f64,
    pub holds: bool,
}

/// Checks `E[K_p] <= E[K_q]` for a majorizing pair.
pub fn karamata_check(p: &BinProbabilityVector, q: &BinProbabilityVector, n: u32) -> Result<KaramataReport> {
    if !majorizes(p, q) {
        return Err(Error::NotMajorized);
    }
    let expected_k_p = expected_occupied_exact(p, n);
    let expected_k_q = expected_occupied_exact(q, n);
    let slack = expected_k_q - expected_k_p;
    Ok(KaramataReport {
        n,
        expected_k_p,
        expected_k_q,
        slack,
        holds: slack >= -PROB_TOL,
    })
}

/// Builds a pair `(p, q)` with `p` majorizing `q`: `q` is uniform on the
/// simplex and `p` is obtained from it by moving mass from smaller to larger
/// coordinates.
pub fn majorizing_pair<R: Rng + ?Sized>(
    m: usize,
    transfers: usize,
    rng: &mut R,
) -> (BinProbabilityVector, BinProbabilityVector) {
    let raw: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let q: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let mut p = q.clone();
    if m > 1 {
        for _ in 0..transfers {
            let i = rng.random_range(0..m);
            let mut j = rng.random_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            let (rich, poor) = if p[i] >= p[j] { (i, j) } else { (j, i) };
            let amount = rng.random::<f64>() * p[poor];
            p[rich] += amount;
            p[poor] -= amount;
        }
    }
    (
        BinProbabilityVector::new(p).expect("transfers preserve the simplex"),
        BinProbabilityVector::new(q).expect("normalized draw"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionRatio {
    pub ratio: f64,
    pub msd_before: f64,
    pub msd_after: f64,
}

/// Mean squared distance to `x_star` before and after a move. The sets are
/// paired by index and weighted uniformly.
pub fn contraction_ratio(before: &ParticleSet, after: &ParticleSet, x_star: &StateVector) -> Result<ContractionRatio> {
    if before.len() != after.len() {
        return Err(Error::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    let msd = |s: &ParticleSet| s.states().iter().map(|x| x.distance_sq(x_star)).sum::<f64>() / s.len() as f64;
    let msd_before = msd(before);
    let msd_after = msd(after);
    if msd_before == 0.0 {
        return Err(Error::ZeroBefore);
    }
    Ok(ContractionRatio {
        ratio: msd_after / msd_before,
        msd_before,
        msd_after,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorizationVerdict {
    pub a_majorizes_b: bool,
    pub b_majorizes_a: bool,
    /// Bin frequencies of `a` and `b`, sorted descending and zero-padded to a
    /// common length.
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
}

/// Bin occupancy counts of a set of states on `grid`.
pub fn bin_counts<'a>(
    states: impl IntoIterator<Item = &'a StateVector>,
    grid: &HistogramGrid,
) -> HashMap<BinIndex, usize> {
    let mut counts = HashMap::new();
    for x in states {
        *counts.entry(grid.bin_index(x)).or_insert(0) += 1;
    }
    counts
}

/// Count frequencies of occupied bins, sorted descending. Bin identity is
/// irrelevant for majorization, so only the multiset of counts is kept.
pub fn sorted_counts<'a>(states: impl IntoIterator<Item = &'a StateVector>, grid: &HistogramGrid) -> Vec<usize> {
    let mut v: Vec<usize> = bin_counts(states, grid).into_values().collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v
}

/// Compares two sorted count profiles by majorization.
pub fn majorization_from_counts(a: &[usize], b: &[usize]) -> Result<MajorizationVerdict> {
    let m = a.len().max(b.len());
    let pad = |c: &[usize]| -> Result<BinProbabilityVector> {
        let mut v = c.to_vec();
        v.sort_unstable_by(|x, y| y.cmp(x));
        v.resize(m, 0);
        BinProbabilityVector::from_counts(&v)
    };
    let (pa, pb) = (pad(a)?, pad(b)?);
    Ok(MajorizationVerdict {
        a_majorizes_b: majorizes(&pa, &pb),
        b_majorizes_a: majorizes(&pb, &pa),
        p_a: pa.sorted_desc(),
        p_b: pb.sorted_desc(),
    })
}

/// Bins both sets on `grid` by particle count and tests majorization both ways.
pub fn majorization_from_particles(
    a: &ParticleSet,
    b: &ParticleSet,
    grid: &HistogramGrid,
) -> Result<MajorizationVerdict> {
    majorization_from_counts(&sorted_counts(a.states(), grid), &sorted_counts(b.states(), grid))
}

/// A Monte Carlo ratio next to its closed-form prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub measured: f64,
    pub predicted: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MomentCheck {
    pub fn z_score(&self) -> f64 {
        (self.measured - self.predicted) / self.std_error
    }

    pub fn within(&self, sigmas: f64) -> bool {
        (self.measured - self.predicted).abs() <= sigmas * self.std_error
    }
}

fn signed_displacement<R: Rng + ?Sized>(r0: f64, spread: f64, rng: &mut R) -> f64 {
    let mag = r0 + spread * rng.random::<f64>();
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Ratio estimator `sum d'^2 / sum d^2` with its conditional standard error
/// given per-particle predicted second moments.
fn ratio_check(before: &[f64], after: &[f64], predicted_factor: &[f64]) -> MomentCheck {
    let denom: f64 = before.iter().map(|d| d * d).sum();
    let measured = after.iter().map(|d| d * d).sum::<f64>() / denom;
    let predicted = before.iter().zip(predicted_factor).map(|(d, f)| f * d * d).sum::<f64>() / denom;
    let resid: f64 = before
        .iter()
        .zip(after)
        .zip(predicted_factor)
        .map(|((d, a), f)| {
            let r = a * a - f * d * d;
            r * r
        })
        .sum();
    MomentCheck {
        measured,
        predicted,
        std_error: resid.sqrt() / denom,
        samples: before.len(),
    }
}

fn pinned_hen_config(s1: f64, s2: f64) -> CsoConfig {
    CsoConfig {
        hooks: CsoHooks {
            step_sizes: Some([s1, s2]),
            ..CsoHooks::default()
        },
        ..CsoConfig::default()
    }
}

/// Synthetic aligned hens: each hen sits at `d` with `|d| >= r0`, its leaders
/// at `c_r d` and `c_h d` with `c ~ U[0, alpha]`. Steps are pinned to
/// `(s1, s2)`, the uniform draws come from the real hen update. Compares the
/// measured mean-square ratio with `E[A^2 | c]`.
pub fn hen_contraction<R: Rng + ?Sized>(n: usize, alpha: f64, s1: f64, s2: f64, r0: f64, rng: &mut R) -> MomentCheck {
    let config = pinned_hen_config(s1, s2);
    let mut before = Vec::with_capacity(n);
    let mut after = Vec::with_capacity(n);
    let mut factor = Vec::with_capacity(n);
    for _ in 0..n {
        let d = signed_displacement(r0, 10.0, rng);
        let c_r = alpha * rng.random::<f64>();
        let c_h = alpha * rng.random::<f64>();
        let moved = cso::hen_update(
            &StateVector::scalar(d),
            &StateVector::scalar(c_r * d),
            &StateVector::scalar(c_h * d),
            0.0,
            0.0,
            0.0,
            &config,
            rng,
        );
        before.push(d);
        after.push(moved[0]);
        factor.push(hen_second_moment(s1, s2, c_r, c_h));
    }
    ratio_check(&before, &after, &factor)
}

/// One round of the aligned-hen kernel with fixed leader offsets, applied to
/// displacements `d` (reference point at zero).
pub fn aligned_hen_round<R: Rng + ?Sized>(d: &[f64], c_r: f64, c_h: f64, s1: f64, s2: f64, rng: &mut R) -> Vec<f64> {
    let config = pinned_hen_config(s1, s2);
    d.iter()
        .map(|&x| {
            cso::hen_update(
                &StateVector::scalar(x),
                &StateVector::scalar(c_r * x),
                &StateVector::scalar(c_h * x),
                0.0,
                0.0,
                0.0,
                &config,
                rng,
            )[0]
        })
        .collect()
}

/// Synthetic chicks with mothers at `c_m d`, `lambda ~ U[0, lambda_max]`.
pub fn chick_contraction<R: Rng + ?Sized>(n: usize, lambda_max: f64, c_m: f64, r0: f64, rng: &mut R) -> MomentCheck {
    let config = CsoConfig {
        lambda_max,
        ..CsoConfig::default()
    };
    let mut before = Vec::with_capacity(n);
    let mut after = Vec::with_capacity(n);
    for _ in 0..n {
        let d = signed_displacement(r0, 10.0, rng);
        let moved = cso::chick_update(&StateVector::scalar(d), &StateVector::scalar(c_m * d), &config, rng);
        before.push(d);
        after.push(moved[0]);
    }
    let factor = vec![chick_second_moment(lambda_max, c_m); n];
    ratio_check(&before, &after, &factor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoosterCheck {
    pub dim: usize,
    pub sigma: f64,
    pub samples: usize,
    /// Mean displacement per dimension and its standard error.
    pub drift: Vec<f64>,
    pub drift_std_error: Vec<f64>,
    /// Measured `E|x' - x|^2` and the expected `dim sigma^2`.
    pub second_moment: f64,
    pub expected_second_moment: f64,
}

impl RoosterCheck {
    pub fn drift_ok(&self, sigmas: f64) -> bool {
        self.drift
            .iter()
            .zip(&self.drift_std_error)
            .all(|(d, se)| d.abs() <= sigmas * se)
    }

    pub fn second_moment_rel_err(&self) -> f64 {
        (self.second_moment - self.expected_second_moment).abs() / self.expected_second_moment
    }
}

/// Repeated rooster jitter of a fixed point.
pub fn rooster_neutrality<R: Rng + ?Sized>(n: usize, dim: usize, sigma: f64, rng: &mut R) -> RoosterCheck {
    let config = CsoConfig {
        rooster_sigma: sigma,
        ..CsoConfig::default()
    };
    let x = StateVector::from_slice(&(0..dim).map(|i| 3.0 - i as f64).collect::<Vec<_>>());
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut second = 0.0;
    for _ in 0..n {
        let y = cso::rooster_update(&x, &config, rng);
        for d in 0..dim {
            let e = y[d] - x[d];
            sum[d] += e;
            sum_sq[d] += e * e;
        }
        second += y.distance_sq(&x);
    }
    let nf = n as f64;
    let drift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let drift_std_error = sum_sq
        .iter()
        .zip(&drift)
        .map(|(sq, m)| ((sq / nf - m * m) * nf / (nf - 1.0)).sqrt() / nf.sqrt())
        .collect();
    RoosterCheck {
        dim,
        sigma,
        samples: n,
        drift,
        drift_std_error,
        second_moment: second / nf,
        expected_second_moment: dim as f64 * sigma * sigma,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalContraction {
    pub assumptions: ContractionAssumptions,
    pub msd_before: f64,
    pub msd_after: f64,
    /// `rho E|D|^2 + B`.
    pub bound: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl GlobalContraction {
    pub fn holds(&self, sigmas: f64) -> bool {
        self.msd_after <= self.bound + sigmas * self.std_error
    }
}

/// A mixed population of roosters, hens and chicks that all satisfy the
/// alignment conditions, moved once; the measured second moment is compared
/// with the global bound `rho E|D|^2 + B`.
#[allow(clippy::too_many_arguments)]
pub fn global_contraction<R: Rng + ?Sized>(
    n: usize,
    alpha: f64,
    s1: f64,
    s2: f64,
    lambda_max: f64,
    rooster_sigma: f64,
    role_fracs: (f64, f64),
    rng: &mut R,
) -> Result<GlobalContraction> {
    let r0 = 1.0;
    let pi_r = role_fracs.0;
    let pi_h = role_fracs.1;
    let pi_c = 1.0 - pi_r - pi_h;
    let assumptions = ContractionAssumptions::derive(
        0.0,
        r0,
        alpha,
        s1,
        s2,
        lambda_max,
        rooster_sigma * rooster_sigma,
        (pi_r, pi_h, pi_c),
    )?;
    let hen_cfg = pinned_hen_config(s1, s2);
    let chick_cfg = CsoConfig {
        lambda_max,
        ..CsoConfig::default()
    };
    let rooster_cfg = CsoConfig {
        rooster_sigma,
        ..CsoConfig::default()
    };
    let mut before = Vec::with_capacity(n);
    let mut after = Vec::with_capacity(n);
    for _ in 0..n {
        let d = signed_displacement(r0, 10.0, rng);
        let x = StateVector::scalar(d);
        let u: f64 = rng.random();
        let moved = if u < pi_r {
            cso::rooster_update(&x, &rooster_cfg, rng)
        } else if u < pi_r + pi_h {
            let c_r = alpha * rng.random::<f64>();
            let c_h = alpha * rng.random::<f64>();
            cso::hen_update(
                &x,
                &StateVector::scalar(c_r * d),
                &StateVector::scalar(c_h * d),
                0.0,
                0.0,
                0.0,
                &hen_cfg,
                rng,
            )
        } else {
            let c_m = alpha * rng.random::<f64>();
            cso::chick_update(&x, &StateVector::scalar(c_m * d), &chick_cfg, rng)
        };
        before.push(d * d);
        after.push(moved[0] * moved[0]);
    }
    let nf = n as f64;
    let msd_before = before.iter().sum::<f64>() / nf;
    let msd_after = after.iter().sum::<f64>() / nf;
    let var_after = after.iter().map(|a| (a - msd_after).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(GlobalContraction {
        bound: assumptions.rho * msd_before + assumptions.b,
        assumptions,
        msd_before,
        msd_after,
        std_error: (var_after / nf).sqrt(),
        samples: n,
    })
}

/// Largest discrete second difference and smallest first difference of `f_N`
/// on `points` equally spaced nodes of `[0, 1]`.
///
/// Differences of `f_N` are taken as differences of the miss probability
/// `(1 - p)^N` with the sign flipped. The two are equal algebraically, but
/// the miss probabilities keep their resolution near `p = 1`, where `f_N`
/// itself rounds to exactly `1.0`.
pub fn f_n_shape(n: u32, points: usize) -> (f64, f64) {
    let miss: Vec<f64> = (0..points)
        .map(|i| miss_probability(i as f64 / (points - 1) as f64, n))
        .collect();
    let min_first = miss.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let max_second = miss
        .windows(3)
        .map(|w| -(w[0] - 2.0 * w[1] + w[2]))
        .fold(f64::NEG_INFINITY, f64::max);
    (max_second, min_first)
}

/// One named check of the suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub values: BTreeMap<String, f64>,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String, values: &[(&str, f64)]) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

impl TheoryReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Plain-text rendering, one line per check followed by its values.
    pub fn to_text(&self) -> String {
        let mut out = format!("theory suite, seed {}\n", self.seed);
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
            for (k, v) in &c.values {
                out.push_str(&format!("    {k} = {v}\n"));
            }
        }
        out.push_str(&format!("overall: {}\n", if self.all_passed { "PASS" } else { "FAIL" }));
        out
    }
}

/// Sizes of the suite's Monte Carlo and sweep components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSizes {
    pub karamata_pairs: usize,
    pub oracle_instances: usize,
    pub shape_points: usize,
    pub hen_particles: usize,
    pub chick_particles: usize,
    pub rooster_draws: usize,
    pub global_particles: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            karamata_pairs: 1000,
            oracle_instances: 200,
            shape_points: 1000,
            hen_particles: 10_000,
            chick_particles: 10_000,
            rooster_draws: 100_000,
            global_particles: 100_000,
        }
    }
}

/// Identifiers for the suite's per-check random streams.
mod stream {
    pub const KARAMATA: u64 = 1;
    pub const ORACLE: u64 = 2;
    pub const HEN: u64 = 3;
    pub const CHICK: u64 = 4;
    pub const ROOSTER: u64 = 5;
    pub const COMPOSE: u64 = 6;
    pub const GLOBAL: u64 = 7;
    pub const ALIGNED: u64 = 8;
}

fn contract(seed: u64, check: u64, instance: u64) -> RngContract {
    RngContract::new(derive_seed(seed, &[check]), instance)
}

/// Runs every check of the theory suite.
pub fn run_suite(seed: u64, sizes: &SuiteSizes, exec: Execution) -> TheoryReport {
    let checks = vec![
        check_karamata(seed, sizes.karamata_pairs, exec),
        check_oracle(seed, sizes.oracle_instances, exec),
        check_f_n_shape(sizes.shape_points),
        check_monotone_in_n(),
        check_hen(seed, sizes.hen_particles),
        check_aligned_hen_bound(seed, sizes.hen_particles),
        check_chick(seed, sizes.chick_particles),
        check_rooster(seed, sizes.rooster_draws),
        check_composition(seed, sizes.hen_particles),
        check_global(seed, sizes.global_particles),
        check_kld_spot(),
        check_kld_monotone(),
    ];
    let all_passed = checks.iter().all(|c| c.passed);
    TheoryReport {
        seed,
        checks,
        all_passed,
    }
}

fn check_karamata(seed: u64, pairs: usize, exec: Execution) -> CheckResult {
    let ids: Vec<u64> = (0..pairs as u64).collect();
    let results = exec.map(&ids, |&i| {
        let mut rng = contract(seed, stream::KARAMATA, i).rng();
        let m = rng.random_range(2..=10);
        let n = rng.random_range(2..=50);
        let transfers = rng.random_range(1..=3 * m);
        let (p, q) = majorizing_pair(m, transfers, &mut rng);
        karamata_check(&p, &q, n)
    });
    let mut violations = 0;
    let mut not_majorized = 0;
    let mut min_slack = f64::INFINITY;
    for r in &results {
        match r {
            Ok(rep) => {
                if !rep.holds {
                    violations += 1;
                }
                min_slack = min_slack.min(rep.slack);
            }
            Err(_) => not_majorized += 1,
        }
    }
    CheckResult::new(
        "karamata_occupancy",
        violations == 0 && not_majorized == 0,
        format!("{pairs} majorizing pairs, {violations} violations, {not_majorized} generator failures"),
        &[
            ("pairs", pairs as f64),
            ("violations", violations as f64),
            ("min_slack", min_slack),
        ],
    )
}

fn check_oracle(seed: u64, instances: usize, exec: Execution) -> CheckResult {
    let ids: Vec<u64> = (0..instances as u64).collect();
    let diffs = exec.map(&ids, |&i| {
        let mut rng = contract(seed, stream::ORACLE, i).rng();
        let m: usize = rng.random_range(1..=10);
        let max_n = if m == 1 {
            50
        } else {
            (BRUTE_FORCE_LIMIT.ln() / (m as f64).ln()).floor() as u32
        };
        let n = rng.random_range(1..=max_n);
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let p = BinProbabilityVector::new(raw.iter().map(|x| x / total).collect()).expect("valid");
        let exact = expected_occupied_exact(&p, n);
        let brute = brute_force_occupied(&p, n).expect("guarded size");
        (exact - brute).abs()
    });
    let max_diff = diffs.iter().copied().fold(0.0, f64::max);
    CheckResult::new(
        "oracle_equivalence",
        max_diff <= PROB_TOL,
        format!("{instances} instances, max |closed form - enumeration| = {max_diff:e}"),
        &[
            ("instances", instances as f64),
            ("max_abs_diff", max_diff),
            ("tolerance", PROB_TOL),
        ],
    )
}

fn check_f_n_shape(points: usize) -> CheckResult {
    let mut passed = true;
    let mut values = Vec::new();
    let mut names = Vec::new();
    for n in [2u32, 5, 20] {
        let (max_second, min_first) = f_n_shape(n, points);
        passed &= max_second <= 0.0 && min_first > 0.0;
        names.push((format!("N{n}_max_second_diff"), max_second));
        names.push((format!("N{n}_min_first_diff"), min_first));
    }
    for (k, v) in &names {
        values.push((k.as_str(), *v));
    }
    CheckResult::new(
        "f_n_concave_increasing",
        passed,
        format!("{points}-point grid, N in {{2, 5, 20}}"),
        &values,
    )
}

fn check_monotone_in_n() -> CheckResult {
    let cases = [
        vec![0.5, 0.5],
        vec![0.7, 0.2, 0.1],
        vec![0.01; 100],
        vec![0.9, 0.05, 0.03, 0.02],
    ];
    let mut ok = true;
    for p in cases {
        let p = BinProbabilityVector::new(p).expect("valid");
        let mut prev = 0.0;
        for n in 1..=200 {
            let e = expected_occupied_exact(&p, n);
            ok &= e >= prev;
            prev = e;
        }
    }
    CheckResult::new(
        "expected_k_nondecreasing_in_n",
        ok,
        "N = 1..200 on four fixed vectors".into(),
        &[],
    )
}

fn check_hen(seed: u64, n: usize) -> CheckResult {
    let mut rng = contract(seed, stream::HEN, 0).rng();
    let c = hen_contraction(n, 0.5, 0.3, 0.3, 1.0, &mut rng);
    let passed = c.within(3.0) && c.measured < 1.0;
    CheckResult::new(
        "hen_contraction",
        passed,
        format!(
            "alpha=0.5, S1=S2=0.3: measured {:.5} vs E[A^2] {:.5} (z = {:.2})",
            c.measured,
            c.predicted,
            c.z_score()
        ),
        &[
            ("measured", c.measured),
            ("predicted", c.predicted),
            ("std_error", c.std_error),
            ("particles", c.samples as f64),
        ],
    )
}

fn check_aligned_hen_bound(seed: u64, n: usize) -> CheckResult {
    // leaders between hen and x*, step sizes drawn in [0, 0.6]
    let mut rng = contract(seed, stream::ALIGNED, 0).rng();
    let mut before = 0.0;
    let mut after = 0.0;
    for _ in 0..n {
        let s1 = 0.6 * rng.random::<f64>();
        let s2 = 0.6 * rng.random::<f64>();
        let d = signed_displacement(1.0, 10.0, &mut rng);
        let moved = aligned_hen_round(
            &[d],
            0.5 * rng.random::<f64>(),
            0.5 * rng.random::<f64>(),
            s1,
            s2,
            &mut rng,
        );
        before += d * d;
        after += moved[0] * moved[0];
    }
    let ratio = after / before;
    CheckResult::new(
        "hen_mean_square_below_one",
        ratio < 1.0,
        format!("alpha=0.5, S1,S2 ~ U[0, 0.6]: ratio {ratio:.5}"),
        &[("ratio", ratio), ("particles", n as f64)],
    )
}

fn check_chick(seed: u64, n: usize) -> CheckResult {
    let mut rng = contract(seed, stream::CHICK, 0).rng();
    let c = chick_contraction(n, 0.8, 0.0, 1.0, &mut rng);
    CheckResult::new(
        "chick_contraction",
        c.within(3.0) && c.measured < 1.0,
        format!(
            "lambda_max=0.8, c_m=0: measured {:.5} vs {:.5} (z = {:.2})",
            c.measured,
            c.predicted,
            c.z_score()
        ),
        &[
            ("measured", c.measured),
            ("predicted", c.predicted),
            ("std_error", c.std_error),
            ("particles", c.samples as f64),
        ],
    )
}

fn check_rooster(seed: u64, n: usize) -> CheckResult {
    let mut rng = contract(seed, stream::ROOSTER, 0).rng();
    let r = rooster_neutrality(n, 2, 0.5, &mut rng);
    let rel = r.second_moment_rel_err();
    CheckResult::new(
        "rooster_neutrality",
        r.drift_ok(3.0) && rel <= 0.02,
        format!(
            "dim=2, sigma=0.5: drift {:?}, second moment {:.5} vs {:.5}",
            r.drift, r.second_moment, r.expected_second_moment
        ),
        &[
            ("drift_x", r.drift[0]),
            ("drift_y", r.drift[1]),
            ("drift_se_x", r.drift_std_error[0]),
            ("drift_se_y", r.drift_std_error[1]),
            ("second_moment", r.second_moment),
            ("expected_second_moment", r.expected_second_moment),
            ("relative_error", rel),
            ("draws", n as f64),
        ],
    )
}

fn check_composition(seed: u64, n: usize) -> CheckResult {
    let mut rng = contract(seed, stream::COMPOSE, 0).rng();
    let (c_r, c_h, s1, s2) = (0.25, 0.4, 0.3, 0.3);
    let d0: Vec<f64> = (0..n).map(|_| signed_displacement(1.0, 10.0, &mut rng)).collect();
    let d1 = aligned_hen_round(&d0, c_r, c_h, s1, s2, &mut rng);
    let d2 = aligned_hen_round(&d1, c_r, c_h, s1, s2, &mut rng);
    let msd = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>();
    let single = msd(&d1) / msd(&d0);
    let double = msd(&d2) / msd(&d0);
    let rho = hen_second_moment(s1, s2, c_r, c_h);
    // per-particle A1^2 A2^2 has mean rho^2; its spread sets the tolerance
    let factors: Vec<f64> = d0.iter().zip(&d2).map(|(a, b)| (b * b) / (a * a)).collect();
    let w: Vec<f64> = d0.iter().map(|a| a * a).collect();
    let wsum: f64 = w.iter().sum();
    let se = (factors
        .iter()
        .zip(&w)
        .map(|(f, wi)| (wi * (f - rho * rho)).powi(2))
        .sum::<f64>())
    .sqrt()
        / wsum;
    let passed =
        (double - single * single).abs() <= 3.0 * se + 3.0 * se * single && (double - rho * rho).abs() <= 3.0 * se;
    CheckResult::new(
        "hen_composition",
        passed,
        format!("two rounds {double:.5} vs (one round)^2 {:.5}", single * single),
        &[
            ("single_round", single),
            ("double_round", double),
            ("rho_squared", rho * rho),
            ("std_error", se),
        ],
    )
}

fn check_global(seed: u64, n: usize) -> CheckResult {
    let mut rng = contract(seed, stream::GLOBAL, 0).rng();
    match global_contraction(n, 0.5, 0.3, 0.3, 0.8, 0.5, (0.2, 0.4), &mut rng) {
        Ok(g) => CheckResult::new(
            "global_mean_square_bound",
            g.holds(3.0),
            format!(
                "E|D'|^2 = {:.4} <= rho E|D|^2 + B = {:.4} (rho = {:.4}, B = {:.4})",
                g.msd_after, g.bound, g.assumptions.rho, g.assumptions.b
            ),
            &[
                ("msd_before", g.msd_before),
                ("msd_after", g.msd_after),
                ("bound", g.bound),
                ("rho", g.assumptions.rho),
                ("rho_h", g.assumptions.rho_h),
                ("rho_c", g.assumptions.rho_c),
                ("b", g.assumptions.b),
                ("std_error", g.std_error),
            ],
        ),
        Err(e) => CheckResult::new("global_mean_square_bound", false, e.to_string(), &[]),
    }
}

fn check_kld_spot() -> CheckResult {
    let cfg = KldConfig {
        n_min: 1,
        n_max: usize::MAX,
        ..KldConfig::default()
    };
    let n = kld::kld_bound(1, &cfg);
    CheckResult::new(
        "kld_bound_spot_value",
        n == 53,
        format!("epsilon=0.05, delta=0.01, k=1 -> {n}"),
        &[("required", n as f64)],
    )
}

fn check_kld_monotone() -> CheckResult {
    let ok = (1..10_000usize).all(|k| kld::kld_bound_raw(k + 1, 0.05, 0.01) > kld::kld_bound_raw(k, 0.05, 0.01));
    CheckResult::new(
        "kld_bound_strictly_increasing",
        ok,
        "k = 1..10000, unclamped".into(),
        &[],
    )
}
