//! Chicken-swarm rejuvenation of a weighted particle set.
//!
//! Particle weights act as fitness. Each round ranks the particles, splits
//! them into roosters, hens and chicks, moves every particle according to its
//! role, and refreshes the weights by evaluating the likelihood at the moved
//! positions:
//!
//! - rooster: `x + eta`, `eta ~ N(0, rooster_sigma^2 I)`;
//! - hen: `x + S1 r1 (x_r - x) + S2 r2 (x_h - x)` with
//!   `S1 = exp((f_i - f_r) / (|f_i| + eps))`, `S2 = exp(f_h - f_i)`, `r ~ U[0, 1]`;
//! - chick: `x + lambda (x_m - x)`, `lambda ~ U[0, lambda_max]`.
//!
//! All moves in a round read the pre-round positions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Observation, StateSpaceModel};
use crate::particles::{normalize_weights, ParticleSet, StateVector};

/// Overrides for otherwise random or fitness-derived quantities. Used to pin
/// moves in tests and to build the identity kernel.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsoHooks {
    /// Fixed `(S1, S2)` instead of the fitness law.
    pub step_sizes: Option<[f64; 2]>,
    /// Fixed `(r1, r2)` instead of uniform draws.
    pub hen_draws: Option<[f64; 2]>,
    /// Fixed chick interpolation factor.
    pub chick_lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsoConfig {
    pub rooster_frac: f64,
    pub hen_frac: f64,
    /// Per-dimension std of the rooster jitter, state units.
    pub rooster_sigma: f64,
    /// Upper end of the chick interpolation factor, in (0, 1).
    pub lambda_max: f64,
    /// Stabilizer in the denominator of the S1 law.
    pub fitness_eps: f64,
    pub rounds: usize,
    pub hooks: CsoHooks,
}

impl Default for CsoConfig {
    fn default() -> Self {
        CsoConfig {
            rooster_frac: 0.2,
            hen_frac: 0.4,
            rooster_sigma: 0.05,
            lambda_max: 0.5,
            fitness_eps: 1e-12,
            rounds: 1,
            hooks: CsoHooks::default(),
        }
    }
}

impl CsoConfig {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f < 1.0;
        if !(frac_ok(self.rooster_frac) && frac_ok(self.hen_frac) && self.rooster_frac + self.hen_frac < 1.0) {
            return Err(Error::config(format!(
                "role fractions must lie in (0, 1) with a positive chick remainder, got rooster={} hen={}",
                self.rooster_frac, self.hen_frac
            )));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max < 1.0) {
            return Err(Error::config(format!(
                "lambda_max must lie in (0, 1), got {}",
                self.lambda_max
            )));
        }
        if !(self.rooster_sigma >= 0.0 && self.rooster_sigma.is_finite()) {
            return Err(Error::config("rooster_sigma must be finite and nonnegative"));
        }
        if self.fitness_eps.is_nan() || self.fitness_eps <= 0.0 {
            return Err(Error::config("fitness_eps must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if let Some(l) = self.hooks.chick_lambda {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::config("hooks.chick_lambda must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// A kernel whose every move is the identity: no jitter, zero hen steps,
    /// zero chick interpolation.
    pub fn identity() -> Self {
        CsoConfig {
            rooster_sigma: 0.0,
            hooks: CsoHooks {
                step_sizes: Some([0.0, 0.0]),
                hen_draws: None,
                chick_lambda: Some(0.0),
            },
            ..CsoConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Rooster,
    /// Follows `rooster` and a second leader (another hen, or a rooster when
    /// there is no other hen).
    Hen {
        rooster: usize,
        second: usize,
    },
    Chick {
        mother: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleAssignment {
    /// Role of each particle, by particle index.
    pub roles: Vec<Role>,
    pub roosters: Vec<usize>,
    pub hens: Vec<usize>,
    pub chicks: Vec<usize>,
}

impl RoleAssignment {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.roosters.len(), self.hens.len(), self.chicks.len())
    }
}

/// Tier sizes for `n` particles: `ceil(rooster_frac n)` roosters, then up to
/// `ceil(hen_frac n)` hens, the rest chicks.
pub fn tier_sizes(n: usize, config: &CsoConfig) -> (usize, usize, usize) {
    let roosters = ((config.rooster_frac * n as f64).ceil() as usize).clamp(1, n);
    let hens = ((config.hen_frac * n as f64).ceil() as usize).min(n - roosters);
    (roosters, hens, n - roosters - hens)
}

/// Ranks particles by weight (descending, ties by index) and assigns roles
/// and leaders.
pub fn assign_roles<R: Rng + ?Sized>(weights: &[f64], config: &CsoConfig, rng: &mut R) -> Result<RoleAssignment> {
    let n = weights.len();
    if n < 3 {
        return Err(Error::TooFewParticles(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps index order among equal weights
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));

    let (n_roosters, n_hens, _) = tier_sizes(n, config);
    let roosters = order[..n_roosters].to_vec();
    let hens = order[n_roosters..n_roosters + n_hens].to_vec();
    let chicks = order[n_roosters + n_hens..].to_vec();

    let mut roles = vec![Role::Rooster; n];
    for (pos, &hen) in hens.iter().enumerate() {
        let rooster = roosters[rng.random_range(0..n_roosters)];
        let second = if n_hens > 1 {
            let mut j = rng.random_range(0..n_hens - 1);
            if j >= pos {
                j += 1;
            }
            hens[j]
        } else {
            roosters[rng.random_range(0..n_roosters)]
        };
        roles[hen] = Role::Hen { rooster, second };
    }
    for &chick in &chicks {
        let mother = if n_hens > 0 {
            hens[rng.random_range(0..n_hens)]
        } else {
            roosters[rng.random_range(0..n_roosters)]
        };
        roles[chick] = Role::Chick { mother };
    }
    Ok(RoleAssignment {
        roles,
        roosters,
        hens,
        chicks,
    })
}

/// Zero-mean Gaussian jitter with per-dimension std `rooster_sigma`.
pub fn rooster_update<R: Rng + ?Sized>(x: &StateVector, config: &CsoConfig, rng: &mut R) -> StateVector {
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        let eta: f64 = rng.sample(StandardNormal);
        *v += config.rooster_sigma * eta;
    }
    out
}

/// The fitness-driven step sizes `(S1, S2)`.
pub fn hen_step_sizes(f_i: f64, f_r: f64, f_h: f64, config: &CsoConfig) -> (f64, f64) {
    if let Some([s1, s2]) = config.hooks.step_sizes {
        return (s1, s2);
    }
    let s1 = ((f_i - f_r) / (f_i.abs() + config.fitness_eps)).exp();
    let s2 = (f_h - f_i).exp();
    (s1, s2)
}

/// Displacement toward the rooster and the second leader.
#[allow(clippy::too_many_arguments)]
pub fn hen_update<R: Rng + ?Sized>(
    x_i: &StateVector,
    x_r: &StateVector,
    x_h: &StateVector,
    f_i: f64,
    f_r: f64,
    f_h: f64,
    config: &CsoConfig,
    rng: &mut R,
) -> StateVector {
    let (s1, s2) = hen_step_sizes(f_i, f_r, f_h, config);
    let (r1, r2) = match config.hooks.hen_draws {
        Some([a, b]) => (a, b),
        None => (rng.random::<f64>(), rng.random::<f64>()),
    };
    let (a, b) = (s1 * r1, s2 * r2);
    let mut out = x_i.clone();
    for (d, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v += a * (x_r[d] - x_i[d]) + b * (x_h[d] - x_i[d]);
    }
    out
}

/// Convex step toward the mother hen.
pub fn chick_update<R: Rng + ?Sized>(
    x_i: &StateVector,
    x_m: &StateVector,
    config: &CsoConfig,
    rng: &mut R,
) -> StateVector {
    let lambda = match config.hooks.chick_lambda {
        Some(l) => l,
        None => config.lambda_max * rng.random::<f64>(),
    };
    let mut out = x_i.clone();
    for (d, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v += lambda * (x_m[d] - x_i[d]);
    }
    out
}

/// Moves every particle once according to `roles`, using `fitness` for the
/// hen step sizes.
pub fn move_swarm<R: Rng + ?Sized>(
    states: &[StateVector],
    fitness: &[f64],
    roles: &RoleAssignment,
    config: &CsoConfig,
    rng: &mut R,
) -> Vec<StateVector> {
    states
        .iter()
        .zip(&roles.roles)
        .enumerate()
        .map(|(i, (x, role))| match *role {
            Role::Rooster => rooster_update(x, config, rng),
            Role::Hen { rooster, second } => hen_update(
                x,
                &states[rooster],
                &states[second],
                fitness[i],
                fitness[rooster],
                fitness[second],
                config,
                rng,
            ),
            Role::Chick { mother } => chick_update(x, &states[mother], config, rng),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsoOutcome {
    /// Moved particles with likelihood-refreshed weights. Particle `i` of the
    /// output descends from particle `i` of the input.
    pub set: ParticleSet,
    /// Rounds undone because every moved particle had zero likelihood.
    pub reverted_rounds: usize,
}

/// Applies `config.rounds` CSO rounds to a normalized weighted set.
///
/// After each round the weights are re-derived as `p(z | x')` at the moved
/// positions and renormalized. A round that leaves every position unchanged
/// leaves the weights untouched too. A round whose moved positions all have
/// zero likelihood is reverted.
pub fn cso_rejuvenate<M, R>(
    set: &ParticleSet,
    z: &Observation,
    model: &M,
    config: &CsoConfig,
    rng: &mut R,
) -> Result<CsoOutcome>
where
    M: StateSpaceModel,
    R: Rng + ?Sized,
{
    let mut current = set.clone();
    let mut reverted_rounds = 0;
    for _ in 0..config.rounds {
        let roles = assign_roles(current.weights(), config, rng)?;
        let moved = move_swarm(current.states(), current.weights(), &roles, config, rng);
        if moved.as_slice() == current.states() {
            continue;
        }
        let likelihoods: Vec<f64> = moved.iter().map(|x| model.likelihood(x, z)).collect();
        match normalize_weights(&likelihoods) {
            Ok(weights) => current = ParticleSet::from_parts(moved, weights)?,
            Err(Error::AllZeroWeights) => reverted_rounds += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(CsoOutcome {
        set: current,
        reverted_rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearGauss1D;
    use crate::rng::RngContract;
    use proptest::prelude::*;

    fn sv(v: f64) -> StateVector {
        StateVector::scalar(v)
    }

    #[test]
    fn tier_examples() {
        let c = CsoConfig::default();
        assert_eq!(tier_sizes(10, &c), (2, 4, 4));
        assert_eq!(tier_sizes(3, &c), (1, 2, 0));
        let mut rng = RngContract::new(1, 0).rng();
        let roles = assign_roles(&[0.1, 0.5, 0.4], &c, &mut rng).unwrap();
        assert_eq!(roles.counts(), (1, 2, 0));
        assert_eq!(roles.roosters, vec![1]);
        assert!(matches!(
            assign_roles(&[0.5, 0.5], &c, &mut rng),
            Err(Error::TooFewParticles(2))
        ));
    }

    #[test]
    fn equal_weights_rank_by_index_and_reproduce() {
        let c = CsoConfig::default();
        let w = vec![0.1; 10];
        let a = assign_roles(&w, &c, &mut RngContract::new(5, 0).rng()).unwrap();
        let b = assign_roles(&w, &c, &mut RngContract::new(5, 0).rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.roosters, vec![0, 1]);
        assert_eq!(a.hens, vec![2, 3, 4, 5]);
        assert_eq!(a.chicks, vec![6, 7, 8, 9]);
    }

    #[test]
    fn single_hen_falls_back_to_rooster_leader() {
        // 4 particles with fractions giving 1 rooster, 1 hen, 2 chicks
        let c = CsoConfig {
            rooster_frac: 0.2,
            hen_frac: 0.2,
            ..CsoConfig::default()
        };
        assert_eq!(tier_sizes(4, &c), (1, 1, 2));
        let roles = assign_roles(&[0.4, 0.3, 0.2, 0.1], &c, &mut RngContract::new(2, 0).rng()).unwrap();
        assert_eq!(roles.roles[1], Role::Hen { rooster: 0, second: 0 });
        assert_eq!(roles.roles[2], Role::Chick { mother: 1 });
        assert_eq!(roles.roles[3], Role::Chick { mother: 1 });
    }

    #[test]
    fn rooster_zero_sigma_is_identity() {
        let c = CsoConfig {
            rooster_sigma: 0.0,
            ..CsoConfig::default()
        };
        let x = StateVector::from_slice(&[1.5, -2.0, 3.25]);
        assert_eq!(rooster_update(&x, &c, &mut RngContract::new(3, 0).rng()), x);
    }

    #[test]
    fn rooster_jitter_moments() {
        let c = CsoConfig {
            rooster_sigma: 0.3,
            ..CsoConfig::default()
        };
        let mut rng = RngContract::new(4, 0).rng();
        let x = StateVector::from_slice(&[1.0, -1.0]);
        let n = 100_000;
        let mut drift = [0.0; 2];
        let mut second = 0.0;
        for _ in 0..n {
            let y = rooster_update(&x, &c, &mut rng);
            drift[0] += y[0] - x[0];
            drift[1] += y[1] - x[1];
            second += y.distance_sq(&x);
        }
        let se = 0.3 / (n as f64).sqrt();
        for d in drift {
            assert!((d / n as f64).abs() < 3.0 * se);
        }
        let expected = 2.0 * 0.09;
        assert!((second / n as f64 - expected).abs() < 0.02 * expected);
    }

    #[test]
    fn hen_examples() {
        let mut rng = RngContract::new(6, 0).rng();
        let zero_steps = CsoConfig {
            hooks: CsoHooks {
                step_sizes: Some([0.0, 0.0]),
                ..CsoHooks::default()
            },
            ..CsoConfig::default()
        };
        assert_eq!(
            hen_update(&sv(2.0), &sv(0.0), &sv(5.0), 0.1, 0.3, 0.2, &zero_steps, &mut rng),
            sv(2.0)
        );

        let pinned = CsoConfig {
            hooks: CsoHooks {
                step_sizes: Some([0.5, 0.5]),
                hen_draws: Some([1.0, 1.0]),
                chick_lambda: None,
            },
            ..CsoConfig::default()
        };
        assert_eq!(
            hen_update(&sv(2.0), &sv(0.0), &sv(0.0), 0.1, 0.3, 0.2, &pinned, &mut rng),
            sv(0.0)
        );

        let (s1, _) = hen_step_sizes(0.25, 0.25, 0.1, &CsoConfig::default());
        assert_eq!(s1, 1.0);
        let (s1, s2) = hen_step_sizes(0.1, 0.3, 0.2, &CsoConfig::default());
        assert!((s1 - (-2.0f64).exp()).abs() < 1e-9);
        assert!((s2 - 0.1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn chick_examples() {
        let mut rng = RngContract::new(7, 0).rng();
        let hook = |l: f64| CsoConfig {
            hooks: CsoHooks {
                chick_lambda: Some(l),
                ..CsoHooks::default()
            },
            ..CsoConfig::default()
        };
        assert_eq!(chick_update(&sv(4.0), &sv(0.0), &hook(0.0), &mut rng), sv(4.0));
        assert_eq!(chick_update(&sv(4.0), &sv(0.0), &hook(0.5), &mut rng), sv(2.0));
    }

    #[test]
    fn identity_kernel_leaves_set_untouched() {
        let m = LinearGauss1D::new(0.5, 1.0).unwrap();
        let set = ParticleSet::from_parts(
            (0..20).map(|i| sv(i as f64 * 0.1)).collect(),
            normalize_weights(&(1..=20).map(|i| i as f64).collect::<Vec<_>>()).unwrap(),
        )
        .unwrap();
        let out = cso_rejuvenate(
            &set,
            &Observation::scalar(1.0),
            &m,
            &CsoConfig::identity(),
            &mut RngContract::new(1, 0).rng(),
        )
        .unwrap();
        assert_eq!(out.set, set);
    }

    #[test]
    fn collapsed_point_cloud_is_fixed() {
        let m = LinearGauss1D::new(0.5, 1.0).unwrap();
        let c = CsoConfig {
            rooster_sigma: 0.0,
            ..CsoConfig::default()
        };
        let set = ParticleSet::uniform(vec![sv(3.0); 30]).unwrap();
        let out = cso_rejuvenate(
            &set,
            &Observation::scalar(2.0),
            &m,
            &c,
            &mut RngContract::new(2, 0).rng(),
        )
        .unwrap();
        assert_eq!(out.set, set);
    }

    #[test]
    fn rejuvenation_is_deterministic_and_normalized() {
        let m = LinearGauss1D::new(0.5, 1.0).unwrap();
        let c = CsoConfig {
            rounds: 3,
            ..CsoConfig::default()
        };
        let mut src = RngContract::new(10, 0).rng();
        let states: Vec<StateVector> = (0..200).map(|_| sv(src.random::<f64>() * 6.0 - 3.0)).collect();
        let set =
            crate::filter::reweight(&ParticleSet::uniform(states).unwrap(), &Observation::scalar(0.5), &m).unwrap();
        let run = || {
            cso_rejuvenate(
                &set,
                &Observation::scalar(0.5),
                &m,
                &c,
                &mut RngContract::new(11, 3).rng(),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let total: f64 = a.set.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(a.set.len(), set.len());
    }

    #[test]
    fn quadratic_fitness_population_contracts() {
        // particles spread far from x* = 0 with fitness peaked at 0
        let m = LinearGauss1D::new(0.5, 2.0).unwrap();
        let c = CsoConfig::default();
        let mut src = RngContract::new(12, 0).rng();
        let states: Vec<StateVector> = (0..2000).map(|_| sv(src.random::<f64>() * 20.0 - 10.0)).collect();
        let set =
            crate::filter::reweight(&ParticleSet::uniform(states).unwrap(), &Observation::scalar(0.0), &m).unwrap();
        let out = cso_rejuvenate(
            &set,
            &Observation::scalar(0.0),
            &m,
            &c,
            &mut RngContract::new(12, 1).rng(),
        )
        .unwrap();
        let msd = |s: &ParticleSet| s.states().iter().map(|x| x[0] * x[0]).sum::<f64>() / s.len() as f64;
        assert!(msd(&out.set) < msd(&set));
    }

    #[test]
    fn all_zero_likelihood_round_is_reverted() {
        let m = LinearGauss1D::new(0.5, 1e-3).unwrap();
        let c = CsoConfig {
            rooster_sigma: 0.5,
            ..CsoConfig::default()
        };
        let set = ParticleSet::uniform((0..10).map(|i| sv(i as f64)).collect()).unwrap();
        let out = cso_rejuvenate(
            &set,
            &Observation::scalar(1e9),
            &m,
            &c,
            &mut RngContract::new(1, 1).rng(),
        )
        .unwrap();
        assert_eq!(out.reverted_rounds, 1);
        assert_eq!(out.set, set);
    }

    #[test]
    fn config_validation() {
        assert!(CsoConfig::default().validate().is_ok());
        assert!(CsoConfig::identity().validate().is_ok());
        for bad in [
            CsoConfig {
                rooster_frac: 0.6,
                hen_frac: 0.4,
                ..CsoConfig::default()
            },
            CsoConfig {
                lambda_max: 1.0,
                ..CsoConfig::default()
            },
            CsoConfig {
                rooster_sigma: -1.0,
                ..CsoConfig::default()
            },
            CsoConfig {
                rounds: 0,
                ..CsoConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn roles_partition_and_respect_ranking(
            w in prop::collection::vec(0.0f64..1.0, 3..80),
            seed in any::<u64>(),
        ) {
            let c = CsoConfig::default();
            let roles = assign_roles(&w, &c, &mut RngContract::new(seed, 0).rng()).unwrap();
            let (r, h, k) = roles.counts();
            prop_assert_eq!(r + h + k, w.len());
            let mut seen = vec![false; w.len()];
            for &i in roles.roosters.iter().chain(&roles.hens).chain(&roles.chicks) {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            for (i, role) in roles.roles.iter().enumerate() {
                match *role {
                    Role::Rooster => prop_assert!(roles.roosters.contains(&i)),
                    Role::Hen { rooster, second } => {
                        prop_assert!(roles.roosters.contains(&rooster));
                        prop_assert!(w[rooster] >= w[i]);
                        prop_assert!(second != i);
                        prop_assert!(roles.hens.contains(&second) || (h == 1 && roles.roosters.contains(&second)));
                    }
                    Role::Chick { mother } => prop_assert!(roles.hens.contains(&mother)),
                }
            }
        }

        #[test]
        fn chick_never_overshoots(
            xi in prop::collection::vec(-100.0f64..100.0, 1..5),
            seed in any::<u64>(),
            lambda_max in 0.01f64..0.99,
        ) {
            let xm: Vec<f64> = xi.iter().map(|v| v * 0.3 - 7.0).collect();
            let c = CsoConfig { lambda_max, ..CsoConfig::default() };
            let (a, b) = (StateVector::new(xi.clone()).unwrap(), StateVector::new(xm.clone()).unwrap());
            let out = chick_update(&a, &b, &c, &mut RngContract::new(seed, 0).rng());
            for d in 0..xi.len() {
                prop_assert!((out[d] - xm[d]).abs() <= (xi[d] - xm[d]).abs() + 1e-12);
                let (lo, hi) = if xi[d] < xm[d] { (xi[d], xm[d]) } else { (xm[d], xi[d]) };
                prop_assert!(out[d] >= lo - 1e-12 && out[d] <= hi + 1e-12);
            }
        }
    }
}
