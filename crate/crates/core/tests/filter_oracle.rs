//! The bootstrap filter against the exact Kalman filter on the linear-Gaussian model.

use cso_kld::filter::{pf_step, PfConfig};
use cso_kld::models::{simulate_trajectory, LinearGauss1D, StateSpaceModel, Trajectory};
use cso_kld::particles::weighted_mean;
use cso_kld::{ParticleSet, RngContract};

/// Posterior means of the scalar Kalman filter. The first step conditions a
/// flat prior on `z0`, matching how the particle cloud is seeded.
fn kalman_means(traj: &Trajectory, sigma1: f64, sigma2: f64) -> Vec<f64> {
    let (q, r) = (sigma1 * sigma1, sigma2 * sigma2);
    let mut x = traj.observations[0][0];
    let mut p = r;
    let mut out = vec![x];
    for z in &traj.observations[1..] {
        p += q;
        let k = p / (p + r);
        x += k * (z[0] - x);
        p *= 1.0 - k;
        out.push(x);
    }
    out
}

fn pf_means(model: &LinearGauss1D, traj: &Trajectory, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngContract::new(seed, 2).rng();
    let z0 = &traj.observations[0];
    let init = (0..n).map(|_| model.initial_particle(z0, &mut rng)).collect();
    let mut set = ParticleSet::uniform(init).unwrap();
    let mut out = vec![weighted_mean(&set)[0]];
    for z in &traj.observations[1..] {
        let step = pf_step(&set, z, model, &PfConfig::default(), &mut rng).unwrap();
        out.push(step.estimate[0]);
        set = step.set;
    }
    out
}

fn trajectory(model: &LinearGauss1D, steps: usize, seed: u64) -> Trajectory {
    let mut process = RngContract::new(seed, 0).rng();
    let mut measurement = RngContract::new(seed, 1).rng();
    simulate_trajectory(model, steps, &mut process, &mut measurement).unwrap()
}

fn rmse(est: &[f64], truth: &[f64]) -> f64 {
    let s: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    (s / est.len() as f64).sqrt()
}

#[test]
fn pf_rmse_within_15_percent_of_kalman() {
    let model = LinearGauss1D::new(0.5, 1.0).unwrap();
    let (mut pf_sq, mut kf_sq) = (0.0, 0.0);
    for seed in 0..20 {
        let traj = trajectory(&model, 50, seed);
        let truth: Vec<f64> = traj.states.iter().map(|s| s[0]).collect();
        pf_sq += rmse(&pf_means(&model, &traj, 500, seed), &truth).powi(2);
        kf_sq += rmse(&kalman_means(&traj, 0.5, 1.0), &truth).powi(2);
    }
    let ratio = (pf_sq / kf_sq).sqrt();
    assert!((ratio - 1.0).abs() <= 0.15, "PF/KF RMSE ratio {ratio}");
}

#[test]
fn pf_mean_converges_to_kalman_mean() {
    let model = LinearGauss1D::new(0.5, 1.0).unwrap();
    let gap = |n: usize| {
        (0..5)
            .map(|seed| {
                let traj = trajectory(&model, 50, 100 + seed);
                rmse(&pf_means(&model, &traj, n, seed), &kalman_means(&traj, 0.5, 1.0))
            })
            .sum::<f64>()
            / 5.0
    };
    let gaps: Vec<f64> = [100, 1000, 10_000].into_iter().map(gap).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.05, "{gaps:?}");
}
