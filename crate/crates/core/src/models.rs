//! State-space models: a scalar Gaussian random walk observed in Gaussian
//! noise, and a planar constant-velocity target seen by a range/bearing sensor
//! at the origin.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::particles::StateVector;

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

/// A measurement vector. For the range/bearing model this is `(range, bearing)`
/// with the bearing in `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(SmallVec<[f64; 2]>);

impl Observation {
    pub fn new(components: &[f64]) -> Self {
        Observation(SmallVec::from_slice(components))
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[value])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Index<usize> for Observation {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Density of `N(0, sigma^2)` at `residual`.
pub fn gaussian_pdf(residual: f64, sigma: f64) -> f64 {
    let u = residual / sigma;
    INV_SQRT_TAU / sigma * (-0.5 * u * u).exp()
}

/// The interface the filter needs from a model.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// State components that make up "position": used for RMSE, NEES and
    /// histogram binning.
    fn position_dims(&self) -> &'static [usize];

    /// Noise-free transition `f(x)`.
    fn propagate(&self, x: &StateVector) -> StateVector;

    /// Draws from `p(x_k | x_{k-1} = x)`.
    fn transition_sample<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> StateVector;

    /// Noise-free measurement `h(x)`.
    fn measure(&self, x: &StateVector) -> Observation;

    /// Draws from `p(z | x)`.
    fn observe<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> Observation;

    /// Evaluates `p(z | x)`.
    fn likelihood(&self, x: &StateVector, z: &Observation) -> f64;

    /// Draws the true initial state.
    fn initial_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector;

    /// Draws one member of the initial particle cloud given the first observation.
    fn initial_particle<R: Rng + ?Sized>(&self, z0: &Observation, rng: &mut R) -> StateVector;
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {value}")))
    }
}

/// `x_k = x_{k-1} + N(0, sigma1^2)`, `z_k = x_k + N(0, sigma2^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGauss1D {
    pub sigma1: f64,
    pub sigma2: f64,
    pub x0_mean: f64,
    pub x0_std: f64,
}

impl LinearGauss1D {
    pub fn new(sigma1: f64, sigma2: f64) -> Result<Self> {
        Self::with_initial(sigma1, sigma2, 0.0, 1.0)
    }

    pub fn with_initial(sigma1: f64, sigma2: f64, x0_mean: f64, x0_std: f64) -> Result<Self> {
        let model = LinearGauss1D {
            sigma1,
            sigma2,
            x0_mean,
            x0_std,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("sigma1", self.sigma1)?;
        require_positive("sigma2", self.sigma2)?;
        if !(self.x0_std.is_finite() && self.x0_std >= 0.0 && self.x0_mean.is_finite()) {
            return Err(Error::config("x0_mean must be finite and x0_std nonnegative"));
        }
        Ok(())
    }
}

impl StateSpaceModel for LinearGauss1D {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn position_dims(&self) -> &'static [usize] {
        &[0]
    }

    fn propagate(&self, x: &StateVector) -> StateVector {
        x.clone()
    }

    fn transition_sample<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> StateVector {
        StateVector::scalar(x[0] + self.sigma1 * normal(rng))
    }

    fn measure(&self, x: &StateVector) -> Observation {
        Observation::scalar(x[0])
    }

    fn observe<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> Observation {
        Observation::scalar(x[0] + self.sigma2 * normal(rng))
    }

    fn likelihood(&self, x: &StateVector, z: &Observation) -> f64 {
        gaussian_pdf(z[0] - x[0], self.sigma2)
    }

    fn initial_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        StateVector::scalar(self.x0_mean + self.x0_std * normal(rng))
    }

    fn initial_particle<R: Rng + ?Sized>(&self, z0: &Observation, rng: &mut R) -> StateVector {
        StateVector::scalar(z0[0] + self.sigma2 * normal(rng))
    }
}

/// Planar constant-velocity target, state `[px, vx, py, vy]`, observed by a
/// range/bearing sensor at the origin.
///
/// Process noise is discrete white-noise acceleration on each axis: a scalar
/// `a ~ N(0, sigma_a^2)` enters position as `a dt^2 / 2` and velocity as `a dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantVelocity2D {
    pub dt: f64,
    pub sigma_a: f64,
    pub sigma_r: f64,
    /// Bearing noise, radians.
    pub sigma_theta: f64,
    pub initial_state: [f64; 4],
    /// Std of the zero-mean velocity prior used to seed particles.
    pub init_velocity_std: f64,
}

impl ConstantVelocity2D {
    /// `sigma_theta_deg` is in degrees; it is stored in radians.
    pub fn new(dt: f64, sigma_a: f64, sigma_r: f64, sigma_theta_deg: f64) -> Result<Self> {
        let model = ConstantVelocity2D {
            dt,
            sigma_a,
            sigma_r,
            sigma_theta: sigma_theta_deg.to_radians(),
            initial_state: [0.0, 1.0, 0.0, 1.0],
            init_velocity_std: 2.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_initial_state(mut self, state: [f64; 4]) -> Self {
        self.initial_state = state;
        self
    }

    pub fn with_init_velocity_std(mut self, std: f64) -> Self {
        self.init_velocity_std = std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("dt", self.dt)?;
        require_positive("sigma_a", self.sigma_a)?;
        require_positive("sigma_r", self.sigma_r)?;
        require_positive("sigma_theta", self.sigma_theta)?;
        require_positive("init_velocity_std", self.init_velocity_std)?;
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("initial_state must be finite"));
        }
        Ok(())
    }
}

impl StateSpaceModel for ConstantVelocity2D {
    fn state_dim(&self) -> usize {
        4
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn position_dims(&self) -> &'static [usize] {
        &[0, 2]
    }

    fn propagate(&self, x: &StateVector) -> StateVector {
        StateVector::from_slice(&[x[0] + x[1] * self.dt, x[1], x[2] + x[3] * self.dt, x[3]])
    }

    fn transition_sample<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> StateVector {
        let ax = self.sigma_a * normal(rng);
        let ay = self.sigma_a * normal(rng);
        let half_dt2 = 0.5 * self.dt * self.dt;
        StateVector::from_slice(&[
            x[0] + x[1] * self.dt + half_dt2 * ax,
            x[1] + self.dt * ax,
            x[2] + x[3] * self.dt + half_dt2 * ay,
            x[3] + self.dt * ay,
        ])
    }

    fn measure(&self, x: &StateVector) -> Observation {
        Observation::new(&[x[0].hypot(x[2]), x[2].atan2(x[0])])
    }

    fn observe<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> Observation {
        let range = (x[0].hypot(x[2]) + self.sigma_r * normal(rng)).max(0.0);
        let bearing = wrap_angle(x[2].atan2(x[0]) + self.sigma_theta * normal(rng));
        Observation::new(&[range, bearing])
    }

    fn likelihood(&self, x: &StateVector, z: &Observation) -> f64 {
        let range_residual = z[0] - x[0].hypot(x[2]);
        let bearing_residual = wrap_angle(z[1] - x[2].atan2(x[0]));
        gaussian_pdf(range_residual, self.sigma_r) * gaussian_pdf(bearing_residual, self.sigma_theta)
    }

    fn initial_truth<R: Rng + ?Sized>(&self, _rng: &mut R) -> StateVector {
        StateVector::from_slice(&self.initial_state)
    }

    fn initial_particle<R: Rng + ?Sized>(&self, z0: &Observation, rng: &mut R) -> StateVector {
        let range = (z0[0] + self.sigma_r * normal(rng)).max(0.0);
        let bearing = z0[1] + self.sigma_theta * normal(rng);
        let vx = self.init_velocity_std * normal(rng);
        let vy = self.init_velocity_std * normal(rng);
        StateVector::from_slice(&[range * bearing.cos(), vx, range * bearing.sin(), vy])
    }
}

/// Either model, for config-driven dispatch.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Linear1D(LinearGauss1D),
    ConstantVelocity(ConstantVelocity2D),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Linear1D($m) => $e,
            Model::ConstantVelocity($m) => $e,
        }
    };
}

impl StateSpaceModel for Model {
    fn state_dim(&self) -> usize {
        dispatch!(self, m => m.state_dim())
    }

    fn obs_dim(&self) -> usize {
        dispatch!(self, m => m.obs_dim())
    }

    fn position_dims(&self) -> &'static [usize] {
        dispatch!(self, m => m.position_dims())
    }

    fn propagate(&self, x: &StateVector) -> StateVector {
        dispatch!(self, m => m.propagate(x))
    }

    fn transition_sample<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> StateVector {
        dispatch!(self, m => m.transition_sample(x, rng))
    }

    fn measure(&self, x: &StateVector) -> Observation {
        dispatch!(self, m => m.measure(x))
    }

    fn observe<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> Observation {
        dispatch!(self, m => m.observe(x, rng))
    }

    fn likelihood(&self, x: &StateVector, z: &Observation) -> f64 {
        dispatch!(self, m => m.likelihood(x, z))
    }

    fn initial_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        dispatch!(self, m => m.initial_truth(rng))
    }

    fn initial_particle<R: Rng + ?Sized>(&self, z0: &Observation, rng: &mut R) -> StateVector {
        dispatch!(self, m => m.initial_particle(z0, rng))
    }
}

/// Ground truth and measurements of one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub observations: Vec<Observation>,
}

/// Simulates `steps` states and observations. Process noise is drawn from
/// `process_rng`, measurement noise from `measurement_rng`.
pub fn simulate_trajectory<M, R>(
    model: &M,
    steps: usize,
    process_rng: &mut R,
    measurement_rng: &mut R,
) -> Result<Trajectory>
where
    M: StateSpaceModel,
    R: Rng + ?Sized,
{
    if steps == 0 {
        return Err(Error::config("trajectory needs at least one step"));
    }
    let mut states = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps);
    let mut x = model.initial_truth(process_rng);
    for k in 0..steps {
        if k > 0 {
            x = model.transition_sample(&x, process_rng);
        }
        observations.push(model.observe(&x, measurement_rng));
        states.push(x.clone());
    }
    Ok(Trajectory { states, observations })
}
