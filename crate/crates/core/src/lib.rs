//! Bootstrap particle filtering with KLD-adaptive particle counts and a
//! chicken-swarm (CSO) rejuvenation kernel.
//!
//! The crate is organised bottom-up:
//!
//! - [`particles`]: states, weighted particle sets and weighted moments.
//! - [`rng`]: the seeded, stream-per-trial random number contract.
//! - [`models`]: the 1D random walk and the constant-velocity range/bearing model.
//! - [`filter`]: predict / reweight / systematic resampling / one filter step.
//! - [`kld`]: histogram occupancy and the KLD sample-size rule.
//! - [`cso`]: role assignment and role-wise moves of the rejuvenation kernel.
//! - [`theory`]: numerical checks of contraction, occupancy and majorization.
//! - [`metrics`]: RMSE, NEES and particle-reduction figures.
//! - [`bench`]: Monte Carlo experiment harness, CSV and JSON output.
//! - [`cli`]: the `cso-kld` command line.
//!
//! Monte Carlo trials and property sweeps run through [`exec::Execution`],
//! which uses rayon when the `parallel` feature is enabled and falls back to
//! a plain loop otherwise. Both paths produce identical results.

pub mod bench;
pub mod cli;
pub mod cso;
pub mod error;
pub mod exec;
pub mod filter;
pub mod kld;
pub mod metrics;
pub mod models;
pub mod particles;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use exec::Execution;
pub use particles::{Particle, ParticleSet, StateVector};
pub use rng::RngContract;
