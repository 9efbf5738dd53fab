//! Monte Carlo experiment harness.
//!
//! Each job is one paired trial: PF and CPF run on the same simulated
//! trajectory. Per trial seed the random streams are
//!
//! | stream | used for |
//! |---|---|
//! | 0 | truth process noise |
//! | 1 | measurement noise |
//! | 2 | initial cloud, prediction and KLD draws |
//! | 3 | CSO rejuvenation (CPF only) |
//!
//! so the two filters see identical data and differ only in what the
//! rejuvenation stream does.

mod config;
mod output;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{BinSpace, ExperimentConfig, ModelConfig, SweepAxis, SweepVar};
pub use output::{read_results, read_trial_records, write_outputs, write_results, write_trial_records, OutputPaths};

use crate::cso::cso_rejuvenate;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{predict, reweight_or_reset};
use crate::kld::{kld_sample, weighted_source, HistogramGrid};
use crate::metrics::{mean_std, nees, RunMetrics, StepRecord};
use crate::models::{simulate_trajectory, Model, StateSpaceModel, Trajectory};
use crate::particles::{weighted_covariance, weighted_mean, ParticleSet};
use crate::rng::{derive_seed, RngContract};
use crate::theory::{contraction_ratio, majorization_from_counts, sorted_counts};

pub const STREAM_TRUTH: u64 = 0;
pub const STREAM_OBSERVATION: u64 = 1;
pub const STREAM_FILTER: u64 = 2;
pub const STREAM_REJUVENATION: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "PF")]
    Pf,
    #[serde(rename = "CPF")]
    Cpf,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Pf => "PF",
            Algorithm::Cpf => "CPF",
        })
    }
}

/// Everything one filter run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun {
    pub metrics: RunMetrics,
    /// Per step, occupied-bin counts of the KLD output sorted descending.
    pub bin_profiles: Vec<Vec<usize>>,
}

/// Simulates the trajectory for `trial_seed`.
pub fn simulate(model: &Model, steps: usize, trial_seed: u64) -> Result<Trajectory> {
    let mut process = RngContract::new(trial_seed, STREAM_TRUTH).rng();
    let mut measurement = RngContract::new(trial_seed, STREAM_OBSERVATION).rng();
    simulate_trajectory(model, steps, &mut process, &mut measurement)
}

/// Runs one filter over an already simulated trajectory.
///
/// Step 0 draws `n_init` particles around the first observation. Every later
/// step predicts the previous KLD output, reweights it, optionally applies the
/// CSO kernel, and redraws the cloud by KLD-sampling. The estimate and the
/// NEES covariance are taken from the redrawn cloud.
pub fn run_filter(
    config: &ExperimentConfig,
    model: &Model,
    trajectory: &Trajectory,
    algorithm: Algorithm,
    trial_seed: u64,
) -> Result<FilterRun> {
    let pos = model.position_dims();
    let grid = HistogramGrid::anchored_at_zero(model.state_dim(), &config.binned_dims(), &config.kld.bin_width)?;
    let mut filter_rng = RngContract::new(trial_seed, STREAM_FILTER).rng();
    let mut cso_rng = RngContract::new(trial_seed, STREAM_REJUVENATION).rng();

    let mut cloud: Option<ParticleSet> = None;
    let mut steps = Vec::with_capacity(trajectory.states.len());
    let mut bin_profiles = Vec::with_capacity(trajectory.states.len());
    for (truth, z) in trajectory.states.iter().zip(&trajectory.observations) {
        let (weighted, collapsed) = match &cloud {
            None => {
                let states = (0..config.n_init)
                    .map(|_| model.initial_particle(z, &mut filter_rng))
                    .collect();
                (ParticleSet::uniform(states)?, false)
            }
            Some(prev) => reweight_or_reset(&predict(prev, model, &mut filter_rng), z, model)?,
        };
        let (weighted, contraction) = match algorithm {
            Algorithm::Pf => (weighted, None),
            Algorithm::Cpf => {
                let out = cso_rejuvenate(&weighted, z, model, &config.cso, &mut cso_rng)?;
                let ratio = contraction_ratio(&weighted, &out.set, truth).ok().map(|r| r.ratio);
                (out.set, ratio)
            }
        };
        let sample = kld_sample(weighted_source(&weighted)?, &config.kld, &grid, &mut filter_rng)?;
        let estimate = weighted_mean(&sample.set);
        let cov = weighted_covariance(&sample.set, pos);
        let score = nees(&estimate, &cov, truth, pos);
        bin_profiles.push(sorted_counts(sample.set.states(), &grid));
        steps.push(StepRecord {
            estimate,
            truth: truth.clone(),
            n_selected: sample.n,
            k_occupied: sample.k,
            nees: score.value,
            nees_regularized: score.regularized,
            collapsed,
            contraction,
        });
        cloud = Some(sample.set);
    }
    let metrics = RunMetrics::from_steps(steps, pos)?;
    if !metrics.is_finite() {
        return Err(Error::NonFiniteMetrics);
    }
    Ok(FilterRun { metrics, bin_profiles })
}

/// Simulates a trajectory and runs one algorithm on it.
pub fn run_trial(
    config: &ExperimentConfig,
    model: &Model,
    algorithm: Algorithm,
    trial_seed: u64,
) -> Result<RunMetrics> {
    let trajectory = simulate(model, config.steps, trial_seed)?;
    Ok(run_filter(config, model, &trajectory, algorithm, trial_seed)?.metrics)
}

/// Outcome of one algorithm within a paired trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub metrics: std::result::Result<RunMetrics, String>,
    /// Fraction of steps at which this algorithm's bin profile majorizes the
    /// other's. NaN if either run failed.
    pub major_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedTrial {
    pub trial_seed: u64,
    pub pf: TrialOutcome,
    pub cpf: TrialOutcome,
}

impl PairedTrial {
    pub fn outcome(&self, algorithm: Algorithm) -> &TrialOutcome {
        match algorithm {
            Algorithm::Pf => &self.pf,
            Algorithm::Cpf => &self.cpf,
        }
    }
}

/// PF and CPF on one shared trajectory.
pub fn run_paired_trial(config: &ExperimentConfig, model: &Model, trial_seed: u64) -> Result<PairedTrial> {
    let trajectory = simulate(model, config.steps, trial_seed)?;
    let pf = run_filter(config, model, &trajectory, Algorithm::Pf, trial_seed);
    let cpf = run_filter(config, model, &trajectory, Algorithm::Cpf, trial_seed);
    let (pf_rate, cpf_rate) = match (&pf, &cpf) {
        (Ok(a), Ok(b)) => majorization_rates(&a.bin_profiles, &b.bin_profiles)?,
        _ => (f64::NAN, f64::NAN),
    };
    let wrap = |r: Result<FilterRun>, rate| TrialOutcome {
        metrics: r.map(|run| run.metrics).map_err(|e| e.to_string()),
        major_rate: rate,
    };
    Ok(PairedTrial {
        trial_seed,
        pf: wrap(pf, pf_rate),
        cpf: wrap(cpf, cpf_rate),
    })
}

/// Per-step majorization between two runs: returns the fraction of steps at
/// which `a` majorizes `b` and the fraction at which `b` majorizes `a`.
pub fn majorization_rates(a: &[Vec<usize>], b: &[Vec<usize>]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut ab, mut ba) = (0usize, 0usize);
    for (pa, pb) in a.iter().zip(b) {
        let v = majorization_from_counts(pa, pb)?;
        ab += v.a_majorizes_b as usize;
        ba += v.b_majorizes_a as usize;
    }
    let t = a.len() as f64;
    Ok((ab as f64 / t, ba as f64 / t))
}

/// Seed of trial `trial` at one sweep point. Depends on the sweep variable
/// and value, not on their position in the grid.
pub fn trial_seed(master: u64, var: SweepVar, value: f64, trial: usize) -> u64 {
    derive_seed(master, &[var.code(), value.to_bits(), trial as u64])
}

/// One line of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub n_mean: f64,
    pub n_std: f64,
    pub nees_mean: f64,
    pub nees_std: f64,
    pub k_mean: f64,
    pub major_rate: f64,
    /// Trials attempted, including failed ones.
    pub trials: usize,
    pub seed: u64,
}

/// Per-trial record, the raw material of the summary rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub trial_seed: u64,
    pub failed: bool,
    pub rmse: f64,
    pub n_mean: f64,
    pub nees_mean: f64,
    pub k_mean: f64,
    pub major_rate: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub trials: Vec<TrialRecord>,
}

impl SweepOutput {
    pub fn row(&self, var: SweepVar, value: f64, algorithm: Algorithm) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_var == var && r.sweep_value == value && r.algorithm == algorithm)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.failed)
    }
}

const ALGORITHMS: [Algorithm; 2] = [Algorithm::Pf, Algorithm::Cpf];

/// Runs every sweep axis of `config`: for each grid value, `trials` paired
/// trials with the swept parameter set and all other parameters at their
/// configured values.
pub fn run_sweep(config: &ExperimentConfig, exec: Execution) -> Result<SweepOutput> {
    config.validate()?;
    let mut points = Vec::new();
    for axis in &config.sweep {
        for &value in &axis.values {
            points.push((axis.var, value, config.model.with_sweep(axis.var, value)?.build()?));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..config.trials).map(move |t| (p, t)))
        .collect();
    let results = exec.map(&jobs, |&(p, t)| {
        let (var, value, ref model) = points[p];
        run_paired_trial(config, model, trial_seed(config.seed, var, value, t))
    });

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (p, (var, value, _)) in points.iter().enumerate() {
        let paired: Vec<(usize, &PairedTrial)> = jobs
            .iter()
            .zip(&results)
            .filter(|((jp, _), _)| *jp == p)
            .map(|((_, t), r)| r.as_ref().map(|pt| (*t, pt)))
            .collect::<std::result::Result<_, &Error>>()
            .map_err(|e| Error::config(format!("trial setup failed: {e}")))?;
        for algorithm in ALGORITHMS {
            let recs: Vec<TrialRecord> = paired
                .iter()
                .map(|&(t, pt)| trial_record(*var, *value, algorithm, t, pt))
                .collect();
            rows.push(summarize(*var, *value, algorithm, &recs, config.seed));
            records.extend(recs);
        }
    }
    Ok(SweepOutput { rows, trials: records })
}

fn require_axes(config: &ExperimentConfig, allowed: &[SweepVar], what: &str) -> Result<()> {
    match config.sweep.iter().find(|a| !allowed.contains(&a.var)) {
        Some(a) => Err(Error::config(format!("{what} cannot sweep {}", a.var))),
        None => Ok(()),
    }
}

/// The 1D noise sweeps; `config.model` must be `linear1d`.
pub fn run_sweep_1d(config: &ExperimentConfig, exec: Execution) -> Result<SweepOutput> {
    require_axes(config, &[SweepVar::Sigma1, SweepVar::Sigma2], "sweep1d")?;
    run_sweep(config, exec)
}

/// The bearing-noise sweep; `config.model` must be `cv2d`.
pub fn run_sweep_cv(config: &ExperimentConfig, exec: Execution) -> Result<SweepOutput> {
    require_axes(config, &[SweepVar::SigmaThetaDeg], "sweepcv")?;
    run_sweep(config, exec)
}

fn trial_record(var: SweepVar, value: f64, algorithm: Algorithm, trial: usize, pt: &PairedTrial) -> TrialRecord {
    let outcome = pt.outcome(algorithm);
    let base = TrialRecord {
        sweep_var: var,
        sweep_value: value,
        algorithm,
        trial,
        trial_seed: pt.trial_seed,
        failed: true,
        rmse: f64::NAN,
        n_mean: f64::NAN,
        nees_mean: f64::NAN,
        k_mean: f64::NAN,
        major_rate: outcome.major_rate,
        error: String::new(),
    };
    match &outcome.metrics {
        Ok(m) => TrialRecord {
            failed: false,
            rmse: m.position_rmse,
            n_mean: m.avg_particles,
            nees_mean: m.avg_nees,
            k_mean: m.avg_occupied,
            ..base
        },
        Err(e) => TrialRecord {
            error: e.clone(),
            ..base
        },
    }
}

fn summarize(var: SweepVar, value: f64, algorithm: Algorithm, recs: &[TrialRecord], seed: u64) -> ResultRow {
    let ok: Vec<&TrialRecord> = recs.iter().filter(|r| !r.failed).collect();
    let col = |f: fn(&TrialRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (rmse_mean, rmse_std) = mean_std(&col(|r| r.rmse));
    let (n_mean, n_std) = mean_std(&col(|r| r.n_mean));
    let (nees_mean, nees_std) = mean_std(&col(|r| r.nees_mean));
    let (k_mean, _) = mean_std(&col(|r| r.k_mean));
    let rates: Vec<f64> = recs.iter().map(|r| r.major_rate).filter(|r| r.is_finite()).collect();
    let (major_rate, _) = mean_std(&rates);
    ResultRow {
        sweep_var: var,
        sweep_value: value,
        algorithm,
        rmse_mean,
        rmse_std,
        n_mean,
        n_std,
        nees_mean,
        nees_std,
        k_mean,
        major_rate,
        trials: recs.len(),
        seed,
    }
}
