use cso_kld::bench::{
    self, read_results, read_trial_records, run_paired_trial, trial_seed, write_outputs, write_results, Algorithm,
    ExperimentConfig, SweepAxis, SweepVar,
};
use cso_kld::Execution;

fn small_1d() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::sweep1d_default();
    cfg.steps = 15;
    cfg.trials = 3;
    cfg.sweep = vec![SweepAxis {
        var: SweepVar::Sigma1,
        values: vec![0.25, 1.0],
    }];
    cfg
}

#[test]
fn smoke_sweep_has_one_row_per_point_and_algorithm() {
    let out = bench::run_sweep_1d(&small_1d(), Execution::Sequential).unwrap();
    assert_eq!(out.rows.len(), 4);
    assert_eq!(out.trials.len(), 12);
    assert_eq!(out.failures().count(), 0);
    for r in &out.rows {
        assert_eq!(r.trials, 3);
        assert!(r.n_mean >= 50.0 && r.rmse_mean > 0.0 && r.nees_mean > 0.0);
    }
}

#[test]
fn paired_trial_shares_the_trajectory() {
    let cfg = small_1d();
    let model = cfg.model.build().unwrap();
    let seed = trial_seed(cfg.seed, SweepVar::Sigma1, 0.5, 0);
    let pt = run_paired_trial(&cfg, &model, seed).unwrap();
    let pf = pt.pf.metrics.as_ref().unwrap();
    let cpf = pt.cpf.metrics.as_ref().unwrap();
    for (a, b) in pf.steps.iter().zip(&cpf.steps) {
        assert_eq!(a.truth, b.truth);
    }
    assert_eq!(pf.steps.len(), cfg.steps);
    assert_eq!(cpf.steps.len(), cfg.steps);
}

#[test]
fn trial_seeds_depend_on_point_not_grid_position() {
    let a = trial_seed(9, SweepVar::Sigma2, 1.0, 4);
    assert_eq!(a, trial_seed(9, SweepVar::Sigma2, 1.0, 4));
    assert_ne!(a, trial_seed(9, SweepVar::Sigma1, 1.0, 4));
    assert_ne!(a, trial_seed(9, SweepVar::Sigma2, 2.0, 4));
    assert_ne!(a, trial_seed(9, SweepVar::Sigma2, 1.0, 5));
    assert_ne!(a, trial_seed(10, SweepVar::Sigma2, 1.0, 4));
}

#[test]
fn cpf_selects_fewer_particles_in_most_trials() {
    let mut cfg = ExperimentConfig::sweep1d_default();
    cfg.sweep = vec![SweepAxis {
        var: SweepVar::Sigma1,
        values: vec![0.5],
    }];
    let out = bench::run_sweep_1d(&cfg, Execution::Parallel).unwrap();
    let n = |alg| -> Vec<f64> {
        out.trials
            .iter()
            .filter(|t| t.algorithm == alg)
            .map(|t| t.n_mean)
            .collect()
    };
    let (pf, cpf) = (n(Algorithm::Pf), n(Algorithm::Cpf));
    assert_eq!(pf.len(), 20);
    let wins = pf.iter().zip(&cpf).filter(|(p, c)| c < p).count();
    assert!(wins >= 16, "CPF fewer particles in {wins}/20 trials");
}

#[test]
fn outputs_round_trip_and_carry_the_seed() {
    let mut cfg = small_1d();
    cfg.per_trial = true;
    let out = bench::run_sweep_1d(&cfg, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&out, &cfg, dir.path(), "sweep1d").unwrap();
    assert_eq!(read_results(&paths.results).unwrap(), out.rows);
    assert_eq!(read_trial_records(paths.trials.as_ref().unwrap()).unwrap(), out.trials);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&paths.sidecar).unwrap()).unwrap();
    assert_eq!(meta["seed"], cfg.seed);
    assert_eq!(meta["config"]["trials"], 3);
    assert_eq!(meta["failed_trials"].as_array().unwrap().len(), 0);
}

#[test]
fn empty_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    write_results(&[], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        "sweep_var,sweep_value,algorithm,rmse_mean,rmse_std,n_mean,n_std,nees_mean,nees_std,k_mean,major_rate,trials,seed\n"
    );
    assert!(read_results(&path).unwrap().is_empty());
}

#[test]
fn sequential_and_parallel_sweeps_agree() {
    let cfg = small_1d();
    let a = bench::run_sweep_1d(&cfg, Execution::Sequential).unwrap();
    let b = bench::run_sweep_1d(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cv_sweep_rejects_1d_axes() {
    let mut cfg = ExperimentConfig::sweepcv_default();
    cfg.sweep[0].var = SweepVar::Sigma1;
    assert!(bench::run_sweep_cv(&cfg, Execution::Sequential).is_err());
}
