//! CSV tables and the JSON provenance sidecar.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ExperimentConfig, ResultRow, SweepOutput, TrialRecord};
use crate::error::{Error, Result};

pub const RESULT_HEADER: [&str; 13] = [
    "sweep_var",
    "sweep_value",
    "algorithm",
    "rmse_mean",
    "rmse_std",
    "n_mean",
    "n_std",
    "nees_mean",
    "nees_std",
    "k_mean",
    "major_rate",
    "trials",
    "seed",
];

const TRIAL_HEADER: [&str; 12] = [
    "sweep_var",
    "sweep_value",
    "algorithm",
    "trial",
    "trial_seed",
    "failed",
    "rmse",
    "n_mean",
    "nees_mean",
    "k_mean",
    "major_rate",
    "error",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn write_table<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_table<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {:?}", found.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Writes the summary table. An empty table yields the header line only.
pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_table(rows, &RESULT_HEADER, path)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_table(path, &RESULT_HEADER)
}

pub fn write_trial_records(records: &[TrialRecord], path: &Path) -> Result<()> {
    write_table(records, &TRIAL_HEADER, path)
}

pub fn read_trial_records(path: &Path) -> Result<Vec<TrialRecord>> {
    read_table(path, &TRIAL_HEADER)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    seed: u64,
    generator: &'static str,
    nees_covariance: &'static str,
    rows: usize,
    failed_trials: Vec<&'a TrialRecord>,
    config: &'a ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub results: PathBuf,
    pub sidecar: PathBuf,
    pub trials: Option<PathBuf>,
}

/// Writes `<stem>.csv`, `<stem>.json` and, if the config asks for it,
/// `<stem>_trials.csv` into `dir`, creating `dir` if needed.
pub fn write_outputs(out: &SweepOutput, config: &ExperimentConfig, dir: &Path, stem: &str) -> Result<OutputPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results = dir.join(format!("{stem}.csv"));
    write_results(&out.rows, &results)?;
    let trials = if config.per_trial {
        let p = dir.join(format!("{stem}_trials.csv"));
        write_trial_records(&out.trials, &p)?;
        Some(p)
    } else {
        None
    };
    let sidecar = dir.join(format!("{stem}.json"));
    let meta = Sidecar {
        seed: config.seed,
        generator: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        nees_covariance: "weighted covariance of the KLD-resampled cloud over the position dimensions",
        rows: out.rows.len(),
        failed_trials: out.failures().collect(),
        config,
    };
    let json = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    std::fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(OutputPaths {
        results,
        sidecar,
        trials,
    })
}
