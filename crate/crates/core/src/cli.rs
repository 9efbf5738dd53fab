//! The `cso-kld` command line.
//!
//! Exit codes: 0 success, 1 a theory check failed, 2 bad usage, config or IO.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, Algorithm, ExperimentConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::StateSpaceModel;
use crate::rng::derive_seed;
use crate::theory::{self, SuiteSizes};

/// Environment variable giving the output directory when `--out` is absent.
pub const OUT_ENV: &str = "CSO_KLD_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "cso-kld",
    version,
    about = "KLD-adaptive particle filtering with CSO rejuvenation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the theory property suite and write a report.
    Verify(Common),
    /// 1D random-walk noise sweeps, PF vs CPF.
    Sweep1d(Common),
    /// Constant-velocity range/bearing sweep over bearing noise, PF vs CPF.
    Sweepcv(Common),
    /// One paired trial with a per-step trace.
    Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = DemoModel::Cv2d)]
        model: DemoModel,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DemoModel {
    Linear1d,
    Cv2d,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file merged over the command's defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run jobs on one thread.
    #[arg(long)]
    pub sequential: bool,
}

impl Common {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn experiment(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &base)?,
            None => base,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = self.out_override() {
            cfg.out_dir = out;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_override(&self) -> Option<PathBuf> {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Verify(c) => verify(c),
        Command::Sweep1d(c) => sweep(c, ExperimentConfig::sweep1d_default(), "sweep1d"),
        Command::Sweepcv(c) => sweep(c, ExperimentConfig::sweepcv_default(), "sweepcv"),
        Command::Demo { common, model } => demo(common, *model),
    }
}

fn verify(c: &Common) -> Result<ExitCode> {
    let sizes = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SuiteSizes>(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => SuiteSizes::default(),
    };
    let out = c.out_override().unwrap_or_else(|| PathBuf::from("out"));
    let report = theory::run_suite(c.seed.unwrap_or(7), &sizes, c.exec());
    create_dir(&out)?;
    let text = report.to_text();
    write_file(&out.join("theory_report.txt"), &text)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&out.join("theory_report.json"), &json)?;
    print!("{text}");
    Ok(if report.all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn sweep(c: &Common, base: ExperimentConfig, stem: &str) -> Result<ExitCode> {
    let cfg = c.experiment(base)?;
    let out = if stem == "sweep1d" {
        bench::run_sweep_1d(&cfg, c.exec())?
    } else {
        bench::run_sweep_cv(&cfg, c.exec())?
    };
    let paths = bench::write_outputs(&out, &cfg, &cfg.out_dir, stem)?;
    println!(
        "{:<16} {:>6} {:>4} {:>9} {:>9} {:>9} {:>7}",
        "var", "value", "alg", "rmse", "n", "nees", "major"
    );
    for r in &out.rows {
        println!(
            "{:<16} {:>6} {:>4} {:>9.4} {:>9.1} {:>9.3} {:>7.3}",
            r.sweep_var.name(),
            r.sweep_value,
            r.algorithm,
            r.rmse_mean,
            r.n_mean,
            r.nees_mean,
            r.major_rate
        );
    }
    let failed = out.failures().count();
    if failed > 0 {
        eprintln!("{failed} trial runs failed; see {}", paths.sidecar.display());
    }
    println!("wrote {}", paths.results.display());
    Ok(ExitCode::SUCCESS)
}

fn demo(c: &Common, which: DemoModel) -> Result<ExitCode> {
    let base = match which {
        DemoModel::Linear1d => ExperimentConfig::sweep1d_default(),
        DemoModel::Cv2d => ExperimentConfig::sweepcv_default(),
    };
    let cfg = c.experiment(base)?;
    let model = cfg.model.build()?;
    let seed = derive_seed(cfg.seed, &[0]);
    let trajectory = bench::simulate(&model, cfg.steps, seed)?;
    let dim = model.state_dim();

    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("demo_trace.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["step".to_string(), "algorithm".to_string()];
    header.extend((0..dim).map(|d| format!("estimate_{d}")));
    header.extend((0..dim).map(|d| format!("truth_{d}")));
    header.extend(["n", "k", "nees", "contraction_ratio"].map(String::from));
    let io = |e: csv::Error| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(io)?;
    for algorithm in [Algorithm::Pf, Algorithm::Cpf] {
        let run = bench::run_filter(&cfg, &model, &trajectory, algorithm, seed)?;
        for (t, s) in run.metrics.steps.iter().enumerate() {
            let mut rec = vec![t.to_string(), algorithm.to_string()];
            rec.extend(s.estimate.as_slice().iter().map(f64::to_string));
            rec.extend(s.truth.as_slice().iter().map(f64::to_string));
            rec.push(s.n_selected.to_string());
            rec.push(s.k_occupied.to_string());
            rec.push(s.nees.to_string());
            rec.push(s.contraction.map(|r| r.to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(io)?;
        }
        println!(
            "{algorithm:>3}: rmse {:.4}, mean n {:.1}, mean nees {:.3}",
            run.metrics.position_rmse, run.metrics.avg_particles, run.metrics.avg_nees
        );
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
