//! Seeded sweeps, training runs, single-trace dumps and plot-ready output.
//!
//! Output directory layout of a sweep:
//!
//! * `config.json`: resolved config and its hash.
//! * `realizations.csv`: one row per (SNR, σ_θ², algorithm, realization).
//! * `summary.csv`: median and quartiles over realizations per
//!   (SNR, σ_θ², algorithm).
//! * `timing.json`: wall time per computed cell (not part of the
//!   deterministic output).

mod config;
mod sweep;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    load_params, AlgorithmOverrides, ConstellationSpec, DemapperMode, ExperimentConfig, MIN_ESTIMATOR_SIGMA_SQ,
};
pub use sweep::{
    read_realizations, read_summary, run_sweep, CellTiming, RealizationRow, SummaryRow, SweepOutcome, CONFIG_FILE,
    REALIZATIONS_FILE, SUMMARY_FILE, TIMING_FILE,
};

use crate::channel::{transmit, ChannelParams};
use crate::error::{Error, Result};
use crate::estimators::{write_estimates_csv, Algorithm};
use crate::metrics::BmiReport;
use crate::pipeline::evaluate;
use crate::postproc::SlipEvent;
use crate::training::{train, write_weights_csv, TrainReport};

pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const PLOT_DIR: &str = "plot";

fn single_cell(cfg: &ExperimentConfig, what: &str) -> Result<(f64, f64)> {
    if cfg.snr_db.len() != 1 || cfg.sigma_theta_sq.len() != 1 {
        return Err(Error::Config(format!(
            "{what} needs exactly one SNR and one sigma_theta_sq, got {}×{}",
            cfg.snr_db.len(),
            cfg.sigma_theta_sq.len()
        )));
    }
    Ok((cfg.snr_db[0], cfg.sigma_theta_sq[0]))
}

/// Trains one model for the single cell of `cfg` and writes
/// `train_report.json` and `weights.csv` to the output directory.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (snr, s2) = single_cell(cfg, "training")?;
    let c = cfg.constellation.build()?;
    let est = cfg.estimator_config(snr, s2, c.sym_order())?;
    let channel = ChannelParams {
        snr_db: snr,
        sigma_theta_sq: s2,
        num_symbols: cfg.num_symbols,
        seed: cfg.train.seed,
        initial_phase: cfg.initial_phase,
    };
    let report = train(&cfg.train, &channel, &est, &c)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join(TRAIN_REPORT_FILE),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    report.write_weights_csv(BufWriter::new(File::create(cfg.output_dir.join(WEIGHTS_FILE))?))?;
    Ok(report)
}

/// What `run_eval` wrote and measured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub sigma_theta_sq: f64,
    pub realization: usize,
    pub seed: u64,
    pub report: BmiReport,
    pub slip_events: Vec<SlipEvent>,
    pub directory: PathBuf,
}

/// Runs one algorithm on one realization of the single cell of `cfg` and
/// dumps `trace.csv`, `estimates.csv`, `postproc.csv` and `report.json` into
/// `<output_dir>/eval_<algorithm>_<realization>/`.
pub fn run_eval(cfg: &ExperimentConfig, algorithm: Algorithm, realization: usize) -> Result<EvalSummary> {
    cfg.validate()?;
    let (snr, s2) = single_cell(cfg, "eval")?;
    let c = cfg.constellation.build()?;
    let est = cfg.estimator_config(snr, s2, c.sym_order())?;
    let params = if algorithm == Algorithm::BpsOpt {
        Some(cfg.bps_opt_params()?)
    } else {
        None
    };
    let seed = cfg.seed.wrapping_add(realization as u64);
    let trace = transmit(
        &c,
        &ChannelParams {
            snr_db: snr,
            sigma_theta_sq: s2,
            num_symbols: cfg.num_symbols,
            seed,
            initial_phase: cfg.initial_phase,
        },
    )?;
    let ev = evaluate(algorithm, &trace, &est, &c, params.as_ref(), cfg.exclude_edges)?;
    let dir = cfg.output_dir.join(format!("eval_{}_{realization}", algorithm.name()));
    fs::create_dir_all(&dir)?;
    let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    trace.write_csv(create("trace.csv")?)?;
    write_estimates_csv(create("estimates.csv")?, &trace.phase_path, &ev.phi_hat_raw)?;
    ev.corrected
        .write_csv(create("postproc.csv")?, &trace.phase_path, &ev.phi_hat_raw)?;
    let summary = EvalSummary {
        algorithm,
        snr_db: snr,
        sigma_theta_sq: s2,
        realization,
        seed,
        report: ev.report,
        slip_events: ev.corrected.slip_events,
        directory: dir.clone(),
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// File name of the BMI-vs-SNR table for one phase-noise variance.
pub fn plot_file_name(sigma_theta_sq: f64) -> String {
    format!("bmi_vs_snr_{sigma_theta_sq:e}.csv")
}

/// Writes one `snr_db,<algorithm>...` table of median BMI per σ_θ² into
/// `dir`. Cells absent from `rows` are left out; with no rows every file has
/// only its header. Returns the written paths.
pub fn write_plot_tables(
    rows: &[SummaryRow],
    sigma_theta_sq: &[f64],
    algorithms: &[Algorithm],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut header = vec!["snr_db".to_string()];
    header.extend(algorithms.iter().map(|a| a.name().to_string()));
    let mut paths = Vec::new();
    for &s2 in sigma_theta_sq {
        let path = dir.join(plot_file_name(s2));
        let mut w = csv::Writer::from_path(&path).map_err(crate::channel::csv_err)?;
        w.write_record(&header).map_err(crate::channel::csv_err)?;
        let mut snrs: Vec<f64> = Vec::new();
        for r in rows.iter().filter(|r| r.sigma_theta_sq.to_bits() == s2.to_bits()) {
            if !snrs.iter().any(|v| v.to_bits() == r.snr_db.to_bits()) {
                snrs.push(r.snr_db);
            }
        }
        for snr in snrs {
            let mut rec = vec![snr.to_string()];
            for alg in algorithms {
                let v = rows.iter().find(|r| {
                    r.algorithm == *alg
                        && r.snr_db.to_bits() == snr.to_bits()
                        && r.sigma_theta_sq.to_bits() == s2.to_bits()
                });
                rec.push(v.map(|r| r.bmi_median.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(crate::channel::csv_err)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Turns a sweep (and optional training) output directory into plot tables
/// under `<output_dir>/plot/`. The weights table is written when trained
/// parameters are available from the config or a train report in the
/// output directory.
pub fn emit_plot_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let rows = read_summary(&cfg.output_dir)?;
    let dir = cfg.output_dir.join(PLOT_DIR);
    let mut paths = write_plot_tables(&rows, &cfg.sigma_theta_sq, &cfg.algorithms, &dir)?;
    let report = cfg.output_dir.join(TRAIN_REPORT_FILE);
    let params = match &cfg.overrides.bps_opt_params {
        Some(p) => Some(load_params(p)?),
        None if report.exists() => Some(load_params(&report)?),
        None => None,
    };
    if let Some(p) = params {
        let path = dir.join(WEIGHTS_FILE);
        write_weights_csv(BufWriter::new(File::create(&path)?), &p)?;
        paths.push(path);
    }
    Ok(paths)
}
