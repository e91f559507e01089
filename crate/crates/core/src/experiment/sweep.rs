use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DemapperMode, ExperimentConfig};
use crate::channel::{transmit, csv_err, ChannelParams};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::estimators::{estimate, Algorithm, BpsOptParams, EstimatorConfig};
use crate::metrics::{maximize_over_variance, scored_range, DemapperFrame, score};
use crate::postproc::correct;
use crate::stats::{median, quantile};

pub const REALIZATIONS_FILE: &str = "realizations.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_FILE: &str = "config.json";

/// One (cell, algorithm, realization) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRow {
    pub config_hash: String,
    pub snr_db: f64,
    pub sigma_theta_sq: f64,
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub num_phases: usize,
    #[serde(rename = "N")]
    pub half_window: usize,
    pub realization: usize,
    pub seed: u64,
    pub bmi: f64,
    pub sigma_opt: f64,
    pub slips: usize,
}

/// Aggregate over realizations of one (cell, algorithm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub snr_db: f64,
    pub sigma_theta_sq: f64,
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub num_phases: usize,
    #[serde(rename = "N")]
    pub half_window: usize,
    pub realizations: usize,
    pub bmi_median: f64,
    pub bmi_q1: f64,
    pub bmi_q3: f64,
    pub slips_median: f64,
    pub slips_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub snr_db: f64,
    pub sigma_theta_sq: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub config_hash: String,
    pub summary: Vec<SummaryRow>,
    pub realizations: Vec<RealizationRow>,
    pub computed_cells: usize,
    pub reused_cells: usize,
}

type CellKey = (u64, u64);

fn cell_key(snr: f64, s2: f64) -> CellKey {
    (snr.to_bits(), s2.to_bits())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&tmp)
            .map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const REALIZATION_HEADER: [&str; 11] = [
    "config_hash",
    "snr_db",
    "sigma_theta_sq",
    "algorithm",
    "M",
    "N",
    "realization",
    "seed",
    "bmi",
    "sigma_opt",
    "slips",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "config_hash",
    "snr_db",
    "sigma_theta_sq",
    "algorithm",
    "M",
    "N",
    "realizations",
    "bmi_median",
    "bmi_q1",
    "bmi_q3",
    "slips_median",
    "slips_total",
];

/// Reads the summary rows of a finished (or partial) sweep directory.
pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(&dir.join(SUMMARY_FILE))
}

pub fn read_realizations(dir: &Path) -> Result<Vec<RealizationRow>> {
    read_rows(&dir.join(REALIZATIONS_FILE))
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    c: &'a Constellation,
    params: Option<&'a BpsOptParams>,
    hash: &'a str,
}

/// Per-realization derotated symbols of one algorithm.
struct Derotated {
    x_hat: Vec<num_complex::Complex64>,
    bits: Vec<u8>,
    slips: usize,
}

fn run_cell(sh: &Shared<'_>, snr: f64, s2: f64) -> Result<Vec<RealizationRow>> {
    let cfg = sh.cfg;
    let est = cfg.estimator_config(snr, s2, sh.c.sym_order())?;
    let per_real: Vec<Vec<Derotated>> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| derotate_all(sh, &est, snr, s2, r))
        .collect::<Result<_>>()?;
    let range = scored_range(cfg.num_symbols, cfg.half_window, cfg.exclude_edges);
    let mut rows = Vec::with_capacity(cfg.realizations * cfg.algorithms.len());
    for (a, &alg) in cfg.algorithms.iter().enumerate() {
        let scored: Vec<(f64, f64)> = match cfg.demapper {
            DemapperMode::PerRealization => per_real
                .par_iter()
                .map(|d| {
                    let d = &d[a];
                    score(&d.x_hat, &d.bits, sh.c, cfg.half_window, cfg.exclude_edges)
                        .map(|(s, rep)| (rep.bmi_bits, s))
                })
                .collect::<Result<_>>()?,
            DemapperMode::PerCell => {
                // frames are rebuilt per evaluation to keep memory at one frame per worker
                let bmi_at = |d: &Derotated, v: f64| -> Result<f64> {
                    Ok(DemapperFrame::new(&d.x_hat, &d.bits, sh.c)?.bmi_at(v, range.clone()))
                };
                let (s, _) = maximize_over_variance(|v| {
                    let each: Vec<f64> = per_real
                        .par_iter()
                        .map(|d| bmi_at(&d[a], v).unwrap_or(f64::NEG_INFINITY))
                        .collect();
                    each.iter().sum::<f64>() / each.len() as f64
                });
                per_real
                    .par_iter()
                    .map(|d| Ok((bmi_at(&d[a], s)?.max(0.0), s)))
                    .collect::<Result<_>>()?
            }
        };
        for (r, (bmi, sigma_opt)) in scored.into_iter().enumerate() {
            rows.push(RealizationRow {
                config_hash: sh.hash.to_string(),
                snr_db: snr,
                sigma_theta_sq: s2,
                algorithm: alg,
                num_phases: cfg.num_phases,
                half_window: cfg.half_window,
                realization: r,
                seed: cfg.seed.wrapping_add(r as u64),
                bmi,
                sigma_opt,
                slips: per_real[r][a].slips,
            });
        }
    }
    Ok(rows)
}

fn derotate_all(sh: &Shared<'_>, est: &EstimatorConfig, snr: f64, s2: f64, r: usize) -> Result<Vec<Derotated>> {
    let cfg = sh.cfg;
    let trace = transmit(
        sh.c,
        &ChannelParams {
            snr_db: snr,
            sigma_theta_sq: s2,
            num_symbols: cfg.num_symbols,
            seed: cfg.seed.wrapping_add(r as u64),
            initial_phase: cfg.initial_phase,
        },
    )?;
    cfg.algorithms
        .iter()
        .map(|&alg| {
            let raw = estimate(alg, &trace.rx_symbols, est, sh.c, sh.params)?;
            let fixed = correct(&trace.rx_symbols, &raw, &trace.phase_path, sh.c.sym_order())?;
            Ok(Derotated {
                x_hat: fixed.x_hat,
                bits: trace.bits.clone(),
                slips: fixed.slip_events.len(),
            })
        })
        .collect()
}

fn summarize(cfg: &ExperimentConfig, hash: &str, rows: &[RealizationRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &snr in &cfg.snr_db {
        for &s2 in &cfg.sigma_theta_sq {
            for &alg in &cfg.algorithms {
                let sel: Vec<&RealizationRow> = rows
                    .iter()
                    .filter(|r| cell_key(r.snr_db, r.sigma_theta_sq) == cell_key(snr, s2) && r.algorithm == alg)
                    .collect();
                if sel.is_empty() {
                    continue;
                }
                let bmi: Vec<f64> = sel.iter().map(|r| r.bmi).collect();
                let slips: Vec<f64> = sel.iter().map(|r| r.slips as f64).collect();
                out.push(SummaryRow {
                    config_hash: hash.to_string(),
                    snr_db: snr,
                    sigma_theta_sq: s2,
                    algorithm: alg,
                    num_phases: cfg.num_phases,
                    half_window: cfg.half_window,
                    realizations: sel.len(),
                    bmi_median: median(&bmi),
                    bmi_q1: quantile(&bmi, 0.25),
                    bmi_q3: quantile(&bmi, 0.75),
                    slips_median: median(&slips),
                    slips_total: sel.iter().map(|r| r.slips).sum(),
                });
            }
        }
    }
    out
}

/// Rows of `rows` in canonical order: SNR list order, then σ_θ² list order,
/// then algorithm list order, then realization.
fn canonical(cfg: &ExperimentConfig, rows: Vec<RealizationRow>) -> Vec<RealizationRow> {
    let pos = |xs: &[f64], v: f64| xs.iter().position(|x| x.to_bits() == v.to_bits());
    let mut keyed: Vec<((usize, usize, usize, usize), RealizationRow)> = rows
        .into_iter()
        .filter_map(|r| {
            let a = pos(&cfg.snr_db, r.snr_db)?;
            let b = pos(&cfg.sigma_theta_sq, r.sigma_theta_sq)?;
            let c = cfg.algorithms.iter().position(|&x| x == r.algorithm)?;
            Some(((a, b, c, r.realization), r))
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    keyed.dedup_by_key(|(k, _)| *k);
    keyed.into_iter().map(|(_, r)| r).collect()
}

/// Runs every (SNR, σ_θ²) cell, resuming from rows already present in the
/// output directory for the same config hash. Both CSV files are rewritten
/// in canonical order after each cell.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let c = cfg.constellation.build()?;
    let params = if cfg.algorithms.contains(&Algorithm::BpsOpt) {
        Some(cfg.bps_opt_params()?)
    } else {
        None
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let dir = cfg.output_dir.as_path();
    let doc = serde_json::json!({ "config_hash": hash, "config": cfg });
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&doc)? + "\n")?;

    let existing: Vec<RealizationRow> = read_rows::<RealizationRow>(&dir.join(REALIZATIONS_FILE))
        .unwrap_or_default()
        .into_iter()
        .filter(|r| r.config_hash == hash && r.realization < cfg.realizations)
        .collect();
    let mut rows = canonical(cfg, existing);
    let mut counts: BTreeMap<CellKey, usize> = BTreeMap::new();
    for r in &rows {
        *counts.entry(cell_key(r.snr_db, r.sigma_theta_sq)).or_default() += 1;
    }
    let per_cell = cfg.realizations * cfg.algorithms.len();
    let sh = Shared {
        cfg,
        c: &c,
        params: params.as_ref(),
        hash: &hash,
    };
    let mut timing: Vec<CellTiming> = Vec::new();
    let (mut computed, mut reused) = (0, 0);
    for &snr in &cfg.snr_db {
        for &s2 in &cfg.sigma_theta_sq {
            let key = cell_key(snr, s2);
            if counts.get(&key) == Some(&per_cell) {
                reused += 1;
                continue;
            }
            let start = Instant::now();
            let fresh = run_cell(&sh, snr, s2)?;
            rows.retain(|r| cell_key(r.snr_db, r.sigma_theta_sq) != key);
            rows.extend(fresh);
            rows = canonical(cfg, rows);
            computed += 1;
            timing.push(CellTiming {
                snr_db: snr,
                sigma_theta_sq: s2,
                seconds: start.elapsed().as_secs_f64(),
            });
            write_rows(&dir.join(REALIZATIONS_FILE), &rows, &REALIZATION_HEADER)?;
            write_rows(&dir.join(SUMMARY_FILE), &summarize(cfg, &hash, &rows), &SUMMARY_HEADER)?;
            fs::write(dir.join(TIMING_FILE), serde_json::to_string_pretty(&timing)? + "\n")?;
        }
    }
    let summary = summarize(cfg, &hash, &rows);
    write_rows(&dir.join(REALIZATIONS_FILE), &rows, &REALIZATION_HEADER)?;
    write_rows(&dir.join(SUMMARY_FILE), &summary, &SUMMARY_HEADER)?;
    if rows.len() != cfg.snr_db.len() * cfg.sigma_theta_sq.len() * per_cell {
        return Err(Error::Numerical("sweep finished with missing rows".into()));
    }
    Ok(SweepOutcome {
        config_hash: hash,
        summary,
        realizations: rows,
        computed_cells: computed,
        reused_cells: reused,
    })
}
