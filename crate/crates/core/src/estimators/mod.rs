//! Carrier phase estimators over a discrete grid of test phases.
//!
//! All estimators return one raw phase estimate per received symbol, inside
//! the fundamental sector `[-π/n, π/n)`. Windows are truncated at the
//! sequence boundaries, and ties in any arg-min/arg-max go to the lowest grid
//! index.

use std::f64::consts::PI;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};

mod bp;
mod bps;
mod bps_opt;
mod factors;
mod oracle;

pub use bp::{map_bp_estimate, map_bp_log_marginals, BpMode, Transition};
pub use bps::{bps_estimate, cpn_estimate, windowed_sums};
pub use bps_opt::{bps_opt_estimate, softmin, softmin_readout, BpsOptParams, READOUT_FLOOR};
pub use factors::{distance_table, q_matrix, r_table, FactorTables, SIGMA_THETA_FLOOR};
pub use oracle::{brute_force_map, brute_force_marginal, EnumerationOrder, BRUTE_FORCE_LIMIT};

/// Default truncation `r_max` of the wrapped-normal sum.
pub const DEFAULT_WRAP_TERMS: usize = 3;

/// Uniform grid of `M` test phases covering one symmetry sector:
/// `φ_i = -π/n + (i-1)·2π/(nM)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    phases: Vec<f64>,
    m_count: usize,
    sym_order: usize,
}

impl PhaseGrid {
    pub fn new(m_count: usize, sym_order: usize) -> Result<Self> {
        if m_count < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 test phases, got {m_count}"
            )));
        }
        if sym_order == 0 {
            return Err(Error::invalid("symmetry order must be at least 1"));
        }
        let n = sym_order as f64;
        let step = 2.0 * PI / (n * m_count as f64);
        let phases = (0..m_count).map(|i| -PI / n + i as f64 * step).collect();
        Ok(PhaseGrid {
            phases,
            m_count,
            sym_order,
        })
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.m_count
    }

    pub fn is_empty(&self) -> bool {
        self.m_count == 0
    }

    pub fn sym_order(&self) -> usize {
        self.sym_order
    }

    /// Spacing between neighboring test phases.
    pub fn step(&self) -> f64 {
        2.0 * PI / (self.sym_order as f64 * self.m_count as f64)
    }

    /// Length of one symmetry sector, `2π/n`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.sym_order as f64
    }

    /// Index of the grid phase closest to `phi` (modulo the sector period).
    pub fn nearest_index(&self, phi: f64) -> usize {
        let offset = crate::wrap_to_period(phi + PI / self.sym_order as f64, self.period());
        let offset = if offset < 0.0 { offset + self.period() } else { offset };
        ((offset / self.step()).round() as usize) % self.m_count
    }
}

/// Shorthand for [`PhaseGrid::new`].
pub fn make_grid(m_count: usize, sym_order: usize) -> Result<PhaseGrid> {
    PhaseGrid::new(m_count, sym_order)
}

/// Parameters shared by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Half window `N`; each decision uses `2N+1` symbols.
    pub half_window: usize,
    pub grid: PhaseGrid,
    /// Complex AWGN variance assumed by the likelihood factor.
    pub sigma_n_sq: f64,
    /// Phase-increment variance assumed by the transition factor.
    pub sigma_theta_sq: f64,
    pub wrap_terms: usize,
    #[serde(default)]
    pub bp_mode: BpMode,
}

impl EstimatorConfig {
    pub fn new(half_window: usize, grid: PhaseGrid, sigma_n_sq: f64, sigma_theta_sq: f64) -> Self {
        EstimatorConfig {
            half_window,
            grid,
            sigma_n_sq,
            sigma_theta_sq,
            wrap_terms: DEFAULT_WRAP_TERMS,
            bp_mode: BpMode::Windowed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_n_sq > 0.0) || !self.sigma_n_sq.is_finite() {
            return Err(Error::invalid(format!(
                "estimator noise variance {} must be positive",
                self.sigma_n_sq
            )));
        }
        if !(self.sigma_theta_sq >= 0.0) {
            return Err(Error::invalid("estimator phase-noise variance must be >= 0"));
        }
        if self.wrap_terms == 0 {
            return Err(Error::invalid("wrap_terms must be at least 1"));
        }
        Ok(())
    }
}

/// Dense row-major matrix of `f64`, used for the K×M factor tables and the
/// M×M transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Table { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Table {
        Table::from_vec(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }
}

/// Index of the smallest entry; lowest index on ties.
#[inline]
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v < xs[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; lowest index on ties.
#[inline]
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// The estimators this crate provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bps,
    Cpn,
    MapBp,
    BpsOpt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Bps,
        Algorithm::Cpn,
        Algorithm::MapBp,
        Algorithm::BpsOpt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bps => "bps",
            Algorithm::Cpn => "cpn",
            Algorithm::MapBp => "map_bp",
            Algorithm::BpsOpt => "bps_opt",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Runs `algorithm` on `y`. `bps_opt` requires `params`.
pub fn estimate(
    algorithm: Algorithm,
    y: &[Complex64],
    cfg: &EstimatorConfig,
    c: &Constellation,
    params: Option<&BpsOptParams>,
) -> Result<Vec<f64>> {
    match algorithm {
        Algorithm::Bps => Ok(bps_estimate(y, cfg, c)),
        Algorithm::Cpn => cpn_estimate(y, cfg, c),
        Algorithm::MapBp => map_bp_estimate(y, cfg, c),
        Algorithm::BpsOpt => {
            let params = params
                .ok_or_else(|| Error::invalid("bps_opt needs trained parameters"))?;
            bps_opt_estimate(y, cfg, c, params)
        }
    }
}

/// Writes per-symbol estimates as `k,phi_true,phi_hat_raw`.
pub fn write_estimates_csv<W: Write>(out: W, phi_true: &[f64], phi_hat: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = crate::channel::csv_err;
    w.write_record(["k", "phi_true", "phi_hat_raw"]).map_err(err)?;
    for (k, (t, e)) in phi_true.iter().zip(phi_hat).enumerate() {
        w.write_record([k.to_string(), t.to_string(), e.to_string()])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_m4() {
        let g = make_grid(4, 4).unwrap();
        let expected = [-PI / 4.0, -PI / 8.0, 0.0, PI / 8.0];
        for (a, b) in g.phases().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_m60() {
        let g = make_grid(60, 4).unwrap();
        assert_eq!(g.len(), 60);
        assert_eq!(g.phases()[0], -PI / 4.0);
        for w in g.phases().windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - PI / 120.0).abs() < 1e-14);
        }
        assert!(*g.phases().last().unwrap() < PI / 4.0);
    }

    #[test]
    fn grid_rejects_single_phase() {
        assert!(make_grid(1, 4).is_err());
        assert!(make_grid(0, 4).is_err());
    }

    #[test]
    fn nearest_index_wraps() {
        let g = make_grid(8, 4).unwrap();
        assert_eq!(g.nearest_index(0.0), 4);
        assert_eq!(g.nearest_index(g.phases()[3] + 0.01), 3);
        // just below +π/4 is closest to the first point (-π/4) modulo π/2
        assert_eq!(g.nearest_index(PI / 4.0 - 1e-3), 0);
        assert_eq!(g.nearest_index(PI / 2.0), 4);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[2.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("viterbi".parse::<Algorithm>().is_err());
    }
}
