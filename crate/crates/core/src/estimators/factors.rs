use std::f64::consts::PI;

use num_complex::Complex64;

use super::{EstimatorConfig, PhaseGrid, Table};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::log_sum_exp;

/// Phase-noise variance substituted for zero in the transition kernel.
pub const SIGMA_THETA_FLOOR: f64 = 1e-12;

/// Log-domain factors of the chain factor graph for one received sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTables {
    /// `K × M`, entry `(k, m) = log R(y_k, φ_m)`.
    pub r_table: Table,
    /// `M × M`, entry `(i, j) = log Q(φ_i | φ_j)`; rows sum to one in the
    /// probability domain.
    pub q_matrix: Table,
}

impl FactorTables {
    pub fn build(y: &[Complex64], cfg: &EstimatorConfig, c: &Constellation) -> Result<Self> {
        cfg.validate()?;
        Ok(FactorTables {
            r_table: r_table(y, &cfg.grid, c, cfg.sigma_n_sq)?,
            q_matrix: q_matrix(&cfg.grid, cfg.sigma_theta_sq, cfg.wrap_terms)?,
        })
    }
}

/// Log-likelihood table `log Σ_x P(x) exp(-|y_k - x e^{jφ_m}|² / σ_n²)`,
/// with `σ_n²` the complex (two-sided) noise variance. The Gaussian
/// normalization constant is dropped.
pub fn r_table(
    y: &[Complex64],
    grid: &PhaseGrid,
    c: &Constellation,
    sigma_n_sq: f64,
) -> Result<Table> {
    if !(sigma_n_sq > 0.0) {
        return Err(Error::invalid(format!(
            "noise variance {sigma_n_sq} must be positive"
        )));
    }
    let m_count = grid.len();
    let log_priors: Vec<f64> = c.probs().iter().map(|p| p.ln()).collect();
    let rotations: Vec<Complex64> = grid
        .phases()
        .iter()
        .map(|&phi| Complex64::from_polar(1.0, -phi))
        .collect();
    let inv = 1.0 / sigma_n_sq;
    let mut table = Table::zeros(y.len(), m_count);
    let mut terms = vec![0.0; c.len()];
    for (k, &yk) in y.iter().enumerate() {
        let row = table.row_mut(k);
        for (m, rot) in rotations.iter().enumerate() {
            let z = yk * rot;
            for ((t, x), lp) in terms.iter_mut().zip(c.points()).zip(&log_priors) {
                *t = lp - (z - x).norm_sqr() * inv;
            }
            row[m] = log_sum_exp(&terms);
        }
    }
    Ok(table)
}

/// Row-normalized log transition matrix of the wrapped normal kernel
/// `Σ_r exp(-(φ_i - φ_j + 2πr/n)² / (2σ_θ²))`, `|r| ≤ r_eff` with
/// `r_eff = max(r_max, ceil(5 σ_θ n / 2π))`.
pub fn q_matrix(grid: &PhaseGrid, sigma_theta_sq: f64, r_max: usize) -> Result<Table> {
    if !(sigma_theta_sq >= 0.0) || !sigma_theta_sq.is_finite() {
        return Err(Error::invalid(format!(
            "phase-noise variance {sigma_theta_sq} must be >= 0"
        )));
    }
    if r_max == 0 {
        return Err(Error::invalid("r_max must be at least 1"));
    }
    let var = sigma_theta_sq.max(SIGMA_THETA_FLOOR);
    let n = grid.sym_order() as f64;
    let period = 2.0 * PI / n;
    let r_eff = r_max.max((5.0 * var.sqrt() * n / (2.0 * PI)).ceil() as usize) as i64;
    let m_count = grid.len();
    let phases = grid.phases();
    let mut table = Table::zeros(m_count, m_count);
    let mut terms = Vec::with_capacity((2 * r_eff + 1) as usize);
    for i in 0..m_count {
        let row = table.row_mut(i);
        for j in 0..m_count {
            // wrapping first centers the truncated sum, keeping Q circulant
            let diff = crate::wrap_to_period(phases[i] - phases[j], period);
            terms.clear();
            for r in -r_eff..=r_eff {
                let d = diff + r as f64 * period;
                terms.push(-d * d / (2.0 * var));
            }
            row[j] = log_sum_exp(&terms);
        }
        let norm = log_sum_exp(row);
        for v in row.iter_mut() {
            *v -= norm;
        }
    }
    Ok(table)
}

/// BPS distance table `d_{k,m} = min_x |y_k - x e^{jφ_m}|²` (`K × M`).
pub fn distance_table(y: &[Complex64], grid: &PhaseGrid, c: &Constellation) -> Table {
    let rotations: Vec<Complex64> = grid
        .phases()
        .iter()
        .map(|&phi| Complex64::from_polar(1.0, -phi))
        .collect();
    let mut table = Table::zeros(y.len(), grid.len());
    for (k, &yk) in y.iter().enumerate() {
        let row = table.row_mut(k);
        for (m, rot) in rotations.iter().enumerate() {
            let z = yk * rot;
            row[m] = c
                .points()
                .iter()
                .map(|x| (z - x).norm_sqr())
                .fold(f64::INFINITY, f64::min);
        }
    }
    table
}
