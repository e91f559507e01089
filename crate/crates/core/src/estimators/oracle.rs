//! Exhaustive evaluation of the discretized MAP marginal, for testing the
//! message-passing estimator on small windows.

use num_complex::Complex64;

use super::factors::FactorTables;
use super::{argmax, EstimatorConfig, Table};
use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Largest number of phase tuples the enumeration accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Order in which the phase tuples are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationOrder {
    /// The oldest symbol's phase varies fastest.
    FirstFastest,
    /// The newest symbol's phase varies fastest.
    LastFastest,
}

/// Streaming log-sum-exp accumulator.
#[derive(Clone, Copy)]
struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    fn new() -> Self {
        LogAcc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// Normalized log marginal of the center variable of a `2N+1` window,
/// summing the factor product over every tuple of grid phases.
pub fn brute_force_marginal(r: &Table, log_q: &Table, order: EnumerationOrder) -> Result<Vec<f64>> {
    let len = r.rows();
    let m = r.cols();
    if len == 0 || len % 2 == 0 {
        return Err(Error::invalid("window length must be odd"));
    }
    let total = (m as u64).checked_pow(len as u32).unwrap_or(u64::MAX);
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!(
            "{m}^{len} tuples exceed the enumeration limit"
        )));
    }
    let center = len / 2;
    let mut acc = vec![LogAcc::new(); m];
    let mut idx = vec![0usize; len];
    let digits: Vec<usize> = match order {
        EnumerationOrder::FirstFastest => (0..len).collect(),
        EnumerationOrder::LastFastest => (0..len).rev().collect(),
    };
    for _ in 0..total {
        let mut term = r.get(0, idx[0]);
        for i in 1..len {
            term += r.get(i, idx[i]) + log_q.get(idx[i], idx[i - 1]);
        }
        acc[idx[center]].add(term);
        for &d in &digits {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut out: Vec<f64> = acc.iter().map(LogAcc::value).collect();
    let norm = crate::log_sum_exp(&out);
    for v in out.iter_mut() {
        *v -= norm;
    }
    Ok(out)
}

/// Exact discretized MAP for the center symbol of `y_window` (length `2N+1`):
/// returns the maximizing grid phase and the normalized log marginal.
pub fn brute_force_map(
    y_window: &[Complex64],
    cfg: &EstimatorConfig,
    c: &Constellation,
) -> Result<(f64, Vec<f64>)> {
    if y_window.len() != 2 * cfg.half_window + 1 {
        return Err(Error::invalid("window length must be 2N+1"));
    }
    let tables = FactorTables::build(y_window, cfg, c)?;
    let marg = brute_force_marginal(&tables.r_table, &tables.q_matrix, EnumerationOrder::FirstFastest)?;
    Ok((cfg.grid.phases()[argmax(&marg)], marg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::make_grid;

    #[test]
    fn hand_computed_two_state_chain() {
        // N=1, M=2: 8 tuples; marginal of the middle variable by hand
        let r = Table::from_vec(3, 2, vec![0.1f64.ln(), 0.9f64.ln(), 0.5f64.ln(), 0.5f64.ln(), 0.8f64.ln(), 0.2f64.ln()]);
        let q = Table::from_vec(2, 2, vec![0.7f64.ln(), 0.3f64.ln(), 0.3f64.ln(), 0.7f64.ln()]);
        let marg = brute_force_marginal(&r, &q, EnumerationOrder::FirstFastest).unwrap();
        let qv = [[0.7, 0.3], [0.3, 0.7]];
        let (r0, r1, r2) = ([0.1, 0.9], [0.5, 0.5], [0.8, 0.2]);
        let mut want = [0.0; 2];
        for (a, wa) in r0.iter().enumerate() {
            for (b, wb) in r1.iter().enumerate() {
                for (cc, wc) in r2.iter().enumerate() {
                    want[b] += wa * wb * wc * qv[b][a] * qv[cc][b];
                }
            }
        }
        let z = want[0] + want[1];
        for b in 0..2 {
            assert!((marg[b].exp() - want[b] / z).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_factors_give_uniform_marginal() {
        let r = Table::zeros(5, 4);
        let q = Table::from_vec(4, 4, vec![(0.25f64).ln(); 16]);
        let marg = brute_force_marginal(&r, &q, EnumerationOrder::LastFastest).unwrap();
        for v in marg {
            assert!((v - 0.25f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn enumeration_orders_agree() {
        let grid = make_grid(4, 4).unwrap();
        let q = crate::estimators::q_matrix(&grid, 0.05, 3).unwrap();
        let r = Table::from_vec(5, 4, (0..20).map(|i| -((i * 7919) % 13) as f64 * 0.37).collect());
        let a = brute_force_marginal(&r, &q, EnumerationOrder::FirstFastest).unwrap();
        let b = brute_force_marginal(&r, &q, EnumerationOrder::LastFastest).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn size_guard() {
        let r = Table::zeros(9, 8);
        let q = Table::zeros(8, 8);
        assert!(brute_force_marginal(&r, &q, EnumerationOrder::FirstFastest).is_err());
        assert!(brute_force_marginal(&Table::zeros(4, 2), &Table::zeros(2, 2), EnumerationOrder::FirstFastest).is_err());
    }
}
