//! Sum-product message passing on the chain factor graph of the phase
//! process. Messages live in the log domain and are shifted to a maximum of
//! zero after every step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::factors::FactorTables;
use super::{argmax, EstimatorConfig, Table};
use crate::constellation::Constellation;
use crate::error::Result;

/// Sums below this are recomputed with an explicit log-sum-exp.
const LINEAR_UNDERFLOW: f64 = 1e-280;

/// Log-domain terms this far below the row maximum are below 1e-26 relative
/// and are not summed.
const NEGLIGIBLE_LOG: f64 = -60.0;

/// Values below this are set to zero before the linear product: they cannot
/// move a sum above `LINEAR_UNDERFLOW`, and subnormal arithmetic is slow.
const LINEAR_FLUSH: f64 = 1e-300;

#[inline]
fn flush(v: f64) -> f64 {
    if v < LINEAR_FLUSH {
        0.0
    } else {
        v
    }
}

/// Dot product over eight independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Which message schedule `map_bp` uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BpMode {
    /// One independent forward/backward pass over `k-N..=k+N` per output symbol.
    #[default]
    Windowed,
    /// A single forward-backward sweep over the whole sequence.
    FullSequence,
}

/// Transition kernel held both as log entries and their exponentials.
#[derive(Debug, Clone)]
pub struct Transition {
    size: usize,
    log: Vec<f64>,
    lin: Vec<f64>,
}

impl Transition {
    pub fn new(log_q: &Table) -> Self {
        assert_eq!(log_q.rows(), log_q.cols());
        Transition {
            size: log_q.rows(),
            log: log_q.as_slice().to_vec(),
            lin: log_q.as_slice().iter().map(|v| flush(v.exp())).collect(),
        }
    }

    /// `out ← log(Q · exp(msg + log_r))`, normalized to a maximum of zero.
    ///
    /// The matrix-vector product runs on exponentials shifted by the input
    /// maximum; rows whose linear sum underflows are redone in the log domain,
    /// so every output entry carries full relative precision.
    pub fn propagate(&self, msg: &[f64], log_r: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let m = self.size;
        scratch.resize(2 * m, 0.0);
        let (shifted, exps) = scratch.split_at_mut(m);
        for ((s, a), b) in shifted.iter_mut().zip(msg).zip(log_r) {
            *s = a + b;
        }
        let vmax = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (s, e) in shifted.iter_mut().zip(exps.iter_mut()) {
            *s -= vmax;
            *e = flush(s.exp());
        }
        for (i, o) in out.iter_mut().enumerate() {
            let s = dot(&self.lin[i * m..(i + 1) * m], exps);
            *o = if s > LINEAR_UNDERFLOW {
                s.ln()
            } else {
                let log_row = &self.log[i * m..(i + 1) * m];
                let best = log_row
                    .iter()
                    .zip(shifted.iter())
                    .map(|(q, v)| q + v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut rest = 0.0;
                for (q, v) in log_row.iter().zip(shifted.iter()) {
                    let t = q + v - best;
                    if t > NEGLIGIBLE_LOG {
                        rest += t.exp();
                    }
                }
                best + rest.ln()
            };
        }
        let omax = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for o in out.iter_mut() {
            *o -= omax;
        }
    }
}

fn normalize_log(v: &mut [f64]) {
    let norm = crate::log_sum_exp(v);
    for x in v.iter_mut() {
        *x -= norm;
    }
}

/// Normalized log posterior marginals `log P(φ_k = φ_m | window)` for every
/// symbol (`K × M`).
pub fn map_bp_log_marginals(tables: &FactorTables, half_window: usize, mode: BpMode) -> Table {
    match mode {
        BpMode::Windowed => windowed_marginals(tables, half_window),
        BpMode::FullSequence => full_marginals(tables),
    }
}

fn windowed_marginals(tables: &FactorTables, half_window: usize) -> Table {
    let r = &tables.r_table;
    let kk = r.rows();
    let m = r.cols();
    let trans = Transition::new(&tables.q_matrix);
    let mut out = Table::zeros(kk, m);
    let mut fwd = vec![0.0; m];
    let mut bwd = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    let mut scratch = Vec::with_capacity(m);
    for k in 0..kk {
        let lo = k.saturating_sub(half_window);
        let hi = (k + half_window).min(kk - 1);
        fwd.fill(0.0);
        for i in lo..k {
            trans.propagate(&fwd, r.row(i), &mut tmp, &mut scratch);
            std::mem::swap(&mut fwd, &mut tmp);
        }
        bwd.fill(0.0);
        for i in ((k + 1)..=hi).rev() {
            trans.propagate(&bwd, r.row(i), &mut tmp, &mut scratch);
            std::mem::swap(&mut bwd, &mut tmp);
        }
        let row = out.row_mut(k);
        for (j, v) in row.iter_mut().enumerate() {
            *v = fwd[j] + r.get(k, j) + bwd[j];
        }
        normalize_log(row);
    }
    out
}

fn full_marginals(tables: &FactorTables) -> Table {
    let r = &tables.r_table;
    let kk = r.rows();
    let m = r.cols();
    let trans = Transition::new(&tables.q_matrix);
    let mut scratch = Vec::with_capacity(m);
    let mut alpha = Table::zeros(kk, m);
    let mut beta = Table::zeros(kk, m);
    let mut tmp = vec![0.0; m];
    for k in 1..kk {
        let prev = alpha.row(k - 1).to_vec();
        trans.propagate(&prev, r.row(k - 1), &mut tmp, &mut scratch);
        alpha.row_mut(k).copy_from_slice(&tmp);
    }
    for k in (0..kk.saturating_sub(1)).rev() {
        let next = beta.row(k + 1).to_vec();
        trans.propagate(&next, r.row(k + 1), &mut tmp, &mut scratch);
        beta.row_mut(k).copy_from_slice(&tmp);
    }
    let mut out = Table::zeros(kk, m);
    for k in 0..kk {
        let row = out.row_mut(k);
        for (j, v) in row.iter_mut().enumerate() {
            *v = alpha.get(k, j) + r.get(k, j) + beta.get(k, j);
        }
        normalize_log(row);
    }
    out
}

/// Approximate MAP phase estimate by belief propagation: the grid phase
/// maximizing each symbol's marginal.
pub fn map_bp_estimate(
    y: &[Complex64],
    cfg: &EstimatorConfig,
    c: &Constellation,
) -> Result<Vec<f64>> {
    let tables = FactorTables::build(y, cfg, c)?;
    let marg = map_bp_log_marginals(&tables, cfg.half_window, cfg.bp_mode);
    Ok((0..y.len())
        .map(|k| cfg.grid.phases()[argmax(marg.row(k))])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{transmit, ChannelParams};
    use crate::constellation::{build_qam, shape_for_entropy};
    use crate::estimators::{cpn_estimate, make_grid, r_table};

    #[test]
    fn propagate_matches_direct_log_sum_exp() {
        let grid = make_grid(6, 4).unwrap();
        for s2 in [1e-5, 1e-3, 0.1] {
            let q = crate::estimators::q_matrix(&grid, s2, 3).unwrap();
            let t = Transition::new(&q);
            let msg = [0.0, -3.0, -800.0, -2.0, -1e4, -0.5];
            let lr = [-1.0, -900.0, 0.0, -7.0, -2.0, -40.0];
            let mut out = vec![0.0; 6];
            t.propagate(&msg, &lr, &mut out, &mut Vec::new());
            let mut want: Vec<f64> = (0..6)
                .map(|i| {
                    let terms: Vec<f64> = (0..6).map(|j| q.get(i, j) + msg[j] + lr[j]).collect();
                    crate::log_sum_exp(&terms)
                })
                .collect();
            let wmax = want.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            want.iter_mut().for_each(|v| *v -= wmax);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b} (σ²={s2})");
            }
        }
    }

    #[test]
    fn full_sequence_agrees_with_covering_window() {
        let c = build_qam(16).unwrap();
        let t = transmit(&c, &ChannelParams::new(12.0, 1e-3, 40, 5)).unwrap();
        let mut cfg = EstimatorConfig::new(40, make_grid(10, 4).unwrap(), t.sigma_n_sq, 1e-3);
        let tables = FactorTables::build(&t.rx_symbols, &cfg, &c).unwrap();
        let a = map_bp_log_marginals(&tables, 40, BpMode::Windowed);
        let b = map_bp_log_marginals(&tables, 40, BpMode::FullSequence);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        let w = map_bp_estimate(&t.rx_symbols, &cfg, &c).unwrap();
        cfg.bp_mode = BpMode::FullSequence;
        assert_eq!(w, map_bp_estimate(&t.rx_symbols, &cfg, &c).unwrap());
    }

    #[test]
    fn flat_transition_reduces_to_per_symbol_likelihood() {
        let c = build_qam(16).unwrap();
        let t = transmit(&c, &ChannelParams::new(10.0, 1e-3, 200, 8)).unwrap();
        let cfg = EstimatorConfig::new(6, make_grid(12, 4).unwrap(), t.sigma_n_sq, 1e6);
        let est = map_bp_estimate(&t.rx_symbols, &cfg, &c).unwrap();
        let r = r_table(&t.rx_symbols, &cfg.grid, &c, cfg.sigma_n_sq).unwrap();
        for (k, e) in est.iter().enumerate() {
            assert_eq!(*e, cfg.grid.phases()[argmax(r.row(k))]);
        }
    }

    #[test]
    fn tiny_phase_noise_converges_to_cpn() {
        let c = build_qam(64).unwrap();
        let (c, _) = shape_for_entropy(&c, 5.0).unwrap();
        let t = transmit(&c, &ChannelParams::new(16.0, 0.0, 1500, 12)).unwrap();
        let cfg = EstimatorConfig::new(10, make_grid(15, 4).unwrap(), t.sigma_n_sq, 1e-10);
        let a = map_bp_estimate(&t.rx_symbols, &cfg, &c).unwrap();
        let b = cpn_estimate(&t.rx_symbols, &cfg, &c).unwrap();
        assert_eq!(a, b);
    }
}
