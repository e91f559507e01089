//! Weighted blind phase search with a softmin readout.
//!
//! Per symbol, `D_m = Σ_i w_i d_{i,m}` over the window, then the estimate is
//! `arg(Σ_m softmin_t(D)_m e^{jnφ_m}) / n`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::factors::distance_table;
use super::{argmin, EstimatorConfig, PhaseGrid, Table};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::wrap_to_period;

/// Below this magnitude the complex readout is treated as zero and the hard
/// arg-min phase is returned instead.
pub const READOUT_FLOOR: f64 = 1e-12;

/// Window weights and softmin temperature of the weighted BPS.
///
/// The raw (unconstrained) values are authoritative: `weights = softmax(raw_weights)`
/// and `temperature = exp(raw_temp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpsOptParams {
    pub weights: Vec<f64>,
    pub temperature: f64,
    pub raw_weights: Vec<f64>,
    pub raw_temp: f64,
}

impl BpsOptParams {
    pub fn from_raw(raw_weights: Vec<f64>, raw_temp: f64) -> Result<Self> {
        if raw_weights.is_empty() || raw_weights.len() % 2 == 0 {
            return Err(Error::invalid(format!(
                "weight vector length {} is not 2N+1",
                raw_weights.len()
            )));
        }
        if raw_weights.iter().any(|v| !v.is_finite()) || !raw_temp.is_finite() {
            return Err(Error::invalid("raw parameters must be finite"));
        }
        let max = raw_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw_weights.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights = exps.iter().map(|e| e / total).collect();
        let temperature = raw_temp.exp();
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("temperature {temperature} out of range")));
        }
        Ok(BpsOptParams {
            weights,
            temperature,
            raw_weights,
            raw_temp,
        })
    }

    /// Uniform weights `1/(2N+1)` with temperature `t`.
    pub fn uniform(half_window: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature {temperature} must be positive"
            )));
        }
        BpsOptParams::from_raw(vec![0.0; 2 * half_window + 1], temperature.ln())
    }

    pub fn half_window(&self) -> usize {
        self.weights.len() / 2
    }

    /// Re-derives the constrained values from the raw ones, rejecting
    /// documents whose stored weights disagree.
    pub fn validated(self) -> Result<Self> {
        let fresh = BpsOptParams::from_raw(self.raw_weights.clone(), self.raw_temp)?;
        let consistent = fresh.weights.len() == self.weights.len()
            && fresh
                .weights
                .iter()
                .zip(&self.weights)
                .all(|(a, b)| (a - b).abs() < 1e-9)
            && (fresh.temperature - self.temperature).abs() <= 1e-9 * fresh.temperature;
        if !consistent {
            return Err(Error::invalid("weights/temperature disagree with raw parameters"));
        }
        Ok(fresh)
    }
}

/// `exp(-x_i/t) / Σ_j exp(-x_j/t)`, shifted by the minimum for stability.
pub fn softmin(x: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    softmin_into(x, t, &mut out);
    out
}

pub(crate) fn softmin_into(x: &[f64], t: f64, out: &mut [f64]) {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (-(v - min) / t).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Complex readout `Σ_m p_m e^{jnφ_m}`.
pub fn softmin_readout(probs: &[f64], grid: &PhaseGrid) -> Complex64 {
    let n = grid.sym_order() as f64;
    probs
        .iter()
        .zip(grid.phases())
        .map(|(&p, &phi)| Complex64::from_polar(p, n * phi))
        .sum()
}

/// Fills `out` with the window-weighted distances for symbol `k`, normalized
/// by the weight mass available inside the sequence. Returns that mass.
pub(crate) fn weighted_distances(d: &Table, weights: &[f64], k: usize, out: &mut [f64]) -> f64 {
    let half = weights.len() / 2;
    let lo = k.saturating_sub(half);
    let hi = (k + half).min(d.rows() - 1);
    out.fill(0.0);
    let mut mass = 0.0;
    for i in lo..=hi {
        let w = weights[i + half - k];
        mass += w;
        for (o, v) in out.iter_mut().zip(d.row(i)) {
            *o += w * v;
        }
    }
    for o in out.iter_mut() {
        *o /= mass;
    }
    mass
}

/// Maps a complex readout to a phase in `[-π/n, π/n)`, falling back to the
/// hard decision when the readout vanishes.
pub(crate) fn readout_phase(z: Complex64, dists: &[f64], grid: &PhaseGrid) -> f64 {
    if z.norm() < READOUT_FLOOR {
        grid.phases()[argmin(dists)]
    } else {
        wrap_to_period(z.arg() / grid.sym_order() as f64, grid.period())
    }
}

/// Weighted softmin BPS estimate for every symbol.
pub fn bps_opt_estimate(
    y: &[Complex64],
    cfg: &EstimatorConfig,
    c: &Constellation,
    params: &BpsOptParams,
) -> Result<Vec<f64>> {
    if params.weights.len() != 2 * cfg.half_window + 1 {
        return Err(Error::invalid(format!(
            "expected {} weights, got {}",
            2 * cfg.half_window + 1,
            params.weights.len()
        )));
    }
    if !(params.temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if y.is_empty() {
        return Ok(Vec::new());
    }
    let d = distance_table(y, &cfg.grid, c);
    let m = cfg.grid.len();
    let mut dists = vec![0.0; m];
    let mut probs = vec![0.0; m];
    Ok((0..y.len())
        .map(|k| {
            weighted_distances(&d, &params.weights, k, &mut dists);
            softmin_into(&dists, params.temperature, &mut probs);
            readout_phase(softmin_readout(&probs, &cfg.grid), &dists, &cfg.grid)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{transmit, ChannelParams};
    use crate::constellation::build_qam;
    use crate::estimators::{bps_estimate, make_grid};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn softmin_examples() {
        assert_eq!(softmin(&[0.0, 0.0], 3.0), vec![0.5, 0.5]);
        let p = softmin(&[0.0, 1000.0], 1.0);
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
    }

    /// Direct evaluation without the minimum shift, with the normalizer
    /// accumulated by compensated summation.
    fn softmin_oracle(x: &[f64], t: f64) -> Vec<f64> {
        let e: Vec<f64> = x.iter().map(|v| (-v / t).exp()).collect();
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for v in &e {
            let y = v - comp;
            let tt = s + y;
            comp = (tt - s) - y;
            s = tt;
        }
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn softmin_matches_direct_evaluation() {
        let x = [0.31, -0.72, 1.4, 0.05, 2.2, -0.1];
        let want = softmin_oracle(&x, 0.37);
        for (a, b) in softmin(&x, 0.37).iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn one_hot_softmin_returns_grid_phase() {
        let grid = make_grid(15, 4).unwrap();
        for m in 0..15 {
            let mut d = vec![1.0; 15];
            d[m] = 0.0;
            let p = softmin(&d, 1e-6);
            let phi = readout_phase(softmin_readout(&p, &grid), &d, &grid);
            assert!((phi - grid.phases()[m]).abs() < 1e-12, "m={m}: {phi}");
        }
    }

    #[test]
    fn flat_softmin_falls_back_to_hard_decision() {
        let grid = make_grid(16, 4).unwrap();
        let d = vec![0.25; 16];
        let p = softmin(&d, 1e9);
        let z = softmin_readout(&p, &grid);
        assert!(z.norm() < READOUT_FLOOR);
        assert_eq!(readout_phase(z, &d, &grid), grid.phases()[0]);
    }

    #[test]
    fn params_validation() {
        assert!(BpsOptParams::uniform(3, 0.0).is_err());
        assert!(BpsOptParams::from_raw(vec![0.0; 4], 0.0).is_err());
        let p = BpsOptParams::uniform(3, 0.1).unwrap();
        assert_eq!(p.half_window(), 3);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.temperature - 0.1).abs() < 1e-15);
        let json = serde_json::to_string(&p).unwrap();
        let back: BpsOptParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back.validated().unwrap(), p);
        let mut bad = p.clone();
        bad.weights[0] = 0.9;
        assert!(bad.validated().is_err());
    }

    #[test]
    fn wrong_window_length_rejected() {
        let c = build_qam(4).unwrap();
        let cfg = EstimatorConfig::new(2, make_grid(8, 4).unwrap(), 0.1, 1e-4);
        let p = BpsOptParams::uniform(3, 0.1).unwrap();
        assert!(bps_opt_estimate(&[Complex64::new(1.0, 0.0)], &cfg, &c, &p).is_err());
    }

    #[test]
    fn small_temperature_tracks_bps() {
        let c = build_qam(64).unwrap();
        let t = transmit(&c, &ChannelParams::new(20.0, 1.18e-4, 2000, 4)).unwrap();
        let cfg = EstimatorConfig::new(8, make_grid(15, 4).unwrap(), t.sigma_n_sq, 1.18e-4);
        let p = BpsOptParams::uniform(8, 1e-6).unwrap();
        let a = bps_opt_estimate(&t.rx_symbols, &cfg, &c, &p).unwrap();
        let b = bps_estimate(&t.rx_symbols, &cfg, &c);
        let close = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| wrap_to_period(*x - *y, PI / 2.0).abs() < 1e-6)
            .count();
        assert!(close as f64 >= 0.99 * a.len() as f64);
    }

    proptest! {
        #[test]
        fn softmin_is_a_distribution(x in proptest::collection::vec(-1e3f64..1e3, 1..40), t in 1e-6f64..1e3) {
            let p = softmin(&x, t);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmin_shift_invariant(x in proptest::collection::vec(0.0f64..2.0, 15), shift in -5.0f64..5.0, t in 0.01f64..1.0) {
            let grid = make_grid(15, 4).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let a = readout_phase(softmin_readout(&softmin(&x, t), &grid), &x, &grid);
            let b = readout_phase(softmin_readout(&softmin(&shifted, t), &grid), &shifted, &grid);
            prop_assert!(wrap_to_period(a - b, PI / 2.0).abs() < 1e-9);
        }
    }
}
