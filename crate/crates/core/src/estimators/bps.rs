use num_complex::Complex64;

use super::factors::{distance_table, r_table};
use super::{argmax, argmin, EstimatorConfig, Table};
use crate::constellation::Constellation;
use crate::error::Result;

/// Sums of `table` rows over the window `k-N..=k+N`, truncated at the edges.
pub fn windowed_sums(table: &Table, half_window: usize) -> Table {
    let rows = table.rows();
    let cols = table.cols();
    let mut out = Table::zeros(rows, cols);
    for k in 0..rows {
        let lo = k.saturating_sub(half_window);
        let hi = (k + half_window).min(rows.saturating_sub(1));
        let acc = out.row_mut(k);
        for i in lo..=hi {
            for (a, v) in acc.iter_mut().zip(table.row(i)) {
                *a += v;
            }
        }
    }
    out
}

/// Blind phase search: per symbol, the test phase minimizing the windowed sum
/// of hard-decision distances.
pub fn bps_estimate(y: &[Complex64], cfg: &EstimatorConfig, c: &Constellation) -> Vec<f64> {
    let d = distance_table(y, &cfg.grid, c);
    let sums = windowed_sums(&d, cfg.half_window);
    (0..y.len())
        .map(|k| cfg.grid.phases()[argmin(sums.row(k))])
        .collect()
}

/// Constant-phase MAP variant: per symbol, the test phase maximizing the
/// windowed sum of `log R(y_i, φ)`.
pub fn cpn_estimate(y: &[Complex64], cfg: &EstimatorConfig, c: &Constellation) -> Result<Vec<f64>> {
    cfg.validate()?;
    let r = r_table(y, &cfg.grid, c, cfg.sigma_n_sq)?;
    let sums = windowed_sums(&r, cfg.half_window);
    Ok((0..y.len())
        .map(|k| cfg.grid.phases()[argmax(sums.row(k))])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{transmit, ChannelParams, InitialPhase};
    use crate::constellation::{build_qam, shape_for_entropy};
    use crate::estimators::make_grid;
    use crate::wrap_to_period;

    fn cfg(n: usize, m: usize) -> EstimatorConfig {
        EstimatorConfig::new(n, make_grid(m, 4).unwrap(), 0.01, 1e-4)
    }

    #[test]
    fn windowed_sum_truncates_at_edges() {
        let t = Table::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let s = windowed_sums(&t, 1);
        assert_eq!(s.as_slice(), &[3.0, 6.0, 9.0, 7.0]);
        let s = windowed_sums(&t, 10);
        assert_eq!(s.as_slice(), &[10.0; 4]);
    }

    #[test]
    fn noiseless_zero_phase_gives_nearest_grid_point() {
        let c = build_qam(64).unwrap();
        let t = transmit(&c, &ChannelParams::new(f64::INFINITY, 0.0, 300, 2)).unwrap();
        for m in [15, 16, 60] {
            let cfg = cfg(8, m);
            let est = bps_estimate(&t.rx_symbols, &cfg, &c);
            let want = cfg.grid.phases()[cfg.grid.nearest_index(0.0)];
            assert!(est.iter().all(|&e| e == want), "M={m}");
        }
    }

    #[test]
    fn noiseless_constant_phase_exhaustive() {
        let c = build_qam(16).unwrap();
        let cfg = cfg(5, 15);
        let step = cfg.grid.step();
        // offsets avoid the exact midpoints between grid phases
        for i in 0..40 {
            let phi = -std::f64::consts::FRAC_PI_4 + (i as f64 + 0.3) * step * 15.0 / 40.0;
            let mut p = ChannelParams::new(f64::INFINITY, 0.0, 80, 100 + i as u64);
            p.initial_phase = InitialPhase::Fixed(phi);
            let t = transmit(&c, &p).unwrap();
            let want = cfg.grid.phases()[cfg.grid.nearest_index(phi)];
            for (m, est) in [
                bps_estimate(&t.rx_symbols, &cfg, &c),
                cpn_estimate(&t.rx_symbols, &{ let mut c2 = cfg.clone(); c2.sigma_n_sq = 1e-3; c2 }, &c).unwrap(),
            ]
            .iter()
            .enumerate()
            {
                for k in 5..75 {
                    assert_eq!(est[k], want, "estimator {m} phi {phi} k {k}");
                }
            }
        }
    }

    #[test]
    fn single_symbol_window() {
        let c = build_qam(64).unwrap();
        let cfg = cfg(0, 15);
        let y: Vec<Complex64> = (0..15)
            .map(|m| c.points()[9] * Complex64::from_polar(1.0, cfg.grid.phases()[m]))
            .collect();
        let est = bps_estimate(&y, &cfg, &c);
        for (m, e) in est.iter().enumerate() {
            assert_eq!(*e, cfg.grid.phases()[m]);
        }
    }

    #[test]
    fn cpn_agrees_with_bps_at_high_snr_uniform() {
        let c = build_qam(64).unwrap();
        let t = transmit(&c, &ChannelParams::new(25.0, 1e-4, 1 << 13, 3)).unwrap();
        let mut cfg = cfg(16, 30);
        cfg.sigma_n_sq = t.sigma_n_sq;
        let a = bps_estimate(&t.rx_symbols, &cfg, &c);
        let b = cpn_estimate(&t.rx_symbols, &cfg, &c).unwrap();
        let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        assert!(same as f64 >= 0.99 * a.len() as f64, "{same}/{}", a.len());
    }

    #[test]
    fn cpn_differs_from_bps_for_shaped_moderate_snr() {
        let c = build_qam(64).unwrap();
        let (c, _) = shape_for_entropy(&c, 4.0).unwrap();
        let t = transmit(&c, &ChannelParams::new(14.0, 1e-4, 1 << 13, 3)).unwrap();
        let mut cfg = cfg(16, 30);
        cfg.sigma_n_sq = t.sigma_n_sq;
        let a = bps_estimate(&t.rx_symbols, &cfg, &c);
        let b = cpn_estimate(&t.rx_symbols, &cfg, &c).unwrap();
        let differ = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert!(differ > 0);
    }

    #[test]
    fn outputs_stay_in_sector() {
        let c = build_qam(16).unwrap();
        let t = transmit(&c, &ChannelParams::new(8.0, 1e-3, 2000, 9)).unwrap();
        let cfg = cfg(10, 32);
        for e in bps_estimate(&t.rx_symbols, &cfg, &c) {
            assert_eq!(wrap_to_period(e, cfg.grid.period()), e);
        }
    }
}
