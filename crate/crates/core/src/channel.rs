//! Discrete Wiener phase-noise channel `y_k = x_k e^{jφ_k} + n_k`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constellation::{self, Constellation};
use crate::error::{Error, Result};
use crate::rng;

/// How the first sample `φ_0` of the phase walk is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPhase {
    Fixed(f64),
    /// Uniform over `[-π/n, π/n)` for the constellation's symmetry order `n`.
    UniformSector,
}

impl Default for InitialPhase {
    fn default() -> Self {
        InitialPhase::Fixed(0.0)
    }
}

/// Channel parameters. `snr_db = +∞` switches the additive noise off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Es/N0 in dB with Es = 1.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    /// Variance of the per-symbol phase increment in rad².
    pub sigma_theta_sq: f64,
    pub num_symbols: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial_phase: InitialPhase,
}

impl ChannelParams {
    pub fn new(snr_db: f64, sigma_theta_sq: f64, num_symbols: usize, seed: u64) -> Self {
        ChannelParams {
            snr_db,
            sigma_theta_sq,
            num_symbols,
            seed,
            initial_phase: InitialPhase::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_theta_sq >= 0.0) || !self.sigma_theta_sq.is_finite() {
            return Err(Error::invalid(format!(
                "phase-noise variance {} must be a finite value >= 0",
                self.sigma_theta_sq
            )));
        }
        if self.num_symbols == 0 {
            return Err(Error::invalid("num_symbols must be at least 1"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("SNR must be a number"));
        }
        Ok(())
    }
}

/// JSON has no infinity; a noiseless channel is stored as `null`.
mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One simulated transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    /// Row-major `K × m` transmitted bits.
    pub bits: Vec<u8>,
    pub bits_per_symbol: usize,
    pub tx_indices: Vec<usize>,
    pub tx_symbols: Vec<Complex64>,
    /// True (unwrapped) phase path; `phase_path[0]` is `φ_0`.
    pub phase_path: Vec<f64>,
    pub rx_symbols: Vec<Complex64>,
    pub params: ChannelParams,
    pub sigma_n_sq: f64,
}

impl ChannelTrace {
    pub fn len(&self) -> usize {
        self.rx_symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx_symbols.is_empty()
    }

    pub fn symbol_bits(&self, k: usize) -> &[u8] {
        &self.bits[k * self.bits_per_symbol..(k + 1) * self.bits_per_symbol]
    }

    /// Writes `k,bits,x_re,x_im,phi,y_re,y_im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "bits", "x_re", "x_im", "phi", "y_re", "y_im"])
            .map_err(csv_err)?;
        for k in 0..self.len() {
            let bits: String = self
                .symbol_bits(k)
                .iter()
                .map(|&b| if b == 1 { '1' } else { '0' })
                .collect();
            let x = self.tx_symbols[k];
            let y = self.rx_symbols[k];
            w.write_record([
                k.to_string(),
                bits,
                x.re.to_string(),
                x.im.to_string(),
                self.phase_path[k].to_string(),
                y.re.to_string(),
                y.im.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Complex noise variance for a unit-energy constellation: `10^(-snr_db/10)`.
/// Returns 0 for `snr_db = +∞`.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Wiener phase walk `φ_k = φ_{k-1} + θ_k`, `θ_k ~ N(0, σ_θ²)`, starting at `phi0`.
pub fn phase_path(sigma_theta_sq: f64, count: usize, seed: u64, phi0: f64) -> Result<Vec<f64>> {
    if !(sigma_theta_sq >= 0.0) {
        return Err(Error::invalid(format!(
            "phase-noise variance {sigma_theta_sq} must be >= 0"
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_PHASE);
    Ok(phase_path_with(sigma_theta_sq, count, phi0, &mut rng))
}

fn phase_path_with<R: Rng>(sigma_theta_sq: f64, count: usize, phi0: f64, rng: &mut R) -> Vec<f64> {
    let sigma = sigma_theta_sq.sqrt();
    let mut path = Vec::with_capacity(count);
    let mut phi = phi0;
    for k in 0..count {
        if k > 0 {
            let theta: f64 = rng.sample(StandardNormal);
            phi += sigma * theta;
        }
        path.push(phi);
    }
    path
}

/// Simulates one transmission through the channel.
pub fn transmit(c: &Constellation, params: &ChannelParams) -> Result<ChannelTrace> {
    params.validate()?;
    let k = params.num_symbols;
    let stream = constellation::sample(c, k, params.seed);
    let phi0 = match params.initial_phase {
        InitialPhase::Fixed(v) => v,
        InitialPhase::UniformSector => {
            let half = PI / c.sym_order() as f64;
            let mut r = rng::stream(params.seed, rng::STREAM_INITIAL_PHASE);
            -half + 2.0 * half * r.random::<f64>()
        }
    };
    let phase = phase_path(params.sigma_theta_sq, k, params.seed, phi0)?;
    let sigma_n_sq = snr_to_noise_var(params.snr_db);
    let component_sigma = (0.5 * sigma_n_sq).sqrt();
    let mut noise_rng = rng::stream(params.seed, rng::STREAM_NOISE);
    let rx = stream
        .symbols
        .iter()
        .zip(&phase)
        .map(|(&x, &phi)| {
            let clean = x * Complex64::from_polar(1.0, phi);
            if sigma_n_sq == 0.0 {
                clean
            } else {
                let re: f64 = noise_rng.sample(StandardNormal);
                let im: f64 = noise_rng.sample(StandardNormal);
                clean + Complex64::new(re, im) * component_sigma
            }
        })
        .collect();
    Ok(ChannelTrace {
        bits: stream.bits,
        bits_per_symbol: c.bits_per_symbol(),
        tx_indices: stream.indices,
        tx_symbols: stream.symbols,
        phase_path: phase,
        rx_symbols: rx,
        params: params.clone(),
        sigma_n_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_qam, shape_for_entropy};

    #[test]
    fn noise_variance_mapping() {
        assert_eq!(snr_to_noise_var(0.0), 1.0);
        assert!((snr_to_noise_var(10.0) - 0.1).abs() < 1e-16);
        assert!((snr_to_noise_var(20.0) - 0.01).abs() < 1e-17);
        assert_eq!(snr_to_noise_var(f64::INFINITY), 0.0);
    }

    #[test]
    fn constant_path_without_phase_noise() {
        let p = phase_path(0.0, 100, 3, 0.25).unwrap();
        assert!(p.iter().all(|&v| v == 0.25));
        assert!(phase_path(-1e-3, 10, 3, 0.0).is_err());
    }

    #[test]
    fn increment_variance() {
        let s2 = 1.18e-4;
        let p = phase_path(s2, 1_000_001, 11, 0.0).unwrap();
        let inc: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).collect();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / s2 - 1.0).abs() < 0.01, "var {var}");
        // normality sanity: skewness and excess kurtosis within 3σ bands
        let m3 = inc.iter().map(|d| (d - mean).powi(3)).sum::<f64>() / n;
        let m4 = inc.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / var.powf(1.5);
        let kurt = m4 / (var * var) - 3.0;
        assert!(skew.abs() < 3.0 * (6.0 / n).sqrt(), "skew {skew}");
        assert!(kurt.abs() < 3.0 * (24.0 / n).sqrt(), "kurt {kurt}");
    }

    #[test]
    fn random_walk_variance_grows_linearly() {
        let s2 = 1.18e-4;
        let k = 1usize << 15;
        // the sample variance of R end points has relative spread √(2/R);
        // R = 10^4 puts the 5% band at 3.5 standard errors
        let runs = 10_000u64;
        let ends: Vec<f64> = (0..runs)
            .map(|r| {
                let p = phase_path(s2, k + 1, 1000 + r, 0.0).unwrap();
                p[k] - p[0]
            })
            .collect();
        let var = ends.iter().map(|d| d * d).sum::<f64>() / ends.len() as f64;
        let expected = k as f64 * s2;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn noiseless_identity() {
        let c = build_qam(16).unwrap();
        let params = ChannelParams::new(f64::INFINITY, 0.0, 64, 5);
        let t = transmit(&c, &params).unwrap();
        assert_eq!(t.rx_symbols, t.tx_symbols);
    }

    #[test]
    fn constant_rotation_is_recovered_by_moment_estimator() {
        let c = build_qam(64).unwrap();
        let mut params = ChannelParams::new(20.0, 0.0, 1 << 15, 8);
        params.initial_phase = InitialPhase::Fixed(0.3);
        let t = transmit(&c, &params).unwrap();
        let mean: Complex64 = t
            .rx_symbols
            .iter()
            .zip(&t.tx_symbols)
            .map(|(y, x)| y * x.conj() / x.norm_sqr())
            .sum::<Complex64>()
            / t.len() as f64;
        assert!((mean.arg() - 0.3).abs() < 0.01);
    }

    #[test]
    fn noise_power_and_circularity() {
        let c = build_qam(64).unwrap();
        let (c, _) = shape_for_entropy(&c, 5.0).unwrap();
        let params = ChannelParams::new(15.0, 1e-4, 1 << 15, 21);
        let t = transmit(&c, &params).unwrap();
        let noise: Vec<Complex64> = t
            .rx_symbols
            .iter()
            .zip(t.tx_symbols.iter().zip(&t.phase_path))
            .map(|(y, (x, &phi))| y - x * Complex64::from_polar(1.0, phi))
            .collect();
        let n = noise.len() as f64;
        let power = noise.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        assert!((power / t.sigma_n_sq - 1.0).abs() < 0.02, "power {power}");
        let second: Complex64 = noise.iter().map(|v| v * v).sum::<Complex64>() / n;
        // std of the pseudo-covariance estimate is σ²/√n
        assert!(second.norm() < 4.0 * t.sigma_n_sq / n.sqrt());
    }

    #[test]
    fn fixed_seed_reproducible() {
        let c = build_qam(64).unwrap();
        let mut params = ChannelParams::new(18.0, 1e-3, 500, 77);
        params.initial_phase = InitialPhase::UniformSector;
        let a = transmit(&c, &params).unwrap();
        let b = transmit(&c, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.phase_path[0].abs() <= PI / 4.0);
        params.seed = 78;
        assert_ne!(transmit(&c, &params).unwrap().rx_symbols, a.rx_symbols);
    }

    #[test]
    fn csv_export_has_one_row_per_symbol() {
        let c = build_qam(4).unwrap();
        let t = transmit(&c, &ChannelParams::new(10.0, 1e-4, 5, 1)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "k,bits,x_re,x_im,phi,y_re,y_im");
        assert_eq!(lines[1].split(',').count(), 7);
    }

    #[test]
    fn params_json_keeps_noiseless_marker() {
        let p = ChannelParams::new(f64::INFINITY, 0.0, 4, 1);
        let s = serde_json::to_string(&p).unwrap();
        let back: ChannelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
