//! Phase unwrapping, data-aided cycle-slip removal and derotation.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A change in the integer number of `2π/n` turns removed by the data-aided
/// correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlipEvent {
    pub index: usize,
    /// Multiple of `2π/n` subtracted from this symbol on.
    pub multiple: i64,
    /// Change relative to the previous symbol.
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedTrace {
    pub phi_hat_unwrapped: Vec<f64>,
    pub phi_hat_corrected: Vec<f64>,
    pub x_hat: Vec<Complex64>,
    pub slip_events: Vec<SlipEvent>,
}

fn period(n: usize) -> f64 {
    2.0 * PI / n as f64
}

/// Unwraps raw sector estimates: each successive difference is brought into
/// `(-π/n, π/n]` by adding a multiple of `2π/n`; the first sample is kept.
pub fn unwrap(raw: &[f64], n: usize) -> Vec<f64> {
    let p = period(n);
    let mut out = Vec::with_capacity(raw.len());
    let mut turns = 0.0f64;
    for (k, &v) in raw.iter().enumerate() {
        if k > 0 {
            let diff = v - raw[k - 1];
            // brings diff + turns·p into (-p/2, p/2]
            turns += -(diff / p - 0.5).ceil();
        }
        out.push(v + turns * p);
    }
    out
}

/// Fully data-aided slip removal: every symbol is shifted by the multiple of
/// `2π/n` that brings it closest to the true phase.
pub fn cycle_slip_correct(unwrapped: &[f64], phi_true: &[f64], n: usize) -> Result<(Vec<f64>, Vec<SlipEvent>)> {
    if unwrapped.len() != phi_true.len() {
        return Err(Error::invalid("estimate and reference differ in length"));
    }
    let p = period(n);
    let mut corrected = Vec::with_capacity(unwrapped.len());
    let mut events = Vec::new();
    let mut prev: Option<i64> = None;
    for (k, (&u, &t)) in unwrapped.iter().zip(phi_true).enumerate() {
        let q = ((u - t) / p + 0.5).floor();
        let qi = q as i64;
        if let Some(last) = prev {
            if last != qi {
                events.push(SlipEvent {
                    index: k,
                    multiple: qi,
                    delta: qi - last,
                });
            }
        }
        prev = Some(qi);
        corrected.push(u - q * p);
    }
    Ok((corrected, events))
}

/// `x̂_k = y_k e^{-jφ_k}`.
pub fn derotate(y: &[Complex64], phi: &[f64]) -> Result<Vec<Complex64>> {
    if y.len() != phi.len() {
        return Err(Error::invalid("symbols and phases differ in length"));
    }
    Ok(y.iter()
        .zip(phi)
        .map(|(v, &p)| v * Complex64::from_polar(1.0, -p))
        .collect())
}

/// Unwrap, correct against the true phase, and derotate.
pub fn correct(y: &[Complex64], raw: &[f64], phi_true: &[f64], n: usize) -> Result<CorrectedTrace> {
    let phi_hat_unwrapped = unwrap(raw, n);
    let (phi_hat_corrected, slip_events) = cycle_slip_correct(&phi_hat_unwrapped, phi_true, n)?;
    let x_hat = derotate(y, &phi_hat_corrected)?;
    Ok(CorrectedTrace {
        phi_hat_unwrapped,
        phi_hat_corrected,
        x_hat,
        slip_events,
    })
}

impl CorrectedTrace {
    /// Writes `k,phi_true,phi_raw,phi_unwrapped,phi_corrected` rows.
    pub fn write_csv<W: Write>(&self, out: W, phi_true: &[f64], phi_raw: &[f64]) -> Result<()> {
        let err = crate::channel::csv_err;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "phi_true", "phi_raw", "phi_unwrapped", "phi_corrected"])
            .map_err(err)?;
        for k in 0..self.phi_hat_corrected.len() {
            w.write_record([
                k.to_string(),
                phi_true[k].to_string(),
                phi_raw[k].to_string(),
                self.phi_hat_unwrapped[k].to_string(),
                self.phi_hat_corrected[k].to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}
