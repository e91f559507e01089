//! Mismatched circular-Gaussian demapper and bit-wise mutual information.
//!
//! LLRs follow `L = log P(b=0 | x̂) / P(b=1 | x̂)` with the symbol priors
//! included, and the BMI is
//! `H(X) - Σ_b E[log2(1 + exp(-(1-2b) L_b))]`.

use std::f64::consts::LN_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};

pub const DEFAULT_LLR_CLAMP: f64 = 50.0;

/// Search range of the demapper variance.
pub const DEMAPPER_SIGMA_MIN: f64 = 1e-6;
pub const DEMAPPER_SIGMA_MAX: f64 = 10.0;
/// Width of the final bracket in `ln σ²`.
pub const DEMAPPER_LOG_TOL: f64 = 1e-4;

/// Bit LLRs for a block of symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrFrame {
    /// Row-major `K × m`.
    pub llrs: Vec<f64>,
    pub bits_per_symbol: usize,
    pub clamp: f64,
}

impl LlrFrame {
    pub fn num_symbols(&self) -> usize {
        self.llrs.len() / self.bits_per_symbol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmiReport {
    /// BMI in bits per symbol, floored at zero.
    pub bmi_bits: f64,
    /// BMI before flooring; may be negative for badly mismatched metrics.
    pub bmi_raw_bits: f64,
    pub entropy_bits: f64,
    pub demapper_sigma_sq: f64,
    pub num_symbols_scored: usize,
    pub edge_excluded: bool,
    /// Set when `bmi_raw_bits < 0`.
    pub negative_clamped: bool,
    /// Set when all scored symbols are identical, so the variance search is
    /// meaningless.
    pub degenerate: bool,
}

/// Squared distances from every received symbol to every constellation
/// point, cached so that many demapper variances can be evaluated cheaply.
pub struct DemapperFrame<'a> {
    c: &'a Constellation,
    dists: Vec<f64>,
    bits: &'a [u8],
    log_priors: Vec<f64>,
    num_symbols: usize,
}

impl<'a> DemapperFrame<'a> {
    pub fn new(x_hat: &[Complex64], bits: &'a [u8], c: &'a Constellation) -> Result<Self> {
        let m = c.bits_per_symbol();
        if bits.len() != x_hat.len() * m {
            return Err(Error::invalid(format!(
                "{} bits for {} symbols of {m} bits",
                bits.len(),
                x_hat.len()
            )));
        }
        let mut dists = Vec::with_capacity(x_hat.len() * c.len());
        for y in x_hat {
            dists.extend(c.points().iter().map(|x| (y - x).norm_sqr()));
        }
        Ok(DemapperFrame {
            c,
            dists,
            bits,
            log_priors: c.probs().iter().map(|p| p.ln()).collect(),
            num_symbols: x_hat.len(),
        })
    }

    fn llr_row(&self, k: usize, sigma_sq: f64, clamp: f64, terms: &mut [f64], out: &mut [f64]) {
        let c = self.c;
        let size = c.len();
        let row = &self.dists[k * size..(k + 1) * size];
        let inv = 1.0 / sigma_sq;
        let mut max = f64::NEG_INFINITY;
        for ((t, d), lp) in terms.iter_mut().zip(row).zip(&self.log_priors) {
            *t = lp - d * inv;
            max = max.max(*t);
        }
        let mut sums = [[0.0f64; 2]; 32];
        for (i, t) in terms.iter().enumerate() {
            let e = (t - max).exp();
            for (b, s) in sums.iter_mut().enumerate().take(out.len()) {
                s[c.bit(i, b) as usize] += e;
            }
        }
        for (b, o) in out.iter_mut().enumerate() {
            let [s0, s1] = sums[b];
            let l = if s0 > 0.0 && s1 > 0.0 {
                s0.ln() - s1.ln()
            } else {
                self.subset_lse(terms, b, 0) - self.subset_lse(terms, b, 1)
            };
            *o = l.clamp(-clamp, clamp);
        }
    }

    fn subset_lse(&self, terms: &[f64], b: usize, value: u8) -> f64 {
        let subset: Vec<f64> = terms
            .iter()
            .enumerate()
            .filter(|(i, _)| self.c.bit(*i, b) == value)
            .map(|(_, t)| *t)
            .collect();
        crate::log_sum_exp(&subset)
    }

    /// LLRs of every symbol at demapper variance `sigma_sq`.
    pub fn llrs(&self, sigma_sq: f64, clamp: f64) -> LlrFrame {
        let m = self.c.bits_per_symbol();
        let mut llrs = vec![0.0; self.num_symbols * m];
        let mut terms = vec![0.0; self.c.len()];
        for k in 0..self.num_symbols {
            self.llr_row(k, sigma_sq, clamp, &mut terms, &mut llrs[k * m..(k + 1) * m]);
        }
        LlrFrame {
            llrs,
            bits_per_symbol: m,
            clamp,
        }
    }

    /// Raw BMI (not floored) over symbols `range` at variance `sigma_sq`.
    pub fn bmi_at(&self, sigma_sq: f64, range: std::ops::Range<usize>) -> f64 {
        let m = self.c.bits_per_symbol();
        let mut terms = vec![0.0; self.c.len()];
        let mut row = vec![0.0; m];
        let mut penalty = 0.0;
        for k in range.clone() {
            self.llr_row(k, sigma_sq, DEFAULT_LLR_CLAMP, &mut terms, &mut row);
            for (b, l) in row.iter().enumerate() {
                penalty += bit_penalty(self.bits[k * m + b], *l);
            }
        }
        self.c.entropy() - penalty / (LN_2 * range.len().max(1) as f64)
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }
}

/// `ln(1 + exp(-(1-2b) L))`, evaluated stably.
#[inline]
fn bit_penalty(bit: u8, llr: f64) -> f64 {
    let z = if bit == 0 { -llr } else { llr };
    softplus(z)
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Demapper LLRs for `x_hat` at variance `sigma_sq`, clamped to `±clamp`.
pub fn llrs(x_hat: &[Complex64], c: &Constellation, sigma_sq: f64, clamp: f64) -> Result<LlrFrame> {
    if !(sigma_sq > 0.0) {
        return Err(Error::invalid(format!("demapper variance {sigma_sq} must be positive")));
    }
    let dummy = vec![0u8; x_hat.len() * c.bits_per_symbol()];
    let frame = DemapperFrame::new(x_hat, &dummy, c)?;
    Ok(frame.llrs(sigma_sq, clamp))
}

/// BMI in bits per symbol from transmitted bits and their LLRs. The value is
/// not floored at zero.
pub fn bmi(bits: &[u8], frame: &LlrFrame, c: &Constellation) -> Result<f64> {
    if bits.len() != frame.llrs.len() || frame.bits_per_symbol != c.bits_per_symbol() {
        return Err(Error::invalid("bits and LLRs disagree in shape"));
    }
    let k = frame.num_symbols().max(1) as f64;
    let penalty: f64 = bits
        .iter()
        .zip(&frame.llrs)
        .map(|(&b, &l)| bit_penalty(b, l))
        .sum();
    Ok(c.entropy() - penalty / (LN_2 * k))
}

/// Symbols `N..K-N` when edges are excluded, else everything.
pub fn scored_range(num_symbols: usize, half_window: usize, exclude_edges: bool) -> std::ops::Range<usize> {
    if exclude_edges && num_symbols > 2 * half_window {
        half_window..num_symbols - half_window
    } else {
        0..num_symbols
    }
}

/// Golden-section maximization of the BMI over `ln σ²`.
pub fn optimize_variance(frame: &DemapperFrame<'_>, range: std::ops::Range<usize>) -> (f64, f64) {
    maximize_over_variance(|s2| frame.bmi_at(s2, range.clone()))
}

/// Golden-section maximization of `objective(σ²)` over `ln σ²` in
/// `[DEMAPPER_SIGMA_MIN, DEMAPPER_SIGMA_MAX]`. Returns the best evaluated
/// point and its value.
pub fn maximize_over_variance<F: Fn(f64) -> f64>(objective: F) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = DEMAPPER_SIGMA_MIN.ln();
    let mut b = DEMAPPER_SIGMA_MAX.ln();
    let f = |u: f64| objective(u.exp());
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f2 > f1 { (x2, f2) } else { (x1, f1) };
    while b - a > DEMAPPER_LOG_TOL {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
            if f1 > best.1 {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    (best.0.exp(), best.1)
}

/// Maximizes the BMI over the demapper variance and reports the optimum.
pub fn optimize_demapper_variance(
    x_hat: &[Complex64],
    bits: &[u8],
    c: &Constellation,
) -> Result<(f64, BmiReport)> {
    score(x_hat, bits, c, 0, false)
}

/// [`optimize_demapper_variance`] restricted to [`scored_range`].
pub fn score(
    x_hat: &[Complex64],
    bits: &[u8],
    c: &Constellation,
    half_window: usize,
    exclude_edges: bool,
) -> Result<(f64, BmiReport)> {
    if x_hat.is_empty() {
        return Err(Error::invalid("cannot score an empty frame"));
    }
    let frame = DemapperFrame::new(x_hat, bits, c)?;
    let range = scored_range(x_hat.len(), half_window, exclude_edges);
    let first = x_hat[range.start];
    let degenerate = x_hat[range.clone()].iter().all(|&v| v == first);
    let (sigma_sq, raw) = optimize_variance(&frame, range.clone());
    Ok((
        sigma_sq,
        report(raw, c.entropy(), sigma_sq, range.len(), exclude_edges, degenerate),
    ))
}

pub(crate) fn report(
    raw: f64,
    entropy: f64,
    sigma_sq: f64,
    scored: usize,
    edge_excluded: bool,
    degenerate: bool,
) -> BmiReport {
    BmiReport {
        bmi_bits: raw.max(0.0),
        bmi_raw_bits: raw,
        entropy_bits: entropy,
        demapper_sigma_sq: sigma_sq,
        num_symbols_scored: scored,
        edge_excluded,
        negative_clamped: raw < 0.0,
        degenerate,
    }
}
