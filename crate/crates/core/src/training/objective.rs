//! Forward and reverse pass of the training objective.
//!
//! Pipeline per symbol `k`:
//!
//! ```text
//! d_{i,m}  (fixed, depends on y only)
//! D_m      = Σ_i w_i d_{i,m} / Σ_i w_i          (window truncated at edges)
//! p        = softmin_t(D)
//! z        = Σ_m p_m e^{jnφ_m},  φ̂ = arg(z)/n
//! φ_c      = φ̂ - q·2π/n  (q from the true phase, piecewise constant)
//! x̂        = y e^{-jφ_c}
//! loss_k   = Σ_b softplus(-(1-2b_k) L_b(x̂))      (cross-entropy)
//!          | 2 - 2cos(n(φ̂ - φ_k))               (periodic phase error)
//! ```
//!
//! The batch loss is the mean of `loss_k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTrace;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::estimators::{distance_table, BpsOptParams, EstimatorConfig, Table, READOUT_FLOOR};
use crate::metrics::softplus;

/// Symbols per independently evaluated chunk. Chunk results are reduced in
/// index order, so the gradient does not depend on the thread count.
const CHUNK: usize = 512;

/// Smallest demapper variance used inside the loss (noiseless batches).
pub const MIN_DEMAP_SIGMA_SQ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Bit-wise binary cross-entropy of the demapper LLRs (nats per symbol).
    #[default]
    CrossEntropy,
    /// Mean `|e^{jnφ̂} - e^{jnφ}|²`.
    PhaseError,
}

/// Gradient with respect to the unconstrained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub raw_weights: Vec<f64>,
    pub raw_temp: f64,
}

impl Gradient {
    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = self.raw_weights.clone();
        v.push(self.raw_temp);
        v
    }
}

struct Prepared<'a> {
    trace: &'a ChannelTrace,
    d: Table,
    cfg: &'a EstimatorConfig,
    c: &'a Constellation,
    kind: LossKind,
    demap_sigma_sq: f64,
    log_priors: Vec<f64>,
    rot: Vec<Complex64>,
}

struct ChunkOut {
    loss: f64,
    grad_w: Vec<f64>,
    grad_t: f64,
}

fn prepare<'a>(
    params: &BpsOptParams,
    trace: &'a ChannelTrace,
    cfg: &'a EstimatorConfig,
    c: &'a Constellation,
    kind: LossKind,
) -> Result<Prepared<'a>> {
    if params.weights.len() != 2 * cfg.half_window + 1 {
        return Err(Error::invalid("weight count does not match the half window"));
    }
    if trace.len() < 2 * cfg.half_window + 1 {
        return Err(Error::invalid(format!(
            "batch of {} symbols is shorter than the window",
            trace.len()
        )));
    }
    if !(params.temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let n = cfg.grid.sym_order() as f64;
    Ok(Prepared {
        trace,
        d: distance_table(&trace.rx_symbols, &cfg.grid, c),
        cfg,
        c,
        kind,
        demap_sigma_sq: trace.sigma_n_sq.max(MIN_DEMAP_SIGMA_SQ),
        log_priors: c.probs().iter().map(|p| p.ln()).collect(),
        rot: cfg
            .grid
            .phases()
            .iter()
            .map(|&phi| Complex64::from_polar(1.0, n * phi))
            .collect(),
    })
}

impl Prepared<'_> {
    /// Loss of symbol `k` and, when `grad` is set, accumulation of its
    /// gradient with respect to `w` and `t`.
    fn symbol(&self, params: &BpsOptParams, k: usize, grad: Option<(&mut [f64], &mut f64)>) -> f64 {
        let m_count = self.cfg.grid.len();
        let n = self.cfg.grid.sym_order() as f64;
        let period = 2.0 * PI / n;
        let half = self.cfg.half_window;
        let kk = self.trace.len();
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(kk - 1);
        let w = &params.weights;
        let t = params.temperature;

        let mut mass = 0.0;
        let mut dist = vec![0.0; m_count];
        for i in lo..=hi {
            let wi = w[i + half - k];
            mass += wi;
            for (o, v) in dist.iter_mut().zip(self.d.row(i)) {
                *o += wi * v;
            }
        }
        dist.iter_mut().for_each(|v| *v /= mass);
        let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let mut p: Vec<f64> = dist.iter().map(|v| (-(v - dmin) / t).exp()).collect();
        let z_norm: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z_norm);
        let z: Complex64 = p.iter().zip(&self.rot).map(|(pm, r)| r * pm).sum();

        let fallback = z.norm() < READOUT_FLOOR;
        let phi_hat = if fallback {
            self.cfg.grid.phases()[crate::estimators::argmin(&dist)]
        } else {
            crate::wrap_to_period(z.arg() / n, period)
        };
        let phi_true = self.trace.phase_path[k];
        let q = ((phi_hat - phi_true) / period + 0.5).floor();
        let phi_c = phi_hat - q * period;

        let (loss, g_phi) = match self.kind {
            LossKind::CrossEntropy => self.cross_entropy(k, phi_c, grad.is_some()),
            LossKind::PhaseError => {
                let e = n * (phi_hat - phi_true);
                (2.0 - 2.0 * e.cos(), 2.0 * n * e.sin())
            }
        };

        if let Some((gw, gt)) = grad {
            if fallback {
                return loss;
            }
            // φ̂ = arg(z)/n
            let zz = z.norm_sqr();
            let g_p: Vec<f64> = self
                .rot
                .iter()
                .map(|r| g_phi / n * (z.re * r.im - z.im * r.re) / zz)
                .collect();
            // softmax backward, u_m = -(D_m - D_min)/t
            let dot: f64 = p.iter().zip(&g_p).map(|(a, b)| a * b).sum();
            let g_u: Vec<f64> = p.iter().zip(&g_p).map(|(a, b)| a * (b - dot)).collect();
            let mut g_d = vec![0.0; m_count];
            for m in 0..m_count {
                g_d[m] = -g_u[m] / t;
                *gt += g_u[m] * (dist[m] - dmin) / (t * t);
            }
            for i in lo..=hi {
                let row = self.d.row(i);
                let s: f64 = (0..m_count).map(|m| g_d[m] * (row[m] - dist[m])).sum();
                gw[i + half - k] += s / mass;
            }
        }
        loss
    }

    /// Cross-entropy of symbol `k` derotated by `phi_c`, and `∂loss/∂φ_c`.
    fn cross_entropy(&self, k: usize, phi_c: f64, want_grad: bool) -> (f64, f64) {
        let c = self.c;
        let m = c.bits_per_symbol();
        let s2 = self.demap_sigma_sq;
        let x_hat = self.trace.rx_symbols[k] * Complex64::from_polar(1.0, -phi_c);
        let terms: Vec<f64> = c
            .points()
            .iter()
            .zip(&self.log_priors)
            .map(|(x, lp)| lp - (x_hat - x).norm_sqr() / s2)
            .collect();
        let bits = self.trace.symbol_bits(k);
        let mut loss = 0.0;
        let mut g_x = Complex64::new(0.0, 0.0);
        for b in 0..m {
            let mut lse = [(f64::NEG_INFINITY, 0.0f64); 2];
            for (i, &tv) in terms.iter().enumerate() {
                let (mx, _) = &mut lse[c.bit(i, b) as usize];
                *mx = mx.max(tv);
            }
            let mut mean = [Complex64::new(0.0, 0.0); 2];
            for (i, &tv) in terms.iter().enumerate() {
                let side = c.bit(i, b) as usize;
                let e = (tv - lse[side].0).exp();
                lse[side].1 += e;
                mean[side] += c.points()[i] * e;
            }
            let l0 = lse[0].0 + lse[0].1.ln();
            let l1 = lse[1].0 + lse[1].1.ln();
            let llr = l0 - l1;
            let sign = if bits[b] == 0 { 1.0 } else { -1.0 };
            loss += softplus(-sign * llr);
            if want_grad {
                // ∂softplus(-sL)/∂L = -s·σ(-sL)
                let dl = -sign * logistic(-sign * llr);
                let e0 = mean[0] / lse[0].1;
                let e1 = mean[1] / lse[1].1;
                g_x += (e0 - e1) * (2.0 / s2 * dl);
            }
        }
        // x̂ = y e^{-jφ_c}: ∂x̂/∂φ_c = -j x̂
        let dx = x_hat * Complex64::new(0.0, -1.0);
        let g_phi = g_x.re * dx.re + g_x.im * dx.im;
        (loss, g_phi)
    }

    fn chunk(&self, params: &BpsOptParams, range: std::ops::Range<usize>, with_grad: bool) -> ChunkOut {
        let mut out = ChunkOut {
            loss: 0.0,
            grad_w: vec![0.0; params.weights.len()],
            grad_t: 0.0,
        };
        for k in range {
            let g = if with_grad {
                Some((out.grad_w.as_mut_slice(), &mut out.grad_t))
            } else {
                None
            };
            out.loss += self.symbol(params, k, g);
        }
        out
    }

    fn evaluate(&self, params: &BpsOptParams, with_grad: bool) -> Result<(f64, Gradient)> {
        let kk = self.trace.len();
        let chunks: Vec<std::ops::Range<usize>> = (0..kk)
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(kk))
            .collect();
        let parts: Vec<ChunkOut> = chunks
            .into_par_iter()
            .map(|r| self.chunk(params, r, with_grad))
            .collect();
        let mut loss = 0.0;
        let mut grad_w = vec![0.0; params.weights.len()];
        let mut grad_t = 0.0;
        for part in parts {
            loss += part.loss;
            grad_t += part.grad_t;
            for (a, b) in grad_w.iter_mut().zip(&part.grad_w) {
                *a += b;
            }
        }
        let scale = 1.0 / kk as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} (temperature {}, demapper σ² {})",
                params.temperature, self.demap_sigma_sq
            )));
        }
        // w = softmax(raw_w), t = exp(raw_t)
        let w = &params.weights;
        let dot: f64 = w.iter().zip(&grad_w).map(|(a, b)| a * b).sum::<f64>() * scale;
        let raw_weights = w
            .iter()
            .zip(&grad_w)
            .map(|(wi, g)| wi * (g * scale - dot))
            .collect();
        let raw_temp = params.temperature * grad_t * scale;
        Ok((
            loss,
            Gradient {
                raw_weights,
                raw_temp,
            },
        ))
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean per-symbol loss of the weighted softmin BPS on `batch`.
pub fn loss(
    params: &BpsOptParams,
    batch: &ChannelTrace,
    cfg: &EstimatorConfig,
    c: &Constellation,
    kind: LossKind,
) -> Result<f64> {
    let prep = prepare(params, batch, cfg, c, kind)?;
    Ok(prep.evaluate(params, false)?.0)
}

/// Loss and its exact reverse-mode gradient with respect to the raw
/// parameters.
pub fn grad(
    params: &BpsOptParams,
    batch: &ChannelTrace,
    cfg: &EstimatorConfig,
    c: &Constellation,
    kind: LossKind,
) -> Result<(f64, Gradient)> {
    let prep = prepare(params, batch, cfg, c, kind)?;
    let (loss, g) = prep.evaluate(params, true)?;
    if g.raw_weights.iter().any(|v| !v.is_finite()) || !g.raw_temp.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok((loss, g))
}
