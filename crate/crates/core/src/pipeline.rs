//! Estimate, correct and score one received trace.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelTrace;
use crate::constellation::Constellation;
use crate::error::Result;
use crate::estimators::{estimate, Algorithm, BpsOptParams, EstimatorConfig};
use crate::metrics::{score, BmiReport};
use crate::postproc::{correct, CorrectedTrace};

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub phi_hat_raw: Vec<f64>,
    pub corrected: CorrectedTrace,
    pub report: BmiReport,
}

/// Scalar outcome of one algorithm on one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub bmi_bits: f64,
    pub demapper_sigma_sq: f64,
    pub slip_count: usize,
    pub negative_clamped: bool,
}

impl Evaluation {
    pub fn outcome(&self) -> Outcome {
        Outcome {
            bmi_bits: self.report.bmi_bits,
            demapper_sigma_sq: self.report.demapper_sigma_sq,
            slip_count: self.corrected.slip_events.len(),
            negative_clamped: self.report.negative_clamped,
        }
    }
}

/// Runs `algorithm` on `trace`, removes slips against the true phase, and
/// scores the derotated symbols with the variance-optimized demapper.
pub fn evaluate(
    algorithm: Algorithm,
    trace: &ChannelTrace,
    cfg: &EstimatorConfig,
    c: &Constellation,
    params: Option<&BpsOptParams>,
    exclude_edges: bool,
) -> Result<Evaluation> {
    let phi_hat_raw = estimate(algorithm, &trace.rx_symbols, cfg, c, params)?;
    let corrected = correct(&trace.rx_symbols, &phi_hat_raw, &trace.phase_path, c.sym_order())?;
    let (_, report) = score(&corrected.x_hat, &trace.bits, c, cfg.half_window, exclude_edges)?;
    Ok(Evaluation {
        phi_hat_raw,
        corrected,
        report,
    })
}
