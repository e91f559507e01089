//! Gradient training of the weighted softmin BPS parameters.

mod adam;
mod objective;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use objective::{grad, loss, Gradient, LossKind, MIN_DEMAP_SIGMA_SQ};

use crate::channel::{transmit, ChannelParams};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::estimators::{Algorithm, BpsOptParams, EstimatorConfig};
use crate::pipeline::evaluate;
use crate::rng::derive_seed;

/// Index reserved for the validation trace seed; batch seeds use the step
/// counter.
const VALIDATION_INDEX: u64 = u64::MAX;

/// Epoch/batch ramp and optimizer settings.
///
/// The number of batches per epoch ramps linearly from `batches_start` to
/// `batches_end`; the batch length ramps linearly in `log2` between
/// `batch_symbols_start` and `batch_symbols_end`, with the exponent rounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batches_start: usize,
    pub batches_end: usize,
    pub batch_symbols_start: usize,
    pub batch_symbols_end: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub init_temperature: f64,
    pub loss: LossKind,
    /// Length of the held-out trace scored after every epoch.
    pub validation_symbols: usize,
}

impl Default for TrainSchedule {
    /// 100 epochs, 10→100 batches, 2^12→2^17 symbols per batch, lr 1e-3.
    fn default() -> Self {
        TrainSchedule {
            epochs: 100,
            learning_rate: 1e-3,
            batches_start: 10,
            batches_end: 100,
            batch_symbols_start: 1 << 12,
            batch_symbols_end: 1 << 17,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            init_temperature: 0.1,
            loss: LossKind::CrossEntropy,
            validation_symbols: 1 << 15,
        }
    }
}

impl TrainSchedule {
    /// 10 epochs, 5→10 batches, 2^10→2^12 symbols per batch.
    pub fn desk() -> Self {
        TrainSchedule {
            epochs: 10,
            batches_start: 5,
            batches_end: 10,
            batch_symbols_start: 1 << 10,
            batch_symbols_end: 1 << 12,
            validation_symbols: 1 << 12,
            ..TrainSchedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_start == 0 || self.batches_end == 0 {
            return Err(Error::Config("epochs and batch counts must be positive".into()));
        }
        if self.batch_symbols_start == 0 || self.batch_symbols_end == 0 || self.validation_symbols == 0 {
            return Err(Error::Config("batch lengths must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.adam_beta1) || !beta_ok(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam moments need β in [0, 1) and ε > 0".into()));
        }
        if !(self.init_temperature > 0.0) || !self.init_temperature.is_finite() {
            return Err(Error::Config(format!(
                "initial temperature {} must be positive",
                self.init_temperature
            )));
        }
        Ok(())
    }

    fn fraction(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            0.0
        } else {
            epoch as f64 / (self.epochs - 1) as f64
        }
    }

    pub fn batches_in_epoch(&self, epoch: usize) -> usize {
        let f = self.fraction(epoch);
        let v = self.batches_start as f64 + f * (self.batches_end as f64 - self.batches_start as f64);
        (v.round() as usize).max(1)
    }

    pub fn batch_symbols_in_epoch(&self, epoch: usize) -> usize {
        if epoch == 0 {
            return self.batch_symbols_start;
        }
        if epoch + 1 >= self.epochs {
            return self.batch_symbols_end;
        }
        let a = (self.batch_symbols_start as f64).log2();
        let b = (self.batch_symbols_end as f64).log2();
        let e = (a + self.fraction(epoch) * (b - a)).round();
        e.exp2() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: BpsOptParams,
    pub initial_params: BpsOptParams,
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Loss of every batch, in step order.
    pub batch_loss: Vec<f64>,
    /// BMI of the current parameters on the held-out trace after each epoch.
    pub validation_bmi: Vec<f64>,
    pub epochs_completed: usize,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
    pub schedule: TrainSchedule,
    pub channel: ChannelParams,
    pub half_window: usize,
    pub num_phases: usize,
}

impl TrainReport {
    /// Writes `offset,weight` rows with offsets `-N..=N`.
    pub fn write_weights_csv<W: Write>(&self, out: W) -> Result<()> {
        write_weights_csv(out, &self.params)
    }
}

pub fn write_weights_csv<W: Write>(out: W, params: &BpsOptParams) -> Result<()> {
    let err = crate::channel::csv_err;
    let half = params.half_window() as i64;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["offset", "weight"]).map_err(err)?;
    for (i, v) in params.weights.iter().enumerate() {
        w.write_record([(i as i64 - half).to_string(), v.to_string()])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains the window weights and temperature with Adam on freshly simulated
/// batches drawn from `channel` (its `num_symbols` and `seed` are replaced
/// per batch). Starts from uniform weights and `schedule.init_temperature`.
pub fn train(
    schedule: &TrainSchedule,
    channel: &ChannelParams,
    cfg: &EstimatorConfig,
    c: &Constellation,
) -> Result<TrainReport> {
    let init = BpsOptParams::uniform(cfg.half_window, schedule.init_temperature)?;
    train_from(schedule, channel, cfg, c, init)
}

/// As [`train`], from explicit initial parameters.
pub fn train_from(
    schedule: &TrainSchedule,
    channel: &ChannelParams,
    cfg: &EstimatorConfig,
    c: &Constellation,
    init: BpsOptParams,
) -> Result<TrainReport> {
    schedule.validate()?;
    cfg.validate()?;
    ChannelParams {
        num_symbols: schedule.batch_symbols_start,
        ..channel.clone()
    }
    .validate()?;
    if init.weights.len() != 2 * cfg.half_window + 1 {
        return Err(Error::invalid("initial weights do not match the half window"));
    }
    let val_params = ChannelParams {
        num_symbols: schedule.validation_symbols,
        seed: derive_seed(schedule.seed, VALIDATION_INDEX),
        ..channel.clone()
    };
    let val_trace = transmit(c, &val_params)?;

    let mut params = init.clone();
    let mut theta = params.raw_weights.clone();
    theta.push(params.raw_temp);
    let mut adam = Adam::with_moments(
        theta.len(),
        schedule.learning_rate,
        schedule.adam_beta1,
        schedule.adam_beta2,
        schedule.adam_eps,
    );
    let mut report = TrainReport {
        params: init.clone(),
        initial_params: init,
        epoch_loss: Vec::new(),
        batch_loss: Vec::new(),
        validation_bmi: Vec::new(),
        epochs_completed: 0,
        aborted: None,
        schedule: schedule.clone(),
        channel: channel.clone(),
        half_window: cfg.half_window,
        num_phases: cfg.grid.len(),
    };
    let mut step = 0u64;
    for epoch in 0..schedule.epochs {
        let batches = schedule.batches_in_epoch(epoch);
        let len = schedule.batch_symbols_in_epoch(epoch);
        let mut total = 0.0;
        for _ in 0..batches {
            let batch = transmit(
                c,
                &ChannelParams {
                    num_symbols: len,
                    seed: derive_seed(schedule.seed, step),
                    ..channel.clone()
                },
            )?;
            step += 1;
            let (l, g) = match grad(&params, &batch, cfg, c, schedule.loss) {
                Ok(v) => v,
                Err(Error::Numerical(msg)) => {
                    report.aborted = Some(format!("epoch {epoch}, step {step}: {msg}"));
                    report.params = params;
                    return Ok(report);
                }
                Err(e) => return Err(e),
            };
            report.batch_loss.push(l);
            total += l;
            adam.step(&mut theta, &g.as_vec());
            let (raw_t, raw_w) = theta.split_last().expect("non-empty parameter vector");
            params = match BpsOptParams::from_raw(raw_w.to_vec(), *raw_t) {
                Ok(p) => p,
                Err(e) => {
                    report.aborted = Some(format!("epoch {epoch}, step {step}: {e}"));
                    return Ok(report);
                }
            };
            report.params = params.clone();
        }
        report.epoch_loss.push(total / batches as f64);
        let val = evaluate(Algorithm::BpsOpt, &val_trace, cfg, c, Some(&params), true)?;
        report.validation_bmi.push(val.report.bmi_bits);
        report.epochs_completed = epoch + 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::build_qam;
    use crate::estimators::make_grid;

    fn tiny() -> TrainSchedule {
        TrainSchedule {
            epochs: 3,
            batches_start: 2,
            batches_end: 3,
            batch_symbols_start: 256,
            batch_symbols_end: 512,
            learning_rate: 1e-2,
            validation_symbols: 512,
            ..TrainSchedule::desk()
        }
    }

    fn cell() -> (Constellation, ChannelParams, EstimatorConfig) {
        let c = build_qam(16).unwrap();
        let ch = ChannelParams::new(16.0, 1e-3, 0, 0);
        let cfg = EstimatorConfig::new(4, make_grid(8, 4).unwrap(), 0.025, 1e-3);
        (c, ch, cfg)
    }

    #[test]
    fn schedule_ramps_hit_endpoints() {
        let s = TrainSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.batches_in_epoch(0), 10);
        assert_eq!(s.batches_in_epoch(99), 100);
        assert_eq!(s.batch_symbols_in_epoch(0), 1 << 12);
        assert_eq!(s.batch_symbols_in_epoch(99), 1 << 17);
        let mid = s.batch_symbols_in_epoch(50);
        assert!(mid.is_power_of_two() && (1 << 14..=1 << 15).contains(&mid));
        for e in 1..100 {
            assert!(s.batches_in_epoch(e) >= s.batches_in_epoch(e - 1));
            assert!(s.batch_symbols_in_epoch(e) >= s.batch_symbols_in_epoch(e - 1));
        }
        let d = TrainSchedule::desk();
        assert_eq!((d.batches_in_epoch(0), d.batches_in_epoch(9)), (5, 10));
        assert_eq!((d.batch_symbols_in_epoch(0), d.batch_symbols_in_epoch(9)), (1024, 4096));
    }

    #[test]
    fn invalid_schedule_rejected() {
        let mut s = tiny();
        s.epochs = 0;
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.learning_rate = f64::NAN;
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.adam_beta2 = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let (c, ch, cfg) = cell();
        let s = TrainSchedule {
            learning_rate: 0.0,
            ..tiny()
        };
        let r = train(&s, &ch, &cfg, &c).unwrap();
        assert_eq!(r.params, r.initial_params);
        assert_eq!(r.params, BpsOptParams::uniform(4, 0.1).unwrap());
    }

    #[test]
    fn fixed_seed_gives_identical_report() {
        let (c, ch, cfg) = cell();
        let a = train(&tiny(), &ch, &cfg, &c).unwrap();
        let b = train(&tiny(), &ch, &cfg, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epoch_loss.len(), 3);
        assert_eq!(a.validation_bmi.len(), 3);
        assert_eq!(a.batch_loss.len(), 2 + 3 + 3);
        assert!(a.aborted.is_none());
        assert_ne!(a.params, a.initial_params);
        let json = serde_json::to_string(&a).unwrap();
        let back: TrainReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn weights_csv_has_one_row_per_tap() {
        let p = BpsOptParams::uniform(3, 0.1).unwrap();
        let mut buf = Vec::new();
        write_weights_csv(&mut buf, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "offset,weight");
        assert_eq!(lines.len(), 1 + 7);
        assert!(lines[1].starts_with("-3,"));
        assert!(lines[7].starts_with("3,"));
    }
}
