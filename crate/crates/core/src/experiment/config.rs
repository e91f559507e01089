use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{snr_to_noise_var, InitialPhase};
use crate::constellation::{build_qam, maxwell_boltzmann_shape, shape_for_entropy, Constellation};
use crate::error::{Error, Result};
use crate::estimators::{make_grid, Algorithm, BpMode, BpsOptParams, EstimatorConfig, DEFAULT_WRAP_TERMS};
use crate::training::{TrainReport, TrainSchedule};

/// Smallest noise variance handed to the likelihood-based estimators, so
/// noiseless runs keep finite factors.
pub const MIN_ESTIMATOR_SIGMA_SQ: f64 = 1e-6;

/// Square QAM with optional Maxwell-Boltzmann shaping. At most one of
/// `lambda` and `target_entropy_bits` may be set; neither means uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationSpec {
    pub order: usize,
    pub lambda: Option<f64>,
    pub target_entropy_bits: Option<f64>,
}

impl Default for ConstellationSpec {
    fn default() -> Self {
        ConstellationSpec {
            order: 64,
            lambda: None,
            target_entropy_bits: Some(5.0),
        }
    }
}

impl ConstellationSpec {
    pub fn uniform(order: usize) -> Self {
        ConstellationSpec {
            order,
            lambda: None,
            target_entropy_bits: None,
        }
    }

    pub fn build(&self) -> Result<Constellation> {
        let base = build_qam(self.order).map_err(as_config)?;
        match (self.lambda, self.target_entropy_bits) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either lambda or target_entropy_bits, not both".into(),
            )),
            (Some(l), None) => maxwell_boltzmann_shape(&base, l).map_err(as_config),
            (None, Some(h)) => Ok(shape_for_entropy(&base, h).map_err(as_config)?.0),
            (None, None) => Ok(base),
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemapperMode {
    /// Variance optimized separately for every realization.
    #[default]
    PerRealization,
    /// One variance per (SNR, σ_θ², algorithm) cell, maximizing the mean BMI.
    PerCell,
}

/// Per-algorithm settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmOverrides {
    /// Wrapped-normal truncation for CPN/BP-MAP.
    pub wrap_terms: usize,
    pub bp_mode: BpMode,
    /// JSON file holding trained parameters (a train report or bare params).
    pub bps_opt_params: Option<PathBuf>,
    /// Temperature of the uniform-weight fallback when no file is given.
    pub bps_opt_temperature: f64,
}

impl Default for AlgorithmOverrides {
    fn default() -> Self {
        AlgorithmOverrides {
            wrap_terms: DEFAULT_WRAP_TERMS,
            bp_mode: BpMode::Windowed,
            bps_opt_params: None,
            bps_opt_temperature: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub constellation: ConstellationSpec,
    /// `null` in JSON stands for a noiseless channel.
    #[serde(with = "snr_list")]
    pub snr_db: Vec<f64>,
    pub sigma_theta_sq: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub half_window: usize,
    pub num_phases: usize,
    pub realizations: usize,
    pub num_symbols: usize,
    /// Realization `r` uses seed `seed + r`.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub exclude_edges: bool,
    pub demapper: DemapperMode,
    pub initial_phase: InitialPhase,
    pub overrides: AlgorithmOverrides,
    pub train: TrainSchedule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            constellation: ConstellationSpec::default(),
            snr_db: vec![16.0, 18.0, 20.0, 22.0, 24.0],
            sigma_theta_sq: vec![1.18e-4],
            algorithms: vec![Algorithm::Bps, Algorithm::Cpn, Algorithm::MapBp],
            half_window: 32,
            num_phases: 60,
            realizations: 100,
            num_symbols: 1 << 15,
            seed: 0,
            output_dir: PathBuf::from("results"),
            exclude_edges: false,
            demapper: DemapperMode::PerRealization,
            initial_phase: InitialPhase::default(),
            overrides: AlgorithmOverrides::default(),
            train: TrainSchedule::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.snr_db.is_empty() || self.sigma_theta_sq.is_empty() || self.algorithms.is_empty() {
            return cfg("snr_db, sigma_theta_sq and algorithms must be nonempty".into());
        }
        if let Some(v) = self.snr_db.iter().find(|v| v.is_nan() || **v == f64::NEG_INFINITY) {
            return cfg(format!("snr_db entry {v} must be a number or +inf"));
        }
        if let Some(v) = self.sigma_theta_sq.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return cfg(format!("sigma_theta_sq entry {v} must be finite and >= 0"));
        }
        let distinct = |xs: &[f64]| xs.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len() == xs.len();
        if !distinct(&self.snr_db) || !distinct(&self.sigma_theta_sq) {
            return cfg("sweep lists must not repeat values".into());
        }
        if self.algorithms.iter().collect::<BTreeSet<_>>().len() != self.algorithms.len() {
            return cfg("algorithms must not repeat".into());
        }
        if self.realizations == 0 {
            return cfg("realizations must be at least 1".into());
        }
        if self.num_symbols == 0 {
            return cfg("num_symbols must be at least 1".into());
        }
        if self.num_phases < 2 {
            return cfg(format!("num_phases {} must be at least 2", self.num_phases));
        }
        if self.overrides.wrap_terms == 0 {
            return cfg("wrap_terms must be at least 1".into());
        }
        if !(self.overrides.bps_opt_temperature > 0.0) {
            return cfg("bps_opt_temperature must be positive".into());
        }
        self.train.validate()?;
        self.constellation.build()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every field except `output_dir`,
    /// followed by the contents of the trained-parameter file if one is set.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output_dir");
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&value)?);
        if let Some(p) = &self.overrides.bps_opt_params {
            h.update(std::fs::read(p).map_err(|e| {
                Error::Config(format!("cannot read {}: {e}", p.display()))
            })?);
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn estimator_config(&self, snr_db: f64, sigma_theta_sq: f64, sym_order: usize) -> Result<EstimatorConfig> {
        let grid = make_grid(self.num_phases, sym_order).map_err(as_config)?;
        let mut cfg = EstimatorConfig::new(
            self.half_window,
            grid,
            snr_to_noise_var(snr_db).max(MIN_ESTIMATOR_SIGMA_SQ),
            sigma_theta_sq,
        );
        cfg.wrap_terms = self.overrides.wrap_terms;
        cfg.bp_mode = self.overrides.bp_mode;
        Ok(cfg)
    }

    /// Parameters used by `bps_opt`: the configured file, else uniform weights.
    pub fn bps_opt_params(&self) -> Result<BpsOptParams> {
        let params = match &self.overrides.bps_opt_params {
            Some(p) => load_params(p)?,
            None => BpsOptParams::uniform(self.half_window, self.overrides.bps_opt_temperature)?,
        };
        if params.half_window() != self.half_window {
            return Err(Error::Config(format!(
                "trained parameters have half window {}, config has {}",
                params.half_window(),
                self.half_window
            )));
        }
        Ok(params)
    }
}

/// Reads parameters from a train report or a bare parameter document.
pub fn load_params(path: &Path) -> Result<BpsOptParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let params = match serde_json::from_str::<TrainReport>(&text) {
        Ok(r) => r.params,
        Err(_) => serde_json::from_str::<BpsOptParams>(&text)?,
    };
    params.validated().map_err(as_config)
}

/// JSON has no infinity; noiseless entries of the SNR list are `null`.
mod snr_list {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_json(r#"{"snr_db": [20], "algorithms": ["bps", "map_bp"]}"#).unwrap();
        assert_eq!(partial.snr_db, vec![20.0]);
        assert_eq!(partial.half_window, 32);
        assert_eq!(partial.algorithms, vec![Algorithm::Bps, Algorithm::MapBp]);
    }

    #[test]
    fn null_snr_is_noiseless() {
        let cfg = ExperimentConfig::from_json(r#"{"snr_db": [20, null]}"#).unwrap();
        assert_eq!(cfg.snr_db, vec![20.0, f64::INFINITY]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains(r#""snr_db":[20.0,null]"#), "{text}");
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_names_are_config_errors() {
        let e = ExperimentConfig::from_json(r#"{"algorithms": ["viterbi"]}"#).unwrap_err();
        assert!(e.is_config());
        let e = ExperimentConfig::from_json(r#"{"snr": [1]}"#).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            ExperimentConfig { snr_db: vec![], ..Default::default() },
            ExperimentConfig { realizations: 0, ..Default::default() },
            ExperimentConfig { sigma_theta_sq: vec![-1.0], ..Default::default() },
            ExperimentConfig { snr_db: vec![10.0, 10.0], ..Default::default() },
            ExperimentConfig { num_phases: 1, ..Default::default() },
            ExperimentConfig {
                constellation: ConstellationSpec { order: 16, lambda: Some(0.1), target_entropy_bits: Some(3.0) },
                ..Default::default()
            },
            ExperimentConfig {
                constellation: ConstellationSpec { order: 16, lambda: None, target_entropy_bits: Some(5.0) },
                ..Default::default()
            },
        ];
        for cfg in bad {
            let e = cfg.validate().unwrap_err();
            assert!(e.is_config(), "{e}");
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output_dir: "elsewhere".into(), ..a.clone() };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn constellation_spec_builds() {
        let c = ConstellationSpec::default().build().unwrap();
        assert_eq!(c.len(), 64);
        assert!((c.entropy() - 5.0).abs() < 1e-6);
        let u = ConstellationSpec::uniform(16).build().unwrap();
        assert!((u.entropy() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn estimator_noise_floor_for_noiseless_cells() {
        let cfg = ExperimentConfig::default();
        let e = cfg.estimator_config(f64::INFINITY, 0.0, 4).unwrap();
        assert_eq!(e.sigma_n_sq, MIN_ESTIMATOR_SIGMA_SQ);
        let e = cfg.estimator_config(20.0, 1e-4, 4).unwrap();
        assert!((e.sigma_n_sq - 0.01).abs() < 1e-15);
    }
}

