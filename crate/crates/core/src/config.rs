//! Experiment configuration in TOML, with one canonical serialization, and
//! the per-run manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ancient::Formulation;
use crate::error::{Error, Result};
use crate::model::{critical_speed, exponent_p, ModelParams};
use crate::pde::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// half-width of the symmetric grid; chosen from `m` when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dtau: f64,
    pub tau_end: f64,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub newton_tol: f64,
    /// `[lo, hi]` window for the rate fits
    pub fit_window: [f64; 2],
    pub extinction_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: u32,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub h: f64,
    pub h_prime: f64,
    pub m_list: Vec<f64>,
    /// speeds for which standalone profiles are computed
    pub soliton_lambdas: Vec<f64>,
    pub formulation: Formulation,
    pub workers: usize,
    pub output_dir: String,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 3,
            lambda: 1.2,
            lambda_prime: 1.2,
            h: 0.0,
            h_prime: 0.0,
            m_list: vec![10.0, 20.0, 30.0],
            soliton_lambdas: vec![1.0, 1.2, 1.5, 2.0],
            formulation: Formulation::Defect,
            workers: 4,
            output_dir: "yamabe-out".into(),
            grid: GridConfig {
                half_width: None,
                dx: 0.02,
            },
            time: TimeConfig {
                dtau: 1e-3,
                tau_end: -5.0,
                snapshot_every: 100,
            },
            tolerances: Tolerances {
                newton_tol: 1e-9,
                fit_window: [-26.0, -10.0],
                extinction_threshold: 1e-10,
            },
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} = {v} must be positive and finite"
        )))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text: field order fixed by the type, shortest floats.
    pub fn to_canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = exponent_p(self.n).map_err(|e| Error::Config(e.to_string()))?;
        for (name, l) in [("lambda", self.lambda), ("lambda_prime", self.lambda_prime)] {
            if !(l >= 1.0) {
                return Err(Error::Config(format!("{name} = {l} must be at least 1")));
            }
        }
        for &l in &self.soliton_lambdas {
            if !(l >= critical_speed(p)) || !l.is_finite() {
                return Err(Error::Config(format!(
                    "soliton speed {l} is below the critical speed {}: the oscillatory regime is not supported",
                    critical_speed(p)
                )));
            }
        }
        if !self.h.is_finite() || !self.h_prime.is_finite() {
            return Err(Error::Config("shifts must be finite".into()));
        }
        positive("grid.dx", self.grid.dx)?;
        if let Some(w) = self.grid.half_width {
            positive("grid.half_width", w)?;
        }
        positive("time.dtau", self.time.dtau)?;
        if self.time.snapshot_every == 0 {
            return Err(Error::Config(
                "time.snapshot_every must be at least 1".into(),
            ));
        }
        if self.m_list.is_empty() {
            return Err(Error::Config("m_list is empty".into()));
        }
        for &m in &self.m_list {
            positive("m", m)?;
            if !(self.time.tau_end > -m) {
                return Err(Error::Config(format!(
                    "tau_end = {} must exceed -m = {}",
                    self.time.tau_end, -m
                )));
            }
        }
        positive("tolerances.newton_tol", self.tolerances.newton_tol)?;
        positive(
            "tolerances.extinction_threshold",
            self.tolerances.extinction_threshold,
        )?;
        let [lo, hi] = self.tolerances.fit_window;
        if !(lo < hi) {
            return Err(Error::Config(format!("fit window [{lo}, {hi}] is empty")));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.n, self.lambda, self.lambda_prime, self.h, self.h_prime)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            dtau: self.time.dtau,
            newton_tol: self.tolerances.newton_tol,
            extinction_threshold: self.tolerances.extinction_threshold,
            ..SolverConfig::default()
        }
    }
}

/// One named invariant with its measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InvariantRecord {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRates {
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    /// last stage reached
    pub stage: String,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<FittedRates>,
    pub invariants: Vec<InvariantRecord>,
    /// `(stage, seconds)`
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, stage: &str) -> Self {
        Self {
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            succeeded: false,
            failure: None,
            m: None,
            rates: None,
            invariants: Vec::new(),
            timings: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_canonically() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_canonical().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical().unwrap(), text);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.m_list.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            soliton_lambdas: vec![0.5],
            ..ExperimentConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("oscillatory"), "{msg}");
        let mut cfg = ExperimentConfig::default();
        cfg.time.tau_end = -40.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::default().to_canonical().unwrap();
        text.insert_str(0, "bogus = 1\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }
}
