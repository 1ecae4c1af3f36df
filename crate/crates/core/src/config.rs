//! Run configuration in TOML.
//!
//! Every key is optional except that a case must come from somewhere (the
//! file or the command line). Unknown keys are rejected. Example:
//!
//! ```toml
//! case = "data/case14.m"
//! scenario = "fault"
//! plant = "nonlinear"
//! vmin = 0.95
//! vmax = 1.05
//! qmin = -0.2
//! qmax = 0.2
//! load_scale = 3.1
//! trip = "4:5@20000"
//! ```
//!
//! Limits and loads are in per-unit on the case's MVA base.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::netcase::{bundled, NetworkCase};
use crate::pdgd::Gains;
use crate::sim::{IntegratorSettings, PlantMode, RunOptions, DEFAULT_DAILY_PROFILE, DEFAULT_HOUR_WINDOW};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    #[default]
    Static,
    Fault,
    Daily,
    Powerflow,
    Sensitivity,
    Validate,
}

impl FromStr for ScenarioKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ScenarioKind::Static),
            "fault" => Ok(ScenarioKind::Fault),
            "daily" => Ok(ScenarioKind::Daily),
            "powerflow" => Ok(ScenarioKind::Powerflow),
            "sensitivity" => Ok(ScenarioKind::Sensitivity),
            "validate" => Ok(ScenarioKind::Validate),
            _ => Err(ConfigError::Invalid(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlantChoice {
    #[default]
    Nonlinear,
    Linear,
}

impl From<PlantChoice> for PlantMode {
    fn from(p: PlantChoice) -> Self {
        match p {
            PlantChoice::Nonlinear => PlantMode::NonlinearPf,
            PlantChoice::Linear => PlantMode::Linear,
        }
    }
}

impl FromStr for PlantChoice {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nonlinear" => Ok(PlantChoice::Nonlinear),
            "linear" => Ok(PlantChoice::Linear),
            _ => Err(ConfigError::Invalid(format!("unknown plant `{s}` (expected nonlinear or linear)"))),
        }
    }
}

/// Branch trip written `a:b@t`: buses `a` and `b`, time `t` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub struct TripSpec {
    pub from: usize,
    pub to: usize,
    pub at: f64,
}

impl FromStr for TripSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Invalid(format!("trip `{s}` is not of the form a:b@t"));
        let (buses, at) = s.split_once('@').ok_or_else(bad)?;
        let (a, b) = buses.split_once(':').ok_or_else(bad)?;
        let spec = TripSpec {
            from: a.trim().parse().map_err(|_| bad())?,
            to: b.trim().parse().map_err(|_| bad())?,
            at: at.trim().parse().map_err(|_| bad())?,
        };
        if !(spec.at.is_finite() && spec.at > 0.0) {
            return Err(ConfigError::Invalid(format!("trip time in `{s}` must be positive")));
        }
        Ok(spec)
    }
}

impl TryFrom<String> for TripSpec {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for TripSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}@{}", self.from, self.to, self.at)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Case file, or `bundled:case14` / `bundled:case30`.
    #[serde(alias = "case_path")]
    pub case: Option<String>,
    pub scenario: ScenarioKind,
    pub plant: PlantChoice,
    #[serde(alias = "v_lo")]
    pub vmin: f64,
    #[serde(alias = "v_hi")]
    pub vmax: f64,
    #[serde(alias = "q_lo")]
    pub qmin: f64,
    #[serde(alias = "q_hi")]
    pub qmax: f64,
    pub k_q: f64,
    pub k_lam: f64,
    pub k_mu: f64,
    /// Uniform factor on PQ-bus loads.
    pub load_scale: f64,
    /// Controlled bus ids; all load buses when absent.
    pub controllers: Option<Vec<usize>>,
    pub trip: Option<TripSpec>,
    /// Hourly load factors for the daily scenario.
    pub profile: Vec<f64>,
    /// Seconds of controller time per hour.
    pub hour_window: f64,
    pub reset_multipliers: bool,
    pub controller_period: f64,
    pub eq_tol: f64,
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
    /// Relative to the working directory, unlike `case`.
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let integ = IntegratorSettings::default();
        let run = RunOptions::default();
        RunConfig {
            case: None,
            scenario: ScenarioKind::Static,
            plant: PlantChoice::Nonlinear,
            vmin: 0.95,
            vmax: 1.05,
            qmin: -0.2,
            qmax: 0.2,
            k_q: 1.0,
            k_lam: 1.0,
            k_mu: 1.0,
            load_scale: 1.0,
            controllers: None,
            trip: None,
            profile: DEFAULT_DAILY_PROFILE.to_vec(),
            hour_window: DEFAULT_HOUR_WINDOW,
            reset_multipliers: false,
            controller_period: 0.0,
            eq_tol: run.eq_tol,
            rtol: integ.rtol,
            atol: integ.atol,
            horizon: run.horizon,
            output_dir: "out".into(),
        }
    }
}

/// Parse and validate a config. Omitted keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let finite = [
            ("vmin", self.vmin),
            ("vmax", self.vmax),
            ("qmin", self.qmin),
            ("qmax", self.qmax),
            ("load_scale", self.load_scale),
            ("controller_period", self.controller_period),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                return bad(format!("{k} must be finite"));
            }
        }
        if !(0.0 < self.vmin && self.vmin < self.vmax) {
            return bad(format!("need 0 < vmin < vmax, got {} and {}", self.vmin, self.vmax));
        }
        if self.qmin > self.qmax {
            return bad(format!("need qmin <= qmax, got {} and {}", self.qmin, self.qmax));
        }
        for (k, v) in [("k_q", self.k_q), ("k_lam", self.k_lam), ("k_mu", self.k_mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive"));
            }
        }
        if self.load_scale < 0.0 {
            return bad(format!("load_scale must be non-negative, got {}", self.load_scale));
        }
        if self.profile.len() != 24 {
            return bad(format!("profile needs 24 entries, got {}", self.profile.len()));
        }
        if self.profile.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return bad("profile entries must be finite and non-negative".into());
        }
        for (k, v) in [
            ("hour_window", self.hour_window),
            ("eq_tol", self.eq_tol),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive"));
            }
        }
        if self.controller_period < 0.0 {
            return bad("controller_period must be non-negative".into());
        }
        if let Some(t) = &self.trip {
            if t.at > self.horizon {
                return bad(format!("trip time {} is past the horizon {}", t.at, self.horizon));
            }
        }
        Ok(())
    }

    pub fn gains(&self) -> Gains {
        Gains {
            k_q: self.k_q,
            k_lam: self.k_lam,
            k_mu: self.k_mu,
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            plant_mode: self.plant.into(),
            eq_tol: self.eq_tol,
            horizon: self.horizon,
            integrator: IntegratorSettings {
                rtol: self.rtol,
                atol: self.atol,
                ..Default::default()
            },
            controller_period: self.controller_period,
            reset_multipliers: self.reset_multipliers,
        }
    }

    /// Make a relative case path relative to `dir` (typically the config
    /// file's directory).
    pub fn resolve_relative(&mut self, dir: &Path) {
        if let Some(c) = &self.case {
            if !c.starts_with("bundled:") && Path::new(c).is_relative() {
                self.case = Some(dir.join(c).to_string_lossy().into_owned());
            }
        }
    }

    /// Read the case and apply the configured load scale and controllers.
    pub fn load_case(&self) -> Result<NetworkCase, ConfigError> {
        let src = self
            .case
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("no case given".into()))?;
        let base = match src {
            "bundled:case14" => bundled::case14(),
            "bundled:case30" => bundled::case30(),
            path => {
                let text = std::fs::read_to_string(PathBuf::from(path)).map_err(|e| ConfigError::Io {
                    path: path.to_string(),
                    msg: e.to_string(),
                })?;
                crate::parse_case(&text).map_err(|e| ConfigError::Invalid(format!("{path}: {e}")))?
            }
        };
        let mut case = base
            .scale_loads(&self.load_scale.into())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(ids) = &self.controllers {
            case = case
                .with_controllers(ids)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(case)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_only_gives_defaults() {
        let cfg = parse_config("case = \"data/case14.m\"\n").unwrap();
        assert_eq!(cfg.case.as_deref(), Some("data/case14.m"));
        assert_eq!((cfg.vmin, cfg.vmax, cfg.qmin, cfg.qmax), (0.95, 1.05, -0.2, 0.2));
        assert_eq!(cfg.scenario, ScenarioKind::Static);
        assert_eq!(cfg.plant, PlantChoice::Nonlinear);
        assert_eq!(cfg.gains(), Gains::default());
        assert_eq!(cfg.profile.len(), 24);
    }

    #[test]
    fn aliases_and_units() {
        let cfg = parse_config("case_path = \"x.m\"\nq_hi = 0.1\nv_lo = 0.9").unwrap();
        assert_eq!(cfg.qmax, 0.1);
        assert_eq!(cfg.vmin, 0.9);
        // 0.1 pu on a 100 MVA base
        assert!((cfg.qmax * 100.0 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = parse_config("case = \"x.m\"\nvmaks = 1.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vmaks"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn bad_values() {
        assert!(parse_config("vmin = 1.1\nvmax = 1.0").is_err());
        assert!(parse_config("qmin = 0.3").is_err());
        assert!(parse_config("k_q = 0").is_err());
        assert!(parse_config("profile = [1.0, 2.0]").is_err());
        assert!(parse_config("load_scale = -1").is_err());
        assert!(parse_config("plant = \"quadratic\"").is_err());
        assert!(parse_config("trip = \"4-5\"").is_err());
        assert!(parse_config("vmin = \"low\"").is_err());
    }

    #[test]
    fn trip_spec() {
        let cfg = parse_config("scenario = \"fault\"\ntrip = \"4:5@2000\"").unwrap();
        assert_eq!(
            cfg.trip,
            Some(TripSpec {
                from: 4,
                to: 5,
                at: 2000.0
            })
        );
        assert_eq!(cfg.trip.unwrap().to_string(), "4:5@2000");
        assert!("4:5@0".parse::<TripSpec>().is_err());
    }

    #[test]
    fn loads_bundled_case_with_scale_and_controllers() {
        let cfg = parse_config("case = \"bundled:case14\"\nload_scale = 2.0\ncontrollers = [9, 14]").unwrap();
        let case = cfg.load_case().unwrap();
        assert!((case.bus(14).unwrap().p_load - 2.0 * 0.149).abs() < 1e-12);
        assert!(case.bus(14).unwrap().has_controller);
        assert!(!case.bus(4).unwrap().has_controller);
    }

    #[test]
    fn missing_case_file_is_reported() {
        let cfg = parse_config("case = \"/nonexistent/case.m\"").unwrap();
        assert!(matches!(cfg.load_case(), Err(ConfigError::Io { .. })));
        assert!(parse_config("").unwrap().load_case().is_err());
    }
}
