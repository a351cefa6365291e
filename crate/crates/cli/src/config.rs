//! Run configuration.
//!
//! A config file is TOML. Every key is optional; missing keys take the
//! defaults shown by `RunConfig::default()`. Unknown keys are rejected.
//!
//! ```toml
//! seed = 1
//!
//! [model]
//! chi_s = 0.28
//! chi_n = 0.018
//! g2_s = 0.098
//! overlap_penalty = 0.0
//! outcomes = "model"          # or "ideal"
//!
//! [model.counts]              # optional; replaces chi_s/chi_n by estimates
//! c_hh = 6000.0
//! c_hv = 110.0
//! s_h_b = 1.0e6
//! s_h_r = 68000.0
//! f = 8.0e7
//!
//! [oracle]
//! triples = 60
//! s1 = 0.05
//!
//! [experiment]                # time-tag simulator
//! duration_ps = 5_000_000_000
//! efficiency = { a_prime = 0.01, r_double = 0.01, b_prime = 0.05 }
//!
//! [simulate]
//! tag_format = "binary"       # or "text"
//!
//! [coincidence]
//! calibrate = true
//! windows = { dt1 = 3000, dt2 = 4500, dt3 = 5500, w_a = 300, w_r = 300, w_b = 100 }
//!
//! [tomography]
//! settings = "overcomplete36" # or "minimal16"
//! bootstrap = 200
//!
//! [protocol]
//! trials = 1000
//!
//! [scaling]
//! t_grid = [1.0, 0.5, 0.25, 0.125, 0.0625]
//! mu = 0.05
//! ```

use std::path::Path;

use cpdfs_core::fock::{SignalSupport, Truncation};
use cpdfs_core::model::{CountSummary, NoiseModelParams};
use cpdfs_core::timetag::io::TagFormat;
use cpdfs_core::timetag::{CalibrationOptions, CoincidenceWindows, ExperimentConfig};
use cpdfs_core::tomography::{MleOptions, SettingSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub oracle: OracleSection,
    pub experiment: ExperimentConfig,
    pub simulate: SimulateSection,
    pub coincidence: CoincidenceSection,
    pub tomography: TomographySection,
    pub protocol: ProtocolSection,
    pub scaling: ScalingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelSection::default(),
            oracle: OracleSection::default(),
            experiment: ExperimentConfig::default(),
            simulate: SimulateSection::default(),
            coincidence: CoincidenceSection::default(),
            tomography: TomographySection::default(),
            protocol: ProtocolSection::default(),
            scaling: ScalingSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSource {
    /// Bell-diagonal state from the noise model.
    #[default]
    Model,
    /// Noiseless |Φ⁺⟩.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub chi_s: f64,
    pub chi_n: f64,
    pub g2_s: f64,
    /// Fidelity lost to imperfect mode overlap, applied on top of the model.
    pub overlap_penalty: f64,
    pub outcomes: OutcomeSource,
    pub counts: Option<CountSummary>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            chi_s: 0.28,
            chi_n: 0.018,
            g2_s: 0.098,
            overlap_penalty: 0.0,
            outcomes: OutcomeSource::Model,
            counts: None,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> cpdfs_core::Result<NoiseModelParams> {
        NoiseModelParams::new(self.chi_s, self.chi_n, self.g2_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub triples: usize,
    /// Absolute heralded signal mean used to instantiate each triple.
    pub s1: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub chi_s_range: [f64; 2],
    pub chi_n_range: [f64; 2],
    pub g2_range: [f64; 2],
    pub support: SignalSupport,
    pub cutoff: usize,
    pub tol: f64,
    pub max_cutoff: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        let t = Truncation::default();
        Self {
            triples: 60,
            s1: 0.05,
            eta1: 1.0,
            eta2: 1.0,
            chi_s_range: [0.01, 1.0],
            chi_n_range: [0.0, 0.5],
            g2_range: [0.0, 1.0],
            support: SignalSupport::Minimal,
            cutoff: t.cutoff,
            tol: t.tol,
            max_cutoff: t.max_cutoff,
        }
    }
}

impl OracleSection {
    pub fn truncation(&self) -> Truncation {
        Truncation {
            cutoff: self.cutoff,
            tol: self.tol,
            max_cutoff: self.max_cutoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub tag_format: TagFormat,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            tag_format: TagFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoincidenceSection {
    /// Estimate Δt₁..Δt₃ from the data; otherwise use `windows` as given.
    pub calibrate: bool,
    pub windows: CoincidenceWindows,
    pub calibration: CalibrationOptions,
}

impl Default for CoincidenceSection {
    fn default() -> Self {
        Self {
            calibrate: true,
            windows: CoincidenceWindows::default(),
            calibration: CalibrationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographySection {
    pub settings: SettingSet,
    pub bootstrap: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TomographySection {
    fn default() -> Self {
        let m = MleOptions::default();
        Self {
            settings: SettingSet::Overcomplete36,
            bootstrap: 200,
            tol: m.tol,
            max_iter: m.max_iter,
        }
    }
}

impl TomographySection {
    pub fn mle(&self) -> MleOptions {
        MleOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub trials: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self { trials: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub t_grid: Vec<f64>,
    pub trials: usize,
    pub mu: f64,
    pub max_launch_mean: f64,
    pub detector_efficiency: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            t_grid: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            trials: 200,
            mu: 0.05,
            max_launch_mean: 1.0,
            detector_efficiency: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = CliError::config;
        self.model.params().map_err(|e| bad(e.to_string()))?;
        if !(self.model.overlap_penalty >= 0.0) {
            return Err(bad(format!("overlap_penalty = {}", self.model.overlap_penalty)));
        }
        self.experiment.validate().map_err(|e| bad(e.to_string()))?;
        let o = &self.oracle;
        for (name, [lo, hi]) in [("chi_s", o.chi_s_range), ("chi_n", o.chi_n_range), ("g2", o.g2_range)] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(bad(format!("oracle {name} range [{lo}, {hi}]")));
            }
        }
        if !(o.s1 > 0.0) {
            return Err(bad(format!("oracle s1 = {}", o.s1)));
        }
        if self.tomography.bootstrap == 1 {
            return Err(bad("tomography.bootstrap must be 0 or at least 2".into()));
        }
        if self.scaling.t_grid.len() < 2 {
            return Err(bad("scaling.t_grid needs at least two points".into()));
        }
        Ok(())
    }

    /// Canonical TOML of the fully resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
