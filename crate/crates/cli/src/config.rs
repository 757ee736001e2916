use std::path::{Path, PathBuf};

use aflow_core::algebra::MAX_DIM;
use aflow_core::flow::{Family, FlowConfig, Formulation, PerturbationSpec};
use aflow_core::torus::{parse_coord, TorusGrid};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Flow from `χ^{n−1}` itself.
    Stationary,
    /// Kähler family `η = χ + i∂∂̄f` driven by its conformal anomaly metric.
    Theorem1,
    StabilityBalanced,
    StabilityGeneric,
    /// Both formulations from the same balanced data.
    Lemma31Equivalence,
    /// All verification suites.
    VerifyLemmas,
    Spectrum,
}

impl Scenario {
    /// Family required by the scenario, if it draws random data.
    pub fn family(self) -> Option<Family> {
        match self {
            Scenario::Theorem1 => Some(Family::Conformal),
            Scenario::StabilityBalanced | Scenario::Lemma31Equivalence => Some(Family::Balanced),
            Scenario::StabilityGeneric => Some(Family::Generic),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
    #[serde(default = "default_active")]
    pub active_coords: Vec<String>,
}

fn default_active() -> Vec<String> {
    vec!["x1".into(), "y1".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub family: Family,
    pub amplitude: f64,
    pub seed: u64,
    #[serde(default = "default_max_mode")]
    pub max_mode: usize,
}

fn default_max_mode() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub cfl: f64,
    pub t_max: f64,
    pub stop_energy: f64,
    pub checkpoint_every: usize,
    pub formulation: Formulation,
    pub dealias: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let f = FlowConfig::default();
        Self {
            cfl: f.cfl,
            t_max: f.t_max,
            stop_energy: f.stop_energy,
            checkpoint_every: f.checkpoint_every,
            formulation: Formulation::default(),
            dealias: f.dealias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsConfig {
    pub k: usize,
}

impl Default for NormsConfig {
    fn default() -> Self {
        Self { k: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub grid: GridConfig,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub norms: NormsConfig,
}

impl ExperimentConfig {
    /// Reads TOML or JSON by file extension and validates the result.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text)?,
            Some("json") => Self::from_json(&text)?,
            other => {
                return Err(CliError::Config(format!(
                    "unsupported config extension {other:?}; use .toml or .json"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 || self.n > MAX_DIM {
            return Err(CliError::Config(format!("n must lie in 3..={MAX_DIM}, got {}", self.n)));
        }
        let grid = self.grid()?;
        self.flow_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.norms.k > grid.resolution() / 4 {
            return Err(CliError::Config(format!(
                "norms.k = {} needs resolution >= {}",
                self.norms.k,
                4 * self.norms.k
            )));
        }
        if let Some(family) = self.scenario.family() {
            let Some(p) = &self.perturbation else {
                return Err(CliError::Config(format!(
                    "scenario {:?} needs a [perturbation] table with a seed",
                    self.scenario
                )));
            };
            if p.family != family {
                return Err(CliError::Config(format!(
                    "scenario {:?} uses the {family:?} family, config asks for {:?}",
                    self.scenario, p.family
                )));
            }
        }
        if let Some(p) = &self.perturbation {
            if !(p.amplitude >= 0.0 && p.amplitude.is_finite()) {
                return Err(CliError::Config(format!("amplitude must be >= 0, got {}", p.amplitude)));
            }
            if 2 * p.max_mode >= grid.resolution() {
                return Err(CliError::Config(format!(
                    "max_mode {} not resolved at resolution {}",
                    p.max_mode,
                    grid.resolution()
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        let mut active = Vec::with_capacity(self.grid.active_coords.len());
        for name in &self.grid.active_coords {
            let c = parse_coord(name)
                .filter(|&c| c < 2 * self.n)
                .ok_or_else(|| CliError::Config(format!("unknown coordinate {name:?}")))?;
            active.push(c);
        }
        TorusGrid::new(self.n, self.grid.resolution, &active).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            t_max: self.integrator.t_max,
            cfl: self.integrator.cfl,
            checkpoint_every: self.integrator.checkpoint_every,
            stop_energy: self.integrator.stop_energy,
            dealias: self.integrator.dealias,
            norms_k: self.norms.k,
        }
    }

    pub fn perturbation_spec(&self) -> Option<PerturbationSpec> {
        self.perturbation.as_ref().map(|p| PerturbationSpec {
            family: p.family,
            amplitude: p.amplitude,
            seed: p.seed,
            max_mode: p.max_mode,
        })
    }

    /// Canonical byte form used for hashing. The output location is not
    /// part of the experiment and is left out.
    pub fn canonical_json(&self) -> Vec<u8> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        serde_json::to_vec(&c).expect("config serializes")
    }
}
