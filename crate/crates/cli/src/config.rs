//! Run configuration: JSON schema, loading and cross-validation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qtransport::bath::{Reservoir, Statistics};
use qtransport::evolution::EvolutionMode;
use qtransport::linalg::CMat;
use qtransport::solver::SolverConfig;
use qtransport::system::{InitialState, SystemModel};
use qtransport::timegrid::{GridSpec, TimeGrid};
use qtransport::transport::{LandauerSpec, LevelPopulation};
use qtransport::verify::Scenario;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    #[default]
    Simulate,
    Landauer,
    Verify,
    Kernels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pairing {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default = "fermion")]
    pub statistics: Statistics,
    /// On-site energies ε_k.
    pub energies: Vec<f64>,
    #[serde(default)]
    pub pairing: Vec<Pairing>,
    /// Bosonic occupation cutoff per mode.
    #[serde(default = "one")]
    pub cutoff: usize,
}

fn fermion() -> Statistics {
    Statistics::Fermion
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionBlock {
    #[serde(default)]
    pub mode: EvolutionMode,
    pub initial_state: InitialState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    /// Output directory; the command line `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub dump_state: bool,
    #[serde(default)]
    pub dump_kernels: bool,
    /// Also write weak-coupling currents next to the exact ones.
    #[serde(default)]
    pub weak_coupling_reference: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandauerBlock {
    /// Level broadening; π Σ_α J_α(ω₀) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Level population; the simulated plateau value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<LevelPopulation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: ScenarioKind,
    pub system: SystemBlock,
    pub reservoirs: Vec<Reservoir>,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub evolution: EvolutionBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landauer: Option<LandauerBlock>,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

/// Reads and validates a JSON run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.system.energies.len();
        if n == 0 {
            return Err(invalid("system.energies", "at least one mode is required"));
        }
        for (k, p) in self.system.pairing.iter().enumerate() {
            if p.i >= n || p.j >= n {
                return Err(invalid(&format!("system.pairing[{k}]"), format!("mode index out of range for {n} modes")));
            }
        }
        if self.reservoirs.is_empty() {
            return Err(invalid("reservoirs", "at least one reservoir is required"));
        }
        for (k, r) in self.reservoirs.iter().enumerate() {
            if r.site >= n {
                return Err(invalid(&format!("reservoirs[{k}].site"), format!("site {} does not exist, the system has {n} modes", r.site)));
            }
            r.validate(self.system.statistics).map_err(|e| invalid(&format!("reservoirs[{k}]"), e))?;
        }
        self.grid.build().map_err(|e| invalid("grid", e))?;
        self.solver.validate().map_err(|e| invalid("solver", e))?;
        let model = self.model()?;
        self.evolution.initial_state.density_matrix(&model).map_err(|e| invalid("evolution.initial_state", e))?;
        if let Some(LandauerBlock { gamma: Some(g), .. }) = &self.landauer {
            if !(*g > 0.0) {
                return Err(invalid("landauer.gamma", "must be positive"));
            }
        }
        if self.scenario == ScenarioKind::Landauer && (n != 1 || self.system.statistics != Statistics::Fermion) {
            return Err(invalid("system", "the landauer scenario needs a single fermionic level"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SystemModel, CliError> {
        let pairs: Vec<(usize, usize, f64)> = self.system.pairing.iter().map(|p| (p.i, p.j, p.value)).collect();
        let sites: Vec<usize> = self.reservoirs.iter().map(|r| r.site).collect();
        SystemModel::from_levels(self.system.statistics, &self.system.energies, &pairs, &sites, self.system.cutoff).map_err(|e| invalid("system", e))
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        self.grid.build().map_err(|e| invalid("grid", e))
    }

    pub fn initial_state(&self, model: &SystemModel) -> Result<CMat, CliError> {
        self.evolution.initial_state.density_matrix(model).map_err(|e| invalid("evolution.initial_state", e))
    }

    pub fn scenario_inputs(&self) -> Result<Scenario, CliError> {
        let model = self.model()?;
        let rho0 = self.initial_state(&model)?;
        Ok(Scenario { model, reservoirs: self.reservoirs.clone(), grid: self.grid()?, solver: self.solver.clone(), rho0 })
    }

    /// Landauer integral setup for reservoir `target`.
    pub fn landauer_spec(&self, target: usize, plateau: Option<f64>) -> Result<LandauerSpec, CliError> {
        let omega0 = self.system.energies[0];
        let block = self.landauer.clone().unwrap_or_default();
        let gamma = block.gamma.unwrap_or_else(|| PI * self.reservoirs.iter().map(|r| r.spectral.eval(omega0)).sum::<f64>());
        let population = match (block.population, plateau) {
            (Some(p), _) => p,
            (None, Some(value)) => LevelPopulation::Constant { value },
            (None, None) => LevelPopulation::FermiMixture,
        };
        let spec = LandauerSpec { omega0, gamma, population, reservoirs: self.reservoirs.clone(), target };
        spec.validate().map_err(|e| invalid("landauer", e))?;
        Ok(spec)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
