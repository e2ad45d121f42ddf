//! Run configuration: a TOML file overlaid with command-line flags.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Quantities carry their unit in the key name (`t_end_s`, `fault_resistance_pu`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajex::extremes::EnvelopeConfig;
use trajex::models::{load_scenario, Scenario};
use trajex::oracle::{SampleMode, SamplePlan};
use trajex::ParameterBox;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Trust-region envelope with surrogate rebuilds.
    #[default]
    Trust,
    /// One quadratic model at the nominal point, optimized over the whole box.
    Taylor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `a`, `b`, `c` or a path to a case file.
    pub scenario: String,
    /// Observed trajectory column, e.g. `gen1.omega` or `bus2.vmag`.
    pub state: String,
    /// Extra columns scored by `compare`; `state` is always included.
    pub compare_states: Vec<String>,
    pub out_dir: PathBuf,
    /// Worker threads; all hardware threads when absent.
    pub jobs: Option<usize>,
    pub verbose: bool,
    pub baseline: Baseline,
    /// Parameter point for `simulate`; the box midpoint when absent.
    pub params: Option<Vec<f64>>,
    pub slice_time_s: f64,
    /// Fault resistances for a severity sweep in `compare`.
    pub fault_sweep_pu: Vec<f64>,
    pub times: TimeSelection,
    pub bounds: Option<BoundsOverride>,
    pub case: CaseOverrides,
    pub sampling: Sampling,
    pub envelope: EnvelopeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "a".into(),
            state: "gen1.omega".into(),
            compare_states: Vec::new(),
            out_dir: PathBuf::from("out"),
            jobs: None,
            verbose: false,
            baseline: Baseline::Trust,
            params: None,
            slice_time_s: 0.288,
            fault_sweep_pu: Vec::new(),
            times: TimeSelection::default(),
            bounds: None,
            case: CaseOverrides::default(),
            sampling: Sampling::default(),
            envelope: EnvelopeConfig::default(),
        }
    }
}

/// Mesh rows to optimize. Precedence: `times_s`, then `full_mesh`, then the
/// scenario's default stride; `window_s` then filters the result.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSelection {
    pub times_s: Option<Vec<f64>>,
    pub full_mesh: bool,
    pub window_s: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsOverride {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Edits applied to the case data before the scenario is built. Fault
/// settings apply to every fault in the case.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseOverrides {
    pub t_end_s: Option<f64>,
    pub steps_per_second: Option<f64>,
    pub fault_resistance_pu: Option<f64>,
    pub fault_reactance_pu: Option<f64>,
    pub fault_start_s: Option<f64>,
    pub fault_end_s: Option<f64>,
    pub reuse_jacobian: Option<bool>,
}

impl CaseOverrides {
    fn is_empty(&self) -> bool {
        *self == CaseOverrides::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    /// Grid for one-dimensional boxes and uniform otherwise, when absent.
    pub mode: Option<SampleMode>,
    /// Points per dimension (grid) or total samples (uniform).
    pub count: usize,
    pub seed: u64,
    /// Keep every sample trajectory (needed for slices).
    pub retain: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { mode: None, count: 100, seed: 0, retain: false }
    }
}

impl Sampling {
    pub fn plan(&self, dim: usize) -> SamplePlan {
        let mode = self.mode.unwrap_or(if dim == 1 { SampleMode::Grid } else { SampleMode::UniformRandom });
        SamplePlan { mode, count: self.count, seed: self.seed }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Builds the scenario with case overrides applied.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.scenario_with_fault(None)
    }

    /// As [`RunConfig::scenario`], with the fault resistance forced to `r`.
    pub fn scenario_with_fault(&self, r: Option<f64>) -> Result<Scenario, CliError> {
        let base = load_scenario(&self.scenario)?;
        if self.case.is_empty() && r.is_none() {
            return Ok(base);
        }
        let mut data = base.data.clone();
        let o = &self.case;
        if let Some(t) = o.t_end_s {
            data.simulation.t_end = t;
        }
        if let Some(s) = o.steps_per_second {
            data.simulation.steps_per_second = s;
        }
        if let Some(reuse) = o.reuse_jacobian {
            data.simulation.reuse_jacobian = reuse;
        }
        for f in &mut data.faults {
            if let Some(v) = r.or(o.fault_resistance_pu) {
                f.r = v;
            }
            if let Some(v) = o.fault_reactance_pu {
                f.x = v;
            }
            if let Some(v) = o.fault_start_s {
                f.t_on = v;
            }
            if let Some(v) = o.fault_end_s {
                f.t_off = v;
            }
        }
        Ok(Scenario::from_data(data)?)
    }

    pub fn bounds(&self, scenario: &Scenario) -> Result<ParameterBox, CliError> {
        match &self.bounds {
            None => Ok(scenario.bounds.clone()),
            Some(b) => {
                let bx = ParameterBox::new(b.lower.clone(), b.upper.clone())?;
                if bx.dim() != scenario.n_param() {
                    return Err(CliError::Config(format!(
                        "bounds have {} dimensions but the scenario has {} parameters",
                        bx.dim(),
                        scenario.n_param()
                    )));
                }
                Ok(bx)
            }
        }
    }

    /// Resolves a state name to its trajectory column.
    pub fn state_index(&self, scenario: &Scenario, name: &str) -> Result<usize, CliError> {
        scenario.state_index(name).map_err(|_| CliError::Config(format!("unknown state `{name}`")))
    }

    pub fn rows(&self, scenario: &Scenario) -> Result<Vec<usize>, CliError> {
        let grid = &scenario.grid;
        let mut rows: Vec<usize> = match (&self.times.times_s, self.times.full_mesh) {
            (Some(ts), _) => {
                if let Some(t) = ts.iter().find(|&&t| t < grid.t0() || t > grid.t_end()) {
                    return Err(CliError::Config(format!("time {t} s is outside the simulated horizon")));
                }
                ts.iter().map(|&t| grid.nearest_index(t)).collect()
            }
            (None, true) => (0..grid.len()).collect(),
            (None, false) => scenario.times_of_interest.clone(),
        };
        if let Some([a, b]) = self.times.window_s {
            if !(a <= b) {
                return Err(CliError::Config(format!("empty time window [{a}, {b}]")));
            }
            let times = grid.times();
            rows.retain(|&r| times[r] >= a && times[r] <= b);
        }
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() {
            return Err(CliError::Config("no mesh rows selected".into()));
        }
        Ok(rows)
    }
}
