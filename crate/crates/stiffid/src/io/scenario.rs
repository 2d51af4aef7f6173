//! Closed-loop scenario files: driver schedule, piecewise-constant plant
//! schedule, controller weights (or an explicit gain matrix), sensor noise,
//! and the online update policy. Validation collects every offending field
//! instead of stopping at the first.

use super::IoError;
use crate::control::{DriverSchedule, PlantSchedule};
use crate::dynamics::{NoiseModel, VehicleParams};
use std::path::Path;

/// Controller specification: either synthesis weights at a design stiffness
/// pair, or an explicit gain matrix (`u = K error`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default)]
    pub state_weights: Option<[f64; 2]>,
    #[serde(default)]
    pub input_weights: Option<[f64; 2]>,
    /// Stiffness pair the gain is designed at (defaults to the initial
    /// reference stiffness).
    #[serde(default)]
    pub design_stiffness: Option<(f64, f64)>,
    /// Explicit 2x2 gain matrix; overrides synthesis when present.
    #[serde(default)]
    pub gain_matrix: Option<[[f64; 2]; 2]>,
}

/// Online re-estimation policy settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateSpec {
    /// Seconds between re-estimations.
    pub period: f64,
    /// Trailing window length in seconds.
    pub window: f64,
    /// Iteration budget for each online estimation.
    pub iterations: usize,
}

impl Default for UpdateSpec {
    fn default() -> Self {
        Self { period: 2.0, window: 4.0, iterations: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub vehicle: VehicleParams,
    pub driver: DriverSchedule,
    pub plant: PlantSchedule,
    /// Stiffness pair the reference generator starts from.
    pub initial_stiffness: (f64, f64),
    pub controller: ControllerSpec,
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Online update policy; absent = stale reference throughout.
    #[serde(default)]
    pub update_policy: Option<UpdateSpec>,
    /// Run both the stale and updated configurations and report both.
    #[serde(default)]
    pub compare_stale: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Collects every constraint violation.
    pub fn validate(&self) -> Result<(), IoError> {
        let mut problems = Vec::new();
        if let Err(e) = self.vehicle.validate() {
            problems.push(format!("vehicle: {e}"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt: must be positive, got {}", self.dt));
        }
        if !(self.duration >= self.dt) {
            problems.push(format!(
                "duration: must be at least dt, got {} vs {}",
                self.duration, self.dt
            ));
        }
        if !(self.driver.vx > 0.0) {
            problems.push(format!("driver.vx: must be positive, got {}", self.driver.vx));
        }
        if let Err(e) = self.plant.validate() {
            problems.push(format!("plant: {e}"));
        }
        let (caf, car) = self.initial_stiffness;
        if !(caf > 0.0 && car > 0.0) {
            problems.push(format!(
                "initial_stiffness: must be positive, got ({caf}, {car})"
            ));
        }
        if let Err(e) = self.noise.validate() {
            problems.push(format!("noise: {e}"));
        }
        match (&self.controller.gain_matrix, &self.controller.state_weights, &self.controller.input_weights) {
            (Some(k), _, _) => {
                if k.iter().flatten().any(|v| !v.is_finite()) {
                    problems.push("controller.gain_matrix: entries must be finite".into());
                }
            }
            (None, Some(sw), Some(iw)) => {
                if sw.iter().any(|w| !(*w >= 0.0)) {
                    problems.push(format!(
                        "controller.state_weights: must be non-negative, got {sw:?}"
                    ));
                }
                if iw.iter().any(|w| !(*w > 0.0)) {
                    problems.push(format!(
                        "controller.input_weights: must be positive, got {iw:?}"
                    ));
                }
            }
            _ => problems.push(
                "controller: need either gain_matrix or both state_weights and input_weights"
                    .into(),
            ),
        }
        if let Some(up) = &self.update_policy {
            if !(up.period > 0.0) {
                problems.push(format!("update_policy.period: must be positive, got {}", up.period));
            }
            if !(up.window > 0.0) {
                problems.push(format!("update_policy.window: must be positive, got {}", up.window));
            }
            if up.iterations == 0 {
                problems.push("update_policy.iterations: must be >= 1".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IoError::Validation(problems))
        }
    }
}

pub fn parse_scenario_json(bytes: &[u8], file: &str) -> Result<Scenario, IoError> {
    let scenario: Scenario = serde_json::from_slice(bytes).map_err(|e| IoError::Parse {
        file: file.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn read_scenario(path: &Path) -> Result<Scenario, IoError> {
    let bytes = std::fs::read(path)
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    parse_scenario_json(&bytes, &path.display().to_string())
}
