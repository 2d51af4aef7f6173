//! Report documents emitted by the command-line tools. Every report carries
//! the tool version and the config hash binding it to its inputs.

use super::{format_f64, TOOL_VERSION};
use crate::pidl::EstimateMethod;

/// Result of one estimation run (or an aggregation of several).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimateReport {
    pub version: String,
    pub config_hash: String,
    pub method: EstimateMethod,
    pub caf: f64,
    pub car: f64,
    /// Half-range relative uncertainties, present when aggregated.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rel_unc_caf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rel_unc_car: Option<f64>,
    /// Training iterations actually run (0 for non-iterative methods).
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_loss: Option<f64>,
    /// Trajectory discrepancy against a reference simulation with the
    /// estimated stiffness, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub traj_error: Option<f64>,
}

impl EstimateReport {
    pub fn new(method: EstimateMethod, caf: f64, car: f64, config_hash: String) -> Self {
        Self {
            version: TOOL_VERSION.to_string(),
            config_hash,
            method,
            caf,
            car,
            rel_unc_caf: None,
            rel_unc_car: None,
            iterations: 0,
            final_loss: None,
            traj_error: None,
        }
    }
}

/// Per-axle magic-formula fit report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitReport {
    pub version: String,
    pub config_hash: String,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub rms: f64,
    /// Analytic slope B*C*D at zero slip.
    pub stiffness: f64,
}

/// Outcome marker for one method inside a comparison run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodStatus {
    Ok,
    Failed { message: String },
}

/// One (dataset, method) cell of the comparison table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareRow {
    pub dataset: String,
    pub method: EstimateMethod,
    pub status: MethodStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub caf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub car: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub traj_error: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareReport {
    pub version: String,
    pub config_hash: String,
    pub rows: Vec<CompareRow>,
}

/// Summary of a closed-loop run (or a stale-vs-updated pair).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClosedLoopSummary {
    pub version: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub yaw_iae_stale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub yaw_iae_updated: Option<f64>,
    pub events: Vec<crate::control::SimEvent>,
}

/// Loss curves export as CSV `iter,loss`.
pub fn loss_curve_to_csv(curve: &[f64]) -> String {
    let mut out = String::with_capacity(curve.len() * 28 + 16);
    out.push_str("iter,loss\n");
    for (i, loss) in curve.iter().enumerate() {
        out.push_str(&i.to_string());
        out.push(',');
        out.push_str(&format_f64(*loss));
        out.push('\n');
    }
    out
}
