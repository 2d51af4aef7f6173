//! File formats: trajectory and axle-data CSV, model persistence, scenario
//! descriptions, and report emission. All parsers reject malformed input
//! with the offending file and line; all emitters are byte-deterministic
//! for fixed inputs.

mod axle_csv;
mod model_json;
mod reports;
mod scenario;
mod trajectory_csv;

pub use axle_csv::{axle_data_to_csv, parse_axle_csv, read_axle_csv, write_axle_csv};
pub use model_json::{load_rdl_model, parse_rdl_model_json, rdl_model_to_json, save_rdl_model};
pub use reports::{
    loss_curve_to_csv, ClosedLoopSummary, CompareReport, CompareRow, EstimateReport, FitReport,
    MethodStatus,
};
pub use scenario::{parse_scenario_json, read_scenario, ControllerSpec, Scenario, UpdateSpec};
pub use trajectory_csv::{
    parse_trajectory_csv, read_trajectory, trajectory_to_csv, write_trajectory,
};

use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum IoError {
    Io { path: String, source: std::io::Error },
    /// Malformed text input; `line` is 1-based (0 = header/structure).
    Parse { file: String, line: usize, message: String },
    /// Structurally valid input that violates a semantic constraint.
    Validation(Vec<String>),
}

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IoError::Io { path, source } => write!(f, "{path}: {source}"),
            IoError::Parse { file, line, message } => {
                if *line == 0 {
                    write!(f, "{file}: {message}")
                } else {
                    write!(f, "{file}:{line}: {message}")
                }
            }
            IoError::Validation(problems) => {
                write!(f, "validation failed: {}", problems.join("; "))
            }
        }
    }
}

impl std::error::Error for IoError {}

/// Writes a float with 17 significant digits so text round-trips are
/// lossless.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Hash binding an output artifact to the configuration that produced it:
/// the first 16 hex digits of SHA-256 over the canonical config bytes.
pub fn config_hash(canonical: &[u8]) -> String {
    let digest = Sha256::digest(canonical);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Tool version recorded in every emitted report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_round_trips_exactly() {
        for &v in &[0.0, 1.0, -3.5, 0.1, 1.0 / 3.0, 1e-300, 2.2250738585072014e-308, 9.9e307] {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }

    #[test]
    fn config_hash_is_stable_and_input_sensitive() {
        let a = config_hash(b"config-a");
        let b = config_hash(b"config-a");
        let c = config_hash(b"config-b");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
    }
}
