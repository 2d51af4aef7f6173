//! Sequence-regressor persistence: a JSON document holding layer dimensions,
//! flattened row-major weights, the bounded-output constants, the feature
//! transform, and the RNG seed the model was built from.

use super::{IoError, TOOL_VERSION};
use crate::nn::{BiLstmLayer, BoundedOutput, Matrix, Mlp};
use crate::pidl::FeatureStats;
use crate::rdl::{RdlModel, RdlTrainConfig};
use std::path::Path;

const FORMAT_TAG: &str = "stiffid-rdl-model";

#[derive(serde::Serialize, serde::Deserialize)]
struct CellJson {
    w_input: Vec<f64>,
    w_recur: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct HeadLayerJson {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BoundedJson {
    z_mean: Vec<f64>,
    z_range: f64,
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    format: String,
    version: String,
    seed: u64,
    features: usize,
    hidden_size: usize,
    head_dims: Vec<usize>,
    forward_cell: CellJson,
    backward_cell: CellJson,
    head_layers: Vec<HeadLayerJson>,
    bounded: BoundedJson,
    feature_stats: FeatureStats,
    train_config: RdlTrainConfig,
    loss_curve: Vec<f64>,
}

fn cell_to_json(cell: &crate::nn::LstmCell) -> CellJson {
    CellJson {
        w_input: cell.w_input.data.clone(),
        w_recur: cell.w_recur.data.clone(),
        bias: cell.bias.clone(),
    }
}

pub fn rdl_model_to_json(model: &RdlModel) -> String {
    let doc = ModelJson {
        format: FORMAT_TAG.to_string(),
        version: TOOL_VERSION.to_string(),
        seed: model.config.seed,
        features: model.bilstm.features(),
        hidden_size: model.bilstm.hidden_size,
        head_dims: {
            let mut dims = vec![model.head.input_size()];
            dims.extend(model.head.layers.iter().map(|l| l.output_size()));
            dims
        },
        forward_cell: cell_to_json(&model.bilstm.forward_cell),
        backward_cell: cell_to_json(&model.bilstm.backward_cell),
        head_layers: model
            .head
            .layers
            .iter()
            .map(|l| HeadLayerJson { weights: l.weights.data.clone(), biases: l.biases.clone() })
            .collect(),
        bounded: model
            .head
            .bounded
            .as_ref()
            .map(|b| BoundedJson { z_mean: b.z_mean.clone(), z_range: b.z_range })
            .unwrap_or(BoundedJson { z_mean: Vec::new(), z_range: 0.0 }),
        feature_stats: model.stats.clone(),
        train_config: model.config.clone(),
        loss_curve: model.loss_curve.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("model serialization is infallible")
}

pub fn save_rdl_model(path: &Path, model: &RdlModel) -> Result<(), IoError> {
    std::fs::write(path, rdl_model_to_json(model))
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

fn check(cond: bool, problems: &mut Vec<String>, message: &str) {
    if !cond {
        problems.push(message.to_string());
    }
}

fn finite(name: &str, values: &[f64], problems: &mut Vec<String>) {
    if values.iter().any(|v| !v.is_finite()) {
        problems.push(format!("{name} contains non-finite values"));
    }
}

/// Parses and validates a model document; every shape violation is reported.
pub fn parse_rdl_model_json(bytes: &[u8], file: &str) -> Result<RdlModel, IoError> {
    let doc: ModelJson = serde_json::from_slice(bytes).map_err(|e| IoError::Parse {
        file: file.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;

    let mut problems = Vec::new();
    check(doc.format == FORMAT_TAG, &mut problems, "format tag mismatch");
    let h = doc.hidden_size;
    let f = doc.features;
    check(h >= 1 && h <= 4096, &mut problems, "hidden_size out of range");
    check(f >= 1 && f <= 4096, &mut problems, "features out of range");
    if !problems.is_empty() {
        return Err(IoError::Validation(problems));
    }
    for (name, cell) in [("forward_cell", &doc.forward_cell), ("backward_cell", &doc.backward_cell)] {
        check(cell.w_input.len() == 4 * h * f, &mut problems, &format!("{name}.w_input size"));
        check(cell.w_recur.len() == 4 * h * h, &mut problems, &format!("{name}.w_recur size"));
        check(cell.bias.len() == 4 * h, &mut problems, &format!("{name}.bias size"));
        finite(&format!("{name}.w_input"), &cell.w_input, &mut problems);
        finite(&format!("{name}.w_recur"), &cell.w_recur, &mut problems);
        finite(&format!("{name}.bias"), &cell.bias, &mut problems);
    }
    check(doc.head_dims.len() >= 2, &mut problems, "head needs at least 2 dims");
    check(
        doc.head_dims.first() == Some(&(2 * h)),
        &mut problems,
        "head input dim must be 2*hidden_size",
    );
    check(
        doc.head_layers.len() + 1 == doc.head_dims.len().max(1),
        &mut problems,
        "head layer count must match dims",
    );
    check(
        doc.head_dims.iter().all(|&d| d >= 1 && d <= 65536),
        &mut problems,
        "head dims out of range",
    );
    if !problems.is_empty() {
        return Err(IoError::Validation(problems));
    }
    for (i, layer) in doc.head_layers.iter().enumerate() {
        let (din, dout) = (doc.head_dims[i], doc.head_dims[i + 1]);
        check(layer.weights.len() == din * dout, &mut problems, &format!("head layer {i} weights size"));
        check(layer.biases.len() == dout, &mut problems, &format!("head layer {i} biases size"));
        finite(&format!("head layer {i} weights"), &layer.weights, &mut problems);
        finite(&format!("head layer {i} biases"), &layer.biases, &mut problems);
    }
    let out_dim = *doc.head_dims.last().unwrap();
    check(doc.bounded.z_mean.len() == out_dim, &mut problems, "bounded z_mean size");
    check(
        doc.bounded.z_range > 0.0 && doc.bounded.z_range < 1.0,
        &mut problems,
        "bounded z_range must be in (0,1)",
    );
    check(
        doc.bounded.z_mean.iter().all(|&m| m.is_finite() && m > 0.0),
        &mut problems,
        "bounded z_mean must be positive",
    );
    finite("feature_stats.mean", &doc.feature_stats.mean, &mut problems);
    finite("feature_stats.std", &doc.feature_stats.std, &mut problems);
    check(
        doc.feature_stats.std.iter().all(|&s| s > 0.0),
        &mut problems,
        "feature_stats.std must be positive",
    );
    check(doc.train_config.feature_clip > 0.0, &mut problems, "feature_clip must be positive");
    if !problems.is_empty() {
        return Err(IoError::Validation(problems));
    }

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(doc.seed);
    let mut bilstm = BiLstmLayer::new(f, h, &mut rng);
    bilstm.forward_cell.w_input = Matrix::from_vec(4 * h, f, doc.forward_cell.w_input);
    bilstm.forward_cell.w_recur = Matrix::from_vec(4 * h, h, doc.forward_cell.w_recur);
    bilstm.forward_cell.bias = doc.forward_cell.bias;
    bilstm.backward_cell.w_input = Matrix::from_vec(4 * h, f, doc.backward_cell.w_input);
    bilstm.backward_cell.w_recur = Matrix::from_vec(4 * h, h, doc.backward_cell.w_recur);
    bilstm.backward_cell.bias = doc.backward_cell.bias;

    let bounded = BoundedOutput::new(doc.bounded.z_mean, doc.bounded.z_range)
        .map_err(|e| IoError::Validation(vec![e.to_string()]))?;
    let mut head = Mlp::new(&doc.head_dims, Some(bounded), doc.seed)
        .map_err(|e| IoError::Validation(vec![e.to_string()]))?;
    for (i, layer) in doc.head_layers.into_iter().enumerate() {
        let (din, dout) = (doc.head_dims[i], doc.head_dims[i + 1]);
        head.layers[i].weights = Matrix::from_vec(dout, din, layer.weights);
        head.layers[i].biases = layer.biases;
    }

    Ok(RdlModel {
        bilstm,
        head,
        stats: doc.feature_stats,
        config: doc.train_config,
        loss_curve: doc.loss_curve,
    })
}

pub fn load_rdl_model(path: &Path) -> Result<RdlModel, IoError> {
    let bytes = std::fs::read(path)
        .map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    parse_rdl_model_json(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VehicleParams;
    use crate::rdl::{generate_grid_dataset, train_rdl, DatasetConfig};

    fn small_model() -> RdlModel {
        let cfg = DatasetConfig { dt: 0.05, duration: 0.5, ..DatasetConfig::default() };
        let ds = generate_grid_dataset(&VehicleParams::scaled_test_vehicle(), &cfg).unwrap();
        let tiny = crate::rdl::LabeledDataset {
            items: ds.items.into_iter().step_by(60).collect(),
            config: cfg,
        };
        train_rdl(
            &tiny,
            &RdlTrainConfig { epochs: 2, hidden_size: 4, seed: 3, ..RdlTrainConfig::default() },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let model = small_model();
        let json = rdl_model_to_json(&model);
        let back = parse_rdl_model_json(json.as_bytes(), "mem").unwrap();
        assert_eq!(model.bilstm.forward_cell.w_input, back.bilstm.forward_cell.w_input);
        assert_eq!(model.head.flat_params(), back.head.flat_params());
        assert_eq!(model.stats, back.stats);
        assert_eq!(model.loss_curve, back.loss_curve);
    }

    #[test]
    fn rejects_mangled_documents() {
        let model = small_model();
        let json = rdl_model_to_json(&model);
        // Truncated JSON.
        assert!(parse_rdl_model_json(&json.as_bytes()[..json.len() / 2], "m").is_err());
        // Wrong format tag.
        let wrong = json.replacen(FORMAT_TAG, "other-model", 1);
        assert!(matches!(
            parse_rdl_model_json(wrong.as_bytes(), "m"),
            Err(IoError::Validation(_))
        ));
        // Mismatched weight count.
        let mut doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        doc["forward_cell"]["bias"] = serde_json::json!([1.0, 2.0]);
        let mangled = serde_json::to_string(&doc).unwrap();
        assert!(matches!(
            parse_rdl_model_json(mangled.as_bytes(), "m"),
            Err(IoError::Validation(_))
        ));
        // Unknown field.
        doc = serde_json::from_str(&json).unwrap();
        doc["extra"] = serde_json::json!(1);
        let unknown = serde_json::to_string(&doc).unwrap();
        assert!(parse_rdl_model_json(unknown.as_bytes(), "m").is_err());
    }
}
