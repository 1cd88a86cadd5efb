//! JSON latency profile file:
//!
//! ```text
//! { "tau_ms": f64,
//!   "layers": [ { "name": str, "shape": [o_c, i_c, k_h, k_w, i_h, i_w, stride, pad],
//!                 "knots": [[nnz, ms], ...] } ],
//!   "meta": { "runs": int, "warmup": int, "seed": int, "host": str } }
//! ```
//!
//! Times are written with shortest round-trip formatting, so reloading reproduces every
//! `f64` exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::profile::{LayerLatencyProfile, LayerSpec, MeasurementMeta, NetworkLatencyModel};
use crate::error::{DecodeError, Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    tau_ms: f64,
    layers: Vec<LayerRecord>,
    meta: MeasurementMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    name: String,
    shape: [usize; 8],
    knots: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

pub fn profile_to_json(model: &NetworkLatencyModel) -> String {
    let record = ModelRecord {
        tau_ms: model.tau_ms(),
        layers: model
            .profiles()
            .iter()
            .map(|p| LayerRecord {
                name: p.name().to_owned(),
                shape: p.spec().shape_array(),
                knots: p.points().collect(),
                warnings: p.warnings().to_vec(),
            })
            .collect(),
        meta: model.meta.clone(),
    };
    serde_json::to_string_pretty(&record).expect("latency model serializes")
}

pub fn profile_from_json(text: &str) -> Result<NetworkLatencyModel> {
    let record: ModelRecord = serde_json::from_str(text).map_err(|e| DecodeError::Schema(e.to_string()))?;
    let schema = |e: Error| -> Error { DecodeError::Schema(e.to_string()).into() };
    let profiles = record
        .layers
        .into_iter()
        .map(|layer| {
            let spec = LayerSpec::from_shape_array(layer.name, layer.shape).map_err(schema)?;
            Ok(LayerLatencyProfile::new(spec, &layer.knots).map_err(schema)?.with_warnings(layer.warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkLatencyModel::new(record.tau_ms, profiles).map_err(schema)?.with_meta(record.meta))
}

pub fn save_profile(model: &NetworkLatencyModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, profile_to_json(model))?;
    Ok(())
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<NetworkLatencyModel> {
    profile_from_json(&std::fs::read_to_string(path)?)
}
