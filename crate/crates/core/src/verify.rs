//! Equivalence checks of a stored sparse model and the scalar/vectorized speed check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::latency::{pattern_kernel, random_unit_mask, time_ms, unit_count, LayerSpec, Statistic};
use crate::nn::{ConvPath, Dims, SparseNetwork};
use crate::scalar::max_relative_error;
use crate::sparse_conv::{conv_dense_reference, conv_sparse, conv_sparse_vectorized, ConvGeometry, FeatureMap};
use crate::sparse_format::{compress, decompress, SparseModel};

/// Largest tolerated element-wise relative error against the dense oracle.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub name: String,
    pub density: f64,
    pub max_rel_err_scalar: f64,
    pub max_rel_err_vectorized: f64,
    /// Scalar and vectorized outputs are bit-identical.
    pub paths_identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupReport {
    pub shape: [usize; 8],
    pub density: f64,
    pub runs: usize,
    pub scalar_ms: f64,
    pub vectorized_ms: f64,
    /// `scalar_ms / vectorized_ms`.
    pub speedup: f64,
    /// The vectorized path is at most 5% slower than the scalar path.
    pub within_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
    pub samples: usize,
    /// Whole-network logits, vectorized path against the dense oracle.
    pub network_max_rel_err: f64,
    pub max_rel_err: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<SpeedupReport>,
}

fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap<f32> {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0f32..1.0))
}

/// Runs every layer of `model` on random inputs through the dense oracle, the scalar
/// path and the vectorized path, then the whole network on `samples` random inputs.
pub fn verify_model(model: &SparseModel, input: Dims, samples: usize, seed: u64) -> Result<VerifyReport> {
    let net = SparseNetwork::new(input, model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(model.layers.len());
    for (layer, spec) in model.layers.iter().zip(net.arch().layer_specs()) {
        let x = random_map(spec.kernel.in_channels, spec.input_h, spec.input_w, &mut rng);
        let geom = ConvGeometry::new(layer.stride, layer.pad)?;
        let bias = layer.bias.as_deref();
        let oracle = conv_dense_reference(&x, &decompress(&layer.kernel), bias, geom)?;
        let scalar = conv_sparse(&x, &layer.kernel, bias, geom)?;
        let vectorized = conv_sparse_vectorized(&x, &layer.kernel, bias, geom)?;
        layers.push(LayerCheck {
            name: spec.name,
            density: layer.kernel.density(),
            max_rel_err_scalar: max_relative_error(scalar.values(), oracle.values()),
            max_rel_err_vectorized: max_relative_error(vectorized.values(), oracle.values()),
            paths_identical: scalar.values().iter().zip(vectorized.values()).all(|(a, b)| a.to_bits() == b.to_bits()),
        });
    }
    let mut network_max_rel_err = 0.0f64;
    for _ in 0..samples {
        let x = random_map(input.0, input.1, input.2, &mut rng);
        let oracle = net.forward(&x, ConvPath::Dense)?;
        let fast = net.forward(&x, ConvPath::Vectorized { threads: 1 })?;
        network_max_rel_err = network_max_rel_err.max(max_relative_error(&fast, &oracle));
    }
    let max_rel_err = layers
        .iter()
        .flat_map(|l| [l.max_rel_err_scalar, l.max_rel_err_vectorized])
        .fold(network_max_rel_err, f64::max);
    let passed = max_rel_err <= TOLERANCE && layers.iter().all(|l| l.paths_identical);
    Ok(VerifyReport { tolerance: TOLERANCE, layers, samples, network_max_rel_err, max_rel_err, passed, speedup: None })
}

/// The reference speed-check layer: 64×32×3×3, 28×28 input, stride 1, pad 1.
pub fn speedup_spec() -> LayerSpec {
    LayerSpec::from_shape_array("speedup", [64, 32, 3, 3, 28, 28, 1, 1]).expect("valid shape")
}

/// Times both sparse paths on `spec` at `density` (random units, group size `g`) and
/// reports the median latencies. The two paths are timed alternately in rounds so slow
/// drift of the host affects both equally.
pub fn benchmark_speedup(
    spec: &LayerSpec,
    density: f64,
    group_size: usize,
    runs: usize,
    warmup: usize,
    seed: u64,
) -> Result<SpeedupReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = unit_count(&spec.kernel, group_size);
    let mask = random_unit_mask(units, (density * units as f64).round() as usize, &mut rng);
    let kernel = compress(&pattern_kernel(spec.kernel, group_size, &mask, &mut rng), group_size);
    let x = random_map(spec.kernel.in_channels, spec.input_h, spec.input_w, &mut rng);
    let rounds = 5.min(runs.max(1));
    let per_round = runs.max(1).div_ceil(rounds);
    let (mut scalar, mut vectorized) = (Vec::new(), Vec::new());
    for round in 0..rounds {
        let w = if round == 0 { warmup } else { 0 };
        scalar.push(time_ms(per_round, w, Statistic::Median, || {
            std::hint::black_box(conv_sparse(&x, &kernel, None, spec.geom).expect("shape checked"));
        }));
        vectorized.push(time_ms(per_round, w, Statistic::Median, || {
            std::hint::black_box(conv_sparse_vectorized(&x, &kernel, None, spec.geom).expect("shape checked"));
        }));
    }
    let scalar_ms = crate::latency::summarize(&mut scalar, Statistic::Median);
    let vectorized_ms = crate::latency::summarize(&mut vectorized, Statistic::Median);
    Ok(SpeedupReport {
        shape: spec.shape_array(),
        density: kernel.density(),
        runs: rounds * per_round,
        scalar_ms,
        vectorized_ms,
        speedup: scalar_ms / vectorized_ms,
        within_floor: vectorized_ms <= 1.05 * scalar_ms,
    })
}
