//! On-host latency measurement of single layers.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::profile::{LayerLatencyProfile, LayerSpec, MeasurementMeta, NetworkLatencyModel};
use crate::error::{Error, Result};
use crate::sparse_conv::{conv_sparse_vectorized, FeatureMap};
use crate::sparse_format::{compress, group_partition, DenseKernel, KernelShape};

/// Densities `0, 0.1, …, 1.0`.
pub fn default_densities() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Statistic {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureConfig {
    pub group_size: usize,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    pub statistic: Statistic,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { group_size: 4, runs: 50, warmup: 5, seed: 0, statistic: Statistic::Median }
    }
}

/// Number of prune units of a layer: one per (group, column).
pub fn unit_count(shape: &KernelShape, group_size: usize) -> usize {
    shape.out_channels.div_ceil(group_size) * shape.columns()
}

/// Uniformly random keep-mask over a layer's units with exactly `kept` units set.
pub fn random_unit_mask(units: usize, kept: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(rng);
    let mut mask = vec![false; units];
    for &u in order.iter().take(kept) {
        mask[u] = true;
    }
    mask
}

/// Kernel whose kept units hold random values of magnitude in `[0.25, 1)` and whose
/// dropped units are zero. Unit `u` is group `u / C`, column `u % C`.
pub fn pattern_kernel(shape: KernelShape, group_size: usize, mask: &[bool], rng: &mut impl Rng) -> DenseKernel<f32> {
    let columns = shape.columns();
    let mut kernel = DenseKernel::zeros(shape);
    let values = kernel.values_mut();
    for (group, range) in group_partition(shape.out_channels, group_size).into_iter().enumerate() {
        for column in 0..columns {
            if mask[group * columns + column] {
                for n in range.clone() {
                    let magnitude = rng.gen_range(0.25f32..1.0);
                    values[n * columns + column] = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
                }
            }
        }
    }
    kernel
}

/// Nonzero parameter count implied by a unit mask (tail units count their short size).
pub fn mask_nonzeros(shape: &KernelShape, group_size: usize, mask: &[bool]) -> usize {
    let columns = shape.columns();
    group_partition(shape.out_channels, group_size)
        .iter()
        .enumerate()
        .map(|(group, range)| mask[group * columns..(group + 1) * columns].iter().filter(|&&k| k).count() * range.len())
        .sum()
}

fn knot_rng(seed: u64, knot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (knot as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The benchmark masks used for each density, in the order given. Identical seeds give
/// identical masks.
pub fn knot_masks(spec: &LayerSpec, group_size: usize, densities: &[f64], seed: u64) -> Vec<Vec<bool>> {
    let units = unit_count(&spec.kernel, group_size);
    densities
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let kept = ((d * units as f64).floor() as usize).min(units);
            random_unit_mask(units, kept, &mut knot_rng(seed, i))
        })
        .collect()
}

/// Smallest observable nonzero step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    let mut last = Instant::now();
    for _ in 0..10_000 {
        let now = Instant::now();
        let step = now - last;
        if !step.is_zero() {
            best = best.min(step);
        }
        last = now;
    }
    best
}

/// Median or mean of the samples.
pub fn summarize(samples: &mut [f64], statistic: Statistic) -> f64 {
    match statistic {
        Statistic::Mean => samples.iter().sum::<f64>() / samples.len() as f64,
        Statistic::Median => {
            samples.sort_by(f64::total_cmp);
            let mid = samples.len() / 2;
            if samples.len() % 2 == 1 {
                samples[mid]
            } else {
                0.5 * (samples[mid - 1] + samples[mid])
            }
        }
    }
}

/// Calls `f` `warmup` times, then times `runs` calls and summarizes them in ms.
pub fn time_ms(runs: usize, warmup: usize, statistic: Statistic, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut samples: Vec<f64> = (0..runs.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    summarize(&mut samples, statistic)
}

/// Measures the latency of one layer at each density, on the calling thread.
///
/// Each density `d` keeps `⌊d · units⌋` uniformly chosen units; the knot is the
/// resulting nonzero count and its time the summarized latency of the register-tiled
/// sparse convolution. Densities that collapse onto the same nonzero count keep the
/// first measurement. Times are made nondecreasing before the profile is built.
pub fn measure_layer_profile(
    spec: &LayerSpec,
    densities: &[f64],
    config: &MeasureConfig,
) -> Result<LayerLatencyProfile> {
    if config.runs == 0 {
        return Err(Error::Domain("runs must be >= 1".into()));
    }
    if config.group_size == 0 {
        return Err(Error::Domain("group size must be >= 1".into()));
    }
    if densities.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::Domain("densities must lie in [0, 1]".into()));
    }
    let mut densities = densities.to_vec();
    densities.sort_by(f64::total_cmp);
    densities.dedup();
    if densities.first() != Some(&0.0) || densities.last() != Some(&1.0) {
        return Err(Error::Domain("densities must include 0 and 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input =
        FeatureMap::from_fn(spec.kernel.in_channels, spec.input_h, spec.input_w, |_, _, _| rng.gen_range(-1.0f32..1.0));
    let resolution_ms = timer_resolution().as_secs_f64() * 1e3;
    let mut points: Vec<(usize, f64)> = Vec::with_capacity(densities.len());
    let mut warnings = Vec::new();
    for (i, mask) in knot_masks(spec, config.group_size, &densities, config.seed).into_iter().enumerate() {
        let nonzeros = mask_nonzeros(&spec.kernel, config.group_size, &mask);
        if points.last().is_some_and(|&(k, _)| k == nonzeros) {
            continue;
        }
        let dense = pattern_kernel(spec.kernel, config.group_size, &mask, &mut knot_rng(config.seed, i));
        let kernel = compress(&dense, config.group_size);
        let ms = time_ms(config.runs, config.warmup, config.statistic, || {
            std::hint::black_box(conv_sparse_vectorized(&input, &kernel, None, spec.geom).expect("shape checked"));
        });
        if ms < 10.0 * resolution_ms {
            warnings.push(format!(
                "density {}: measured {ms:.6} ms is within 10x of the timer resolution {resolution_ms:.6} ms",
                densities[i]
            ));
        }
        points.push((nonzeros, ms));
    }
    for w in &warnings {
        log::warn!("layer '{}': {w}", spec.name);
    }
    Ok(LayerLatencyProfile::from_measurements(spec.clone(), &points)?.with_warnings(warnings))
}

/// `arch-os, N threads` of the measuring machine.
pub fn host_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{}, {threads} threads", std::env::consts::ARCH, std::env::consts::OS)
}

/// Profiles every layer in order and assembles the network model with constant `tau_ms`.
/// Layer `l` is measured with seed `config.seed + l`.
pub fn measure_network(
    specs: &[LayerSpec],
    densities: &[f64],
    config: &MeasureConfig,
    tau_ms: f64,
) -> Result<NetworkLatencyModel> {
    let profiles = specs
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let cfg = MeasureConfig { seed: config.seed.wrapping_add(l as u64), ..config.clone() };
            measure_layer_profile(spec, densities, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = MeasurementMeta { runs: config.runs, warmup: config.warmup, seed: config.seed, host: host_descriptor() };
    Ok(NetworkLatencyModel::new(tau_ms, profiles)?.with_meta(meta))
}
