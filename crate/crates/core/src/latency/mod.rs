//! Piecewise-linear latency estimation from on-host measurements.

mod file;
mod measure;
mod profile;

pub use file::{load_profile, profile_from_json, profile_to_json, save_profile};
pub use measure::{
    default_densities, host_descriptor, knot_masks, mask_nonzeros, measure_layer_profile, measure_network,
    pattern_kernel, random_unit_mask, summarize, time_ms, timer_resolution, unit_count, MeasureConfig, Statistic,
};
pub use profile::{
    estimate_layer, estimate_network, isotonic, LayerLatencyProfile, LayerSpec, MeasurementMeta, NetworkLatencyModel,
};
