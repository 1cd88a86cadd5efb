//! Prune units and the latency-constrained projection.

mod projection;
mod units;

pub use projection::{project_latency, sequential_greedy_oracle, ProjectionResult, Projector};
pub use units::{
    apply_unit_mask, element_mask, enumerate_units, is_simd_structured, nonzeros_per_layer, support_mask, PruneUnit,
};
