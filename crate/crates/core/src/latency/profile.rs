use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse_conv::ConvGeometry;
use crate::sparse_format::{KernelShape, LayerKind};

/// Shape and geometry of one prunable layer, enough to benchmark it in isolation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: KernelShape,
    pub input_h: usize,
    pub input_w: usize,
    pub geom: ConvGeometry,
}

impl LayerSpec {
    /// Parameter count `N` of the layer.
    pub fn params(&self) -> usize {
        self.kernel.len()
    }

    /// `[o_c, i_c, k_h, k_w, i_h, i_w, stride, pad]`.
    pub fn shape_array(&self) -> [usize; 8] {
        let [o, i, kh, kw] = self.kernel.dims();
        [o, i, kh, kw, self.input_h, self.input_w, self.geom.stride, self.geom.pad]
    }

    pub fn from_shape_array(name: impl Into<String>, shape: [usize; 8]) -> Result<Self> {
        let [o, i, kh, kw, ih, iw, stride, pad] = shape;
        let kernel = KernelShape::new(o, i, kh, kw)?;
        let geom = ConvGeometry::new(stride, pad)?;
        geom.output_dims(ih, iw, kh, kw)?;
        let kind = if (kh, kw, ih, iw, stride, pad) == (1, 1, 1, 1, 1, 0) {
            LayerKind::FullyConnected
        } else {
            LayerKind::Conv
        };
        Ok(Self { name: name.into(), kind, kernel, input_h: ih, input_w: iw, geom })
    }
}

/// Piecewise-linear latency of one layer as a function of its nonzero parameter count.
///
/// Knots `k_1 = 0 < k_2 < … < k_n = N` carry measured times `t_i` (ms, nondecreasing);
/// slope `α_i = (t_{i+1} − t_i)/(k_{i+1} − k_i)` covers segment `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLatencyProfile {
    spec: LayerSpec,
    knots: Vec<usize>,
    times: Vec<f64>,
    slopes: Vec<f64>,
    warnings: Vec<String>,
}

impl LayerLatencyProfile {
    /// Builds a profile from `(nonzero count, ms)` pairs that already satisfy every
    /// invariant; use [`LayerLatencyProfile::from_measurements`] for raw timings.
    pub fn new(spec: LayerSpec, points: &[(usize, f64)]) -> Result<Self> {
        let (knots, times): (Vec<usize>, Vec<f64>) = points.iter().copied().unzip();
        if knots.len() < 2 {
            return Err(Error::Domain("a profile needs at least two knots".into()));
        }
        if knots[0] != 0 || *knots.last().unwrap() != spec.params() {
            return Err(Error::Domain(format!(
                "knots must span [0, {}], got [{}, {}]",
                spec.params(),
                knots[0],
                knots.last().unwrap()
            )));
        }
        if let Some(w) = knots.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!("knots not strictly increasing at {} -> {}", w[0], w[1])));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::Domain(format!("knot time {t} is not a finite nonnegative value")));
        }
        if let Some(w) = times.windows(2).find(|w| w[0] > w[1]) {
            return Err(Error::Domain(format!("knot times decrease: {} -> {}", w[0], w[1])));
        }
        let slopes =
            knots.windows(2).zip(times.windows(2)).map(|(k, t)| (t[1] - t[0]) / (k[1] - k[0]) as f64).collect();
        Ok(Self { spec, knots, times, slopes, warnings: Vec::new() })
    }

    /// Applies the isotonic correction `t_i ← max(t_i, t_{i−1})` before building.
    pub fn from_measurements(spec: LayerSpec, points: &[(usize, f64)]) -> Result<Self> {
        Self::new(spec, &isotonic(points))
    }

    pub fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn knots(&self) -> &[usize] {
        &self.knots
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `N`, the layer's total parameter count.
    pub fn params(&self) -> usize {
        *self.knots.last().unwrap()
    }

    /// Latency with every parameter removed, `t_1`.
    pub fn empty_ms(&self) -> f64 {
        self.times[0]
    }

    /// Latency at full density, `t_n`.
    pub fn dense_ms(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.knots.iter().copied().zip(self.times.iter().copied())
    }

    /// Interpolated latency at `nonzeros` parameters.
    ///
    /// Equal to `t_1 + Σ_i δ_i α_i min(k_{i+1} − k_i, s − k_i)` with `δ_i = [s ≥ k_i]`;
    /// the sum telescopes to `t_i + α_i (s − k_i)` on the segment containing `s`, which
    /// is evaluated directly so every knot returns its stored time exactly. The value is
    /// clamped to `[t_i, t_{i+1}]` so rounding cannot break monotonicity across knots.
    pub fn estimate(&self, nonzeros: usize) -> Result<f64> {
        if nonzeros > self.params() {
            return Err(Error::Domain(format!(
                "{} nonzeros requested for layer '{}' with {} parameters",
                nonzeros,
                self.spec.name,
                self.params()
            )));
        }
        let i = self.knots.partition_point(|&k| k <= nonzeros) - 1;
        if i + 1 == self.knots.len() {
            return Ok(self.times[i]);
        }
        let linear = self.times[i] + self.slopes[i] * (nonzeros - self.knots[i]) as f64;
        Ok(linear.clamp(self.times[i], self.times[i + 1]))
    }
}

/// Running maximum over the times, leaving knots untouched.
pub fn isotonic(points: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut floor = f64::NEG_INFINITY;
    points
        .iter()
        .map(|&(k, t)| {
            floor = floor.max(t);
            (k, floor)
        })
        .collect()
}

/// Run metadata recorded with a latency model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeasurementMeta {
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    pub host: String,
}

/// Whole-network estimator `T(W) = τ + Σ_l T̂_l(‖W_l‖₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLatencyModel {
    tau_ms: f64,
    profiles: Vec<LayerLatencyProfile>,
    pub meta: MeasurementMeta,
}

impl NetworkLatencyModel {
    pub fn new(tau_ms: f64, profiles: Vec<LayerLatencyProfile>) -> Result<Self> {
        if !tau_ms.is_finite() || tau_ms < 0.0 {
            return Err(Error::Domain(format!("tau must be finite and >= 0, got {tau_ms}")));
        }
        Ok(Self { tau_ms, profiles, meta: MeasurementMeta::default() })
    }

    pub fn with_meta(mut self, meta: MeasurementMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn tau_ms(&self) -> f64 {
        self.tau_ms
    }

    pub fn set_tau_ms(&mut self, tau_ms: f64) -> Result<()> {
        if !tau_ms.is_finite() || tau_ms < 0.0 {
            return Err(Error::Domain(format!("tau must be finite and >= 0, got {tau_ms}")));
        }
        self.tau_ms = tau_ms;
        Ok(())
    }

    pub fn profiles(&self) -> &[LayerLatencyProfile] {
        &self.profiles
    }

    /// `τ + Σ_l T̂_l(nnz_l)`.
    pub fn estimate(&self, nonzeros: &[usize]) -> Result<f64> {
        if nonzeros.len() != self.profiles.len() {
            return Err(Error::Domain(format!(
                "{} nonzero counts for {} layer profiles",
                nonzeros.len(),
                self.profiles.len()
            )));
        }
        let mut total = self.tau_ms;
        for (profile, &s) in self.profiles.iter().zip(nonzeros) {
            total += profile.estimate(s)?;
        }
        Ok(total)
    }

    /// Latency with every prunable parameter removed, `τ + Σ t_1`.
    pub fn empty_ms(&self) -> f64 {
        self.tau_ms + self.profiles.iter().map(LayerLatencyProfile::empty_ms).sum::<f64>()
    }

    /// Latency at full density, `τ + Σ t_n`.
    pub fn dense_ms(&self) -> f64 {
        self.tau_ms + self.profiles.iter().map(LayerLatencyProfile::dense_ms).sum::<f64>()
    }
}

/// Free-function form of [`LayerLatencyProfile::estimate`].
pub fn estimate_layer(profile: &LayerLatencyProfile, nonzeros: usize) -> Result<f64> {
    profile.estimate(nonzeros)
}

/// Free-function form of [`NetworkLatencyModel::estimate`].
pub fn estimate_network(model: &NetworkLatencyModel, nonzeros: &[usize]) -> Result<f64> {
    model.estimate(nonzeros)
}
