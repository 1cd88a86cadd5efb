use super::units::{apply_unit_mask, enumerate_units, PruneUnit};
use crate::error::{Error, Result};
use crate::latency::NetworkLatencyModel;
use crate::scalar::Scalar;
use crate::sparse_format::DenseKernel;

/// Outcome of a latency-constrained projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Keep flags in [`enumerate_units`] order.
    pub mask: Vec<bool>,
    /// Number of units kept from the prunable layers (skipped layers not included).
    pub kept_units: usize,
    /// Nonzero parameter count per layer implied by the mask.
    pub nonzeros: Vec<usize>,
    pub estimated_latency_ms: f64,
    /// Latency evaluations spent after the feasibility check.
    pub iterations: usize,
}

/// Settings of the projection onto `{U : T(U) ≤ budget}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub group_size: usize,
    /// Bisection stops once the latency bracket is at most this wide.
    pub epsilon_ms: f64,
    /// Layers that are never pruned; their units are always kept.
    pub skip_layers: Vec<usize>,
}

impl Default for Projector {
    fn default() -> Self {
        Self { group_size: 4, epsilon_ms: 0.1, skip_layers: Vec::new() }
    }
}

/// Units in selection order: descending norm, ties broken by (layer, group, column).
pub(crate) fn selection_order(units: &[PruneUnit], skip_layers: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..units.len()).filter(|&i| !skip_layers.contains(&units[i].layer)).collect();
    // stable: the enumeration order is already (layer, group, column)
    order.sort_by(|&a, &b| units[b].norm.total_cmp(&units[a].norm));
    order
}

impl Projector {
    pub fn new(group_size: usize, epsilon_ms: f64) -> Self {
        Self { group_size, epsilon_ms, skip_layers: Vec::new() }
    }

    /// Keeps the `N` largest-norm units jointly across layers, with `N` the largest
    /// count whose estimated latency fits the budget, found by bisection on `N`.
    ///
    /// Returns the mask and a copy of `u_tilde` with dropped units zeroed. The bracket
    /// `[N_0, N_1]` keeps `N_0` feasible and `N_1` infeasible; it shrinks until the
    /// indices are adjacent or the latency gap is at most `epsilon_ms`, and `N_0` is
    /// returned so the budget always holds.
    pub fn project<T: Scalar>(
        &self,
        u_tilde: &[DenseKernel<T>],
        model: &NetworkLatencyModel,
        budget_ms: f64,
    ) -> Result<(ProjectionResult, Vec<DenseKernel<T>>)> {
        if self.group_size == 0 {
            return Err(Error::Domain("group size must be >= 1".into()));
        }
        if self.epsilon_ms.is_nan() || self.epsilon_ms <= 0.0 {
            return Err(Error::Domain(format!("epsilon must be > 0, got {}", self.epsilon_ms)));
        }
        let units = enumerate_units(u_tilde, self.group_size);
        let order = selection_order(&units, &self.skip_layers);

        let mut base = vec![0usize; u_tilde.len()];
        for &layer in &self.skip_layers {
            if let Some(kernel) = u_tilde.get(layer) {
                base[layer] = kernel.shape().len();
            }
        }
        let nonzeros_at = |n: usize| {
            let mut counts = base.clone();
            for &i in &order[..n] {
                counts[units[i].layer] += units[i].size;
            }
            counts
        };
        let latency_at = |n: usize| model.estimate(&nonzeros_at(n));

        let floor = latency_at(0)?;
        if floor > budget_ms {
            return Err(Error::Infeasible { budget_ms, floor_ms: floor });
        }
        let total = order.len();
        let full = latency_at(total)?;
        let mut iterations = 1;
        let (kept, latency) = if full <= budget_ms {
            (total, full)
        } else {
            let (mut n0, mut t0) = (0, floor);
            let (mut n1, mut t1) = (total, full);
            while n1 - n0 > 1 && t1 - t0 > self.epsilon_ms {
                let mid = n0 + (n1 - n0) / 2;
                let t = latency_at(mid)?;
                iterations += 1;
                if t <= budget_ms {
                    (n0, t0) = (mid, t);
                } else {
                    (n1, t1) = (mid, t);
                }
            }
            (n0, t0)
        };

        let mut mask = vec![false; units.len()];
        for (flag, unit) in mask.iter_mut().zip(&units) {
            *flag = self.skip_layers.contains(&unit.layer);
        }
        for &i in &order[..kept] {
            mask[i] = true;
        }
        let mut projected = u_tilde.to_vec();
        apply_unit_mask(&mut projected, self.group_size, &mask);
        let result = ProjectionResult {
            mask,
            kept_units: kept,
            nonzeros: nonzeros_at(kept),
            estimated_latency_ms: latency,
            iterations,
        };
        Ok((result, projected))
    }
}

/// [`Projector::project`] with no skipped layers.
pub fn project_latency<T: Scalar>(
    u_tilde: &[DenseKernel<T>],
    model: &NetworkLatencyModel,
    budget_ms: f64,
    epsilon_ms: f64,
    group_size: usize,
) -> Result<(ProjectionResult, Vec<DenseKernel<T>>)> {
    Projector::new(group_size, epsilon_ms).project(u_tilde, model, budget_ms)
}

/// Reference selection: walk units in descending norm order, adding each while the
/// whole-network estimate stays within budget, and stop at the first one that does
/// not fit. Linear in the unit count; intended for cross-checking [`project_latency`].
pub fn sequential_greedy_oracle<T: Scalar>(
    u_tilde: &[DenseKernel<T>],
    model: &NetworkLatencyModel,
    budget_ms: f64,
    group_size: usize,
) -> Result<Vec<bool>> {
    let mut units: Vec<(f64, usize, usize, usize, usize)> = Vec::new();
    for (layer, kernel) in u_tilde.iter().enumerate() {
        let shape = kernel.shape();
        for group in 0..shape.out_channels.div_ceil(group_size) {
            let rows = group * group_size..((group + 1) * group_size).min(shape.out_channels);
            for column in 0..shape.columns() {
                let mut squares = 0.0f64;
                for n in rows.clone() {
                    let v = kernel.at(n, column).as_f64();
                    squares += v * v;
                }
                units.push((squares.sqrt(), layer, group, column, rows.len()));
            }
        }
    }
    let mut ranked: Vec<usize> = (0..units.len()).collect();
    ranked.sort_by(|&a, &b| {
        let (na, la, ga, ca, _) = units[a];
        let (nb, lb, gb, cb, _) = units[b];
        nb.total_cmp(&na).then((la, ga, ca).cmp(&(lb, gb, cb)))
    });

    let mut nonzeros = vec![0usize; u_tilde.len()];
    let empty = model.estimate(&nonzeros)?;
    if empty > budget_ms {
        return Err(Error::Infeasible { budget_ms, floor_ms: empty });
    }
    let mut kept = vec![false; units.len()];
    for i in ranked {
        let (_, layer, _, _, size) = units[i];
        nonzeros[layer] += size;
        if model.estimate(&nonzeros)? > budget_ms {
            break;
        }
        kept[i] = true;
    }
    Ok(kept)
}
