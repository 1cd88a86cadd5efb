use crate::scalar::Scalar;
use crate::sparse_format::{group_partition, DenseKernel};

/// `size` parameters sharing one column position across adjacent output channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneUnit {
    pub layer: usize,
    pub group: usize,
    /// Flattened `(c, r, s)` index.
    pub column: usize,
    pub size: usize,
    /// L2 norm of the unit's entries, accumulated in `f64`.
    pub norm: f64,
}

/// One unit per (layer, group, column), ordered by layer, then group, then column.
pub fn enumerate_units<T: Scalar>(kernels: &[DenseKernel<T>], group_size: usize) -> Vec<PruneUnit> {
    let mut units = Vec::new();
    for (layer, kernel) in kernels.iter().enumerate() {
        let columns = kernel.shape().columns();
        for (group, range) in group_partition(kernel.shape().out_channels, group_size).into_iter().enumerate() {
            for column in 0..columns {
                let norm = range
                    .clone()
                    .map(|n| {
                        let v = kernel.at(n, column).as_f64();
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt();
                units.push(PruneUnit { layer, group, column, size: range.len(), norm });
            }
        }
    }
    units
}

/// Zeroes every unit whose mask entry is `false`; `mask` follows [`enumerate_units`] order.
pub fn apply_unit_mask<T: Scalar>(kernels: &mut [DenseKernel<T>], group_size: usize, mask: &[bool]) {
    let mut index = 0;
    for kernel in kernels.iter_mut() {
        let shape = kernel.shape();
        let columns = shape.columns();
        let values = kernel.values_mut();
        for range in group_partition(shape.out_channels, group_size) {
            for column in 0..columns {
                if !mask[index] {
                    for n in range.clone() {
                        values[n * columns + column] = T::zero();
                    }
                }
                index += 1;
            }
        }
    }
    assert_eq!(index, mask.len(), "mask length does not match unit count");
}

/// Per-element keep mask, `true` where the element belongs to a kept unit.
pub fn element_mask<T: Scalar>(kernels: &[DenseKernel<T>], group_size: usize, unit_mask: &[bool]) -> Vec<Vec<bool>> {
    let mut index = 0;
    kernels
        .iter()
        .map(|kernel| {
            let shape = kernel.shape();
            let columns = shape.columns();
            let mut mask = vec![false; shape.len()];
            for range in group_partition(shape.out_channels, group_size) {
                for column in 0..columns {
                    if unit_mask[index] {
                        for n in range.clone() {
                            mask[n * columns + column] = true;
                        }
                    }
                    index += 1;
                }
            }
            mask
        })
        .collect()
}

/// Unit-level keep mask read off the current values: a unit is kept when any of its
/// entries is stored (not `+0.0`).
pub fn support_mask<T: Scalar>(kernels: &[DenseKernel<T>], group_size: usize) -> Vec<bool> {
    let mut mask = Vec::new();
    for kernel in kernels {
        let columns = kernel.shape().columns();
        for range in group_partition(kernel.shape().out_channels, group_size) {
            for column in 0..columns {
                mask.push(range.clone().any(|n| crate::sparse_format::is_stored_value(kernel.at(n, column))));
            }
        }
    }
    mask
}

/// True when every unit is either entirely `+0.0` or entirely untouched, i.e. the
/// kernel's zero pattern is group-aligned.
pub fn is_simd_structured<T: Scalar>(kernel: &DenseKernel<T>, group_size: usize) -> bool {
    let columns = kernel.shape().columns();
    group_partition(kernel.shape().out_channels, group_size).into_iter().all(|range| {
        (0..columns).all(|column| {
            let zeros = range.clone().filter(|&n| !crate::sparse_format::is_stored_value(kernel.at(n, column))).count();
            zeros == 0 || zeros == range.len()
        })
    })
}

/// Per-layer nonzero counts implied by a unit mask.
pub fn nonzeros_per_layer(units: &[PruneUnit], mask: &[bool], layers: usize) -> Vec<usize> {
    let mut counts = vec![0; layers];
    for (unit, &keep) in units.iter().zip(mask) {
        if keep {
            counts[unit.layer] += unit.size;
        }
    }
    counts
}
