use std::ops::Range;

use super::dense::{is_stored_value, DenseKernel, KernelShape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Splits `[0, o_c)` into contiguous groups of `g` output channels. The last group is
/// shorter when `g` does not divide `o_c`.
pub fn group_partition(out_channels: usize, group_size: usize) -> Vec<Range<usize>> {
    assert!(group_size >= 1, "group size must be >= 1");
    (0..out_channels).step_by(group_size).map(|start| start..(start + group_size).min(out_channels)).collect()
}

/// One group of `g` filters in grouped-CSR form.
///
/// `values` is column-major within the group: the `size` entries of stored column `j`
/// are `values[j * size..(j + 1) * size]`, in output-channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlock<T> {
    size: usize,
    offsets: Vec<u32>,
    values: Vec<T>,
}

impl<T: Scalar> GroupBlock<T> {
    /// Unchecked assembly; validation happens in [`GroupedCsrKernel::from_parts`].
    pub fn new(size: usize, offsets: Vec<u32>, values: Vec<T>) -> Self {
        Self { size, offsets, values }
    }

    pub fn empty(size: usize) -> Self {
        Self::new(size, Vec::new(), Vec::new())
    }

    /// Effective group size (`g`, or the tail size for the last group).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz_cols(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// The `size` values of the `j`-th stored column.
    #[inline]
    pub fn column(&self, j: usize) -> &[T] {
        &self.values[j * self.size..(j + 1) * self.size]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = (usize, &[T])> + '_ {
        self.offsets.iter().zip(self.values.chunks_exact(self.size.max(1))).map(|(&o, col)| (o as usize, col))
    }
}

/// Grouped compressed-sparse-row kernel: output channels are grouped `g` at a time and,
/// per group, only the columns with at least one stored entry are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCsrKernel<T> {
    shape: KernelShape,
    group_size: usize,
    groups: Vec<GroupBlock<T>>,
}

impl<T: Scalar> GroupedCsrKernel<T> {
    /// Assembles a kernel from its groups, checking every structural invariant.
    pub fn from_parts(shape: KernelShape, group_size: usize, groups: Vec<GroupBlock<T>>) -> Result<Self> {
        let shape = KernelShape::new(shape.out_channels, shape.in_channels, shape.kernel_h, shape.kernel_w)?;
        if group_size == 0 {
            return Err(Error::Structural("group size must be >= 1".into()));
        }
        let partition = group_partition(shape.out_channels, group_size);
        if groups.len() != partition.len() {
            return Err(Error::Structural(format!(
                "expected {} groups for o_c={} g={}, got {}",
                partition.len(),
                shape.out_channels,
                group_size,
                groups.len()
            )));
        }
        let columns = shape.columns();
        for (index, (block, range)) in groups.iter().zip(&partition).enumerate() {
            if block.size != range.len() {
                return Err(Error::Structural(format!(
                    "group {index} has size {}, expected {}",
                    block.size,
                    range.len()
                )));
            }
            if block.values.len() != block.offsets.len() * block.size {
                return Err(Error::Structural(format!(
                    "group {index} stores {} values for {} columns of size {}",
                    block.values.len(),
                    block.offsets.len(),
                    block.size
                )));
            }
            let mut previous: Option<u32> = None;
            for &offset in &block.offsets {
                if offset as usize >= columns {
                    return Err(Error::Structural(format!("group {index}: offset {offset} outside [0, {columns})")));
                }
                if previous.is_some_and(|p| offset <= p) {
                    return Err(Error::Structural(format!(
                        "group {index}: offsets not strictly increasing at {offset}"
                    )));
                }
                previous = Some(offset);
            }
            if let Some((offset, _)) = block.columns().find(|(_, col)| !col.iter().any(|v| is_stored_value(*v))) {
                return Err(Error::Structural(format!("group {index}: stored column {offset} is all zero")));
            }
        }
        Ok(Self { shape, group_size, groups })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> &[GroupBlock<T>] {
        &self.groups
    }

    /// First output channel of every group, in group order.
    pub fn group_starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.groups.len()).map(move |i| i * self.group_size)
    }

    /// Number of stored values, `Σ nnz_cols × size`.
    pub fn stored_values(&self) -> usize {
        self.groups.iter().map(|b| b.values.len()).sum()
    }

    pub fn density(&self) -> f64 {
        self.stored_values() as f64 / self.shape.len() as f64
    }
}

/// Packs a dense kernel into grouped-CSR form. A column is stored when any of its `g`
/// entries is not `+0.0`; stored columns keep every entry verbatim.
pub fn compress<T: Scalar>(dense: &DenseKernel<T>, group_size: usize) -> GroupedCsrKernel<T> {
    let shape = dense.shape();
    let groups = group_partition(shape.out_channels, group_size)
        .into_iter()
        .map(|range| {
            let mut block = GroupBlock::empty(range.len());
            for column in 0..shape.columns() {
                if range.clone().any(|n| is_stored_value(dense.at(n, column))) {
                    block.offsets.push(column as u32);
                    block.values.extend(range.clone().map(|n| dense.at(n, column)));
                }
            }
            block
        })
        .collect();
    GroupedCsrKernel { shape, group_size, groups }
}

/// Expands a grouped-CSR kernel back to dense form; unstored columns become `+0.0`.
pub fn decompress<T: Scalar>(sparse: &GroupedCsrKernel<T>) -> DenseKernel<T> {
    let shape = sparse.shape;
    let columns = shape.columns();
    let mut dense = DenseKernel::zeros(shape);
    let values = dense.values_mut();
    for (start, block) in sparse.group_starts().zip(&sparse.groups) {
        for (offset, col) in block.columns() {
            for (lane, &v) in col.iter().enumerate() {
                values[(start + lane) * columns + offset] = v;
            }
        }
    }
    dense
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_row_kernel() -> DenseKernel<f32> {
        let shape = KernelShape::new(2, 6, 1, 1).unwrap();
        DenseKernel::new(shape, vec![0.0, 1.0, 0.0, 2.0, 0.0, 4.0, 0.0, 3.0, 0.0, 1.0, 0.0, 5.0]).unwrap()
    }

    #[test]
    fn partition_examples() {
        assert_eq!(group_partition(8, 4), vec![0..4, 4..8]);
        assert_eq!(group_partition(4, 4), vec![0..4]);
        assert_eq!(group_partition(7, 4), vec![0..4, 4..7]);
        assert_eq!(group_partition(3, 1), vec![0..1, 1..2, 2..3]);
    }

    #[test]
    fn hand_compression() {
        let sparse = compress(&two_row_kernel(), 2);
        assert_eq!(sparse.groups().len(), 1);
        let block = &sparse.groups()[0];
        assert_eq!(block.nnz_cols(), 3);
        assert_eq!(block.offsets(), &[1, 3, 5]);
        assert_eq!(block.column(0), &[1.0, 3.0]);
        assert_eq!(block.column(1), &[2.0, 1.0]);
        assert_eq!(block.column(2), &[4.0, 5.0]);
        assert_eq!(decompress(&sparse), two_row_kernel());
    }

    #[test]
    fn all_zero_group_is_empty() {
        let shape = KernelShape::new(4, 2, 3, 3).unwrap();
        let sparse = compress(&DenseKernel::<f32>::zeros(shape), 4);
        assert_eq!(sparse.groups()[0].nnz_cols(), 0);
        assert!(sparse.groups()[0].values().is_empty());
        assert_eq!(decompress(&sparse), DenseKernel::zeros(shape));
    }

    #[test]
    fn interior_zeros_of_a_stored_column_are_kept() {
        let shape = KernelShape::new(3, 1, 1, 2).unwrap();
        let dense = DenseKernel::new(shape, vec![0.0f32, 0.0, 0.0, 7.0, 0.0, 0.0]).unwrap();
        let sparse = compress(&dense, 4);
        assert_eq!(sparse.groups()[0].size(), 3);
        assert_eq!(sparse.groups()[0].offsets(), &[1]);
        assert_eq!(sparse.groups()[0].column(0), &[0.0, 7.0, 0.0]);
    }

    #[test]
    fn from_parts_rejects_malformed_offsets() {
        let shape = KernelShape::new(2, 6, 1, 1).unwrap();
        let block = |offsets: Vec<u32>| GroupBlock::new(2, offsets.clone(), vec![1.0f32; offsets.len() * 2]);
        assert!(GroupedCsrKernel::from_parts(shape, 2, vec![block(vec![3, 1])]).is_err());
        assert!(GroupedCsrKernel::from_parts(shape, 2, vec![block(vec![1, 1])]).is_err());
        assert!(GroupedCsrKernel::from_parts(shape, 2, vec![block(vec![6])]).is_err());
        assert!(GroupedCsrKernel::from_parts(shape, 2, vec![block(vec![0, 5])]).is_ok());
    }

    #[test]
    fn from_parts_rejects_bad_group_layout() {
        let shape = KernelShape::new(7, 1, 1, 1).unwrap();
        let ok = vec![GroupBlock::<f32>::empty(4), GroupBlock::empty(3)];
        assert!(GroupedCsrKernel::from_parts(shape, 4, ok).is_ok());
        let wrong_tail = vec![GroupBlock::<f32>::empty(4), GroupBlock::empty(4)];
        assert!(GroupedCsrKernel::from_parts(shape, 4, wrong_tail).is_err());
        assert!(GroupedCsrKernel::from_parts(shape, 4, vec![GroupBlock::<f32>::empty(4)]).is_err());
        let short_values = vec![GroupBlock::new(4, vec![0], vec![1.0f32; 3]), GroupBlock::empty(3)];
        assert!(GroupedCsrKernel::from_parts(shape, 4, short_values).is_err());
    }

    #[test]
    fn from_parts_rejects_all_zero_stored_column() {
        let shape = KernelShape::new(2, 2, 1, 1).unwrap();
        let block = GroupBlock::new(2, vec![0], vec![0.0f32, 0.0]);
        assert!(GroupedCsrKernel::from_parts(shape, 2, vec![block]).is_err());
    }

    #[test]
    fn stored_value_accounting() {
        let shape = KernelShape::new(7, 2, 1, 1).unwrap();
        let dense = DenseKernel::from_fn(shape, |n, c, _, _| if c == 1 && n != 2 { 1.0f32 } else { 0.0 });
        let sparse = compress(&dense, 4);
        // column 1 stored in both groups: 4 + 3 values
        assert_eq!(sparse.stored_values(), 7);
    }
}
