use super::{column_coords, prepare, ConvGeometry, FeatureMap};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::sparse_format::GroupedCsrKernel;

/// Grouped-CSR convolution, one output element at a time. Each element accumulates its
/// group's stored columns in offset order, starting from zero, then adds the bias.
pub fn conv_sparse<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &GroupedCsrKernel<T>,
    bias: Option<&[T]>,
    geom: ConvGeometry,
) -> Result<FeatureMap<T>> {
    conv_sparse_counted(input, kernel, bias, geom).map(|(out, _)| out)
}

/// [`conv_sparse`] that also reports how many multiply-accumulates it executed. Padded
/// reads count as a multiply by zero.
pub fn conv_sparse_counted<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &GroupedCsrKernel<T>,
    bias: Option<&[T]>,
    geom: ConvGeometry,
) -> Result<(FeatureMap<T>, u64)> {
    let (mut out, oh, ow) = prepare(input, kernel, bias, geom)?;
    let shape = kernel.shape();
    let plane = oh * ow;
    let values = out.values_mut();
    let mut macs = 0u64;
    for (start, block) in kernel.group_starts().zip(kernel.groups()) {
        let coords = column_coords(&shape, block.offsets());
        for lane in 0..block.size() {
            let n = start + lane;
            let b = bias.map_or(T::zero(), |b| b[n]);
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = T::zero();
                    for (j, &(c, r, s)) in coords.iter().enumerate() {
                        let w = block.column(j)[lane];
                        let v = match (geom.source(y, r, input.height()), geom.source(x, s, input.width())) {
                            (Some(iy), Some(ix)) => input.get(c, iy, ix),
                            _ => T::zero(),
                        };
                        acc += w * v;
                        macs += 1;
                    }
                    values[n * plane + y * ow + x] = acc + b;
                }
            }
        }
    }
    Ok((out, macs))
}
