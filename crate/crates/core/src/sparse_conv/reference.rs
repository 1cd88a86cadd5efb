use super::{check_bias, ConvGeometry, FeatureMap};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse_format::DenseKernel;

/// Direct dense convolution:
/// `O(n, h, w) = Σ_{c,r,s} W(n, c, r, s) · I(c, h·stride − pad + r, w·stride − pad + s)`,
/// with reads outside the input treated as zero, plus `bias[n]`.
pub fn conv_dense_reference<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &DenseKernel<T>,
    bias: Option<&[T]>,
    geom: ConvGeometry,
) -> Result<FeatureMap<T>> {
    let shape = kernel.shape();
    if shape.in_channels != input.channels() {
        return Err(Error::Dimension(format!(
            "kernel expects {} input channels, input has {}",
            shape.in_channels,
            input.channels()
        )));
    }
    check_bias(bias, shape.out_channels)?;
    let (oh, ow) = geom.output_dims(input.height(), input.width(), shape.kernel_h, shape.kernel_w)?;
    let mut out = FeatureMap::zeros(shape.out_channels, oh, ow);
    let values = out.values_mut();
    for n in 0..shape.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = T::zero();
                for c in 0..shape.in_channels {
                    for r in 0..shape.kernel_h {
                        let Some(iy) = geom.source(y, r, input.height()) else { continue };
                        for s in 0..shape.kernel_w {
                            if let Some(ix) = geom.source(x, s, input.width()) {
                                acc += kernel.get(n, c, r, s) * input.get(c, iy, ix);
                            }
                        }
                    }
                }
                values[(n * oh + y) * ow + x] = acc + bias.map_or(T::zero(), |b| b[n]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_format::KernelShape;

    #[test]
    fn zero_kernel_gives_zero_output() {
        let input = FeatureMap::from_fn(2, 5, 5, |c, y, x| (c + y * x) as f32);
        let kernel = DenseKernel::zeros(KernelShape::new(3, 2, 3, 3).unwrap());
        let out = conv_dense_reference(&input, &kernel, None, ConvGeometry::new(1, 1).unwrap()).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_copies_input() {
        let input = FeatureMap::from_fn(3, 4, 5, |c, y, x| (c * 100 + y * 10 + x) as f32);
        let kernel =
            DenseKernel::from_fn(KernelShape::new(3, 3, 1, 1).unwrap(), |n, c, _, _| if n == c { 1.0 } else { 0.0 });
        let out = conv_dense_reference(&input, &kernel, None, ConvGeometry::default()).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_on_ones_input() {
        let input = FeatureMap::new(1, 3, 3, vec![1.0f32; 9]).unwrap();
        let kernel = DenseKernel::new(KernelShape::new(1, 1, 2, 2).unwrap(), vec![1.0; 4]).unwrap();
        let out = conv_dense_reference(&input, &kernel, None, ConvGeometry::default()).unwrap();
        assert_eq!((out.height(), out.width()), (2, 2));
        assert_eq!(out.values(), &[4.0; 4]);
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let input = FeatureMap::<f32>::zeros(2, 3, 3);
        let kernel = DenseKernel::zeros(KernelShape::new(1, 3, 1, 1).unwrap());
        assert!(matches!(
            conv_dense_reference(&input, &kernel, None, ConvGeometry::default()),
            Err(Error::Dimension(_))
        ));
    }
}
