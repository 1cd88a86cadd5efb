use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a convolution kernel, `o_c × i_c × k_h × k_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelShape {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl KernelShape {
    pub fn new(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Result<Self> {
        let shape = Self { out_channels, in_channels, kernel_h, kernel_w };
        if shape.dims().contains(&0) {
            return Err(Error::Dimension(format!("kernel dimensions must be >= 1, got {shape}")));
        }
        let total = shape.dims().iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if total.is_none_or(|t| t > u32::MAX as usize) {
            return Err(Error::Dimension(format!("kernel {shape} has more than u32::MAX parameters")));
        }
        Ok(shape)
    }

    /// Shape of a fully-connected layer viewed as a 1×1 convolution.
    pub fn fully_connected(outputs: usize, inputs: usize) -> Result<Self> {
        Self::new(outputs, inputs, 1, 1)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    /// Size of the flattened `(c, r, s)` axis.
    pub fn columns(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Total parameter count `N`.
    pub fn len(&self) -> usize {
        self.out_channels * self.columns()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column index of `(c, r, s)`, with `s` varying fastest.
    #[inline]
    pub fn flatten(&self, c: usize, r: usize, s: usize) -> usize {
        (c * self.kernel_h + r) * self.kernel_w + s
    }

    /// Inverse of [`KernelShape::flatten`].
    pub fn offset_to_coords(&self, offset: usize) -> Result<(usize, usize, usize)> {
        if offset >= self.columns() {
            return Err(Error::Structural(format!("column offset {offset} outside [0, {})", self.columns())));
        }
        let s = offset % self.kernel_w;
        let rest = offset / self.kernel_w;
        Ok((rest / self.kernel_h, rest % self.kernel_h, s))
    }
}

impl std::fmt::Display for KernelShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }
}

/// Dense kernel tensor stored row-major as `[o_c][i_c][k_h][k_w]`.
///
/// Row `n` of the `o_c × C` matrix view is the stretched `n`-th filter, so the value at
/// output channel `n` and column `j` lives at `n * C + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel<T> {
    shape: KernelShape,
    values: Vec<T>,
}

impl<T: Scalar> DenseKernel<T> {
    pub fn new(shape: KernelShape, values: Vec<T>) -> Result<Self> {
        KernelShape::new(shape.out_channels, shape.in_channels, shape.kernel_h, shape.kernel_w)?;
        if values.len() != shape.len() {
            return Err(Error::Dimension(format!("kernel {shape} needs {} values, got {}", shape.len(), values.len())));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: KernelShape) -> Self {
        Self { shape, values: vec![T::zero(); shape.len()] }
    }

    pub fn from_fn(shape: KernelShape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for n in 0..shape.out_channels {
            for c in 0..shape.in_channels {
                for r in 0..shape.kernel_h {
                    for s in 0..shape.kernel_w {
                        values.push(f(n, c, r, s));
                    }
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, n: usize, column: usize) -> T {
        self.values[n * self.shape.columns() + column]
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, r: usize, s: usize) -> T {
        self.at(n, self.shape.flatten(c, r, s))
    }

    /// Count of entries whose bit pattern is not `+0.0`.
    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| is_stored_value(**v)).count()
    }

    /// Same shape, values converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> DenseKernel<U> {
        DenseKernel { shape: self.shape, values: self.values.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Frobenius norm of the difference of two congruent kernels.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "distance between incongruent kernels");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = (*a - *b).as_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Anything other than positive zero is kept, so `-0.0` and NaN survive a
/// compress/decompress roundtrip bit-exactly.
#[inline]
pub fn is_stored_value<T: Scalar>(v: T) -> bool {
    !(v == T::zero() && v.is_sign_positive())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimension() {
        assert!(KernelShape::new(0, 1, 1, 1).is_err());
        assert!(KernelShape::new(1, 1, 3, 0).is_err());
    }

    #[test]
    fn rejects_wrong_value_count() {
        let shape = KernelShape::new(2, 1, 1, 1).unwrap();
        assert!(DenseKernel::new(shape, vec![1.0f32]).is_err());
    }

    #[test]
    fn offset_to_coords_examples() {
        let shape = KernelShape::new(1, 3, 3, 3).unwrap();
        assert_eq!(shape.offset_to_coords(0).unwrap(), (0, 0, 0));
        assert_eq!(shape.offset_to_coords(9).unwrap(), (1, 0, 0));
        assert!(shape.offset_to_coords(27).is_err());
    }

    #[test]
    fn offset_to_coords_inverts_flatten_exhaustively() {
        for (ic, kh, kw) in [(1, 1, 1), (3, 3, 3), (2, 5, 1), (4, 1, 5), (2, 3, 5)] {
            let shape = KernelShape::new(1, ic, kh, kw).unwrap();
            for c in 0..ic {
                for r in 0..kh {
                    for s in 0..kw {
                        let offset = shape.flatten(c, r, s);
                        assert!(offset < shape.columns());
                        assert_eq!(shape.offset_to_coords(offset).unwrap(), (c, r, s));
                    }
                }
            }
        }
    }

    #[test]
    fn negative_zero_counts_as_stored() {
        assert!(is_stored_value(-0.0f32));
        assert!(!is_stored_value(0.0f32));
        assert!(is_stored_value(f32::NAN));
    }
}
