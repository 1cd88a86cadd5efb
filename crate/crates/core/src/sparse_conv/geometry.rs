use crate::error::{Error, Result};

/// Stride and symmetric zero padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self { stride: 1, pad: 0 }
    }
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Dimension("stride must be >= 1".into()));
        }
        Ok(Self { stride, pad })
    }

    /// Output extent along one axis, `⌊(i + 2·pad − k)/stride⌋ + 1`.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Dimension("stride must be >= 1".into()));
        }
        let padded = input + 2 * self.pad;
        if padded < kernel {
            return Err(Error::Dimension(format!("kernel extent {kernel} exceeds padded input extent {padded}")));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn output_dims(
        &self,
        input_h: usize,
        input_w: usize,
        kernel_h: usize,
        kernel_w: usize,
    ) -> Result<(usize, usize)> {
        Ok((self.output_extent(input_h, kernel_h)?, self.output_extent(input_w, kernel_w)?))
    }

    /// Input coordinate read by output coordinate `out` at kernel tap `tap`, if in range.
    #[inline]
    pub fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        (out * self.stride + tap).checked_sub(self.pad).filter(|&i| i < extent)
    }
}
