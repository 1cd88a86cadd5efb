use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Activation tensor stored channel-major as `[channels][height][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "feature map dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        Ok(Self { channels, height, width, values })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, values: vec![T::zero(); channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, values }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
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
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// One spatial row of one channel.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[T] {
        let start = (c * self.height + y) * self.width;
        &self.values[start..start + self.width]
    }

    /// Reinterprets the tensor as `len × 1 × 1`, the input of a fully-connected layer.
    pub fn flattened(self) -> Self {
        let channels = self.values.len();
        Self { channels, height: 1, width: 1, values: self.values }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}
