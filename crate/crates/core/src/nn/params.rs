use crate::scalar::Scalar;
use crate::sparse_format::DenseKernel;

/// Trainable parameters of a network: one kernel and one bias vector per conv/fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub kernels: Vec<DenseKernel<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            kernels: other.kernels.iter().map(|k| DenseKernel::zeros(k.shape())).collect(),
            biases: other.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.kernels.iter().map(|k| k.values().len()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every scalar, kernels first then biases.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.kernels.iter().flat_map(|k| k.values().iter()).chain(self.biases.iter().flatten())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.kernels.iter_mut().flat_map(|k| k.values_mut().iter_mut()).chain(self.biases.iter_mut().flatten())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (a, &b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for a in self.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            kernels: self.kernels.iter().map(DenseKernel::cast).collect(),
            biases: self.biases.iter().map(|b| b.iter().map(|v| U::of(v.as_f64())).collect()).collect(),
        }
    }
}
