//! Convolution with grouped-CSR kernels: a dense oracle, a scalar reference path and
//! a register-tiled path with identical per-element accumulation order.
//!
//! Fully-connected layers run through the same code as `1×1` convolutions over a
//! `1×1` spatial map.

mod feature_map;
mod geometry;
mod reference;
mod scalar_path;
mod vectorized;

pub use feature_map::FeatureMap;
pub use geometry::ConvGeometry;
pub use reference::conv_dense_reference;
pub use scalar_path::{conv_sparse, conv_sparse_counted};
pub use vectorized::{conv_sparse_vectorized, conv_sparse_vectorized_threads, TILE};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse_format::{GroupedCsrKernel, KernelShape};

/// Maps a flattened column index to `(c, r, s)`.
pub fn offset_to_coords(
    offset: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<(usize, usize, usize)> {
    KernelShape::new(1, in_channels, kernel_h, kernel_w)?.offset_to_coords(offset)
}

/// Multiply-accumulates a grouped-CSR convolution performs: `Σ nnz_cols × size × o_h × o_w`.
pub fn mac_count<T: Scalar>(kernel: &GroupedCsrKernel<T>, output_h: usize, output_w: usize) -> u64 {
    (kernel.stored_values() * output_h * output_w) as u64
}

pub(crate) fn check_bias<T>(bias: Option<&[T]>, out_channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != out_channels => {
            Err(Error::Dimension(format!("bias has {} entries for {out_channels} output channels", b.len())))
        }
        _ => Ok(()),
    }
}

/// Validates shapes and allocates the zeroed output.
fn prepare<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &GroupedCsrKernel<T>,
    bias: Option<&[T]>,
    geom: ConvGeometry,
) -> Result<(FeatureMap<T>, usize, usize)> {
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
    Ok((FeatureMap::zeros(shape.out_channels, oh, ow), oh, ow))
}

fn column_coords(shape: &KernelShape, offsets: &[u32]) -> Vec<(usize, usize, usize)> {
    offsets.iter().map(|&o| shape.offset_to_coords(o as usize).expect("offsets validated on construction")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_format::{compress, decompress, DenseKernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(
        rng: &mut ChaCha8Rng,
        oc: usize,
        ic: usize,
        k: usize,
        hw: usize,
        density: f64,
    ) -> (FeatureMap<f32>, GroupedCsrKernel<f32>) {
        let input = FeatureMap::from_fn(ic, hw, hw, |_, _, _| rng.gen_range(-1.0..1.0));
        let shape = KernelShape::new(oc, ic, k, k).unwrap();
        let keep: Vec<bool> = (0..oc.div_ceil(4) * shape.columns()).map(|_| rng.gen_bool(density)).collect();
        let dense = DenseKernel::from_fn(shape, |n, c, r, s| {
            if keep[(n / 4) * shape.columns() + shape.flatten(c, r, s)] {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        (input, compress(&dense, 4))
    }

    #[test]
    fn offset_to_coords_examples() {
        assert_eq!(offset_to_coords(0, 3, 3, 3).unwrap(), (0, 0, 0));
        assert_eq!(offset_to_coords(9, 3, 3, 3).unwrap(), (1, 0, 0));
        assert!(matches!(offset_to_coords(27, 3, 3, 3), Err(Error::Structural(_))));
    }

    #[test]
    fn empty_kernel_outputs_bias_only() {
        let shape = KernelShape::new(5, 2, 3, 3).unwrap();
        let kernel = compress(&DenseKernel::<f32>::zeros(shape), 4);
        let input = FeatureMap::from_fn(2, 6, 6, |c, y, x| (c + y + x) as f32);
        let bias = [1.0, 2.0, 3.0, 4.0, 5.0];
        let geom = ConvGeometry::new(1, 1).unwrap();
        for out in [
            conv_sparse(&input, &kernel, Some(&bias), geom).unwrap(),
            conv_sparse_vectorized(&input, &kernel, Some(&bias), geom).unwrap(),
        ] {
            for (plane, &b) in out.values().chunks(36).zip(&bias) {
                assert!(plane.iter().all(|&v| v == b));
            }
        }
        let no_bias = conv_sparse_vectorized(&input, &kernel, None, geom).unwrap();
        assert!(no_bias.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_sparse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (input, kernel) = random_case(&mut rng, 4, 3, 3, 8, 0.5);
        let geom = ConvGeometry::new(1, 1).unwrap();
        let oracle = conv_dense_reference(&input, &decompress(&kernel), None, geom).unwrap();
        let scalar = conv_sparse(&input, &kernel, None, geom).unwrap();
        let tiled = conv_sparse_vectorized(&input, &kernel, None, geom).unwrap();
        assert!(crate::scalar::max_relative_error(scalar.values(), oracle.values()) <= 1e-5);
        assert_eq!(tiled, scalar);
    }

    #[test]
    fn mac_count_matches_executed_work() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (oc, geom) in [(7, ConvGeometry::new(1, 1).unwrap()), (8, ConvGeometry::new(2, 0).unwrap())] {
            let (input, kernel) = random_case(&mut rng, oc, 2, 3, 9, 0.4);
            let (out, macs) = conv_sparse_counted(&input, &kernel, None, geom).unwrap();
            assert_eq!(macs, mac_count(&kernel, out.height(), out.width()));
        }
    }

    #[test]
    fn threaded_matches_single_worker() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (input, kernel) = random_case(&mut rng, 18, 3, 3, 10, 0.5);
        let geom = ConvGeometry::new(1, 1).unwrap();
        let single = conv_sparse_vectorized(&input, &kernel, None, geom).unwrap();
        for threads in [2, 3, 8] {
            assert_eq!(conv_sparse_vectorized_threads(&input, &kernel, None, geom, threads).unwrap(), single);
        }
    }

    #[test]
    fn wide_groups_use_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = KernelShape::new(21, 2, 3, 3).unwrap();
        let dense =
            DenseKernel::from_fn(shape, |_, _, _, _| if rng.gen_bool(0.5) { rng.gen_range(-1.0f32..1.0) } else { 0.0 });
        let kernel = compress(&dense, 12);
        let input = FeatureMap::from_fn(2, 7, 11, |_, _, _| rng.gen_range(-1.0..1.0));
        let geom = ConvGeometry::new(2, 1).unwrap();
        assert_eq!(
            conv_sparse_vectorized(&input, &kernel, None, geom).unwrap(),
            conv_sparse(&input, &kernel, None, geom).unwrap()
        );
    }
}
