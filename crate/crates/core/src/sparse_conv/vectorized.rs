//! Register-tiled grouped-CSR convolution.
//!
//! For each group, one output row is processed in tiles of [`TILE`] positions. The
//! `g × TILE` partial sums live in a fixed-size accumulator array; each iteration loads
//! one stored column (the `g` weights of a prune unit), gathers the `TILE` input values
//! that column touches, and does a `g × TILE` multiply-accumulate. Fixed trip counts let
//! the compiler keep the accumulators in vector registers. Tail tiles run full width on
//! zero-filled lanes and only the live lanes are written back.

use super::{column_coords, prepare, ConvGeometry, FeatureMap};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::sparse_format::{GroupBlock, GroupedCsrKernel};

/// Output positions per tile. With `g = 4` the `4 × 8` `f32` accumulators occupy eight
/// 128-bit registers.
pub const TILE: usize = 8;

/// Grouped-CSR convolution using the register-tiled kernel. Per output element the
/// accumulation order matches [`super::conv_sparse`], so results agree bit-for-bit.
pub fn conv_sparse_vectorized<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &GroupedCsrKernel<T>,
    bias: Option<&[T]>,
    geom: ConvGeometry,
) -> Result<FeatureMap<T>> {
    conv_sparse_vectorized_threads(input, kernel, bias, geom, 1)
}

/// Data-parallel variant: groups are split across `threads` workers, each writing a
/// disjoint range of output channels. `threads <= 1` runs inline on the caller.
pub fn conv_sparse_vectorized_threads<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &GroupedCsrKernel<T>,
    bias: Option<&[T]>,
    geom: ConvGeometry,
    threads: usize,
) -> Result<FeatureMap<T>> {
    let (mut out, oh, ow) = prepare(input, kernel, bias, geom)?;
    let plane = oh * ow;
    let jobs: Vec<(usize, &GroupBlock<T>, &mut [T])> = kernel
        .group_starts()
        .zip(kernel.groups())
        .zip(out.values_mut().chunks_mut(kernel.group_size() * plane))
        .map(|((start, block), dst)| (start, block, dst))
        .collect();
    let ctx = Ctx { input, kernel, bias, geom, oh, ow };
    if threads <= 1 || jobs.len() <= 1 {
        for (start, block, dst) in jobs {
            ctx.run_group(start, block, dst);
        }
    } else {
        let per_worker = jobs.len().div_ceil(threads);
        let mut jobs = jobs;
        std::thread::scope(|scope| {
            while !jobs.is_empty() {
                let take = per_worker.min(jobs.len());
                let batch: Vec<_> = jobs.drain(..take).collect();
                let ctx = &ctx;
                scope.spawn(move || {
                    for (start, block, dst) in batch {
                        ctx.run_group(start, block, dst);
                    }
                });
            }
        });
    }
    Ok(out)
}

struct Ctx<'a, T> {
    input: &'a FeatureMap<T>,
    kernel: &'a GroupedCsrKernel<T>,
    bias: Option<&'a [T]>,
    geom: ConvGeometry,
    oh: usize,
    ow: usize,
}

impl<T: Scalar> Ctx<'_, T> {
    fn run_group(&self, start: usize, block: &GroupBlock<T>, dst: &mut [T]) {
        let coords = column_coords(&self.kernel.shape(), block.offsets());
        match block.size() {
            1 => self.tiles::<1>(start, block, &coords, dst),
            2 => self.tiles::<2>(start, block, &coords, dst),
            3 => self.tiles::<3>(start, block, &coords, dst),
            4 => self.tiles::<4>(start, block, &coords, dst),
            5 => self.tiles::<5>(start, block, &coords, dst),
            6 => self.tiles::<6>(start, block, &coords, dst),
            7 => self.tiles::<7>(start, block, &coords, dst),
            8 => self.tiles::<8>(start, block, &coords, dst),
            _ => self.tiles_wide(start, block, &coords, dst),
        }
    }

    /// Fills `xs[..width]` with the inputs that kernel tap `(c, r, s)` contributes to the
    /// tile starting at output column `x0` of output row `y`; out-of-range reads are zero.
    #[inline(always)]
    fn gather(&self, (c, r, s): (usize, usize, usize), y: usize, x0: usize, width: usize, xs: &mut [T; TILE]) {
        *xs = [T::zero(); TILE];
        let Some(iy) = self.geom.source(y, r, self.input.height()) else { return };
        let row = self.input.row(c, iy);
        let stride = self.geom.stride;
        let first = (x0 * stride + s).wrapping_sub(self.geom.pad);
        if stride == 1 && x0 * stride + s >= self.geom.pad && first + width <= row.len() {
            xs[..width].copy_from_slice(&row[first..first + width]);
        } else {
            for (t, slot) in xs.iter_mut().enumerate().take(width) {
                if let Some(ix) = self.geom.source(x0 + t, s, row.len()) {
                    *slot = row[ix];
                }
            }
        }
    }

    fn tiles<const G: usize>(
        &self,
        start: usize,
        block: &GroupBlock<T>,
        coords: &[(usize, usize, usize)],
        dst: &mut [T],
    ) {
        let plane = self.oh * self.ow;
        let weights: Vec<[T; G]> =
            (0..block.nnz_cols()).map(|j| std::array::from_fn(|lane| block.column(j)[lane])).collect();
        let bias: [T; G] = std::array::from_fn(|lane| self.bias.map_or(T::zero(), |b| b[start + lane]));
        let mut xs = [T::zero(); TILE];
        for y in 0..self.oh {
            for x0 in (0..self.ow).step_by(TILE) {
                let width = TILE.min(self.ow - x0);
                let mut acc = [[T::zero(); TILE]; G];
                for (w, &tap) in weights.iter().zip(coords) {
                    self.gather(tap, y, x0, width, &mut xs);
                    for lane in 0..G {
                        let wl = w[lane];
                        for t in 0..TILE {
                            acc[lane][t] += wl * xs[t];
                        }
                    }
                }
                for lane in 0..G {
                    let base = lane * plane + y * self.ow + x0;
                    for t in 0..width {
                        dst[base + t] = acc[lane][t] + bias[lane];
                    }
                }
            }
        }
    }

    /// Groups wider than the specialised sizes keep their accumulators on the heap.
    fn tiles_wide(&self, start: usize, block: &GroupBlock<T>, coords: &[(usize, usize, usize)], dst: &mut [T]) {
        let plane = self.oh * self.ow;
        let size = block.size();
        let mut acc = vec![[T::zero(); TILE]; size];
        let mut xs = [T::zero(); TILE];
        for y in 0..self.oh {
            for x0 in (0..self.ow).step_by(TILE) {
                let width = TILE.min(self.ow - x0);
                acc.iter_mut().for_each(|a| *a = [T::zero(); TILE]);
                for (j, &tap) in coords.iter().enumerate() {
                    self.gather(tap, y, x0, width, &mut xs);
                    for (a, &wl) in acc.iter_mut().zip(block.column(j)) {
                        for t in 0..TILE {
                            a[t] += wl * xs[t];
                        }
                    }
                }
                for (lane, a) in acc.iter().enumerate() {
                    let b = self.bias.map_or(T::zero(), |b| b[start + lane]);
                    let base = lane * plane + y * self.ow + x0;
                    for t in 0..width {
                        dst[base + t] = a[t] + b;
                    }
                }
            }
        }
    }
}
