//! Multi-dimensional complex FFT over the row-major `n^d` layout.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Cached plans plus scratch for repeated `n^d` transforms.
///
/// Axis 0 is the slowest-varying index. Transforms are unnormalized:
/// `forward` computes `Σ_j x_j e^{-2πi jk/n}` per axis and `inverse` the
/// conjugate sum.
pub struct FftNd {
    n: usize,
    dim: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl FftNd {
    pub fn new(n: usize, dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = n.pow(dim as u32);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            n,
            dim,
            fwd,
            inv,
            lines: vec![Complex64::default(); len],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.apply(data, false);
    }

    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.apply(data, true);
    }

    fn apply(&mut self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.lines.len(), "buffer does not match plan");
        let plan = if inverse { &self.inv } else { &self.fwd };
        let n = self.n;
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                plan.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            let outer = data.len() / (n * stride);
            // each outer block is an `n × stride` matrix; transpose it so the
            // transformed axis becomes contiguous
            for o in 0..outer {
                let base = o * n * stride;
                transpose(&data[base..base + n * stride], &mut self.lines[base..base + n * stride], n, stride);
            }
            plan.process_with_scratch(&mut self.lines, &mut self.scratch);
            for o in 0..outer {
                let base = o * n * stride;
                transpose(&self.lines[base..base + n * stride], &mut data[base..base + n * stride], stride, n);
            }
        }
    }
}

/// `dst[c·rows + r] = src[r·cols + c]`, in cache-sized tiles.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
