//! N-dimensional FFT on row-major complex buffers (last axis fastest).
//!
//! Forward transform is `sum_n x(n) exp(-i 2 pi k n / N)` per axis, matching
//! the underlying 1-D planner; the inverse is normalized by `1/N_total`.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

#[derive(Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let mut cache: HashMap<(usize, bool), Arc<dyn Fft<f64>>> = HashMap::new();
        let mut plan = |n: usize, forward: bool| {
            cache
                .entry((n, forward))
                .or_insert_with(|| {
                    planner.plan_fft(
                        n,
                        if forward {
                            FftDirection::Forward
                        } else {
                            FftDirection::Inverse
                        },
                    )
                })
                .clone()
        };
        let fwd = dims.iter().map(|&n| plan(n, true)).collect();
        let inv = dims.iter().map(|&n| plan(n, false)).collect();
        FftNd {
            dims: dims.to_vec(),
            fwd,
            inv,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.len(), "buffer length mismatch");
        let naxes = self.dims.len();
        for axis in 0..naxes {
            let n = self.dims[axis];
            if n == 1 {
                continue;
            }
            let fft = if forward {
                &self.fwd[axis]
            } else {
                &self.inv[axis]
            };
            let mut scratch =
                vec![Complex64::new(0.0, 0.0); n + fft.get_inplace_scratch_len()];
            // stride of this axis and size of the block it spans
            let inner: usize = self.dims[axis + 1..].iter().product();
            let outer: usize = self.dims[..axis].iter().product();
            if inner == 1 {
                // contiguous rows
                for o in 0..outer {
                    let row = &mut data[o * n..(o + 1) * n];
                    fft.process_with_scratch(row, &mut scratch);
                }
            } else {
                // strided axis: move tiles of adjacent columns through a
                // contiguous scratch block so every memory pass is
                // sequential within cache lines
                const TILE: usize = 32;
                let mut block = vec![Complex64::new(0.0, 0.0); n * TILE];
                for o in 0..outer {
                    let base = o * n * inner;
                    let mut i0 = 0;
                    while i0 < inner {
                        let w = TILE.min(inner - i0);
                        for k in 0..n {
                            let src = base + k * inner + i0;
                            block[k * w..(k + 1) * w]
                                .copy_from_slice(&data[src..src + w]);
                        }
                        // lines now live at stride w; transform each via the
                        // scratch row
                        for i in 0..w {
                            for k in 0..n {
                                scratch[k] = block[k * w + i];
                            }
                            let (line, rest) = scratch.split_at_mut(n);
                            fft.process_with_scratch(line, rest);
                            for k in 0..n {
                                block[k * w + i] = scratch[k];
                            }
                        }
                        for k in 0..n {
                            let dst = base + k * inner + i0;
                            data[dst..dst + w].copy_from_slice(&block[k * w..(k + 1) * w]);
                        }
                        i0 += w;
                    }
                }
            }
        }
        if !forward {
            let scale = 1.0 / self.len() as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }
}

/// Frequency `2 pi k / n` folded to `(-pi, pi]`.
pub fn frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n = n as f64;
    let f = 2.0 * std::f64::consts::PI * k / n;
    if f > std::f64::consts::PI + 1e-12 {
        f - 2.0 * std::f64::consts::PI
    } else {
        f
    }
}
