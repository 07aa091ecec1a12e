//! Reproducible, spatially correlated Gaussian noise fields.
//!
//! Every `(seed, particle, frame)` triple owns an independent generator, so
//! a particle's perturbations never depend on which worker runs it or in
//! which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::gaussian_kernel;

/// Coordinates of one particle's Brownian increments for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub particle_index: u64,
    pub frame_index: u64,
}

/// Index space reserved for filter-level draws (resampling offsets), kept
/// apart from particle indices.
pub(crate) const FILTER_STREAM: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseStream {
    pub fn new(master_seed: u64, particle_index: u64, frame_index: u64) -> Self {
        NoiseStream { master_seed, particle_index, frame_index }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let key = splitmix64(
            splitmix64(splitmix64(self.master_seed) ^ self.particle_index) ^ self.frame_index.rotate_left(32),
        );
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Draws unit-variance Gaussian fields with Gaussian spatial correlation.
///
/// White noise is generated on a lattice of spacing `stride` (about half
/// the correlation length), smoothed there with a Gaussian of
/// `corr_len / stride` lattice cells and bilinearly interpolated onto the
/// pixel grid. Interpolation lowers the variance between lattice nodes; the
/// exact loss depends only on the sub-lattice phase and is divided out, so
/// every pixel has unit variance.
#[derive(Debug, Clone)]
pub struct CorrelatedNoise {
    width: usize,
    height: usize,
    kernel: Vec<f64>,
    kernel_norm: f64,
    lattice_w: usize,
    lattice_h: usize,
    /// Per column: left and right lattice node, interpolation weight and
    /// 1 / standard deviation of the interpolated field at that phase.
    col_taps: Vec<Tap>,
    row_taps: Vec<Tap>,
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
    gain: f64,
}

fn taps(len: usize, stride: usize, lattice_len: usize, phase_gain: &[f64]) -> Vec<Tap> {
    (0..len)
        .map(|i| Tap {
            lo: i / stride,
            hi: (i / stride + 1).min(lattice_len - 1),
            t: (i % stride) as f64 / stride as f64,
            gain: phase_gain[i % stride],
        })
        .collect()
}

impl CorrelatedNoise {
    pub fn new(width: usize, height: usize, corr_len: f64) -> Self {
        assert!(corr_len > 0.0, "correlation length must be positive");
        let stride = ((corr_len / 2.0).floor() as usize).max(1);
        let kernel = gaussian_kernel(corr_len / stride as f64);
        let k2: f64 = kernel.iter().map(|k| k * k).sum();
        let lag1: f64 = kernel.windows(2).map(|p| p[0] * p[1]).sum::<f64>() / k2;
        let phase_gain: Vec<f64> = (0..stride)
            .map(|p| {
                let a = p as f64 / stride as f64;
                let var = (1.0 - a).powi(2) + a * a + 2.0 * a * (1.0 - a) * lag1;
                1.0 / var.sqrt()
            })
            .collect();
        let lattice_w = (width - 1).div_ceil(stride) + 1;
        let lattice_h = (height - 1).div_ceil(stride) + 1;
        CorrelatedNoise {
            width,
            height,
            kernel,
            kernel_norm: k2,
            lattice_w,
            lattice_h,
            col_taps: taps(width, stride, lattice_w, &phase_gain),
            row_taps: taps(height, stride, lattice_h, &phase_gain),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Fills `out` (row-major, `width * height`) with one field.
    pub fn fill<R: rand::Rng>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.width * self.height);
        let r = self.kernel.len() / 2;
        let (lw, lh) = (self.lattice_w, self.lattice_h);
        let (pw, ph) = (lw + 2 * r, lh + 2 * r);
        let white: Vec<f64> = (0..pw * ph).map(|_| StandardNormal.sample(rng)).collect();

        // valid-mode separable convolution: every lattice node sees the full kernel
        let mut rows = vec![0.0; lw * ph];
        for y in 0..ph {
            for x in 0..lw {
                let src = &white[y * pw + x..y * pw + x + self.kernel.len()];
                rows[y * lw + x] = src.iter().zip(&self.kernel).map(|(a, k)| a * k).sum();
            }
        }
        let mut lattice = vec![0.0; lw * lh];
        for y in 0..lh {
            for x in 0..lw {
                let mut acc = 0.0;
                for (j, k) in self.kernel.iter().enumerate() {
                    acc += rows[(y + j) * lw + x] * k;
                }
                lattice[y * lw + x] = acc / self.kernel_norm;
            }
        }

        for (y, ry) in self.row_taps.iter().enumerate() {
            let (top_row, bot_row) = (&lattice[ry.lo * lw..], &lattice[ry.hi * lw..]);
            let out_row = &mut out[y * self.width..(y + 1) * self.width];
            for (o, cx) in out_row.iter_mut().zip(&self.col_taps) {
                let top = top_row[cx.lo] * (1.0 - cx.t) + top_row[cx.hi] * cx.t;
                let bot = bot_row[cx.lo] * (1.0 - cx.t) + bot_row[cx.hi] * cx.t;
                *o = (top * (1.0 - ry.t) + bot * ry.t) * ry.gain * cx.gain;
            }
        }
    }
}
