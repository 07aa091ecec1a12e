//! Horn-Schunck optical flow.
//!
//! Flow is expressed in px/frame and maps the previous frame onto the next
//! one: `I_next(x + w(x)) ≈ I_prev(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Smoothness weight, in units of the scaled intensities.
    pub alpha: f64,
    pub max_iterations: usize,
    /// Stop once the mean per-pixel update magnitude drops below this (px/frame).
    pub tolerance: f64,
    /// Normalized intensities are multiplied by this before differentiation,
    /// so `alpha` is expressed on an 8-bit grey scale.
    pub intensity_scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { alpha: 7.0, max_iterations: 500, tolerance: 1e-4, intensity_scale: 255.0 }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Parameter(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        if !(self.intensity_scale > 0.0) {
            return Err(Error::Parameter("intensity_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Spatio-temporal derivatives of a frame pair plus the Jacobi iteration
/// that minimizes the Horn-Schunck energy over them.
#[derive(Debug, Clone)]
pub struct HornSchunck {
    width: usize,
    height: usize,
    alpha2: f64,
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
}

impl HornSchunck {
    pub fn new(prev: &ScalarField, next: &ScalarField, params: &FlowParams) -> Result<Self> {
        params.validate()?;
        if prev.dims() != next.dims() {
            return Err(Error::Parameter(format!(
                "frame dimensions differ: {:?} vs {:?}",
                prev.dims(),
                next.dims()
            )));
        }
        let (w, h) = prev.dims();
        let s = params.intensity_scale;
        let a = prev.values();
        let b = next.values();
        let mut ix = vec![0.0; w * h];
        let mut iy = vec![0.0; w * h];
        let mut it = vec![0.0; w * h];
        // 2x2x2 cube averages; the far row/column replicate the border
        for y in 0..h {
            let y1 = (y + 1).min(h - 1);
            for x in 0..w {
                let x1 = (x + 1).min(w - 1);
                let (p00, p10, p01, p11) = (y * w + x, y * w + x1, y1 * w + x, y1 * w + x1);
                let i = y * w + x;
                ix[i] = 0.25 * s * ((a[p10] - a[p00]) + (a[p11] - a[p01]) + (b[p10] - b[p00]) + (b[p11] - b[p01]));
                iy[i] = 0.25 * s * ((a[p01] - a[p00]) + (a[p11] - a[p10]) + (b[p01] - b[p00]) + (b[p11] - b[p10]));
                it[i] = 0.25 * s * ((b[p00] - a[p00]) + (b[p10] - a[p10]) + (b[p01] - a[p01]) + (b[p11] - a[p11]));
            }
        }
        Ok(HornSchunck { width: w, height: h, alpha2: params.alpha * params.alpha, ix, iy, it })
    }

    /// 4-neighbour mean with mirrored (replicated) borders.
    fn local_mean(&self, f: &[f64], x: usize, y: usize) -> f64 {
        let (w, h) = (self.width, self.height);
        let i = y * w + x;
        let l = if x > 0 { f[i - 1] } else { f[i] };
        let r = if x + 1 < w { f[i + 1] } else { f[i] };
        let t = if y > 0 { f[i - w] } else { f[i] };
        let b = if y + 1 < h { f[i + w] } else { f[i] };
        0.25 * (l + r + t + b)
    }

    /// One simultaneous (Jacobi) update. Returns the mean update magnitude.
    pub fn iterate(&self, u: &[f64], v: &[f64], u_out: &mut [f64], v_out: &mut [f64]) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ub = self.local_mean(u, x, y);
                let vb = self.local_mean(v, x, y);
                let (gx, gy, gt) = (self.ix[i], self.iy[i], self.it[i]);
                let k = (gx * ub + gy * vb + gt) / (self.alpha2 + gx * gx + gy * gy);
                u_out[i] = ub - gx * k;
                v_out[i] = vb - gy * k;
                total += (u_out[i] - u[i]).hypot(v_out[i] - v[i]);
            }
        }
        total / (w * h) as f64
    }

    /// Discrete energy whose block minimizer is the Jacobi update:
    /// data residual squared plus `alpha²/4` times squared differences over
    /// every 4-neighbour edge.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut data = 0.0;
        let mut smooth = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let r = self.ix[i] * u[i] + self.iy[i] * v[i] + self.it[i];
                data += r * r;
                if x + 1 < w {
                    smooth += (u[i + 1] - u[i]).powi(2) + (v[i + 1] - v[i]).powi(2);
                }
                if y + 1 < h {
                    smooth += (u[i + w] - u[i]).powi(2) + (v[i + w] - v[i]).powi(2);
                }
            }
        }
        data + 0.25 * self.alpha2 * smooth
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Dense Horn-Schunck flow from `prev` to `next`.
pub fn horn_schunck(prev: &ScalarField, next: &ScalarField, params: &FlowParams) -> Result<VectorField> {
    let solver = HornSchunck::new(prev, next, params)?;
    let (w, h) = solver.dims();
    let mut u = vec![0.0; w * h];
    let mut v = vec![0.0; w * h];
    let mut u2 = vec![0.0; w * h];
    let mut v2 = vec![0.0; w * h];
    for _ in 0..params.max_iterations {
        let delta = solver.iterate(&u, &v, &mut u2, &mut v2);
        std::mem::swap(&mut u, &mut u2);
        std::mem::swap(&mut v, &mut v2);
        if delta < params.tolerance {
            break;
        }
    }
    VectorField::new(ScalarField::from_raw(w, h, u), ScalarField::from_raw(w, h, v))
}

/// Warps `prev` forward along `flow` by back-tracing: `out(x) = prev(x - w(x))`.
pub fn warp_backward(prev: &ScalarField, flow: &VectorField) -> ScalarField {
    let (w, h) = prev.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.get(x, y);
            out.push(prev.sample(x as f64 - du, y as f64 - dv));
        }
    }
    ScalarField::from_raw(w, h, out)
}
