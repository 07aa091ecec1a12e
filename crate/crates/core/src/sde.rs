//! Stochastic transport of one particle's `(phi, psi)` between two
//! observations.
//!
//! The interface moves with normal speed `beta (n·w) + (1 - beta) F`, where
//! `w` is the optical flow and `F` the normalized Chan-Vese region force,
//! plus Brownian velocity perturbations along the normal `n` and the
//! tangent `n_perp`. Time is discretized with Euler-Maruyama; every substep
//! is a semi-Lagrangian advection of `phi` and `psi` along the same
//! characteristics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{central_gradient, ScalarField, VectorField};
use crate::levelset::{self, Correspondence, SignedDistance, MAX_STEP_DISPLACEMENT};
use crate::noise::{CorrelatedNoise, NoiseStream};

/// Gradient magnitudes below this leave the normal undefined.
const MIN_GRADIENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeParams {
    /// Normal diffusion, px/√frame.
    pub sigma_n: f64,
    /// Tangential diffusion, px/√frame. Slides correspondences along the
    /// interface without moving it.
    pub sigma_t: f64,
    /// Euler-Maruyama steps per frame interval.
    pub substeps: usize,
    /// Blend between flow projection (1) and region force (0).
    pub beta: f64,
    /// Spatial correlation length of the Brownian fields, px.
    pub noise_corr_len: f64,
}

impl Default for SdeParams {
    fn default() -> Self {
        SdeParams { sigma_n: 2.0, sigma_t: 2.0, substeps: 20, beta: 0.9, noise_corr_len: 8.0 }
    }
}

impl SdeParams {
    pub fn deterministic(self) -> Self {
        SdeParams { sigma_n: 0.0, sigma_t: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_n >= 0.0 && self.sigma_t >= 0.0) {
            return Err(Error::Parameter("diffusion constants must be >= 0".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Parameter("substeps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Parameter(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.noise_corr_len > 0.0) {
            return Err(Error::Parameter("noise_corr_len must be > 0".into()));
        }
        Ok(())
    }

    fn is_noisy(&self) -> bool {
        self.sigma_n > 0.0 || self.sigma_t > 0.0
    }
}

/// Normalized two-region force: positive where `image` is closer to the
/// inside mean, so positive values push the interface outward.
pub fn chan_vese_force(phi: &SignedDistance, image: &ScalarField) -> Result<ScalarField> {
    if phi.dims() != image.dims() {
        return Err(Error::Parameter("level set and image dimensions differ".into()));
    }
    let range = (image.min(), image.max());
    Ok(match RegionForce::new(phi.field.values(), image.values(), range)? {
        Some(rf) => image.map(|v| rf.at(v)),
        None => ScalarField::new(image.width(), image.height(), 0.0)?,
    })
}

/// Unit normals `∇phi / |∇phi|` and the gradient magnitude.
pub fn normals(phi: &SignedDistance) -> (VectorField, ScalarField) {
    let g = central_gradient(&phi.field);
    let mag = g.u.zip_map(&g.v, |a, b| (a * a + b * b).sqrt());
    let (w, h) = phi.dims();
    let mut nx = Vec::with_capacity(w * h);
    let mut ny = Vec::with_capacity(w * h);
    for ((&gx, &gy), &m) in g.u.values().iter().zip(g.v.values()).zip(mag.values()) {
        if m < MIN_GRADIENT {
            nx.push(0.0);
            ny.push(0.0);
        } else {
            let inv = 1.0 / m;
            nx.push(gx * inv);
            ny.push(gy * inv);
        }
    }
    (
        VectorField { u: ScalarField::from_raw(w, h, nx), v: ScalarField::from_raw(w, h, ny) },
        mag,
    )
}

/// Scalar normal speed `beta (n·w) + (1 - beta) F`.
pub fn drift_speed(phi: &SignedDistance, w: &VectorField, force: &ScalarField, beta: f64) -> ScalarField {
    assert_eq!(phi.dims(), w.dims(), "level set and flow dimensions differ");
    assert_eq!(phi.dims(), force.dims(), "level set and force dimensions differ");
    let (n, mag) = normals(phi);
    normal_speed(&n, &mag, w, Some(force), beta)
}

fn normal_speed(n: &VectorField, mag: &ScalarField, w: &VectorField, force: Option<&ScalarField>, beta: f64) -> ScalarField {
    let (width, height) = n.dims();
    let mut out = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let f = force.map_or(0.0, |f| f.values()[i]);
        let region = (1.0 - beta) * f;
        if mag.values()[i] < MIN_GRADIENT {
            out.push(region);
        } else {
            let proj = n.u.values()[i] * w.u.values()[i] + n.v.values()[i] * w.v.values()[i];
            out.push(beta * proj + region);
        }
    }
    ScalarField::from_raw(width, height, out)
}

/// Region means and normalization of the Chan-Vese force for one state,
/// so the force at a pixel is `contrast * (2 v - c_in - c_out) / peak`.
struct RegionForce {
    contrast: f64,
    c_in: f64,
    c_out: f64,
    peak: f64,
}

impl RegionForce {
    /// `None` when the two regions have the same mean (zero force).
    fn new(phi: &[f64], image: &[f64], range: (f64, f64)) -> Result<Option<Self>> {
        let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for (&p, &v) in phi.iter().zip(image) {
            if p <= 0.0 {
                s_in += v;
                n_in += 1;
            } else {
                s_out += v;
                n_out += 1;
            }
        }
        if n_in == 0 || n_out == 0 {
            return Err(Error::Degenerate("Chan-Vese force needs non-empty inside and outside regions".into()));
        }
        let (c_in, c_out) = (s_in / n_in as f64, s_out / n_out as f64);
        let contrast = c_in - c_out;
        if contrast.abs() < 1e-9 {
            return Ok(None);
        }
        // the force is monotone in v, so its peak sits at an intensity extreme
        let at = |v: f64| (contrast * (2.0 * v - c_in - c_out)).abs();
        Ok(Some(RegionForce { contrast, c_in, c_out, peak: at(range.0).max(at(range.1)) }))
    }

    #[inline]
    fn at(&self, v: f64) -> f64 {
        let f = self.contrast * (2.0 * v - self.c_in - self.c_out);
        if self.peak > 0.0 {
            f / self.peak
        } else {
            f
        }
    }
}

/// Carries one particle from the current frame to the next.
///
/// Each substep evaluates the normal, the drift speed and the Brownian
/// increments pixel by pixel and resamples `phi` and `psi` at the departure
/// point in the same pass; the arithmetic matches [`normals`],
/// [`chan_vese_force`], [`drift_speed`] and [`levelset::advect`]. The
/// tangential increment displaces only `psi`.
pub fn propagate(
    phi: &SignedDistance,
    psi: &Correspondence,
    w: &VectorField,
    image_next: &ScalarField,
    params: &SdeParams,
    noise: NoiseStream,
) -> Result<(SignedDistance, Correspondence)> {
    params.validate()?;
    if phi.dims() != psi.dims() || phi.dims() != w.dims() || phi.dims() != image_next.dims() {
        return Err(Error::Parameter("propagation fields must share dimensions".into()));
    }
    let dt = 1.0 / params.substeps as f64;
    let bound = (w.max_magnitude() + (1.0 - params.beta) + 3.0 * params.sigma_n.max(params.sigma_t)) * dt;
    if bound > MAX_STEP_DISPLACEMENT {
        return Err(Error::Cfl { max_displacement: bound, limit: MAX_STEP_DISPLACEMENT });
    }
    let (width, height) = phi.dims();
    let n_px = width * height;
    let noisy = params.is_noisy();
    let generator = noisy.then(|| CorrelatedNoise::new(width, height, params.noise_corr_len));
    let mut rng = noise.rng();
    let mut xi_n = vec![0.0; if noisy { n_px } else { 0 }];
    let mut xi_t = vec![0.0; if noisy { n_px } else { 0 }];
    let sqrt_dt = dt.sqrt();
    let range = (image_next.min(), image_next.max());
    let (wu, wv, img) = (w.u.values(), w.v.values(), image_next.values());

    let mut cur = [phi.field.values().to_vec(), psi.field.u.values().to_vec(), psi.field.v.values().to_vec()];
    let mut next = [vec![0.0; n_px], vec![0.0; n_px], vec![0.0; n_px]];
    for _ in 0..params.substeps {
        let force = if params.beta < 1.0 { RegionForce::new(&cur[0], img, range)? } else { None };
        if let Some(gen) = &generator {
            gen.fill(&mut rng, &mut xi_n);
            gen.fill(&mut rng, &mut xi_t);
        }
        let d = &cur[0];
        let fields = [&cur[0][..], &cur[1][..], &cur[2][..]];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let gx = if x == 0 {
                    d[i + 1] - d[i]
                } else if x == width - 1 {
                    d[i] - d[i - 1]
                } else {
                    0.5 * (d[i + 1] - d[i - 1])
                };
                let gy = if y == 0 {
                    d[i + width] - d[i]
                } else if y == height - 1 {
                    d[i] - d[i - width]
                } else {
                    0.5 * (d[i + width] - d[i - width])
                };
                let m = (gx * gx + gy * gy).sqrt();
                let (nx, ny) = if m < MIN_GRADIENT {
                    (0.0, 0.0)
                } else {
                    let inv = 1.0 / m;
                    (gx * inv, gy * inv)
                };
                let f = force.as_ref().map_or(0.0, |rf| rf.at(img[i]));
                let region = (1.0 - params.beta) * f;
                let s = if m < MIN_GRADIENT { region } else { params.beta * (nx * wu[i] + ny * wv[i]) + region };
                // velocity first, then scale to a displacement
                let vx = s * nx;
                let vy = s * ny;
                let mut du = vx * dt;
                let mut dv = vy * dt;
                // tangential slip moves psi along the level lines; applied to
                // phi it would only shrink curved fronts at second order
                let (mut tu, mut tv) = (0.0, 0.0);
                if noisy {
                    // n_perp = (n_y, -n_x)
                    let a = params.sigma_n * xi_n[i] * sqrt_dt;
                    let b = params.sigma_t * xi_t[i] * sqrt_dt;
                    du += a * nx;
                    dv += a * ny;
                    tu = b * ny;
                    tv = -b * nx;
                }
                let [p] = levelset::departure_sample([fields[0]], width, height, x, y, du, dv);
                let [qu, qv] = levelset::departure_sample([fields[1], fields[2]], width, height, x, y, du + tu, dv + tv);
                next[0][i] = p;
                next[1][i] = qu;
                next[2][i] = qv;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let [p, qu, qv] = cur;
    let phi_out = levelset::reinitialize(&SignedDistance::from_field(ScalarField::from_raw(width, height, p)))?;
    debug_assert!(phi_out.field.values().iter().all(|v| v.is_finite()));
    if !phi_out.has_interface() {
        return Err(Error::Internal("propagation lost the interface".into()));
    }
    let psi_out = VectorField { u: ScalarField::from_raw(width, height, qu), v: ScalarField::from_raw(width, height, qv) };
    Ok((phi_out, Correspondence { field: psi_out }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{advect, extract_contour, reinitialize};

    fn disk(n: usize, cx: f64, cy: f64, r: f64) -> SignedDistance {
        SignedDistance::from_field(ScalarField::from_fn(n, n, |x, y| (x as f64 - cx).hypot(y as f64 - cy) - r).unwrap())
    }

    #[test]
    fn force_on_constant_image_is_zero() {
        let phi = disk(32, 16.0, 16.0, 6.0);
        let f = chan_vese_force(&phi, &ScalarField::new(32, 32, 0.4).unwrap()).unwrap();
        assert!(f.values().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn force_on_perfect_segmentation() {
        let phi = disk(32, 16.0, 16.0, 6.0);
        let (a, b) = (0.3, 0.7);
        let img = phi.field.map(|p| if p <= 0.0 { a } else { b });
        let f = chan_vese_force(&phi, &img).unwrap();
        for (&p, &v) in phi.field.values().iter().zip(f.values()) {
            // inside pixels are closer to c_in: positive; outside negative
            if p <= 0.0 {
                assert!(v > 0.0);
            } else {
                assert!(v < 0.0);
            }
        }
        let mid = ScalarField::new(32, 32, 0.5).unwrap();
        let mixed = img.zip_map(&mid, |i, m| if i == a { i } else { m });
        let g = chan_vese_force(&phi, &mixed).unwrap();
        // c_in = a, c_out = 0.5 here; a pixel at (c_in + c_out)/2 feels nothing
        let probe = (a + 0.5) / 2.0;
        let fp = (probe - 0.5f64).powi(2) - (probe - a).powi(2);
        assert!(fp.abs() < 1e-15);
        assert!(f.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) - 1.0 < 1e-12);
        assert!(g.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn force_pushes_shrunken_contour_outward() {
        let truth = disk(64, 32.0, 32.0, 12.0);
        let img = truth.field.map(|p| if p <= 0.0 { 0.35 } else { 0.65 });
        let shrunk = disk(64, 32.0, 32.0, 10.0);
        let f = chan_vese_force(&shrunk, &img).unwrap();
        let (mut s, mut n) = (0.0, 0);
        for y in 0..64 {
            for x in 0..64 {
                let r = (x as f64 - 32.0).hypot(y as f64 - 32.0);
                if r > 10.0 && r <= 12.0 {
                    s += f.get(x, y);
                    n += 1;
                }
            }
        }
        assert!(s / n as f64 > 0.0);
    }

    #[test]
    fn empty_region_is_degenerate() {
        let phi = SignedDistance::from_field(ScalarField::new(8, 8, 1.0).unwrap());
        assert!(matches!(chan_vese_force(&phi, &ScalarField::new(8, 8, 0.5).unwrap()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn drift_endpoints() {
        let half = SignedDistance::from_field(ScalarField::from_fn(16, 8, |x, _| x as f64 - 7.5).unwrap());
        let w = VectorField::uniform(16, 8, 2.0, 5.0).unwrap();
        let force = ScalarField::from_fn(16, 8, |x, y| ((x + y) % 3) as f64 / 3.0).unwrap();
        let s = drift_speed(&half, &w, &force, 1.0);
        assert!(s.values().iter().all(|&v| v == 2.0));
        let s0 = drift_speed(&half, &w, &force, 0.0);
        assert_eq!(s0, force);
        let flat = SignedDistance::from_field(ScalarField::new(16, 8, 1.0).unwrap());
        let s_flat = drift_speed(&flat, &w, &force, 0.25);
        assert_eq!(s_flat, force.map(|f| 0.75 * f));
    }

    #[test]
    fn zero_noise_matches_deterministic_advection_bitwise() {
        let phi = disk(40, 18.0, 20.0, 8.0);
        let psi = Correspondence::identity(40, 40).unwrap();
        let w = VectorField::new(
            ScalarField::from_fn(40, 40, |x, _| 0.5 + 0.01 * x as f64).unwrap(),
            ScalarField::from_fn(40, 40, |_, y| -0.3 + 0.005 * y as f64).unwrap(),
        )
        .unwrap();
        let img = ScalarField::new(40, 40, 0.5).unwrap();
        let params = SdeParams { beta: 1.0, substeps: 5, ..SdeParams::default() }.deterministic();
        let (p, q) = propagate(&phi, &psi, &w, &img, &params, NoiseStream::new(1, 0, 0)).unwrap();

        let dt = 1.0 / 5.0;
        let (mut rp, mut rq) = (phi.clone(), psi.clone());
        for _ in 0..5 {
            let (n, _) = normals(&rp);
            let zero = ScalarField::new(40, 40, 0.0).unwrap();
            let s = drift_speed(&rp, &w, &zero, 1.0);
            let v = VectorField::new(s.zip_map(&n.u, |a, b| a * b), s.zip_map(&n.v, |a, b| a * b)).unwrap();
            let next = advect(&rp, &rq, &v, dt).unwrap();
            rp = next.0;
            rq = next.1;
        }
        let rp = reinitialize(&rp).unwrap();
        assert_eq!(p, rp);
        assert_eq!(q, rq);
    }

    #[test]
    fn zero_dynamics_is_identity_up_to_reinit() {
        let phi = disk(48, 23.3, 24.6, 9.0);
        let psi = Correspondence::identity(48, 48).unwrap();
        let w = VectorField::zeros(48, 48).unwrap();
        let img = ScalarField::new(48, 48, 0.5).unwrap();
        let params = SdeParams { beta: 1.0, ..SdeParams::default() }.deterministic();
        let (p, q) = propagate(&phi, &psi, &w, &img, &params, NoiseStream::new(3, 1, 1)).unwrap();
        assert_eq!(q, psi);
        let a = &extract_contour(&phi.field)[0];
        let b = &extract_contour(&p.field)[0];
        assert!(crate::eval::hausdorff(a, b).unwrap() < 0.25);
    }

    #[test]
    fn seeded_propagation_is_deterministic() {
        let phi = disk(48, 24.0, 24.0, 10.0);
        let psi = Correspondence::identity(48, 48).unwrap();
        let w = VectorField::uniform(48, 48, 0.3, 0.0).unwrap();
        let img = phi.field.map(|p| if p <= 0.0 { 0.35 } else { 0.65 });
        let params = SdeParams::default();
        let a = propagate(&phi, &psi, &w, &img, &params, NoiseStream::new(7, 2, 3)).unwrap();
        let b = propagate(&phi, &psi, &w, &img, &params, NoiseStream::new(7, 2, 3)).unwrap();
        let c = propagate(&phi, &psi, &w, &img, &params, NoiseStream::new(7, 3, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn tangential_noise_leaves_phi_alone() {
        let n = 48;
        let phi = SignedDistance::from_field(ScalarField::from_fn(n, n, |x, _| x as f64 - 23.5).unwrap());
        let psi = Correspondence::identity(n, n).unwrap();
        let w = VectorField::zeros(n, n).unwrap();
        let img = ScalarField::new(n, n, 0.5).unwrap();
        let params = SdeParams { beta: 1.0, sigma_n: 0.0, sigma_t: 2.0, ..SdeParams::default() };
        let (p, q) = propagate(&phi, &psi, &w, &img, &params, NoiseStream::new(1, 0, 1)).unwrap();
        for (a, b) in p.field.values().iter().zip(phi.field.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(q.field.v.values().iter().zip(psi.field.v.values()).any(|(a, b)| (a - b).abs() > 0.1));
        assert_eq!(q.field.u, psi.field.u);
    }

    #[test]
    fn parameter_validation() {
        let phi = disk(16, 8.0, 8.0, 4.0);
        let psi = Correspondence::identity(16, 16).unwrap();
        let w = VectorField::zeros(16, 16).unwrap();
        let img = ScalarField::new(16, 16, 0.5).unwrap();
        for bad in [
            SdeParams { beta: 1.5, ..SdeParams::default() },
            SdeParams { substeps: 0, ..SdeParams::default() },
            SdeParams { sigma_n: -1.0, ..SdeParams::default() },
            SdeParams { noise_corr_len: 0.0, ..SdeParams::default() },
        ] {
            assert!(propagate(&phi, &psi, &w, &img, &bad, NoiseStream::new(0, 0, 0)).is_err());
        }
        let fast = VectorField::uniform(16, 16, 30.0, 0.0).unwrap();
        let p = SdeParams { substeps: 1, ..SdeParams::default() };
        assert!(matches!(
            propagate(&phi, &psi, &fast, &img, &p, NoiseStream::new(0, 0, 0)),
            Err(Error::Cfl { .. })
        ));
    }
}
