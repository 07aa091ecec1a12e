//! Level-set state: signed distance construction, coupled semi-Lagrangian
//! advection of `phi` and the correspondence map `psi`, reinitialization,
//! and zero-contour extraction.

mod contour;
mod fmm;

pub use contour::{extract_contour, Contour};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, ScalarField, VectorField};

/// Largest characteristic displacement accepted by one advection step (px).
pub const MAX_STEP_DISPLACEMENT: f64 = 2.0;

/// Signed Euclidean distance to the interface: negative inside, positive outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistance {
    pub field: ScalarField,
}

/// Backward correspondence map: the value at `x` holds the coordinates of
/// the point's preimage in the initial frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub field: VectorField,
}

impl SignedDistance {
    /// Wraps a field without reinitializing it.
    pub fn from_field(field: ScalarField) -> Self {
        SignedDistance { field }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }

    pub fn has_interface(&self) -> bool {
        let v = self.field.values();
        v.iter().any(|&p| p <= 0.0) && v.iter().any(|&p| p > 0.0)
    }

    /// The segmentation `{phi <= 0}` as a two-class label map (1 = inside).
    pub fn to_mask(&self) -> LabelMap {
        let (w, h) = self.dims();
        LabelMap::from_fn(w, h, 2, |x, y| u8::from(self.field.get(x, y) <= 0.0))
            .expect("dimensions come from a valid field")
    }
}

impl Correspondence {
    pub fn identity(width: usize, height: usize) -> Result<Self> {
        Ok(Correspondence { field: VectorField::identity(width, height)? })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }
}

fn signed_from_seeds(width: usize, height: usize, values: &[f64]) -> ScalarField {
    let seeds = fmm::interface_seeds(width, height, values);
    let side: Vec<bool> = values.iter().map(|&v| v <= 0.0).collect();
    let dist = fmm::march(width, height, &seeds, &side);
    let data = dist
        .iter()
        .zip(values)
        .map(|(&d, &v)| if v <= 0.0 { -d } else { d })
        .collect();
    ScalarField::from_raw(width, height, data)
}

/// Fast-marching signed distance to the boundary of `inside_class`.
///
/// The mask indicator is mapped to `-0.5` (inside) / `+0.5` (outside), so
/// the interface sits on the pixel edges between the two classes.
pub fn sdf_from_mask(mask: &LabelMap, inside_class: u8) -> Result<SignedDistance> {
    let (w, h) = mask.dims();
    let inside = mask.count(inside_class);
    if inside == 0 || inside == w * h {
        return Err(Error::Degenerate(format!(
            "mask class {inside_class} covers {inside} of {} pixels; need both inside and outside",
            w * h
        )));
    }
    let values: Vec<f64> =
        mask.labels().iter().map(|&l| if l == inside_class { -0.5 } else { 0.5 }).collect();
    Ok(SignedDistance { field: signed_from_seeds(w, h, &values) })
}

/// Restores the distance property while keeping the zero level set.
pub fn reinitialize(phi: &SignedDistance) -> Result<SignedDistance> {
    if !phi.has_interface() {
        return Err(Error::Degenerate("level set has no sign change to reinitialize".into()));
    }
    let (w, h) = phi.dims();
    Ok(SignedDistance { field: signed_from_seeds(w, h, phi.field.values()) })
}

/// Pixels with `|phi| <= radius`.
pub fn narrow_band(phi: &SignedDistance, radius: f64) -> Vec<bool> {
    phi.field.values().iter().map(|v| v.abs() <= radius).collect()
}

/// Values of `fields` at the departure point of pixel `(x, y)` displaced by
/// `(du, dv)`, sampled bilinearly with clamping. A zero displacement copies
/// the pixel through unchanged.
#[inline]
pub(crate) fn departure_sample<const N: usize>(
    fields: [&[f64]; N],
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    du: f64,
    dv: f64,
) -> [f64; N] {
    let i = y * width + x;
    if du == 0.0 && dv == 0.0 {
        return fields.map(|f| f[i]);
    }
    let sx = (x as f64 - du).clamp(0.0, (width - 1) as f64);
    let sy = (y as f64 - dv).clamp(0.0, (height - 1) as f64);
    // non-negative after clamping, so truncation is floor
    let x0 = (sx as usize).min(width - 2);
    let y0 = (sy as usize).min(height - 2);
    let tx = sx - x0 as f64;
    let ty = sy - y0 as f64;
    let j = y0 * width + x0;
    let lerp = |f: &[f64]| {
        let top = f[j] + tx * (f[j + 1] - f[j]);
        let bottom = f[j + width] + tx * (f[j + width + 1] - f[j + width]);
        top + ty * (bottom - top)
    };
    fields.map(lerp)
}

/// Back-traces every pixel by `displacement` and resamples the scalar field
/// and both correspondence components at the departure point.
pub(crate) fn advect_by_displacement(
    phi: &ScalarField,
    psi: &VectorField,
    du: &[f64],
    dv: &[f64],
) -> (ScalarField, VectorField) {
    let (w, h) = phi.dims();
    let n = w * h;
    let mut p = Vec::with_capacity(n);
    let mut qu = Vec::with_capacity(n);
    let mut qv = Vec::with_capacity(n);
    let fields = [phi.values(), psi.u.values(), psi.v.values()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let [a, b, c] = departure_sample(fields, w, h, x, y, du[i], dv[i]);
            p.push(a);
            qu.push(b);
            qv.push(c);
        }
    }
    (
        ScalarField::from_raw(w, h, p),
        VectorField { u: ScalarField::from_raw(w, h, qu), v: ScalarField::from_raw(w, h, qv) },
    )
}

/// One semi-Lagrangian step of `phi` and `psi` along the same characteristics:
/// `value(x, t + dt) = value(x - w(x) dt, t)`.
pub fn advect(
    phi: &SignedDistance,
    psi: &Correspondence,
    w: &VectorField,
    dt: f64,
) -> Result<(SignedDistance, Correspondence)> {
    if phi.dims() != psi.dims() || phi.dims() != w.dims() {
        return Err(Error::Parameter("advection fields must share dimensions".into()));
    }
    let max_disp = w.max_magnitude() * dt.abs();
    if max_disp > MAX_STEP_DISPLACEMENT {
        return Err(Error::Cfl { max_displacement: max_disp, limit: MAX_STEP_DISPLACEMENT });
    }
    let du: Vec<f64> = w.u.values().iter().map(|v| v * dt).collect();
    let dv: Vec<f64> = w.v.values().iter().map(|v| v * dt).collect();
    let (p, q) = advect_by_displacement(&phi.field, &psi.field, &du, &dv);
    Ok((SignedDistance { field: p }, Correspondence { field: q }))
}
