//! Dense 2D field containers and the finite-difference, interpolation and
//! smoothing primitives shared by every other module.
//!
//! Pixel `(x, y)` has its center at integer coordinates; `x` is the column
//! and `y` the row. Storage is row-major.

use crate::error::{Error, Result};

/// A 2D grid of real values (images, level sets, likelihood maps).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// A 2D grid of 2-vectors (optical flow, correspondence maps).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub u: ScalarField,
    pub v: ScalarField,
}

/// Integer class segmentation with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    num_classes: u8,
    labels: Vec<u8>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(Error::Parameter(format!(
            "field dimensions must be at least 2x2, got {width}x{height}"
        )));
    }
    Ok(())
}

impl ScalarField {
    pub fn new(width: usize, height: usize, fill: f64) -> Result<Self> {
        Self::from_vec(width, height, vec![fill; width * height])
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::Parameter(format!(
                "expected {} values for a {width}x{height} field, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("field values must be finite".into()));
        }
        Ok(ScalarField { width, height, data })
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel center.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_vec(width, height, data)
    }

    /// Constructor for internal callers that already guarantee the invariants.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        ScalarField { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.dims(), other.dims(), "field dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        ScalarField::from_raw(self.width, self.height, data)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear interpolation at a real-valued point, clamped to the grid.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear_sample(self, x, y)
    }
}

impl VectorField {
    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        if u.dims() != v.dims() {
            return Err(Error::Parameter(format!(
                "vector components differ in size: {:?} vs {:?}",
                u.dims(),
                v.dims()
            )));
        }
        Ok(VectorField { u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let z = ScalarField::new(width, height, 0.0)?;
        Ok(VectorField { u: z.clone(), v: z })
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Result<Self> {
        Ok(VectorField {
            u: ScalarField::new(width, height, u)?,
            v: ScalarField::new(width, height, v)?,
        })
    }

    /// The identity map `x -> (x, y)`.
    pub fn identity(width: usize, height: usize) -> Result<Self> {
        Ok(VectorField {
            u: ScalarField::from_fn(width, height, |x, _| x as f64)?,
            v: ScalarField::from_fn(width, height, |_, y| y as f64)?,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.u.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.u.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        (self.u.get(x, y), self.v.get(x, y))
    }

    pub fn magnitude(&self) -> ScalarField {
        self.u.zip_map(&self.v, |a, b| a.hypot(b))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .values()
            .iter()
            .zip(self.v.values())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, k: f64) -> VectorField {
        VectorField { u: self.u.map(|a| a * k), v: self.v.map(|a| a * k) }
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize, num_classes: u8, labels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if num_classes == 0 {
            return Err(Error::Parameter("label map needs at least one class".into()));
        }
        if labels.len() != width * height {
            return Err(Error::Parameter(format!(
                "expected {} labels for a {width}x{height} map, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Parameter(format!(
                "label {bad} outside declared class set 0..{num_classes}"
            )));
        }
        Ok(LabelMap { width, height, num_classes, labels })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        num_classes: u8,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self::new(width, height, num_classes, labels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Spatial gradient: central differences inside, one-sided at the border.
pub fn central_gradient(f: &ScalarField) -> VectorField {
    let (w, h) = f.dims();
    let d = f.values();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let row = y * w;
        gx[row] = d[row + 1] - d[row];
        gx[row + w - 1] = d[row + w - 1] - d[row + w - 2];
        for x in 1..w - 1 {
            gx[row + x] = 0.5 * (d[row + x + 1] - d[row + x - 1]);
        }
    }
    for x in 0..w {
        gy[x] = d[w + x] - d[x];
        gy[(h - 1) * w + x] = d[(h - 1) * w + x] - d[(h - 2) * w + x];
    }
    for y in 1..h - 1 {
        for x in 0..w {
            gy[y * w + x] = 0.5 * (d[(y + 1) * w + x] - d[(y - 1) * w + x]);
        }
    }
    VectorField { u: ScalarField::from_raw(w, h, gx), v: ScalarField::from_raw(w, h, gy) }
}

/// Bilinear interpolation; points outside the grid are clamped to it.
#[inline]
pub fn bilinear_sample(f: &ScalarField, x: f64, y: f64) -> f64 {
    let (w, h) = f.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x as usize).min(w - 2);
    let y0 = (y as usize).min(h - 2);
    let tx = x - x0 as f64;
    let ty = y - y0 as f64;
    let d = f.values();
    let i = y0 * w + x0;
    let top = d[i] + tx * (d[i + 1] - d[i]);
    let bottom = d[i + w] + tx * (d[i + w + 1] - d[i + w]);
    top + ty * (bottom - top)
}

/// Truncated, normalized 1D Gaussian kernel with radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Gaussian smoothing, optionally restricted to one class of a label map.
///
/// Off-center weights are the Gaussian taps of eligible neighbours (same
/// class and inside the grid); the center tap absorbs the remaining mass so
/// each row of the weight matrix sums to one. The matrix is symmetric, so
/// a masked pass leaves the class sum unchanged and never mixes values
/// across classes. Pixels outside the selected class are copied through.
pub fn gaussian_smooth(
    f: &ScalarField,
    sigma: f64,
    mask: Option<(&LabelMap, u8)>,
) -> Result<ScalarField> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("smoothing sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(f.clone());
    }
    let k = gaussian_kernel(sigma);
    match mask {
        None => Ok(smooth_separable(f, &k)),
        Some((labels, class)) => {
            if labels.dims() != f.dims() {
                return Err(Error::Parameter("mask and field dimensions differ".into()));
            }
            Ok(smooth_masked(f, &k, labels, class))
        }
    }
}

fn smooth_1d(src: &[f64], dst: &mut [f64], len: usize, stride: usize, k: &[f64]) {
    let r = k.len() / 2;
    for i in 0..len {
        let center = src[i * stride];
        let mut acc = 0.0;
        let mut used = 0.0;
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(len - 1);
        for j in lo..=hi {
            if j == i {
                continue;
            }
            let wgt = k[j + r - i];
            acc += wgt * src[j * stride];
            used += wgt;
        }
        dst[i * stride] = acc + (1.0 - used) * center;
    }
}

fn smooth_separable(f: &ScalarField, k: &[f64]) -> ScalarField {
    let (w, h) = f.dims();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        smooth_1d(&f.values()[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], w, 1, k);
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        smooth_1d(&tmp[x..], &mut out[x..], h, w, k);
    }
    ScalarField::from_raw(w, h, out)
}

fn smooth_masked(f: &ScalarField, k: &[f64], labels: &LabelMap, class: u8) -> ScalarField {
    let (w, h) = f.dims();
    let r = (k.len() / 2) as isize;
    let src = f.values();
    let lab = labels.labels();
    let mut out = src.to_vec();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let idx = (y as usize) * w + x as usize;
            if lab[idx] != class {
                continue;
            }
            let mut acc = 0.0;
            let mut used = 0.0;
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let ky = k[(dy + r) as usize];
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize || (dx == 0 && dy == 0) {
                        continue;
                    }
                    let j = (yy as usize) * w + xx as usize;
                    if lab[j] != class {
                        continue;
                    }
                    let wgt = ky * k[(dx + r) as usize];
                    acc += wgt * src[j];
                    used += wgt;
                }
            }
            out[idx] = acc + (1.0 - used) * src[idx];
        }
    }
    ScalarField::from_raw(w, h, out)
}
