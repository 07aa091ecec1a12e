//! Ground-truthed synthetic sequences: analytic deformations of labeled
//! shapes and CT-like intensity synthesis from per-class Gaussian models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_smooth, LabelMap, ScalarField};

/// Number of histogram bins over the normalized intensity range.
pub const HISTOGRAM_BINS: usize = 256;
/// Lower bound on fitted class standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Largest per-frame displacement a deformation may produce, px.
pub const MAX_FRAME_DISPLACEMENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

/// Intensity model: entry `i` describes label `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub classes: Vec<ClassParams>,
}

impl ClassModel {
    pub fn new(classes: Vec<ClassParams>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Parameter("class model needs at least one class".into()));
        }
        if classes.iter().any(|c| !(c.std >= 0.0) || !c.mean.is_finite() || !(c.weight >= 0.0)) {
            return Err(Error::Parameter("class std and weight must be >= 0".into()));
        }
        let total: f64 = classes.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(ClassModel { classes })
    }

    /// Two-class CT look: label 0 light sediment, label 1 dark salt.
    pub fn sediment_salt(std: f64) -> Self {
        ClassModel {
            classes: vec![
                ClassParams { mean: 0.65, std, weight: 0.5 },
                ClassParams { mean: 0.35, std, weight: 0.5 },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

impl Default for ClassModel {
    fn default() -> Self {
        ClassModel::sediment_salt(0.06)
    }
}

fn bin_center(b: usize) -> f64 {
    (b as f64 + 0.5) / HISTOGRAM_BINS as f64
}

/// 256-bin histogram of `image`, skipping pixels whose label is `exclude`.
pub fn histogram(image: &ScalarField, exclude: Option<(&LabelMap, u8)>) -> Vec<f64> {
    let mut h = vec![0.0; HISTOGRAM_BINS];
    for (i, &v) in image.values().iter().enumerate() {
        if let Some((labels, class)) = exclude {
            if labels.labels()[i] == class {
                continue;
            }
        }
        let b = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1.0;
    }
    h
}

/// Expectation-maximization fit of a `k`-component 1D Gaussian mixture to
/// binned data. Components are returned sorted by mean.
pub fn fit_gmm(hist: &[f64], k: usize) -> Result<ClassModel> {
    if k == 0 {
        return Err(Error::Parameter("class count must be >= 1".into()));
    }
    if hist.len() != HISTOGRAM_BINS || hist.iter().any(|c| !(c >= &0.0)) {
        return Err(Error::Parameter(format!("histogram must have {HISTOGRAM_BINS} non-negative bins")));
    }
    let occupied: Vec<usize> = (0..HISTOGRAM_BINS).filter(|&b| hist[b] > 0.0).collect();
    if occupied.len() < k {
        return Err(Error::Parameter(format!(
            "cannot fit {k} classes to {} occupied bins",
            occupied.len()
        )));
    }
    let total: f64 = hist.iter().sum();

    // initialize means at the (j + 0.5)/k quantiles
    let mut means = Vec::with_capacity(k);
    let mut cum = 0.0;
    let mut j = 0;
    for &b in &occupied {
        cum += hist[b];
        while j < k && cum >= (j as f64 + 0.5) / k as f64 * total {
            means.push(bin_center(b));
            j += 1;
        }
    }
    while means.len() < k {
        means.push(bin_center(*occupied.last().unwrap()));
    }
    let global_mean = occupied.iter().map(|&b| hist[b] * bin_center(b)).sum::<f64>() / total;
    let global_var = occupied.iter().map(|&b| hist[b] * (bin_center(b) - global_mean).powi(2)).sum::<f64>() / total;
    let init_std = (global_var.sqrt() / k as f64).max(SIGMA_FLOOR);
    let mut stds = vec![init_std; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut resp = vec![0.0; occupied.len() * k];
    let mut prev_ll = f64::NEG_INFINITY;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    for _ in 0..200 {
        // E step
        let mut ll = 0.0;
        for (oi, &b) in occupied.iter().enumerate() {
            let x = bin_center(b);
            let row = &mut resp[oi * k..(oi + 1) * k];
            let mut s = 0.0;
            for c in 0..k {
                let z = (x - means[c]) / stds[c];
                row[c] = weights[c] * (-0.5 * z * z).exp() / (stds[c] * norm);
                s += row[c];
            }
            if s > 0.0 {
                row.iter_mut().for_each(|r| *r /= s);
                ll += hist[b] * s.ln();
            } else {
                // bin far from every component: hand it to the nearest mean
                let nearest = (0..k)
                    .min_by(|&a, &c| (x - means[a]).abs().total_cmp(&(x - means[c]).abs()))
                    .unwrap();
                row.iter_mut().enumerate().for_each(|(c, r)| *r = f64::from(u8::from(c == nearest)));
                ll += hist[b] * f64::MIN_POSITIVE.ln();
            }
        }
        // M step
        for c in 0..k {
            let mut nk = 0.0;
            let mut sx = 0.0;
            for (oi, &b) in occupied.iter().enumerate() {
                let r = resp[oi * k + c] * hist[b];
                nk += r;
                sx += r * bin_center(b);
            }
            if nk <= 0.0 {
                continue;
            }
            let mu = sx / nk;
            let var = occupied
                .iter()
                .enumerate()
                .map(|(oi, &b)| resp[oi * k + c] * hist[b] * (bin_center(b) - mu).powi(2))
                .sum::<f64>()
                / nk;
            means[c] = mu;
            stds[c] = var.sqrt().max(SIGMA_FLOOR);
            weights[c] = nk / total;
        }
        let per_sample = ll / total;
        if per_sample - prev_ll < 1e-6 && prev_ll.is_finite() {
            break;
        }
        prev_ll = per_sample;
    }
    let wsum: f64 = weights.iter().sum();
    let mut classes: Vec<ClassParams> = (0..k)
        .map(|c| ClassParams { mean: means[c], std: stds[c], weight: weights[c] / wsum })
        .collect();
    classes.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    Ok(ClassModel { classes })
}

/// Per-class white noise followed by per-class masked smoothing.
pub fn synthesize_ct(mask: &LabelMap, model: &ClassModel, gamma: f64, seed: u64) -> Result<ScalarField> {
    let (w, h) = mask.dims();
    for class in 0..mask.num_classes() {
        if (class as usize) >= model.len() && mask.count(class) > 0 {
            return Err(Error::Parameter(format!("label {class} has no entry in the class model")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Normal<f64>> = model
        .classes
        .iter()
        .map(|c| Normal::new(c.mean, c.std).map_err(|e| Error::Parameter(e.to_string())))
        .collect::<Result<_>>()?;
    let data = mask.labels().iter().map(|&l| dists[l as usize].sample(&mut rng)).collect();
    let mut img = ScalarField::from_vec(w, h, data)?;
    for class in 0..model.len().min(mask.num_classes() as usize) {
        img = gaussian_smooth(&img, gamma, Some((mask, class as u8)))?;
    }
    Ok(img.map(|v| v.clamp(0.0, 1.0)))
}

/// Analytic per-frame motion used to deform a label map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    /// Constant displacement per frame.
    Translate { dx: f64, dy: f64 },
    /// Rigid rotation about `(cx, cy)`.
    Rotate { cx: f64, cy: f64, degrees_per_frame: f64 },
    /// Horizontal shear `dx = rate * (y - cy)`.
    Shear { cy: f64, rate: f64 },
    /// Localized upward bulge: vertical speed `rate * exp(-(x - cx)² / 2 width²)`
    /// (towards smaller `y`), fading out above `top`.
    DiapirRise { cx: f64, width: f64, rate: f64, top: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    #[serde(flatten)]
    pub kind: Deformation,
    /// Number of frames after the initial one.
    pub frames: usize,
}

impl Deformation {
    /// Velocity of the stationary field generating this deformation.
    pub fn velocity(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Deformation::Translate { dx, dy } => (dx, dy),
            Deformation::Rotate { cx, cy, degrees_per_frame } => {
                let om = degrees_per_frame.to_radians();
                (-om * (y - cy), om * (x - cx))
            }
            Deformation::Shear { cy, rate } => (rate * (y - cy), 0.0),
            Deformation::DiapirRise { cx, width, rate, top } => {
                let lateral = (-0.5 * ((x - cx) / width).powi(2)).exp();
                // smooth fade to zero above `top` so the image top stays fixed
                let fade = if y >= top { 1.0 } else { (-0.5 * ((y - top) / width).powi(2)).exp() };
                (0.0, -rate * lateral * fade)
            }
        }
    }

    /// Position at frame 0 of the point found at `(x, y)` after `t` frames.
    pub fn backtrace(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        match *self {
            Deformation::Translate { dx, dy } => (x - t * dx, y - t * dy),
            Deformation::Rotate { cx, cy, degrees_per_frame } => {
                let a = -(degrees_per_frame * t).to_radians();
                let (s, c) = a.sin_cos();
                let (rx, ry) = (x - cx, y - cy);
                (cx + c * rx - s * ry, cy + s * rx + c * ry)
            }
            Deformation::Shear { cy, rate } => (x - t * rate * (y - cy), y),
            Deformation::DiapirRise { .. } => {
                // RK4 on the reversed field
                let steps = (t * 8.0).ceil().max(1.0) as usize;
                let h = t / steps as f64;
                let (mut px, mut py) = (x, y);
                let f = |px: f64, py: f64| {
                    let (u, v) = self.velocity(px, py);
                    (-u, -v)
                };
                for _ in 0..steps {
                    let k1 = f(px, py);
                    let k2 = f(px + 0.5 * h * k1.0, py + 0.5 * h * k1.1);
                    let k3 = f(px + 0.5 * h * k2.0, py + 0.5 * h * k2.1);
                    let k4 = f(px + h * k3.0, py + h * k3.1);
                    px += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                    py += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                }
                (px, py)
            }
        }
    }
}

impl DeformationSpec {
    /// Checks the per-frame displacement bound over a `width x height` grid.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let mut worst = 0.0f64;
        for y in 0..height {
            for x in 0..width {
                let (px, py) = self.kind.backtrace(x as f64, y as f64, 1.0);
                worst = worst.max((px - x as f64).hypot(py - y as f64));
            }
        }
        if worst > MAX_FRAME_DISPLACEMENT {
            return Err(Error::Parameter(format!(
                "deformation moves points {worst:.2} px per frame (limit {MAX_FRAME_DISPLACEMENT})"
            )));
        }
        Ok(())
    }
}

/// Label map at frame `t`: nearest-pixel class of the back-traced point.
pub fn warp_mask(initial: &LabelMap, kind: &Deformation, t: usize) -> LabelMap {
    let (w, h) = initial.dims();
    LabelMap::from_fn(w, h, initial.num_classes(), |x, y| {
        let (px, py) = kind.backtrace(x as f64, y as f64, t as f64);
        let sx = (px.round().max(0.0) as usize).min(w - 1);
        let sy = (py.round().max(0.0) as usize).min(h - 1);
        initial.get(sx, sy)
    })
    .expect("warped mask keeps the initial dimensions and classes")
}

/// A generated sequence: images and their ground-truth label maps.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub images: Vec<ScalarField>,
    pub truth: Vec<LabelMap>,
}

/// Frames `0..=spec.frames`, each with fresh acquisition noise.
pub fn generate_sequence(
    initial: &LabelMap,
    spec: &DeformationSpec,
    model: &ClassModel,
    gamma: f64,
    seed: u64,
) -> Result<Sequence> {
    spec.validate(initial.width(), initial.height())?;
    let mut images = Vec::with_capacity(spec.frames + 1);
    let mut truth = Vec::with_capacity(spec.frames + 1);
    for t in 0..=spec.frames {
        let mask = if t == 0 { initial.clone() } else { warp_mask(initial, &spec.kind, t) };
        let frame_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(t as u64);
        images.push(synthesize_ct(&mask, model, gamma, frame_seed)?);
        truth.push(mask);
    }
    Ok(Sequence { images, truth })
}

/// Horizontal layer of class 1 below `level`, class 0 above.
pub fn layered_mask(width: usize, height: usize, level: f64) -> Result<LabelMap> {
    LabelMap::from_fn(width, height, 2, |_, y| u8::from(y as f64 >= level))
}

/// Disk of class 1 on a class 0 background.
pub fn disk_mask(width: usize, height: usize, cx: f64, cy: f64, r: f64) -> Result<LabelMap> {
    LabelMap::from_fn(width, height, 2, |x, y| u8::from((x as f64 - cx).hypot(y as f64 - cy) <= r))
}
