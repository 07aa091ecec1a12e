//! Accuracy metrics: contour Hausdorff distance and narrow-band RMSE of
//! signed distance fields.

use crate::error::{Error, Result};
use crate::levelset::{Contour, SignedDistance};

/// Default half-width of the evaluation band, px.
pub const DEFAULT_BAND: f64 = 3.0;

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn point_polyline_distance(p: [f64; 2], c: &Contour) -> f64 {
    if c.points.len() == 1 {
        let q = c.points[0];
        return (p[0] - q[0]).hypot(p[1] - q[1]);
    }
    c.segments().map(|(a, b)| point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
}

/// Directed distance `sup_{p in a} dist(p, b)`.
///
/// The supremum over a polyline is attained either at a vertex of `a` or
/// at a point of `a` equidistant from two features of `b`; vertices are
/// checked exactly and each segment of `a` is additionally sampled so the
/// result is within a small fraction of a pixel of the true supremum.
fn directed(a: &Contour, b: &Contour) -> f64 {
    let mut best = a.points.iter().map(|&p| point_polyline_distance(p, b)).fold(0.0, f64::max);
    for (p, q) in a.segments() {
        let len = (q[0] - p[0]).hypot(q[1] - p[1]);
        let steps = (len / 0.05).ceil() as usize;
        for s in 1..steps {
            let t = s as f64 / steps as f64;
            let m = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            best = best.max(point_polyline_distance(m, b));
        }
    }
    best
}

/// Symmetric Hausdorff distance with point-to-segment distances.
pub fn hausdorff(a: &Contour, b: &Contour) -> Result<f64> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::Parameter("Hausdorff distance needs non-empty contours".into()));
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// Hausdorff distance between two sets of contours, treated as unions.
pub fn hausdorff_sets(a: &[Contour], b: &[Contour]) -> Result<f64> {
    let flat = |cs: &[Contour]| -> Vec<Contour> { cs.iter().filter(|c| !c.points.is_empty()).cloned().collect() };
    let (a, b) = (flat(a), flat(b));
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter("Hausdorff distance needs non-empty contours".into()));
    }
    let directed_set = |from: &[Contour], to: &[Contour]| -> f64 {
        let mut best = 0.0f64;
        for c in from {
            let mut pts: Vec<[f64; 2]> = c.points.clone();
            for (p, q) in c.segments() {
                let len = (q[0] - p[0]).hypot(q[1] - p[1]);
                let steps = (len / 0.05).ceil() as usize;
                pts.extend((1..steps).map(|s| {
                    let t = s as f64 / steps as f64;
                    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
                }));
            }
            for p in pts {
                let d = to.iter().map(|t| point_polyline_distance(p, t)).fold(f64::INFINITY, f64::min);
                best = best.max(d);
            }
        }
        best
    };
    Ok(directed_set(&a, &b).max(directed_set(&b, &a)))
}

/// RMSE of `estimate - truth` over pixels with `|truth| <= radius`.
pub fn narrowband_rmse(estimate: &SignedDistance, truth: &SignedDistance, radius: f64) -> Result<f64> {
    if estimate.dims() != truth.dims() {
        return Err(Error::Parameter("estimate and truth dimensions differ".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (&e, &t) in estimate.field.values().iter().zip(truth.field.values()) {
        if t.abs() <= radius {
            sum += (e - t).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate(format!("no ground-truth pixels within {radius} px of the interface")));
    }
    Ok((sum / count as f64).sqrt())
}

/// Running sum of a per-frame error series.
pub fn accumulate(series: &[f64]) -> f64 {
    series.iter().sum()
}
