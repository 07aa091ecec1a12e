//! Marching-squares extraction of the zero level set.

use std::collections::HashMap;

use crate::grid::ScalarField;

/// Ordered polyline sampling of an iso-curve, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Contour {
    /// Iterator over the polyline's segments, including the closing one.
    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let count = if self.closed && n > 1 { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1])).sum()
    }

    /// Signed shoelace area (positive for counter-clockwise in x-right/y-down
    /// coordinates is not guaranteed; use the absolute value).
    pub fn signed_area(&self) -> f64 {
        if !self.closed {
            return 0.0;
        }
        0.5 * self.segments().map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum::<f64>()
    }

    /// Area centroid for closed contours, vertex mean otherwise.
    pub fn centroid(&self) -> [f64; 2] {
        let area = self.signed_area();
        if self.closed && area.abs() > 1e-12 {
            let (mut cx, mut cy) = (0.0, 0.0);
            for (a, b) in self.segments() {
                let cross = a[0] * b[1] - b[0] * a[1];
                cx += (a[0] + b[0]) * cross;
                cy += (a[1] + b[1]) * cross;
            }
            return [cx / (6.0 * area), cy / (6.0 * area)];
        }
        let n = self.points.len().max(1) as f64;
        let s = self.points.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Contour {
        Contour {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            closed: self.closed,
        }
    }
}

/// Zero crossings of `phi` on grid edges (linear interpolation), linked into
/// polylines. Pixels with `phi <= 0` count as inside. Returns an empty list
/// when there is no sign change.
pub fn extract_contour(phi: &ScalarField) -> Vec<Contour> {
    let (w, h) = phi.dims();
    let inside = |v: f64| v <= 0.0;
    let hkey = |x: usize, y: usize| 2 * (y * w + x);
    let vkey = |x: usize, y: usize| 2 * (y * w + x) + 1;

    let mut points: HashMap<usize, [f64; 2]> = HashMap::new();
    let mut crossing = |key: usize, (x0, y0): (usize, usize), (x1, y1): (usize, usize)| -> Option<usize> {
        let (a, b) = (phi.get(x0, y0), phi.get(x1, y1));
        if inside(a) == inside(b) {
            return None;
        }
        let t = (a / (a - b)).clamp(0.0, 1.0);
        points.entry(key).or_insert([
            x0 as f64 + t * (x1 as f64 - x0 as f64),
            y0 as f64 + t * (y1 as f64 - y0 as f64),
        ]);
        Some(key)
    };

    let mut segments: Vec<(usize, usize)> = Vec::new();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let top = crossing(hkey(x, y), (x, y), (x + 1, y));
            let right = crossing(vkey(x + 1, y), (x + 1, y), (x + 1, y + 1));
            let bottom = crossing(hkey(x, y + 1), (x, y + 1), (x + 1, y + 1));
            let left = crossing(vkey(x, y), (x, y), (x, y + 1));
            let hits: Vec<usize> = [top, right, bottom, left].into_iter().flatten().collect();
            match hits.len() {
                0 => {}
                2 => segments.push((hits[0], hits[1])),
                4 => {
                    let center = 0.25
                        * (phi.get(x, y) + phi.get(x + 1, y) + phi.get(x + 1, y + 1) + phi.get(x, y + 1));
                    let (t, r, b, l) = (hits[0], hits[1], hits[2], hits[3]);
                    if inside(center) == inside(phi.get(x, y)) {
                        segments.push((t, r));
                        segments.push((b, l));
                    } else {
                        segments.push((t, l));
                        segments.push((r, b));
                    }
                }
                _ => unreachable!("a grid cell has an even number of sign changes"),
            }
        }
    }
    link(segments, &points)
}

fn link(segments: Vec<(usize, usize)>, points: &HashMap<usize, [f64; 2]>) -> Vec<Contour> {
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        incident.entry(a).or_default().push(s);
        incident.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();

    let walk = |start_key: usize, start_seg: usize, used: &mut Vec<bool>| -> (Vec<usize>, bool) {
        let mut keys = vec![start_key];
        let mut key = start_key;
        let mut seg = start_seg;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == key { b } else { a };
            if next == start_key {
                return (keys, true);
            }
            keys.push(next);
            key = next;
            match incident[&key].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => return (keys, false),
            }
        }
    };

    // open chains start at endpoints with a single incident segment
    let mut ends: Vec<usize> = incident.iter().filter(|(_, s)| s.len() == 1).map(|(&k, _)| k).collect();
    ends.sort_unstable();
    for k in ends {
        let s = incident[&k][0];
        if used[s] {
            continue;
        }
        let (keys, closed) = walk(k, s, &mut used);
        contours.push((keys, closed));
    }
    for s in 0..segments.len() {
        if used[s] {
            continue;
        }
        let (keys, closed) = walk(segments[s].0, s, &mut used);
        contours.push((keys, closed));
    }

    contours
        .into_iter()
        .map(|(keys, closed)| {
            let mut pts: Vec<[f64; 2]> = Vec::with_capacity(keys.len());
            for k in keys {
                let p = points[&k];
                if pts.last().is_some_and(|q| q[0] == p[0] && q[1] == p[1]) {
                    continue;
                }
                pts.push(p);
            }
            if closed && pts.len() > 1 && pts[0] == pts[pts.len() - 1] {
                pts.pop();
            }
            Contour { points: pts, closed }
        })
        .filter(|c| !c.points.is_empty())
        .collect()
}
