//! Second-order fast marching for the Eikonal equation `|∇T| = 1`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Known,
}

#[derive(PartialEq)]
struct Entry {
    t: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on arrival time, ties broken by index for determinism
        other.t.total_cmp(&self.t).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves for unsigned arrival times given fixed seed values (`Some(d)`).
/// `side` tells which side of the interface each pixel lies on; second
/// order stencils never straddle it. Pixels unreachable from any seed keep
/// `f64::MAX`.
pub(crate) fn march(width: usize, height: usize, seeds: &[Option<f64>], side: &[bool]) -> Vec<f64> {
    let n = width * height;
    debug_assert_eq!(seeds.len(), n);
    let mut t = vec![f64::MAX; n];
    let mut state = vec![State::Far; n];
    let mut heap = BinaryHeap::new();
    for (i, s) in seeds.iter().enumerate() {
        if let Some(d) = *s {
            t[i] = d;
            state[i] = State::Known;
        }
    }
    let push_neighbours = |i: usize, t: &mut Vec<f64>, state: &mut Vec<State>, heap: &mut BinaryHeap<Entry>| {
        let (x, y) = (i % width, i / width);
        let mut visit = |j: usize| {
            if state[j] == State::Known {
                return;
            }
            let cand = solve(width, height, t, state, side, j);
            if cand < t[j] {
                t[j] = cand;
                state[j] = State::Trial;
                heap.push(Entry { t: cand, idx: j });
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < width {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    };
    for i in 0..n {
        if state[i] == State::Known {
            push_neighbours(i, &mut t, &mut state, &mut heap);
        }
    }
    while let Some(Entry { t: ti, idx }) = heap.pop() {
        if state[idx] == State::Known || ti > t[idx] {
            continue;
        }
        state[idx] = State::Known;
        push_neighbours(idx, &mut t, &mut state, &mut heap);
    }
    t
}

type Side = Option<(usize, Option<usize>)>;

/// Smallest known upwind value along one axis, with the next value out on
/// the same side when it is known and no larger.
fn upwind(t: &[f64], state: &[State], side: &[bool], back: Side, fwd: Side) -> Option<(f64, Option<f64>)> {
    let known = |j: usize| state[j] == State::Known;
    let side = |s: Side| -> Option<(f64, Option<f64>)> {
        let (j1, j2) = s?;
        if !known(j1) {
            return None;
        }
        Some((t[j1], j2.filter(|&j| known(j) && side[j] == side[j1] && t[j] <= t[j1]).map(|j| t[j])))
    };
    match (side(back), side(fwd)) {
        (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// Largest root of `sum_k a_k (T - m_k)^2 = 1`, if it is upwind of every
/// term.
fn quadratic(terms: &[(f64, f64)]) -> Option<f64> {
    let (mut a, mut b, mut c) = (0.0, 0.0, -1.0);
    for &(k, m) in terms {
        a += k;
        b -= 2.0 * k * m;
        c += k * m * m;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let root = (-b + disc.sqrt()) / (2.0 * a);
    terms.iter().all(|&(_, m)| root >= m).then_some(root)
}

fn best_root(terms: &[(f64, f64)]) -> Option<f64> {
    quadratic(terms).or_else(|| {
        let single = terms.iter().filter_map(|&tm| quadratic(&[tm])).fold(f64::MAX, f64::min);
        (single < f64::MAX).then_some(single)
    })
}

/// Upwind update of pixel `i` from its known neighbours, second order where
/// two known pixels line up on the upwind side.
fn solve(width: usize, height: usize, t: &[f64], state: &[State], side: &[bool], i: usize) -> f64 {
    let (x, y) = (i % width, i / width);
    let left = (x > 0).then(|| (i - 1, (x > 1).then(|| i - 2)));
    let right = (x + 1 < width).then(|| (i + 1, (x + 2 < width).then(|| i + 2)));
    let up = (y > 0).then(|| (i - width, (y > 1).then(|| i - 2 * width)));
    let down = (y + 1 < height).then(|| (i + width, (y + 2 < height).then(|| i + 2 * width)));
    let mut axes = [(0.0, None); 2];
    let mut k = 0;
    for a in [upwind(t, state, side, left, right), upwind(t, state, side, up, down)].into_iter().flatten() {
        axes[k] = a;
        k += 1;
    }
    if k == 0 {
        return f64::MAX;
    }
    let axes = &axes[..k];
    let mut second = [(0.0, 0.0); 2];
    let mut first = [(0.0, 0.0); 2];
    for (j, &(t1, t2)) in axes.iter().enumerate() {
        second[j] = match t2 {
            Some(t2) => (2.25, (4.0 * t1 - t2) / 3.0),
            None => (1.0, t1),
        };
        first[j] = (1.0, t1);
    }
    best_root(&second[..k]).or_else(|| best_root(&first[..k])).unwrap_or(f64::MAX)
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Unsigned distances of the pixels with a sign change on one of their
/// edges, measured exactly to the piecewise-linear interface of the
/// surrounding cells.
pub(crate) fn interface_seeds(width: usize, height: usize, values: &[f64]) -> Vec<Option<f64>> {
    let inside = |v: f64| v <= 0.0;
    let (cw, ch) = (width.saturating_sub(1), height.saturating_sub(1));
    // up to two segments per cell
    type Seg = ([f64; 2], [f64; 2]);
    let mut cells: Vec<([Seg; 2], u8)> = vec![([([0.0; 2], [0.0; 2]); 2], 0); cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            // corners clockwise from top-left in image coordinates
            let pos = [[x as f64, y as f64], [x as f64 + 1.0, y as f64], [x as f64 + 1.0, y as f64 + 1.0], [x as f64, y as f64 + 1.0]];
            let v = [values[y * width + x], values[y * width + x + 1], values[(y + 1) * width + x + 1], values[(y + 1) * width + x]];
            let mut pts = [[0.0; 2]; 4];
            let mut np = 0;
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if inside(v[a]) != inside(v[b]) {
                    let t = (v[a] / (v[a] - v[b])).clamp(0.0, 1.0);
                    pts[np] = [pos[a][0] + t * (pos[b][0] - pos[a][0]), pos[a][1] + t * (pos[b][1] - pos[a][1])];
                    np += 1;
                }
            }
            let none = ([0.0; 2], [0.0; 2]);
            cells[y * cw + x] = match np {
                2 => ([(pts[0], pts[1]), none], 1),
                4 => {
                    // saddle: pair crossings so the cell centre keeps its sign
                    if inside(v.iter().sum::<f64>() / 4.0) == inside(v[0]) {
                        ([(pts[0], pts[1]), (pts[2], pts[3])], 2)
                    } else {
                        ([(pts[3], pts[0]), (pts[1], pts[2])], 2)
                    }
                }
                _ => ([none; 2], 0),
            };
        }
    }
    let mut seeds: Vec<Option<f64>> = vec![None; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let s = inside(values[i]);
            let crosses = (x > 0 && inside(values[i - 1]) != s)
                || (x + 1 < width && inside(values[i + 1]) != s)
                || (y > 0 && inside(values[i - width]) != s)
                || (y + 1 < height && inside(values[i + width]) != s);
            if !crosses {
                continue;
            }
            let p = [x as f64, y as f64];
            let mut d = f64::MAX;
            for cy in y.saturating_sub(2)..(y + 2).min(ch) {
                for cx in x.saturating_sub(2)..(x + 2).min(cw) {
                    let (segs, count) = &cells[cy * cw + cx];
                    for &(a, b) in &segs[..*count as usize] {
                        d = d.min(point_segment(p, a, b));
                    }
                }
            }
            seeds[i] = Some(d);
        }
    }
    seeds
}
