//! Fixtures shared by the benchmarks.

use curvetrack::synth::{disk_mask, generate_sequence, ClassModel, Deformation, DeformationSpec, Sequence};
use curvetrack::{LabelMap, SignedDistance};

/// Disk translated by `(1, 0)` per frame on an `n x n` grid.
pub fn translate_sequence(n: usize, frames: usize) -> (LabelMap, Sequence) {
    let c = n as f64 / 2.0;
    let init = disk_mask(n, n, c - 4.0, c, n as f64 / 5.0).unwrap();
    let spec = DeformationSpec { kind: Deformation::Translate { dx: 1.0, dy: 0.0 }, frames };
    let seq = generate_sequence(&init, &spec, &ClassModel::default(), 2.0, 1).unwrap();
    (init, seq)
}

/// Mask-built distance field, i.e. what the tracker starts from.
pub fn initial_phi(mask: &LabelMap) -> SignedDistance {
    curvetrack::levelset::sdf_from_mask(mask, 1).unwrap()
}
