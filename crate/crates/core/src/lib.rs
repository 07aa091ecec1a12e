//! Tracking of closed interfaces carried by fluid-like flows through 2D
//! image sequences.
//!
//! A Horn-Schunck flow field pilots a bootstrap particle filter whose
//! particles are level-set hypotheses `(phi, psi)`: `phi` is a signed
//! distance function whose zero set is the tracked curve and `psi` maps
//! each pixel back to its position in the first frame. Between
//! observations every particle is advected by a stochastic velocity with
//! Brownian components along the interface normal and tangent, then
//! reweighted by a region-based likelihood of the new image.

pub mod error;
pub mod eval;
pub mod filter;
pub mod flow;
pub mod grid;
pub mod io;
pub mod levelset;
pub mod noise;
pub mod pipeline;
pub mod sde;
pub mod synth;

pub use error::{Error, Result};
pub use filter::{FilterConfig, Particle};
pub use flow::FlowParams;
pub use grid::{LabelMap, ScalarField, VectorField};
pub use levelset::{Contour, Correspondence, SignedDistance};
pub use pipeline::{RunConfig, TrackOptions};
pub use sde::SdeParams;
