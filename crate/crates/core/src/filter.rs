//! Bootstrap particle filter over level-set states.
//!
//! Each step propagates every particle through the stochastic transport
//! model, weights it by a tempered region likelihood of the new frame,
//! normalizes, and resamples systematically when the effective sample size
//! drops below the configured fraction of the ensemble.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::levelset::{reinitialize, Correspondence, SignedDistance};
use crate::noise::{NoiseStream, FILTER_STREAM};
use crate::sde::{self, SdeParams};

/// Half-width of the band the likelihood is evaluated on, px.
pub const LIKELIHOOD_BAND: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub phi: SignedDistance,
    pub psi: Correspondence,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Likelihood temperature in squared normalized-intensity units.
    pub likelihood_temp: f64,
    /// Resample when `ESS / N` falls below this.
    pub resample_threshold: f64,
    pub sde: SdeParams,
    pub master_seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 200,
            likelihood_temp: 0.05 * 0.05,
            resample_threshold: 0.5,
            sde: SdeParams::default(),
            master_seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Parameter("n_particles must be >= 1".into()));
        }
        if !(self.likelihood_temp > 0.0) {
            return Err(Error::Parameter("likelihood_temp must be > 0".into()));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::Parameter("resample_threshold must lie in (0, 1]".into()));
        }
        self.sde.validate()
    }
}

/// Per-frame bookkeeping written to the diagnostics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub frame: usize,
    pub ess: f64,
    pub max_log_likelihood: f64,
    pub resampled: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
}

/// `N` exact copies of the initial state with uniform weights.
pub fn init_ensemble(phi0: &SignedDistance, psi0: &Correspondence, config: &FilterConfig) -> Result<Ensemble> {
    config.validate()?;
    if phi0.dims() != psi0.dims() {
        return Err(Error::Parameter("initial phi and psi dimensions differ".into()));
    }
    let n = config.n_particles;
    let particle = Particle { phi: phi0.clone(), psi: psi0.clone(), weight: 1.0 / n as f64 };
    Ok(Ensemble { particles: vec![particle; n] })
}

/// Tempered two-region Chan-Vese energy of `z` on the particle's narrow band,
/// with the region means taken over the whole inside and outside regions.
pub fn log_likelihood(phi: &SignedDistance, z: &ScalarField, temp: f64) -> Result<f64> {
    if phi.dims() != z.dims() {
        return Err(Error::Parameter("level set and observation dimensions differ".into()));
    }
    // region means over the whole regions, residuals over the band only
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (&p, &v) in phi.field.values().iter().zip(z.values()) {
        if p <= 0.0 {
            s_in += v;
            n_in += 1;
        } else {
            s_out += v;
            n_out += 1;
        }
    }
    let c_in = if n_in > 0 { s_in / n_in as f64 } else { 0.0 };
    let c_out = if n_out > 0 { s_out / n_out as f64 } else { 0.0 };
    let (mut energy, mut count) = (0.0, 0usize);
    for (&p, &v) in phi.field.values().iter().zip(z.values()) {
        if p.abs() > LIKELIHOOD_BAND {
            continue;
        }
        let c = if p <= 0.0 { c_in } else { c_out };
        energy += (v - c) * (v - c);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("likelihood band is empty".into()));
    }
    Ok(-(energy / count as f64) / temp)
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: positions `(u0 + k) / N` against the cumulative
/// weights. `u0` must lie in `[0, 1)`. Returns the selected indices.
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    // round-off can leave the total just under 1; never step past the last
    // particle that carries weight
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1);
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let pos = (u0 + k as f64) / n as f64;
        while pos >= cumulative && i < last {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// One predict / reweight / select cycle towards observation `z_next`.
    pub fn step(
        &mut self,
        w: &VectorField,
        z_next: &ScalarField,
        frame: usize,
        config: &FilterConfig,
    ) -> Result<StepDiagnostics> {
        config.validate()?;
        let start = Instant::now();
        let seed = config.master_seed;
        let temp = config.likelihood_temp;
        let propagated: Vec<Result<(Particle, f64)>> = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let stream = NoiseStream::new(seed, i as u64, frame as u64);
                let (phi, psi) = sde::propagate(&p.phi, &p.psi, w, z_next, &config.sde, stream)?;
                let ll = log_likelihood(&phi, z_next, temp)?;
                Ok((Particle { phi, psi, weight: p.weight }, ll))
            })
            .collect();

        let mut particles = Vec::with_capacity(propagated.len());
        let mut lls = Vec::with_capacity(propagated.len());
        for r in propagated {
            let (p, ll) = r?;
            particles.push(p);
            lls.push(ll);
        }
        let max_ll = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        // reweight in the log domain; sums in index order for reproducibility
        let mut raw: Vec<f64> =
            particles.iter().zip(&lls).map(|(p, &ll)| p.weight * (ll - max_ll).exp()).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::FilterDegeneracy { frame, max_log_likelihood: max_ll });
        }
        raw.iter_mut().for_each(|v| *v /= total);
        for (p, &wt) in particles.iter_mut().zip(&raw) {
            p.weight = wt;
        }

        let ess = effective_sample_size(&raw);
        let n = particles.len();
        let resampled = ess / (n as f64) < config.resample_threshold;
        if resampled {
            let u0 = NoiseStream::new(seed, FILTER_STREAM, frame as u64).rng().gen::<f64>();
            let picks = systematic_resample(&raw, u0);
            particles = picks
                .into_iter()
                .map(|i| Particle { weight: 1.0 / n as f64, ..particles[i].clone() })
                .collect();
        }
        self.particles = particles;
        Ok(StepDiagnostics {
            frame,
            ess,
            max_log_likelihood: max_ll,
            resampled,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Weighted mean of the `phi` fields (reinitialized) and the
    /// correspondence map of the heaviest particle. When every weighted
    /// particle carries the same `phi` it is returned as is.
    pub fn estimate(&self) -> Result<(SignedDistance, Correspondence)> {
        let best = self
            .particles
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weight.total_cmp(&b.1.weight).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Parameter("empty ensemble".into()))?;
        let heaviest = &self.particles[best];
        let unanimous = self.particles.iter().all(|p| p.weight == 0.0 || p.phi == heaviest.phi);
        if unanimous {
            return Ok((heaviest.phi.clone(), heaviest.psi.clone()));
        }
        let (w, h) = heaviest.phi.dims();
        let mut acc = vec![0.0; w * h];
        let mut total = 0.0;
        for p in &self.particles {
            if p.weight == 0.0 {
                continue;
            }
            total += p.weight;
            for (a, v) in acc.iter_mut().zip(p.phi.field.values()) {
                *a += p.weight * v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        let mean = SignedDistance::from_field(ScalarField::from_raw(w, h, acc));
        Ok((reinitialize(&mean)?, heaviest.psi.clone()))
    }
}
