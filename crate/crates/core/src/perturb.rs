//! Random perturbations of particle ensembles.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::HessianBlocks;
use crate::measure::{push, ParticleEnsemble, TangentField};
use crate::objectives::Functional;
use crate::rng::Rng;

/// Draws allowed before a kappa-bounded perturbation gives up.
pub const RESAMPLE_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Gaussian field whose covariance operator is the square of the kernel part of the Hessian.
    GpHessian,
    Isotropic,
    /// Hessian-guided field rescaled to unit root-mean-square norm.
    GpRmsNormalized,
}

impl PerturbMode {
    pub fn needs_kernel(self) -> bool {
        !matches!(self, PerturbMode::Isotropic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbMode,
    pub eta: f64,
    #[serde(default)]
    pub kappa: Option<f64>,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbMode, eta: f64, kappa: Option<f64>) -> Result<Self> {
        let spec = Self { mode, eta, kappa };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidInput(format!("eta must be a finite non-negative number, got {}", self.eta)));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return Err(Error::InvalidInput(format!("kappa must be positive, got {k}")));
            }
        }
        Ok(())
    }
}

/// `ξ_i = N^{-1/2} Σ_k A[i,k] g_k` with i.i.d. standard normal `g_k`.
pub fn sample_gp(obj: &dyn Functional, mu: &ParticleEnsemble, rng: &mut Rng) -> Result<TangentField> {
    if !obj.has_blocks() && obj.has_kernel_action() {
        obj.check(mu)?;
        let g = sample_isotropic(mu.count(), mu.dim(), rng)?;
        return Ok(obj.kernel_action(mu, &g)?.scaled((mu.count() as f64).sqrt()));
    }
    if !obj.has_blocks() {
        return Err(Error::Capability(format!(
            "{} objective exposes no kernel blocks for Hessian-guided noise; use isotropic perturbations",
            obj.kind().name()
        )));
    }
    if !obj.has_kernel() {
        obj.check(mu)?;
        // still consume the draws so streams stay aligned across objectives
        let _ = sample_isotropic(mu.count(), mu.dim(), rng)?;
        return Ok(mu.zero_field());
    }
    let blocks = HessianBlocks::kernel_only(obj, mu)?;
    sample_gp_from_blocks(&blocks, rng)
}

pub fn sample_gp_from_blocks(blocks: &HessianBlocks, rng: &mut Rng) -> Result<TangentField> {
    let (n, d) = (blocks.count(), blocks.dim());
    let g = sample_isotropic(n, d, rng)?;
    // apply() carries a 1/N on the kernel sum; rescale to 1/√N
    let mut xi = blocks.apply(g.as_slice(), false);
    let scale = (n as f64).sqrt();
    xi.iter_mut().for_each(|x| *x *= scale);
    TangentField::new(n, d, xi)
}

pub fn sample_isotropic(n: usize, d: usize, rng: &mut Rng) -> Result<TangentField> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!("isotropic noise needs n, d >= 1, got n={n} d={d}")));
    }
    let values = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    TangentField::new(n, d, values)
}

pub fn sample(obj: &dyn Functional, mu: &ParticleEnsemble, mode: PerturbMode, rng: &mut Rng) -> Result<TangentField> {
    match mode {
        PerturbMode::Isotropic => sample_isotropic(mu.count(), mu.dim(), rng),
        PerturbMode::GpHessian | PerturbMode::GpRmsNormalized => sample_gp(obj, mu, rng),
    }
}

/// Displaces `mu` by `η ξ`, or `η ξ / rms(ξ)` in the normalized mode.
///
/// A zero field under normalization leaves the ensemble unchanged.
pub fn apply_perturbation(mu: &ParticleEnsemble, xi: &TangentField, spec: &PerturbationSpec) -> Result<ParticleEnsemble> {
    spec.validate()?;
    mu.check_field(xi)?;
    let scale = match spec.mode {
        PerturbMode::GpRmsNormalized => {
            let rms = xi.norm();
            if rms > 0.0 {
                spec.eta / rms
            } else {
                0.0
            }
        }
        _ => spec.eta,
    };
    push(mu, xi, scale)
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub ensemble: ParticleEnsemble,
    pub field: TangentField,
    pub draws: usize,
}

/// Samples per `spec.mode`, resampling while `‖ξ‖ > κ`, and applies the field.
pub fn perturb(obj: &dyn Functional, mu: &ParticleEnsemble, spec: &PerturbationSpec, rng: &mut Rng) -> Result<Perturbation> {
    spec.validate()?;
    let mut last_norm = f64::NAN;
    for draw in 1..=RESAMPLE_CAP {
        let xi = sample(obj, mu, spec.mode, rng)?;
        last_norm = xi.norm();
        if spec.kappa.is_some_and(|k| last_norm > k) {
            continue;
        }
        let ensemble = apply_perturbation(mu, &xi, spec)?;
        return Ok(Perturbation { ensemble, field: xi, draws: draw });
    }
    Err(Error::ResampleCap { attempts: RESAMPLE_CAP, last_norm })
}
