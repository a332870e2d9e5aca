//! Single-step transport rules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hessian::{HessianOperator, HvpMode};
use crate::measure::{push, ParticleEnsemble, TangentField};
use crate::objectives::Functional;
use crate::spectral;

/// Condition number above which the Newton step refuses to solve.
pub const NEWTON_COND_CAP: f64 = 1e12;

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be finite and non-negative, got {tau}")));
    }
    Ok(())
}

fn finite(v: TangentField, what: &str) -> Result<TangentField> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is not finite")))
    }
}

/// `(Id − τ ∇F)_# μ`
pub fn step_wgf(obj: &dyn Functional, mu: &ParticleEnsemble, tau: f64) -> Result<ParticleEnsemble> {
    check_tau(tau)?;
    let g = finite(obj.grad(mu)?, "gradient")?;
    push(mu, &g, -tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WsfnParams {
    pub tau: f64,
    pub beta: f64,
    pub lanczos_m: usize,
    pub hvp: HvpMode,
}

/// `(H² + βI)^{-1/2} g` from `m` Lanczos steps.
pub fn wsfn_direction(
    obj: &dyn Functional,
    mu: &ParticleEnsemble,
    grad: &TangentField,
    beta: f64,
    lanczos_m: usize,
    hvp: HvpMode,
) -> Result<TangentField> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    if lanczos_m == 0 {
        return Err(Error::InvalidInput("lanczos depth must be at least 1".into()));
    }
    if grad.as_slice().iter().all(|&x| x == 0.0) {
        return TangentField::new(mu.count(), mu.dim(), vec![0.0; grad.as_slice().len()]);
    }
    let op = HessianOperator::new(obj, mu, hvp)?;
    let dir = spectral::lanczos_apply_inv_sqrt(|v| op.apply_flat(v), grad.as_slice(), beta, lanczos_m)?;
    finite(TangentField::new(mu.count(), mu.dim(), dir)?, "preconditioned direction")
}

/// `(Id − τ (H² + βI)^{-1/2} ∇F)_# μ`
pub fn step_wsfn(obj: &dyn Functional, mu: &ParticleEnsemble, p: &WsfnParams) -> Result<ParticleEnsemble> {
    check_tau(p.tau)?;
    let g = finite(obj.grad(mu)?, "gradient")?;
    let dir = wsfn_direction(obj, mu, &g, p.beta, p.lanczos_m, p.hvp)?;
    push(mu, &dir, -p.tau)
}

/// `H^{-1} g` by dense eigendecomposition.
pub fn newton_direction(
    obj: &dyn Functional,
    mu: &ParticleEnsemble,
    grad: &TangentField,
    hvp: HvpMode,
) -> Result<TangentField> {
    let h = HessianOperator::new(obj, mu, hvp)?.assemble_dense()?;
    let (vals, vecs) = spectral::dense_eigen(&h)?;
    let largest = vals.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let smallest = vals.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
    if smallest == 0.0 || largest / smallest > NEWTON_COND_CAP {
        return Err(Error::Numeric(format!(
            "Hessian is singular or ill-conditioned (|λ| range {smallest:.3e}..{largest:.3e}); \
             use the Levenberg-Marquardt or saddle-free step instead"
        )));
    }
    let g = DVector::from_column_slice(grad.as_slice());
    let coeffs = vecs.transpose() * g;
    let scaled = DVector::from_iterator(vals.len(), coeffs.iter().zip(&vals).map(|(c, l)| c / l));
    let dir = vecs * scaled;
    finite(TangentField::new(mu.count(), mu.dim(), dir.as_slice().to_vec())?, "Newton direction")
}

/// `(Id − τ H^{-1} ∇F)_# μ`
pub fn step_newton(obj: &dyn Functional, mu: &ParticleEnsemble, tau: f64, hvp: HvpMode) -> Result<ParticleEnsemble> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(mu.clone());
    }
    let g = finite(obj.grad(mu)?, "gradient")?;
    let dir = newton_direction(obj, mu, &g, hvp)?;
    push(mu, &dir, -tau)
}

/// `(H + τ^{-1} I)^{-1} g` by Cholesky.
pub fn lm_direction(
    obj: &dyn Functional,
    mu: &ParticleEnsemble,
    grad: &TangentField,
    tau: f64,
    hvp: HvpMode,
) -> Result<TangentField> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("Levenberg-Marquardt step size must be positive, got {tau}")));
    }
    let h = HessianOperator::new(obj, mu, hvp)?.assemble_dense()?;
    let n = h.nrows();
    let shifted = (&h + h.transpose()) * 0.5 + DMatrix::identity(n, n) / tau;
    let chol = shifted.cholesky().ok_or_else(|| {
        Error::Numeric(format!(
            "H + I/τ is not positive definite at τ = {tau:e}; the Levenberg-Marquardt step \
             needs H ⪰ −δ with τ < 1/δ, which fails here"
        ))
    })?;
    let dir = chol.solve(&DVector::from_column_slice(grad.as_slice()));
    finite(TangentField::new(mu.count(), mu.dim(), dir.as_slice().to_vec())?, "Levenberg-Marquardt direction")
}

/// `(Id − (H + τ^{-1} I)^{-1} ∇F)_# μ`
pub fn step_lm(obj: &dyn Functional, mu: &ParticleEnsemble, tau: f64, hvp: HvpMode) -> Result<ParticleEnsemble> {
    let g = finite(obj.grad(mu)?, "gradient")?;
    let dir = lm_direction(obj, mu, &g, tau, hvp)?;
    push(mu, &dir, -1.0)
}
