//! Parameter choices under which the saddle-escape guarantee holds.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularity constants of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Hessian bound `C_M + C_K`.
    pub c_h: f64,
    /// Hessian Lipschitz constant `L_M + L_K`.
    pub l_h: f64,
    /// Ratio bound `‖∇∇_μF‖ ≤ R_F ‖∇_μF‖`.
    pub r_f: f64,
    /// Overall failure probability.
    pub zeta: f64,
    /// `F(μ⁰) − inf F`.
    pub f_min: f64,
    /// `‖∇²_μF‖` in `L²(μ⊗μ)` at the saddle; sets the perturbation bound.
    pub kernel_norm: f64,
    /// Overlap of the perturbation with the escape direction. Defaults to its
    /// lower bound `√(2π) δ ζ_ep / 4`.
    #[serde(default)]
    pub overlap: Option<f64>,
    /// Per-episode failure probability. Solved from `zeta` when absent.
    #[serde(default)]
    pub zeta_ep: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub tau: f64,
    pub delta_tilde: f64,
    pub zeta_ep: f64,
    pub kappa: f64,
    pub overlap: f64,
    /// Real-valued episode length from the closed form.
    pub n_out: f64,
    /// `⌈n_out⌉`, the usable iteration count.
    pub n_out_steps: u64,
    pub f0: f64,
    pub eta: f64,
    /// `ε (R_F/√β + 2 L_H/(πβ))`
    pub admissibility_lhs: f64,
    /// `δ̃^{3/2}`
    pub admissibility_rhs: f64,
    pub admissible: bool,
}

const ZETA_EP_ROUNDS: usize = 200;

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive and finite, got {x}")))
    }
}

pub fn delta_tilde(delta: f64, beta: f64) -> f64 {
    delta / (delta * delta + beta).sqrt()
}

/// `‖∇²F‖ √(2 ln(4/ζ_ep))`
pub fn kappa_bound(kernel_norm: f64, zeta_ep: f64) -> f64 {
    kernel_norm * (2.0 * (4.0 / zeta_ep).ln()).sqrt()
}

struct Chain {
    kappa: f64,
    overlap: f64,
    n_out: f64,
    f0: f64,
}

fn chain(c: &TheoryConstants, tau: f64, beta: f64, delta: f64, zeta_ep: f64) -> Result<Chain> {
    let dt = delta_tilde(delta, beta);
    let kappa = kappa_bound(c.kernel_norm, zeta_ep);
    let overlap = c.overlap.unwrap_or((2.0 * PI).sqrt() * delta * zeta_ep / 4.0);
    positive("overlap |c|", overlap)?;
    let growth = (1.0 + tau * dt).ln();
    let arg = 16.0 * (2.0 * c.c_h * tau).sqrt() * kappa / ((E * beta).sqrt() * overlap * growth.sqrt());
    let n_out = 2.0 / growth * arg.ln();
    if !(n_out > 0.0) || !n_out.is_finite() {
        return Err(Error::Numeric(format!(
            "episode length formula is non-positive (log argument {arg:.6e}); the constants are outside its range"
        )));
    }
    let shape = 1.0 / (2.0 * beta.sqrt()) + 2.0 * c.c_h / (PI * beta);
    let f0 = beta * 1.5f64.ln().powi(2) / (144.0 * c.l_h * c.l_h * shape * shape * (tau * n_out).powi(3));
    Ok(Chain { kappa, overlap, n_out, f0 })
}

/// Evaluates the step size, perturbation bound, episode length, decrease
/// threshold and amplitude, plus the precision admissibility test.
///
/// Without an explicit `zeta_ep` the coupling `ζ_ep = (4/3) ζ / ⌈F_min/F_0⌉`
/// is solved by fixed-point iteration (it changes only through the integer
/// ceiling, so it settles after a few rounds).
pub fn theoretical_params(c: &TheoryConstants, beta: f64, delta: f64, eps: f64) -> Result<TheoryParams> {
    for (name, x) in [
        ("C_H", c.c_h),
        ("L_H", c.l_h),
        ("R_F", c.r_f),
        ("zeta", c.zeta),
        ("F_min", c.f_min),
        ("kernel norm", c.kernel_norm),
        ("beta", beta),
        ("delta", delta),
        ("eps", eps),
    ] {
        positive(name, x)?;
    }
    if c.zeta >= 1.0 {
        return Err(Error::InvalidInput(format!("zeta must lie in (0,1), got {}", c.zeta)));
    }
    let tau = (beta.sqrt() / c.c_h).min(1.0);
    let dt = delta_tilde(delta, beta);

    let (zeta_ep, ch) = match c.zeta_ep {
        Some(z) => {
            if !(z > 0.0 && z < 1.0) {
                return Err(Error::InvalidInput(format!("zeta_ep must lie in (0,1), got {z}")));
            }
            (z, chain(c, tau, beta, delta, z)?)
        }
        None => {
            let mut z = c.zeta;
            let mut ch = chain(c, tau, beta, delta, z)?;
            let mut settled = false;
            for _ in 0..ZETA_EP_ROUNDS {
                let episodes = (c.f_min / ch.f0).ceil().max(1.0);
                let next = (4.0 / 3.0 * c.zeta / episodes).min(c.zeta);
                if next == z {
                    settled = true;
                    break;
                }
                z = next;
                ch = chain(c, tau, beta, delta, z)?;
            }
            if !settled {
                return Err(Error::Numeric("per-episode failure probability did not settle".into()));
            }
            (z, ch)
        }
    };

    let eta = 2.0 * ch.f0 / (ch.kappa * (eps + (eps * eps + 2.0 * c.c_h * ch.f0).sqrt()));
    let lhs = eps * (c.r_f / beta.sqrt() + 2.0 * c.l_h / (PI * beta));
    let rhs = dt.powf(1.5);
    Ok(TheoryParams {
        tau,
        delta_tilde: dt,
        zeta_ep,
        kappa: ch.kappa,
        overlap: ch.overlap,
        n_out: ch.n_out,
        n_out_steps: ch.n_out.ceil() as u64,
        f0: ch.f0,
        eta,
        admissibility_lhs: lhs,
        admissibility_rhs: rhs,
        admissible: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> TheoryConstants {
        TheoryConstants {
            c_h: 1.0,
            l_h: 1.0,
            r_f: 1.0,
            zeta: 0.1,
            f_min: 1.0,
            kernel_norm: 1.0,
            overlap: None,
            zeta_ep: Some(0.04),
        }
    }

    #[test]
    fn step_and_normalized_curvature() {
        let p = theoretical_params(&unit(), 1.0, 1.0, 1e-3).unwrap();
        assert_eq!(p.tau, 1.0);
        assert!((p.delta_tilde - 0.5f64.sqrt()).abs() < 1e-15);
        let q = theoretical_params(&TheoryConstants { c_h: 10.0, ..unit() }, 4.0, 1.0, 1e-3).unwrap();
        assert!((q.tau - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kappa_example() {
        assert!((kappa_bound(1.0, 0.04) - (2.0 * 100f64.ln()).sqrt()).abs() < 1e-15);
        assert!((kappa_bound(1.0, 0.04) - 3.0349).abs() < 1e-4);
    }

    #[test]
    fn admissibility_direction() {
        assert!(theoretical_params(&unit(), 1.0, 1.0, 1e-6).unwrap().admissible);
        assert!(!theoretical_params(&unit(), 1.0, 1.0, 1e6).unwrap().admissible);
    }

    #[test]
    fn zeta_ep_fixed_point_is_consistent() {
        let c = TheoryConstants { zeta_ep: None, ..unit() };
        let p = theoretical_params(&c, 1e-2, 1e-1, 1e-4).unwrap();
        let episodes = (c.f_min / p.f0).ceil();
        assert_eq!(p.zeta_ep, (4.0 / 3.0 * c.zeta / episodes).min(c.zeta));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(theoretical_params(&unit(), 0.0, 1.0, 1.0).is_err());
        assert!(theoretical_params(&TheoryConstants { c_h: -1.0, ..unit() }, 1.0, 1.0, 1.0).is_err());
        assert!(theoretical_params(&TheoryConstants { zeta: 1.5, ..unit() }, 1.0, 1.0, 1.0).is_err());
    }
}
