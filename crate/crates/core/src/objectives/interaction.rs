use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_index, Functional, ObjectiveKind};
use crate::error::{Error, Result};
use crate::measure::{ParticleEnsemble, TangentField};

/// Even pair potential `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum InteractionKernel {
    /// `U(z) = ½‖z‖²`
    Quadratic,
    /// `U(z) = amplitude · exp(−‖z‖² / (2 width²))`; a positive amplitude repels.
    Gaussian { amplitude: f64, width: f64 },
}

impl InteractionKernel {
    fn u(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|x| x * x).sum();
        match *self {
            InteractionKernel::Quadratic => 0.5 * r2,
            InteractionKernel::Gaussian { amplitude, width } => {
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Adds `scale · ∇U(z)` into `out`.
    fn add_grad(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let c = match *self {
            InteractionKernel::Quadratic => 1.0,
            InteractionKernel::Gaussian { amplitude, width } => {
                let w2 = width * width;
                let r2: f64 = z.iter().map(|x| x * x).sum();
                -amplitude / w2 * (-r2 / (2.0 * w2)).exp()
            }
        };
        for (o, x) in out.iter_mut().zip(z) {
            *o += scale * c * x;
        }
    }

    /// Adds `scale · ∇²U(z)` into `out`.
    fn add_hess(&self, z: &[f64], scale: f64, out: &mut DMatrix<f64>) {
        let d = z.len();
        match *self {
            InteractionKernel::Quadratic => {
                for a in 0..d {
                    out[(a, a)] += scale;
                }
            }
            InteractionKernel::Gaussian { amplitude, width } => {
                let w2 = width * width;
                let r2: f64 = z.iter().map(|x| x * x).sum();
                let c = amplitude / w2 * (-r2 / (2.0 * w2)).exp();
                for a in 0..d {
                    for b in 0..d {
                        let eye = if a == b { 1.0 } else { 0.0 };
                        out[(a, b)] += scale * c * (z[a] * z[b] / w2 - eye);
                    }
                }
            }
        }
    }
}

/// Interaction energy `F(μ) = ½ ∬ U(x − y) dμ(x) dμ(y)`.
#[derive(Debug, Clone)]
pub struct Interaction {
    dim: usize,
    kernel: InteractionKernel,
}

fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

impl Interaction {
    pub fn new(dim: usize, kernel: InteractionKernel) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("interaction dim must be positive".into()));
        }
        if let InteractionKernel::Gaussian { amplitude, width } = kernel {
            if !(width > 0.0) || !amplitude.is_finite() {
                return Err(Error::InvalidInput("gaussian kernel needs width > 0 and finite amplitude".into()));
            }
        }
        Ok(Self { dim, kernel })
    }

    pub fn quadratic(dim: usize) -> Self {
        Self { dim, kernel: InteractionKernel::Quadratic }
    }

    pub fn kernel(&self) -> &InteractionKernel {
        &self.kernel
    }
}

impl Functional for Interaction {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Interaction
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
        self.check(mu)?;
        let mut total = 0.0;
        for x in mu.particles() {
            for y in mu.particles() {
                total += self.kernel.u(&diff(x, y));
            }
        }
        let n = mu.count() as f64;
        Ok(0.5 * total / (n * n))
    }

    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        self.check(mu)?;
        let inv_n = 1.0 / mu.count() as f64;
        let mut g = mu.zero_field();
        for (i, x) in mu.particles().enumerate() {
            let gi = g.at_mut(i);
            for y in mu.particles() {
                self.kernel.add_grad(&diff(x, y), inv_n, gi);
            }
        }
        Ok(g)
    }

    fn m_block(&self, mu: &ParticleEnsemble, i: usize) -> Result<DMatrix<f64>> {
        self.check(mu)?;
        check_index(mu, &[i])?;
        let inv_n = 1.0 / mu.count() as f64;
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let x = mu.particle(i);
        for y in mu.particles() {
            self.kernel.add_hess(&diff(x, y), inv_n, &mut m);
        }
        Ok(m)
    }

    fn k_block(&self, mu: &ParticleEnsemble, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check(mu)?;
        check_index(mu, &[i, j])?;
        let mut a = DMatrix::zeros(self.dim, self.dim);
        self.kernel.add_hess(&diff(mu.particle(i), mu.particle(j)), -1.0, &mut a);
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_examples() {
        let f = Interaction::quadratic(1);
        let mu = ParticleEnsemble::new(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(f.value(&mu).unwrap(), 0.5);
        assert_eq!(f.grad(&mu).unwrap().as_slice(), &[-1.0, 1.0]);
        assert_eq!(f.m_block(&mu, 0).unwrap()[(0, 0)], 1.0);
        assert_eq!(f.k_block(&mu, 0, 1).unwrap()[(0, 0)], -1.0);
        assert_eq!(f.k_block(&mu, 1, 1).unwrap()[(0, 0)], -1.0);
    }

    #[test]
    fn translation_invariance() {
        let f = Interaction::new(2, InteractionKernel::Gaussian { amplitude: 1.3, width: 0.7 }).unwrap();
        let mu = ParticleEnsemble::new(3, 2, vec![0.1, 0.2, -0.5, 0.4, 0.9, -1.0]).unwrap();
        let shifted = crate::measure::push(&mu, &TangentField::constant(3, &[3.0, -2.0]), 1.0).unwrap();
        assert!((f.value(&mu).unwrap() - f.value(&shifted).unwrap()).abs() < 1e-12);
        let g = f.grad(&mu).unwrap();
        for a in 0..2 {
            let s: f64 = (0..3).map(|i| g.at(i)[a]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_rejects_bad_width() {
        assert!(Interaction::new(1, InteractionKernel::Gaussian { amplitude: 1.0, width: 0.0 }).is_err());
    }
}
