use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_index, Functional, ObjectiveKind};
use crate::error::{Error, Result};
use crate::measure::{ParticleEnsemble, TangentField};

/// External potential `V`; `F(μ) = ∫ V dμ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PotentialShape {
    /// `V(x) = ½ (x−m)ᵀ Q (x−m)`, with `Q = I` when no curvature is given.
    Quadratic {
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        curvature: Option<Vec<Vec<f64>>>,
    },
    /// `V(x) = ¼ Σ_k (x_k − m_k)⁴`.
    Quartic { center: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Potential {
    shape: PotentialShape,
    center: Vec<f64>,
    curvature: Option<DMatrix<f64>>,
}

impl Potential {
    pub fn new(shape: PotentialShape) -> Result<Self> {
        let (center, curvature) = match &shape {
            PotentialShape::Quadratic { center, curvature } => {
                let d = center.len();
                let q = match curvature {
                    None => DMatrix::identity(d, d),
                    Some(rows) => {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(Error::Shape(format!("curvature must be {d}x{d}")));
                        }
                        let q = DMatrix::from_fn(d, d, |r, c| rows[r][c]);
                        if (&q - q.transpose()).amax() > 1e-12 {
                            return Err(Error::InvalidInput("curvature must be symmetric".into()));
                        }
                        q
                    }
                };
                (center.clone(), Some(q))
            }
            PotentialShape::Quartic { center } => (center.clone(), None),
        };
        if center.is_empty() {
            return Err(Error::InvalidInput("potential center must be non-empty".into()));
        }
        Ok(Self { shape, center, curvature })
    }

    pub fn quadratic(center: &[f64]) -> Self {
        Self::new(PotentialShape::Quadratic { center: center.to_vec(), curvature: None })
            .expect("non-empty center")
    }

    pub fn quartic(center: &[f64]) -> Self {
        Self::new(PotentialShape::Quartic { center: center.to_vec() }).expect("non-empty center")
    }

    pub fn shape(&self) -> &PotentialShape {
        &self.shape
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn offset(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, m)| a - m).collect()
    }

    fn v(&self, x: &[f64]) -> f64 {
        let r = self.offset(x);
        match &self.curvature {
            Some(q) => {
                let r = nalgebra::DVector::from_vec(r);
                0.5 * r.dot(&(q * &r))
            }
            None => 0.25 * r.iter().map(|z| z.powi(4)).sum::<f64>(),
        }
    }

    fn grad_v(&self, x: &[f64], out: &mut [f64]) {
        let r = self.offset(x);
        match &self.curvature {
            Some(q) => {
                for (a, o) in out.iter_mut().enumerate() {
                    *o = (0..r.len()).map(|b| q[(a, b)] * r[b]).sum();
                }
            }
            None => {
                for (o, z) in out.iter_mut().zip(&r) {
                    *o = z * z * z;
                }
            }
        }
    }
}

impl Functional for Potential {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Potential
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
        self.check(mu)?;
        Ok(mu.particles().map(|x| self.v(x)).sum::<f64>() / mu.count() as f64)
    }

    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        self.check(mu)?;
        let mut g = mu.zero_field();
        for (i, x) in mu.particles().enumerate() {
            self.grad_v(x, g.at_mut(i));
        }
        Ok(g)
    }

    fn m_block(&self, mu: &ParticleEnsemble, i: usize) -> Result<DMatrix<f64>> {
        self.check(mu)?;
        check_index(mu, &[i])?;
        Ok(match &self.curvature {
            Some(q) => q.clone(),
            None => {
                let r = self.offset(mu.particle(i));
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    r.len(),
                    r.iter().map(|z| 3.0 * z * z),
                ))
            }
        })
    }

    fn k_block(&self, mu: &ParticleEnsemble, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check(mu)?;
        check_index(mu, &[i, j])?;
        Ok(DMatrix::zeros(self.dim(), self.dim()))
    }

    fn has_kernel(&self) -> bool {
        false
    }
}
