//! Wasserstein Hessian actions on tangent fields.
//!
//! In flattened coordinates the Hessian is `blockdiag(M_i) + (1/N)[A[i,j]]`.
//! The Euclidean inner product there is `N` times the `L²_μ` one, so the
//! operator is symmetric in both and Krylov methods run on it directly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measure::{push, ParticleEnsemble, TangentField};
use crate::objectives::Functional;
use crate::spectral::{self, DENSE_CAP};

/// Default relative step of the finite-difference transport HVP.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Largest flattened dimension for which [`min_eig_kernel`] eigensolves densely.
pub const DENSE_MIN_EIG_CAP: usize = 1024;

/// Lanczos budget for the iterative kernel eigenvalue estimate.
pub const MIN_EIG_LANCZOS_STEPS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HvpMode {
    ExactBlocks,
    /// Centered difference of the gradient along `Id ± t v`.
    FdTransport { step: f64 },
}

/// All Hessian blocks of an analytic objective at one ensemble, flat.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    count: usize,
    dim: usize,
    /// `N` blocks of `d × d`, row-major.
    m: Vec<f64>,
    /// `N × N` blocks of `d × d`, row-major, `A[i,j]` at `(i N + j) d²`.
    a: Vec<f64>,
}

impl HessianBlocks {
    pub fn compute(obj: &dyn Functional, mu: &ParticleEnsemble) -> Result<Self> {
        Self::compute_parts(obj, mu, true)
    }

    /// Kernel blocks only; the multiplication part is left zero.
    pub fn kernel_only(obj: &dyn Functional, mu: &ParticleEnsemble) -> Result<Self> {
        Self::compute_parts(obj, mu, false)
    }

    fn compute_parts(obj: &dyn Functional, mu: &ParticleEnsemble, with_m: bool) -> Result<Self> {
        obj.check(mu)?;
        if !obj.has_blocks() {
            return Err(crate::objectives::no_blocks(obj.kind()));
        }
        let (n, d) = (mu.count(), mu.dim());
        let dd = d * d;
        let mut m = vec![0.0; n * dd];
        let mut a = vec![0.0; n * n * dd];
        for i in 0..n {
            if with_m {
                copy_block(&obj.m_block(mu, i)?, &mut m[i * dd..(i + 1) * dd]);
            }
            if obj.has_kernel() {
                for j in 0..n {
                    let off = (i * n + j) * dd;
                    copy_block(&obj.k_block(mu, i, j)?, &mut a[off..off + dd]);
                }
            }
        }
        Ok(Self { count: n, dim: d, m, a })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m_block(&self, i: usize) -> DMatrix<f64> {
        let dd = self.dim * self.dim;
        DMatrix::from_row_slice(self.dim, self.dim, &self.m[i * dd..(i + 1) * dd])
    }

    pub fn k_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let dd = self.dim * self.dim;
        let off = (i * self.count + j) * dd;
        DMatrix::from_row_slice(self.dim, self.dim, &self.a[off..off + dd])
    }

    fn k_raw(&self, i: usize, j: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        let off = (i * self.count + j) * dd;
        &self.a[off..off + dd]
    }

    /// `(Hv)_i = M_i v_i + (1/N) Σ_j A[i,j] v_j` on a flat field.
    pub fn apply(&self, v: &[f64], include_m: bool) -> Vec<f64> {
        let (n, d) = (self.count, self.dim);
        let dd = d * d;
        let inv_n = 1.0 / n as f64;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let oi = &mut out[i * d..(i + 1) * d];
            if include_m {
                let mi = &self.m[i * dd..(i + 1) * dd];
                let vi = &v[i * d..(i + 1) * d];
                for a in 0..d {
                    oi[a] += (0..d).map(|b| mi[a * d + b] * vi[b]).sum::<f64>();
                }
            }
            for j in 0..n {
                let aij = self.k_raw(i, j);
                let vj = &v[j * d..(j + 1) * d];
                for a in 0..d {
                    oi[a] += inv_n * (0..d).map(|b| aij[a * d + b] * vj[b]).sum::<f64>();
                }
            }
        }
        out
    }

    /// Dense `blockdiag(M) + (1/N)A` (or just the kernel part).
    pub fn dense(&self, include_m: bool) -> DMatrix<f64> {
        let (n, d) = (self.count, self.dim);
        let inv_n = 1.0 / n as f64;
        let mut out = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                let aij = self.k_raw(i, j);
                for a in 0..d {
                    for b in 0..d {
                        out[(i * d + a, j * d + b)] = inv_n * aij[a * d + b];
                    }
                }
            }
            if include_m {
                let mi = &self.m[i * d * d..(i + 1) * d * d];
                for a in 0..d {
                    for b in 0..d {
                        out[(i * d + a, i * d + b)] += mi[a * d + b];
                    }
                }
            }
        }
        out
    }

    /// Largest spectral norm over the multiplication blocks.
    pub fn multiplication_bound(&self) -> f64 {
        (0..self.count)
            .map(|i| {
                let mi = self.m_block(i);
                let sym = (&mi + mi.transpose()) * 0.5;
                sym.symmetric_eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.abs()))
            })
            .fold(0.0, f64::max)
    }

    /// `sqrt((1/N²) Σ_{i,j} ‖A[i,j]‖_F²)`, the Hilbert-Schmidt norm of the kernel operator.
    pub fn kernel_hs_norm(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt() / self.count as f64
    }
}

fn copy_block(src: &DMatrix<f64>, dst: &mut [f64]) {
    let d = src.nrows();
    for a in 0..d {
        for b in 0..d {
            dst[a * d + b] = src[(a, b)];
        }
    }
}

/// The Hessian of `obj` at `mu`, applied in one of two modes.
pub struct HessianOperator<'a> {
    obj: &'a dyn Functional,
    mu: &'a ParticleEnsemble,
    mode: HvpMode,
    blocks: Option<HessianBlocks>,
}

impl<'a> HessianOperator<'a> {
    pub fn new(obj: &'a dyn Functional, mu: &'a ParticleEnsemble, mode: HvpMode) -> Result<Self> {
        obj.check(mu)?;
        let blocks = match mode {
            HvpMode::ExactBlocks => Some(HessianBlocks::compute(obj, mu)?),
            HvpMode::FdTransport { step } => {
                if !(step > 0.0) {
                    return Err(Error::InvalidInput(format!("fd step must be positive, got {step}")));
                }
                None
            }
        };
        Ok(Self { obj, mu, mode, blocks })
    }

    /// Exact blocks when the objective has them, finite differences otherwise.
    pub fn auto(obj: &'a dyn Functional, mu: &'a ParticleEnsemble) -> Result<Self> {
        let mode = if obj.has_blocks() {
            HvpMode::ExactBlocks
        } else {
            HvpMode::FdTransport { step: DEFAULT_FD_STEP }
        };
        Self::new(obj, mu, mode)
    }

    pub fn mode(&self) -> HvpMode {
        self.mode
    }

    pub fn blocks(&self) -> Option<&HessianBlocks> {
        self.blocks.as_ref()
    }

    pub fn flat_dim(&self) -> usize {
        self.mu.count() * self.mu.dim()
    }

    pub fn hvp(&self, v: &TangentField) -> Result<TangentField> {
        self.mu.check_field(v)?;
        let out = self.apply_flat(v.as_slice())?;
        TangentField::new(v.count(), v.dim(), out)
    }

    pub fn apply_flat(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.flat_dim() {
            return Err(Error::Shape(format!("flat field has {} entries, expected {}", v.len(), self.flat_dim())));
        }
        let out = match (&self.blocks, self.mode) {
            (Some(blocks), _) => blocks.apply(v, true),
            (None, HvpMode::FdTransport { step }) => self.fd_apply(v, step)?,
            (None, HvpMode::ExactBlocks) => unreachable!("exact mode always carries blocks"),
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("Hessian-vector product is not finite".into()));
        }
        Ok(out)
    }

    fn fd_apply(&self, v: &[f64], step: f64) -> Result<Vec<f64>> {
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if vmax == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let t = step * (1.0 + self.mu.max_abs()) / vmax.max(1.0);
        let field = TangentField::new(self.mu.count(), self.mu.dim(), v.to_vec())?;
        let plus = self.obj.grad(&push(self.mu, &field, t)?)?;
        let minus = self.obj.grad(&push(self.mu, &field, -t)?)?;
        Ok(plus.as_slice().iter().zip(minus.as_slice()).map(|(a, b)| (a - b) / (2.0 * t)).collect())
    }

    /// Dense matrix of the operator: block assembly in exact mode, column
    /// probes in finite-difference mode.
    pub fn assemble_dense(&self) -> Result<DMatrix<f64>> {
        self.assemble_dense_capped(DENSE_CAP)
    }

    pub fn assemble_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.flat_dim();
        if n > cap {
            return Err(Error::CapExceeded { what: "dense Hessian dimension".into(), size: n, cap });
        }
        if let Some(blocks) = &self.blocks {
            return Ok(blocks.dense(true));
        }
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            let col = self.apply_flat(&e)?;
            e[c] = 0.0;
            for (r, x) in col.into_iter().enumerate() {
                out[(r, c)] = x;
            }
        }
        Ok(out)
    }
}

/// `λ_min` of the kernel operator `(1/N)[A[i,j]]`.
pub fn min_eig_kernel(obj: &dyn Functional, mu: &ParticleEnsemble) -> Result<f64> {
    obj.check(mu)?;
    if !obj.has_blocks() && obj.has_kernel_action() {
        let (n, d) = (mu.count(), mu.dim());
        return spectral::lanczos_min_eig(
            |v| Ok(obj.kernel_action(mu, &TangentField::new(n, d, v.to_vec())?)?.into_vec()),
            &golden_start(n * d),
            MIN_EIG_LANCZOS_STEPS.min(n * d),
        );
    }
    if !obj.has_blocks() {
        return Err(Error::Capability(format!(
            "{} objective has no kernel blocks; use the stagnation trigger",
            obj.kind().name()
        )));
    }
    if !obj.has_kernel() {
        return Ok(0.0);
    }
    let blocks = HessianBlocks::kernel_only(obj, mu)?;
    let n = mu.count() * mu.dim();
    if n <= DENSE_MIN_EIG_CAP {
        let (vals, _) = spectral::dense_eigen(&blocks.dense(false))?;
        Ok(vals[0])
    } else {
        kernel_min_eig_lanczos(&blocks, MIN_EIG_LANCZOS_STEPS)
    }
}

/// Iterative estimate of `λ_min` of the kernel operator from `steps` Lanczos steps.
pub fn kernel_min_eig_lanczos(blocks: &HessianBlocks, steps: usize) -> Result<f64> {
    let n = blocks.count() * blocks.dim();
    spectral::lanczos_min_eig(|v| Ok(blocks.apply(v, false)), &golden_start(n), steps)
}

/// Deterministic start vector with components in every direction.
fn golden_start(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianConstants {
    /// `max_i ‖M_i‖₂`
    pub c_m: f64,
    /// Hilbert-Schmidt norm of the kernel operator.
    pub c_k: f64,
}

impl HessianConstants {
    pub fn c_h(&self) -> f64 {
        self.c_m + self.c_k
    }
}

pub fn estimate_constants(obj: &dyn Functional, mu: &ParticleEnsemble) -> Result<HessianConstants> {
    let blocks = HessianBlocks::compute(obj, mu)?;
    Ok(HessianConstants { c_m: blocks.multiplication_bound(), c_k: blocks.kernel_hs_norm() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{CoulombMmd, Interaction, Potential};

    #[test]
    fn quadratic_interaction_annihilates_constants() {
        let f = Interaction::quadratic(2);
        let mu = ParticleEnsemble::new(3, 2, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        let op = HessianOperator::auto(&f, &mu).unwrap();
        let c = TangentField::constant(3, &[1.0, -2.0]);
        assert!(op.hvp(&c).unwrap().max_abs() < 1e-15);
        let v = TangentField::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        let hv = op.hvp(&v).unwrap();
        // v_i − mean_j v_j
        let want = [0.0, -1.0, -1.0, 0.0, 1.0, 1.0];
        assert!(hv.as_slice().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn potential_is_identity() {
        let f = Potential::quadratic(&[0.0, 0.0]);
        let mu = ParticleEnsemble::new(3, 2, vec![0.3, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        let op = HessianOperator::auto(&f, &mu).unwrap();
        assert_eq!(op.assemble_dense().unwrap(), DMatrix::identity(6, 6));
        assert_eq!(min_eig_kernel(&f, &mu).unwrap(), 0.0);
        let c = estimate_constants(&f, &mu).unwrap();
        assert_eq!((c.c_m, c.c_k), (1.0, 0.0));
    }

    #[test]
    fn two_particle_interaction() {
        let f = Interaction::quadratic(1);
        let mu = ParticleEnsemble::new(2, 1, vec![0.0, 2.0]).unwrap();
        let dense = HessianOperator::auto(&f, &mu).unwrap().assemble_dense().unwrap();
        assert_eq!(dense, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        assert!((min_eig_kernel(&f, &mu).unwrap() + 1.0).abs() < 1e-14);
        let c = estimate_constants(&f, &mu).unwrap();
        assert!((c.c_m - 1.0).abs() < 1e-15 && (c.c_k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fd_mode_on_coulomb_close_to_exact() {
        let targets = ParticleEnsemble::new(3, 3, vec![2.0, 0.0, 0.0, -2.0, 0.1, 0.0, 0.0, 1.5, -1.0]).unwrap();
        let f = CoulombMmd::new(targets, 5e-2).unwrap();
        let mu = ParticleEnsemble::new(3, 3, vec![0.3, 0.2, 0.1, -0.5, 0.4, 0.0, 0.9, -0.8, 0.6]).unwrap();
        let exact = HessianOperator::new(&f, &mu, HvpMode::ExactBlocks).unwrap();
        let fd = HessianOperator::new(&f, &mu, HvpMode::FdTransport { step: DEFAULT_FD_STEP }).unwrap();
        let v = TangentField::new(3, 3, vec![1.0, -0.5, 0.2, 0.3, 0.3, -1.0, 0.0, 0.7, 0.1]).unwrap();
        let a = exact.hvp(&v).unwrap();
        let b = fd.hvp(&v).unwrap();
        let err = a.axpy(-1.0, &b).unwrap().norm() / a.norm();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn network_kinds_refuse_blocks() {
        let teacher = ParticleEnsemble::new(1, 2, vec![1.0, 1.0]).unwrap();
        let data = crate::objectives::NetData::new(1, 1, vec![1.0], &teacher, None, Default::default()).unwrap();
        let f = crate::objectives::MatrixDecomposition::new(data);
        assert!(min_eig_kernel(&f, &teacher).unwrap().is_finite());
        assert!(matches!(estimate_constants(&f, &teacher), Err(Error::Capability(_))));
        assert!(HessianOperator::new(&f, &teacher, HvpMode::ExactBlocks).is_err());
        let op = HessianOperator::auto(&f, &teacher).unwrap();
        assert!(matches!(op.mode(), HvpMode::FdTransport { .. }));
    }

    #[test]
    fn dense_cap_is_enforced() {
        let f = Potential::quadratic(&[0.0]);
        let mu = ParticleEnsemble::new(5, 1, vec![0.0; 5]).unwrap();
        let op = HessianOperator::auto(&f, &mu).unwrap();
        assert!(matches!(op.assemble_dense_capped(4), Err(Error::CapExceeded { .. })));
    }
}
