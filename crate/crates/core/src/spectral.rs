//! Krylov application of spectral functions of a symmetric operator.
//!
//! The workhorse is [`lanczos_apply_inv_sqrt`], which approximates
//! `(H² + βI)^{−1/2} v` from `m` matrix-vector products with `H`. The
//! function is applied to the eigenvalues of the Lanczos tridiagonal of `H`
//! itself (not of `H²`), so each Krylov step costs a single product.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default cap on the dimension of dense spectral oracles.
pub const DENSE_CAP: usize = 4096;

/// Relative breakdown threshold: the iteration stops once the new residual is
/// this small compared to the image of the current basis vector.
pub const BREAKDOWN_REL: f64 = 1e-12;

/// Output of a fully reorthogonalized Lanczos run.
#[derive(Debug, Clone)]
pub struct LanczosState {
    pub alphas: Vec<f64>,
    /// Off-diagonal of the tridiagonal; one shorter than `alphas`.
    pub betas: Vec<f64>,
    /// Orthonormal Krylov basis, one vector per step.
    pub basis: Vec<Vec<f64>>,
    /// Norm of the starting vector.
    pub start_norm: f64,
    /// True when the Krylov space became invariant before `m` steps.
    pub breakdown: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl LanczosState {
    pub fn depth(&self) -> usize {
        self.alphas.len()
    }

    pub fn tridiagonal(&self) -> DMatrix<f64> {
        let m = self.depth();
        let mut t = DMatrix::zeros(m, m);
        for (i, a) in self.alphas.iter().enumerate() {
            t[(i, i)] = *a;
        }
        for (i, b) in self.betas.iter().enumerate() {
            t[(i, i + 1)] = *b;
            t[(i + 1, i)] = *b;
        }
        t
    }

    /// `‖v‖ Q f(T) e₁`.
    pub fn apply_function(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.tridiagonal());
        let m = self.depth();
        // f(T) e1 = S f(Λ) Sᵀ e1
        let mut coeffs = DVector::<f64>::zeros(m);
        for k in 0..m {
            let weight = f(eig.eigenvalues[k]) * eig.eigenvectors[(0, k)];
            for r in 0..m {
                coeffs[r] += eig.eigenvectors[(r, k)] * weight;
            }
        }
        let n = self.basis[0].len();
        let mut out = vec![0.0; n];
        for (q, c) in self.basis.iter().zip(coeffs.iter()) {
            let c = c * self.start_norm;
            for (o, x) in out.iter_mut().zip(q) {
                *o += c * x;
            }
        }
        out
    }

    /// Eigenvalues of the tridiagonal (Ritz values), ascending.
    pub fn ritz_values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = SymmetricEigen::new(self.tridiagonal()).eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals
    }
}

/// Runs up to `m` Lanczos steps from `v` with full reorthogonalization.
pub fn lanczos<F>(mut apply: F, v: &[f64], m: usize) -> Result<LanczosState>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if m == 0 {
        return Err(Error::InvalidInput("Lanczos depth must be at least 1".into()));
    }
    let start_norm = norm(v);
    if !(start_norm > 0.0) || !start_norm.is_finite() {
        return Err(Error::InvalidInput("Lanczos start vector must be nonzero and finite".into()));
    }
    let n = v.len();
    let m = m.min(n);
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|x| x / start_norm).collect()];
    let mut alphas = Vec::with_capacity(m);
    let mut betas = Vec::with_capacity(m);
    let mut breakdown = false;
    for j in 0..m {
        let mut w = apply(&basis[j])?;
        if w.len() != n {
            return Err(Error::Shape(format!("operator returned {} entries, expected {n}", w.len())));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("operator produced non-finite values".into()));
        }
        let image_norm = norm(&w);
        let alpha = dot(&basis[j], &w);
        alphas.push(alpha);
        if j + 1 == m {
            break;
        }
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let beta = norm(&w);
        if beta <= BREAKDOWN_REL * image_norm || beta == 0.0 {
            breakdown = true;
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    basis.truncate(alphas.len());
    Ok(LanczosState { alphas, betas, basis, start_norm, breakdown })
}

/// `f(λ) = (λ² + β)^{−1/2}`.
pub fn inv_sqrt_weight(lambda: f64, beta_reg: f64) -> f64 {
    1.0 / (lambda * lambda + beta_reg).sqrt()
}

/// Approximates `(H² + β I)^{−1/2} v` with an `m`-step Lanczos run on `H`.
pub fn lanczos_apply_inv_sqrt<F>(apply: F, v: &[f64], beta_reg: f64, m: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(beta_reg > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta_reg}")));
    }
    let state = lanczos(apply, v, m)?;
    let out = state.apply_function(|l| inv_sqrt_weight(l, beta_reg));
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite inverse square-root application".into()));
    }
    Ok(out)
}

fn symmetric_eigen(matrix: &DMatrix<f64>, cap: usize) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Shape(format!("matrix is {}x{}, not square", n, matrix.ncols())));
    }
    if n > cap {
        return Err(Error::CapExceeded { what: "dense eigensolve dimension".into(), size: n, cap });
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = sym.try_symmetric_eigen(f64::EPSILON, 0).ok_or_else(|| Error::Numeric("symmetric eigensolve did not converge".into()))?;
    Ok(eig)
}

/// Dense oracle: `Q diag((λ_i² + β)^{−1/2}) Qᵀ v` after symmetrizing `matrix`.
pub fn dense_inv_sqrt(matrix: &DMatrix<f64>, v: &[f64], beta_reg: f64) -> Result<Vec<f64>> {
    dense_apply_function(matrix, v, |l| inv_sqrt_weight(l, beta_reg))
}

pub fn dense_apply_function(matrix: &DMatrix<f64>, v: &[f64], f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    if v.len() != matrix.nrows() {
        return Err(Error::Shape(format!("vector has {} entries, matrix is {}x{}", v.len(), matrix.nrows(), matrix.ncols())));
    }
    let eig = symmetric_eigen(matrix, DENSE_CAP)?;
    let q = &eig.eigenvectors;
    let coeffs = q.transpose() * DVector::from_column_slice(v);
    let scaled = DVector::from_iterator(coeffs.len(), coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c * f(*l)));
    Ok((q * scaled).as_slice().to_vec())
}

/// Eigenvalues and eigenvectors of a symmetric matrix, ascending.
pub fn dense_eigen(matrix: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = symmetric_eigen(matrix, DENSE_CAP)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(matrix.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Smallest eigenvalue estimate from a Lanczos run of depth `m`.
pub fn lanczos_min_eig<F>(apply: F, start: &[f64], m: usize) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let state = lanczos(apply, start, m)?;
    Ok(state.ritz_values()[0])
}

/// Relative asymmetry `|⟨Ax,y⟩ − ⟨x,Ay⟩| / (‖Ax‖‖y‖ + ‖x‖‖Ay‖)` on a probe pair.
pub fn symmetry_defect<F>(mut apply: F, x: &[f64], y: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let ax = apply(x)?;
    let ay = apply(y)?;
    let scale = norm(&ax) * norm(y) + norm(x) * norm(&ay);
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(&ax, y) - dot(x, &ay)).abs() / scale)
}
