use nalgebra::DMatrix;

use super::{check_index, Functional, ObjectiveKind};
use crate::error::{Error, Result};
use crate::measure::{ParticleEnsemble, TangentField};

/// Coulomb MMD to a sampled target, estimated by the diagonal-free
/// U-statistic
///
/// `F_N = 1/(d−2) [ Σ_{i≠j} k(x_i−x_j)/(N(N−1)) − 2 Σ_{i,l} k(x_i−y_l)/(NM)
///        + Σ_{l≠r} k(y_l−y_r)/(M(M−1)) ]`
///
/// with the clamped kernel `k(z) = max(‖z‖², ε²)^{−(d−2)/2}`. The kernel is
/// constant inside the clamp radius, so all its derivatives vanish there.
///
/// The Hessian blocks are those of `F_N` itself, which puts a factor
/// `N/(N−1)` on the kernel part relative to the population formula.
#[derive(Debug, Clone)]
pub struct CoulombMmd {
    targets: ParticleEnsemble,
    eps_ker: f64,
    target_term: f64,
}

impl CoulombMmd {
    pub fn new(targets: ParticleEnsemble, eps_ker: f64) -> Result<Self> {
        if targets.dim() < 3 {
            return Err(Error::InvalidInput(format!(
                "coulomb_mmd requires dim >= 3 (got {})",
                targets.dim()
            )));
        }
        if !(eps_ker > 0.0) {
            return Err(Error::InvalidInput(format!("eps_ker must be positive, got {eps_ker}")));
        }
        let mut me = Self { targets, eps_ker, target_term: 0.0 };
        let m = me.targets.count();
        if m > 1 {
            let mut s = 0.0;
            for (l, y) in me.targets.particles().enumerate() {
                for (r, y2) in me.targets.particles().enumerate() {
                    if l != r {
                        s += me.kernel(y, y2);
                    }
                }
            }
            me.target_term = s / (m as f64 * (m as f64 - 1.0));
        }
        Ok(me)
    }

    pub fn targets(&self) -> &ParticleEnsemble {
        &self.targets
    }

    pub fn eps_ker(&self) -> f64 {
        self.eps_ker
    }

    fn power(&self) -> f64 {
        self.targets.dim() as f64 - 2.0
    }

    fn r2(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2 = Self::r2(x, y).max(self.eps_ker * self.eps_ker);
        r2.powf(-0.5 * self.power())
    }

    /// Adds `scale · ∇k(x − y)`.
    fn add_grad(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let r2 = Self::r2(x, y);
        if r2 <= self.eps_ker * self.eps_ker {
            return;
        }
        let p = self.power();
        let c = -p * r2.powf(-0.5 * p - 1.0);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += scale * c * (a - b);
        }
    }

    /// Adds `scale · ∇²k(x − y)`.
    fn add_hess(&self, x: &[f64], y: &[f64], scale: f64, out: &mut DMatrix<f64>) {
        let r2 = Self::r2(x, y);
        if r2 <= self.eps_ker * self.eps_ker {
            return;
        }
        let p = self.power();
        let d = x.len();
        let inv = r2.powf(-0.5 * p - 1.0);
        let outer = (p + 2.0) * inv / r2;
        for a in 0..d {
            for b in 0..d {
                let eye = if a == b { 1.0 } else { 0.0 };
                let za = x[a] - y[a];
                let zb = x[b] - y[b];
                out[(a, b)] += scale * -p * (inv * eye - outer * za * zb);
            }
        }
    }
}

impl Functional for CoulombMmd {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::CoulombMmd
    }

    fn dim(&self) -> usize {
        self.targets.dim()
    }

    fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
        self.check(mu)?;
        let n = mu.count() as f64;
        let m = self.targets.count() as f64;
        let mut self_term = 0.0;
        if mu.count() > 1 {
            for (i, x) in mu.particles().enumerate() {
                for (j, y) in mu.particles().enumerate() {
                    if i != j {
                        self_term += self.kernel(x, y);
                    }
                }
            }
            self_term /= n * (n - 1.0);
        }
        let mut cross = 0.0;
        for x in mu.particles() {
            for y in self.targets.particles() {
                cross += self.kernel(x, y);
            }
        }
        cross *= 2.0 / (n * m);
        Ok((self_term - cross + self.target_term) / self.power())
    }

    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        self.check(mu)?;
        let n = mu.count();
        let c = 1.0 / self.power();
        let w_self = if n > 1 { 2.0 * c / (n as f64 - 1.0) } else { 0.0 };
        let w_target = -2.0 * c / self.targets.count() as f64;
        let mut g = mu.zero_field();
        for (i, x) in mu.particles().enumerate() {
            let gi = g.at_mut(i);
            for (j, y) in mu.particles().enumerate() {
                if i != j {
                    self.add_grad(x, y, w_self, gi);
                }
            }
            for y in self.targets.particles() {
                self.add_grad(x, y, w_target, gi);
            }
        }
        Ok(g)
    }

    fn m_block(&self, mu: &ParticleEnsemble, i: usize) -> Result<DMatrix<f64>> {
        self.check(mu)?;
        check_index(mu, &[i])?;
        let n = mu.count();
        let c = 1.0 / self.power();
        let w_self = if n > 1 { 2.0 * c / (n as f64 - 1.0) } else { 0.0 };
        let w_target = -2.0 * c / self.targets.count() as f64;
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        let x = mu.particle(i);
        for (j, y) in mu.particles().enumerate() {
            if j != i {
                self.add_hess(x, y, w_self, &mut out);
            }
        }
        for y in self.targets.particles() {
            self.add_hess(x, y, w_target, &mut out);
        }
        Ok(out)
    }

    fn k_block(&self, mu: &ParticleEnsemble, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check(mu)?;
        check_index(mu, &[i, j])?;
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        let n = mu.count() as f64;
        if i != j {
            let scale = -2.0 / self.power() * n / (n - 1.0);
            self.add_hess(mu.particle(i), mu.particle(j), scale, &mut out);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(count: usize, xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::new(count, 3, xs.to_vec()).unwrap()
    }

    /// Straight transcription of the three-sum estimator with the unclamped
    /// `1/‖x−y‖` kernel (valid when every pair is outside the clamp radius).
    fn direct(x: &[[f64; 3]], y: &[[f64; 3]]) -> f64 {
        let k = |a: &[f64; 3], b: &[f64; 3]| {
            1.0 / ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        };
        let (n, m) = (x.len() as f64, y.len() as f64);
        let mut s1 = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                if i != j {
                    s1 += k(&x[i], &x[j]);
                }
            }
        }
        let mut s2 = 0.0;
        for a in x {
            for b in y {
                s2 += k(a, b);
            }
        }
        let mut s3 = 0.0;
        for l in 0..y.len() {
            for r in 0..y.len() {
                if l != r {
                    s3 += k(&y[l], &y[r]);
                }
            }
        }
        s1 / (n * (n - 1.0)) - 2.0 * s2 / (n * m) + s3 / (m * (m - 1.0))
    }

    #[test]
    fn value_matches_direct_summation() {
        let x = [[10.0, 0.0, 0.0], [0.0, 9.0, 1.0], [-7.0, 2.0, 3.0]];
        let y = [[0.5, 0.1, -0.2], [-0.4, 0.3, 0.2], [0.1, -0.6, 0.0], [0.0, 0.0, 0.9]];
        let f = CoulombMmd::new(ens(4, &y.concat()), 5e-2).unwrap();
        let mu = ens(3, &x.concat());
        assert!((f.value(&mu).unwrap() - direct(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn clamped_pairs_contribute_nothing() {
        let f = CoulombMmd::new(ens(2, &[0.0, 0.0, 0.0, 0.01, 0.0, 0.0]), 5e-2).unwrap();
        let mu = ens(2, &[0.0, 0.0, 0.0, 0.0, 0.02, 0.0]);
        assert!(f.grad(&mu).unwrap().as_slice().iter().all(|g| *g == 0.0));
        assert_eq!(f.m_block(&mu, 0).unwrap(), DMatrix::zeros(3, 3));
        assert_eq!(f.k_block(&mu, 0, 1).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn kernel_block_closed_form() {
        let f = CoulombMmd::new(ens(1, &[5.0, 5.0, 5.0]), 5e-2).unwrap();
        let mu = ens(2, &[0.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let a = f.k_block(&mu, 0, 1).unwrap();
        // Δ = (−1,−2,−2), r = 3, d = 3: A = −2·(N/(N−1))·(−1)(r⁻³I − 3r⁻⁵ΔΔᵀ)
        let delta = [-1.0, -2.0, -2.0];
        for p in 0..3 {
            for q in 0..3 {
                let eye = if p == q { 1.0 } else { 0.0 };
                let expect = 4.0 * (eye / 27.0 - 3.0 * delta[p] * delta[q] / 243.0);
                assert!((a[(p, q)] - expect).abs() < 1e-14);
            }
        }
        assert!((&a - f.k_block(&mu, 1, 0).unwrap().transpose()).amax() < 1e-15);
    }

    #[test]
    fn rejects_low_dim() {
        let t = ParticleEnsemble::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(CoulombMmd::new(t, 0.1).is_err());
    }
}
