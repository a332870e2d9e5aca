//! Mean-field two-layer network objectives.
//!
//! A particle is `θ = (a, w) ∈ R^k × R^l` and the student feature map is
//! `h_μ(z) = (1/N) Σ_j a_j σ(w_jᵀ z)`. Both objectives only need
//! `∂F/∂h_μ(z_s)` per input sample; the chain rule through `(a_j, w_j)` is
//! shared in [`NetData::pull_back`].
//!
//! The kernel part of the Hessian factors the same way,
//! `A[i,j] = J_iᵀ (∂²F/∂h²) J_j` with `J_j = ∂h/∂θ_j` up to the `1/N`, so its
//! action is a feature-space directional derivative, a feature-space Hessian
//! product and a pull-back.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Functional, ObjectiveKind};
use crate::error::{Error, Result};
use crate::measure::{ParticleEnsemble, TangentField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Not C²: finite-difference Hessians are unreliable at the kink.
    Relu,
}

impl Activation {
    fn eval(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Relu => u.max(0.0),
        }
    }

    fn deriv(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Inputs and teacher features shared by the network objectives.
#[derive(Debug, Clone)]
pub struct NetData {
    feature_dim: usize,
    input_dim: usize,
    /// `n × l`, row-major.
    inputs: Vec<f64>,
    /// `n × k`, row-major: `h_{μ*}(z_s)`.
    teacher_features: Vec<f64>,
    activation: Activation,
}

impl NetData {
    /// `teacher` holds particles of dim `k + l`; `linear`, when given, is a
    /// row-major `k × k` map applied to the teacher features.
    pub fn new(
        feature_dim: usize,
        input_dim: usize,
        inputs: Vec<f64>,
        teacher: &ParticleEnsemble,
        linear: Option<&[f64]>,
        activation: Activation,
    ) -> Result<Self> {
        let (k, l) = (feature_dim, input_dim);
        if k == 0 || l == 0 {
            return Err(Error::InvalidInput("feature and input dims must be positive".into()));
        }
        if inputs.is_empty() || inputs.len() % l != 0 {
            return Err(Error::Shape(format!("inputs do not form rows of length {l}")));
        }
        if teacher.dim() != k + l {
            return Err(Error::Shape(format!(
                "teacher particles have dim {}, expected {}",
                teacher.dim(),
                k + l
            )));
        }
        let mut data = Self {
            feature_dim: k,
            input_dim: l,
            inputs,
            teacher_features: Vec::new(),
            activation,
        };
        let mut feats = data.features(teacher);
        if let Some(t) = linear {
            if t.len() != k * k {
                return Err(Error::Shape(format!("teacher linear map must be {k}x{k}")));
            }
            for row in feats.chunks_exact_mut(k) {
                let h = row.to_vec();
                for (a, out) in row.iter_mut().enumerate() {
                    *out = (0..k).map(|b| t[a * k + b] * h[b]).sum();
                }
            }
        }
        data.teacher_features = feats;
        Ok(data)
    }

    pub fn samples(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn teacher_features(&self) -> &[f64] {
        &self.teacher_features
    }

    fn input(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.input_dim..(s + 1) * self.input_dim]
    }

    fn preactivation(&self, theta: &[f64], s: usize) -> f64 {
        let w = &theta[self.feature_dim..];
        w.iter().zip(self.input(s)).map(|(a, b)| a * b).sum()
    }

    /// Student features `h_μ(z_s)`, `n × k` row-major.
    pub fn features(&self, mu: &ParticleEnsemble) -> Vec<f64> {
        let k = self.feature_dim;
        let n = self.samples();
        let inv_n = 1.0 / mu.count() as f64;
        let mut h = vec![0.0; n * k];
        for theta in mu.particles() {
            for s in 0..n {
                let act = self.activation.eval(self.preactivation(theta, s)) * inv_n;
                for (hs, a) in h[s * k..(s + 1) * k].iter_mut().zip(&theta[..k]) {
                    *hs += a * act;
                }
            }
        }
        h
    }

    /// Directional derivative of the features along the transport `Id + t v`.
    pub fn feature_derivative(&self, mu: &ParticleEnsemble, v: &TangentField) -> Vec<f64> {
        let k = self.feature_dim;
        let n = self.samples();
        let inv_n = 1.0 / mu.count() as f64;
        let mut dh = vec![0.0; n * k];
        for (j, theta) in mu.particles().enumerate() {
            let vj = v.at(j);
            for s in 0..n {
                let u = self.preactivation(theta, s);
                let act = self.activation.eval(u) * inv_n;
                let du: f64 = vj[k..].iter().zip(self.input(s)).map(|(a, b)| a * b).sum();
                let slope = self.activation.deriv(u) * du * inv_n;
                for (a, d) in dh[s * k..(s + 1) * k].iter_mut().enumerate() {
                    *d += vj[a] * act + theta[a] * slope;
                }
            }
        }
        dh
    }

    /// Wasserstein gradient from `∂F/∂h_μ(z_s)` (`n × k` row-major).
    pub fn pull_back(&self, mu: &ParticleEnsemble, dfdh: &[f64]) -> TangentField {
        let k = self.feature_dim;
        let n = self.samples();
        let mut g = mu.zero_field();
        for (j, theta) in mu.particles().enumerate() {
            let gj = g.at_mut(j);
            for s in 0..n {
                let u = self.preactivation(theta, s);
                let ds = &dfdh[s * k..(s + 1) * k];
                let act = self.activation.eval(u);
                for (ga, d) in gj[..k].iter_mut().zip(ds) {
                    *ga += act * d;
                }
                let coupling: f64 = ds.iter().zip(&theta[..k]).map(|(d, a)| d * a).sum();
                let scale = coupling * self.activation.deriv(u);
                if scale != 0.0 {
                    for (gw, z) in gj[k..].iter_mut().zip(self.input(s)) {
                        *gw += scale * z;
                    }
                }
            }
        }
        g
    }

    fn check(&self, kind: ObjectiveKind, mu: &ParticleEnsemble) -> Result<()> {
        let dim = self.feature_dim + self.input_dim;
        if mu.dim() != dim {
            return Err(Error::Shape(format!(
                "{} objective expects particles of dim {dim}, got {}",
                kind.name(),
                mu.dim()
            )));
        }
        Ok(())
    }
}

/// Objectives that depend on the ensemble only through its features.
pub trait FeatureNet {
    fn data(&self) -> &NetData;

    /// `∂F/∂h` at features `h`.
    fn feature_grad(&self, h: &[f64]) -> Result<Vec<f64>>;

    /// `(∂²F/∂h²) u`; central differences of [`FeatureNet::feature_grad`] unless overridden.
    fn feature_hvp(&self, h: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let umax = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if umax == 0.0 {
            return Ok(vec![0.0; h.len()]);
        }
        let hmax = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let t = 1e-5 * (1.0 + hmax) / umax;
        let plus: Vec<f64> = h.iter().zip(u).map(|(a, b)| a + t * b).collect();
        let minus: Vec<f64> = h.iter().zip(u).map(|(a, b)| a - t * b).collect();
        let gp = self.feature_grad(&plus)?;
        let gm = self.feature_grad(&minus)?;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * t)).collect())
    }

    fn net_grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        let data = self.data();
        let dfdh = self.feature_grad(&data.features(mu))?;
        Ok(data.pull_back(mu, &dfdh))
    }

    fn net_kernel_action(&self, mu: &ParticleEnsemble, v: &TangentField) -> Result<TangentField> {
        mu.check_field(v)?;
        let data = self.data();
        let dh = data.feature_derivative(mu, v);
        let curv = self.feature_hvp(&data.features(mu), &dh)?;
        Ok(data.pull_back(mu, &curv))
    }
}

/// `F(μ) = (1/n) Σ_s ‖h_μ h_μᵀ − h_{μ*} h_{μ*}ᵀ‖²_F` at the samples.
#[derive(Debug, Clone)]
pub struct MatrixDecomposition {
    data: NetData,
}

impl MatrixDecomposition {
    pub fn new(data: NetData) -> Self {
        Self { data }
    }
}

impl FeatureNet for MatrixDecomposition {
    fn data(&self) -> &NetData {
        &self.data
    }

    fn feature_grad(&self, h: &[f64]) -> Result<Vec<f64>> {
        let k = self.data.feature_dim;
        let scale = 4.0 / self.data.samples() as f64;
        let mut dfdh = vec![0.0; h.len()];
        for ((d, h), t) in dfdh
            .chunks_exact_mut(k)
            .zip(h.chunks_exact(k))
            .zip(self.data.teacher_features.chunks_exact(k))
        {
            let hh = dot(h, h);
            let ht = dot(h, t);
            for a in 0..k {
                d[a] = scale * (h[a] * hh - t[a] * ht);
            }
        }
        Ok(dfdh)
    }

    fn feature_hvp(&self, h: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let k = self.data.feature_dim;
        let scale = 4.0 / self.data.samples() as f64;
        let mut out = vec![0.0; h.len()];
        for (((o, h), u), t) in out
            .chunks_exact_mut(k)
            .zip(h.chunks_exact(k))
            .zip(u.chunks_exact(k))
            .zip(self.data.teacher_features.chunks_exact(k))
        {
            let (hh, hu, tu) = (dot(h, h), dot(h, u), dot(t, u));
            for a in 0..k {
                o[a] = scale * (u[a] * hh + 2.0 * h[a] * hu - t[a] * tu);
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Functional for MatrixDecomposition {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::MatrixDecomp
    }

    fn dim(&self) -> usize {
        self.data.feature_dim + self.data.input_dim
    }

    fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
        self.data.check(self.kind(), mu)?;
        let k = self.data.feature_dim;
        let h = self.data.features(mu);
        let total: f64 = h
            .chunks_exact(k)
            .zip(self.data.teacher_features.chunks_exact(k))
            .map(|(h, t)| {
                let hh = dot(h, h);
                let tt = dot(t, t);
                let ht = dot(h, t);
                hh * hh - 2.0 * ht * ht + tt * tt
            })
            .sum();
        Ok(total / self.data.samples() as f64)
    }

    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        self.data.check(self.kind(), mu)?;
        self.net_grad(mu)
    }

    fn kernel_action(&self, mu: &ParticleEnsemble, v: &TangentField) -> Result<TangentField> {
        self.data.check(self.kind(), mu)?;
        self.net_kernel_action(mu, v)
    }

    fn has_kernel_action(&self) -> bool {
        true
    }
}

/// In-context feature learning objective with the optimal linear head
/// eliminated:
/// `F(μ) = ½ Tr Σ_{*,*} − ½ Tr(Σ_{*,μ} Σ_{μ,μ}⁻¹ Σ_{μ,*})`.
///
/// The inverse is regularized as `(Σ_{μ,μ} + λ (Tr Σ_{μ,μ}/k) I)⁻¹`.
#[derive(Debug, Clone)]
pub struct IclObjective {
    data: NetData,
    ridge: f64,
    teacher_trace: f64,
}

struct IclState {
    /// `P Σ_{μ,*}`
    b: DMatrix<f64>,
    cross: DMatrix<f64>,
    h: Vec<f64>,
}

impl IclObjective {
    pub fn new(data: NetData, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) {
            return Err(Error::InvalidInput(format!("ridge must be non-negative, got {ridge}")));
        }
        let n = data.samples() as f64;
        let teacher_trace = data.teacher_features.iter().map(|x| x * x).sum::<f64>() / n;
        Ok(Self { data, ridge, teacher_trace })
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// `½ Tr Σ_{*,*}`, the value when student and teacher features are uncorrelated.
    pub fn baseline(&self) -> f64 {
        0.5 * self.teacher_trace
    }

    fn state(&self, h: Vec<f64>) -> Result<IclState> {
        let k = self.data.feature_dim;
        let n = self.data.samples();
        let hm = DMatrix::from_row_slice(n, k, &h);
        let tm = DMatrix::from_row_slice(n, k, &self.data.teacher_features);
        let inv_n = 1.0 / n as f64;
        let cov = hm.transpose() * &hm * inv_n;
        let cross = hm.transpose() * &tm * inv_n;
        let shift = self.ridge * cov.trace() / k as f64;
        let reg = &cov + DMatrix::identity(k, k) * shift;
        let chol = reg.cholesky().ok_or_else(|| {
            Error::Numeric(format!(
                "student feature covariance is singular (trace {:.3e}, ridge shift {:.3e})",
                cov.trace(),
                shift
            ))
        })?;
        let b = chol.solve(&cross);
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite solve against feature covariance".into()));
        }
        Ok(IclState { b, cross, h })
    }
}

impl FeatureNet for IclObjective {
    fn data(&self) -> &NetData {
        &self.data
    }

    fn feature_grad(&self, h: &[f64]) -> Result<Vec<f64>> {
        let k = self.data.feature_dim;
        let n = self.data.samples();
        let st = self.state(h.to_vec())?;
        let g = &st.b * st.b.transpose();
        let shift = self.ridge * g.trace() / k as f64;
        let g = g + DMatrix::identity(k, k) * shift;
        let inv_n = 1.0 / n as f64;
        let mut dfdh = vec![0.0; n * k];
        for s in 0..n {
            let h = DVector::from_column_slice(&st.h[s * k..(s + 1) * k]);
            let t = DVector::from_column_slice(&self.data.teacher_features[s * k..(s + 1) * k]);
            let d = (&g * h - &st.b * t) * inv_n;
            dfdh[s * k..(s + 1) * k].copy_from_slice(d.as_slice());
        }
        Ok(dfdh)
    }
}

impl Functional for IclObjective {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Icl
    }

    fn dim(&self) -> usize {
        self.data.feature_dim + self.data.input_dim
    }

    fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
        self.data.check(self.kind(), mu)?;
        let st = self.state(self.data.features(mu))?;
        let explained = (st.cross.transpose() * &st.b).trace();
        Ok(0.5 * self.teacher_trace - 0.5 * explained)
    }

    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        self.data.check(self.kind(), mu)?;
        self.net_grad(mu)
    }

    fn kernel_action(&self, mu: &ParticleEnsemble, v: &TangentField) -> Result<TangentField> {
        self.data.check(self.kind(), mu)?;
        self.net_kernel_action(mu, v)
    }

    fn has_kernel_action(&self) -> bool {
        true
    }
}
