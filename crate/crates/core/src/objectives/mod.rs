//! Functionals on empirical measures.
//!
//! Every objective exposes its value, its Wasserstein gradient at the atoms and,
//! when it has closed-form second-order structure, the per-particle Hessian
//! blocks. With `μ = (1/N) Σ δ_{x_i}` and `F_N(x_1..x_N) = F(μ)`:
//!
//! * `grad_i = N ∂F_N/∂x_i`
//! * `m_block(i)` is the multiplication part `∇∇_μF(μ, x_i)`
//! * `k_block(i, j)` is the kernel part `A[i,j] = ∇²_μF(μ, x_i, x_j)`
//!
//! so that `(Hv)_i = M_i v_i + (1/N) Σ_j A[i,j] v_j` and
//! `N ∂²F_N/∂x_i∂x_j = δ_ij M_i + A[i,j] / N`.

mod coulomb;
mod interaction;
mod network;
mod potential;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{ParticleEnsemble, TangentField};
use crate::rng::stream;

pub use coulomb::CoulombMmd;
pub use interaction::{Interaction, InteractionKernel};
pub use network::{Activation, FeatureNet, IclObjective, MatrixDecomposition, NetData};
pub use potential::{Potential, PotentialShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Potential,
    Interaction,
    CoulombMmd,
    MatrixDecomp,
    Icl,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Potential => "potential",
            ObjectiveKind::Interaction => "interaction",
            ObjectiveKind::CoulombMmd => "coulomb_mmd",
            ObjectiveKind::MatrixDecomp => "matrix_decomp",
            ObjectiveKind::Icl => "icl",
        }
    }

    /// Kinds whose Hessian blocks are available in closed form.
    pub fn is_analytic(self) -> bool {
        matches!(self, ObjectiveKind::Potential | ObjectiveKind::Interaction | ObjectiveKind::CoulombMmd)
    }
}

/// A functional `F` on uniform empirical measures.
pub trait Functional: Send + Sync {
    fn kind(&self) -> ObjectiveKind;

    /// Dimension of a single particle.
    fn dim(&self) -> usize;

    fn value(&self, mu: &ParticleEnsemble) -> Result<f64>;

    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField>;

    fn m_block(&self, _mu: &ParticleEnsemble, _i: usize) -> Result<DMatrix<f64>> {
        Err(no_blocks(self.kind()))
    }

    fn k_block(&self, _mu: &ParticleEnsemble, _i: usize, _j: usize) -> Result<DMatrix<f64>> {
        Err(no_blocks(self.kind()))
    }

    fn has_blocks(&self) -> bool {
        self.kind().is_analytic()
    }

    /// `false` when the kernel part is identically zero.
    fn has_kernel(&self) -> bool {
        self.has_blocks()
    }

    /// `(1/N) Σ_j A[i,j] v_j` without assembling blocks, for objectives whose
    /// kernel factors through a low-dimensional feature map.
    fn kernel_action(&self, _mu: &ParticleEnsemble, _v: &TangentField) -> Result<TangentField> {
        Err(no_blocks(self.kind()))
    }

    fn has_kernel_action(&self) -> bool {
        false
    }

    fn check(&self, mu: &ParticleEnsemble) -> Result<()> {
        if mu.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "{} objective expects particles of dim {}, got {}",
                self.kind().name(),
                self.dim(),
                mu.dim()
            )));
        }
        Ok(())
    }
}

pub(crate) fn no_blocks(kind: ObjectiveKind) -> Error {
    Error::Capability(format!(
        "{} objective has no closed-form Hessian blocks; use the finite-difference transport HVP",
        kind.name()
    ))
}

pub(crate) fn check_index(mu: &ParticleEnsemble, idx: &[usize]) -> Result<()> {
    match idx.iter().find(|&&i| i >= mu.count()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "particle index {i} out of range for {} particles",
            mu.count()
        ))),
        None => Ok(()),
    }
}

/// Any of the concrete objectives.
#[derive(Debug, Clone)]
pub enum Objective {
    Potential(Potential),
    Interaction(Interaction),
    CoulombMmd(CoulombMmd),
    MatrixDecomp(MatrixDecomposition),
    Icl(IclObjective),
}

macro_rules! dispatch {
    ($self:ident, $inner:ident => $body:expr) => {
        match $self {
            Objective::Potential($inner) => $body,
            Objective::Interaction($inner) => $body,
            Objective::CoulombMmd($inner) => $body,
            Objective::MatrixDecomp($inner) => $body,
            Objective::Icl($inner) => $body,
        }
    };
}

impl Functional for Objective {
    fn kind(&self) -> ObjectiveKind {
        dispatch!(self, o => o.kind())
    }
    fn dim(&self) -> usize {
        dispatch!(self, o => o.dim())
    }
    fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
        dispatch!(self, o => o.value(mu))
    }
    fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
        dispatch!(self, o => o.grad(mu))
    }
    fn m_block(&self, mu: &ParticleEnsemble, i: usize) -> Result<DMatrix<f64>> {
        dispatch!(self, o => o.m_block(mu, i))
    }
    fn k_block(&self, mu: &ParticleEnsemble, i: usize, j: usize) -> Result<DMatrix<f64>> {
        dispatch!(self, o => o.k_block(mu, i, j))
    }
    fn has_blocks(&self) -> bool {
        dispatch!(self, o => o.has_blocks())
    }
    fn has_kernel(&self) -> bool {
        dispatch!(self, o => o.has_kernel())
    }
    fn kernel_action(&self, mu: &ParticleEnsemble, v: &TangentField) -> Result<TangentField> {
        dispatch!(self, o => o.kernel_action(mu, v))
    }
    fn has_kernel_action(&self) -> bool {
        dispatch!(self, o => o.has_kernel_action())
    }
}

/// Structured description of an objective, as found in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Potential {
        #[serde(flatten)]
        shape: PotentialShape,
    },
    Interaction {
        dim: usize,
        kernel: InteractionKernel,
    },
    CoulombMmd(CoulombSpec),
    MatrixDecomp(NetSpec),
    Icl(NetSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoulombSpec {
    pub dim: usize,
    /// Mixture modes; samples cycle through them so the mixture stays balanced.
    pub modes: Vec<Vec<f64>>,
    pub noise: f64,
    pub target_samples: usize,
    pub eps_ker: f64,
    pub seed: u64,
    /// Load target samples from an ensemble CSV instead of sampling the mixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub samples: usize,
    pub teacher_count: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
    /// Relative ridge for the ICL covariance inverse.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Standard deviation of teacher weights; `1/√(k+l)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_scale: Option<f64>,
}

pub fn default_ridge() -> f64 {
    1e-6
}

const TARGET_STREAM: u64 = 0x7a11;
const INPUT_STREAM: u64 = 0x1a9;
const TEACHER_STREAM: u64 = 0x7eac;
const LINEAR_STREAM: u64 = 0x11a7;

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidInput(format!("{what} must be positive")));
    }
    Ok(())
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Build an objective from its description. Randomized data is drawn from
/// seed streams recorded in the spec, so equal specs give identical handles.
pub fn make_objective(spec: &ObjectiveSpec) -> Result<Objective> {
    match spec {
        ObjectiveSpec::Potential { shape } => Ok(Objective::Potential(Potential::new(shape.clone())?)),
        ObjectiveSpec::Interaction { dim, kernel } => {
            Ok(Objective::Interaction(Interaction::new(*dim, kernel.clone())?))
        }
        ObjectiveSpec::CoulombMmd(c) => {
            if c.dim < 3 {
                return Err(Error::InvalidInput(format!(
                    "coulomb_mmd requires dim >= 3 (got {})",
                    c.dim
                )));
            }
            let targets = match &c.target_csv {
                Some(path) => crate::measure::read_ensemble(path)?,
                None => {
                    positive("target_samples", c.target_samples)?;
                    if c.modes.is_empty() {
                        return Err(Error::InvalidInput("coulomb_mmd needs at least one mode".into()));
                    }
                    if let Some(m) = c.modes.iter().find(|m| m.len() != c.dim) {
                        return Err(Error::Shape(format!(
                            "mode {m:?} does not have dim {}",
                            c.dim
                        )));
                    }
                    let mut rng = stream(c.seed, TARGET_STREAM);
                    let mut pos = Vec::with_capacity(c.target_samples * c.dim);
                    for s in 0..c.target_samples {
                        let mode = &c.modes[s % c.modes.len()];
                        for m in mode {
                            pos.push(m + c.noise * rng.sample::<f64, _>(StandardNormal));
                        }
                    }
                    ParticleEnsemble::new(c.target_samples, c.dim, pos)?
                }
            };
            Ok(Objective::CoulombMmd(CoulombMmd::new(targets, c.eps_ker)?))
        }
        ObjectiveSpec::MatrixDecomp(n) => {
            let data = net_data(n, false)?;
            Ok(Objective::MatrixDecomp(MatrixDecomposition::new(data)))
        }
        ObjectiveSpec::Icl(n) => {
            let data = net_data(n, true)?;
            Ok(Objective::Icl(IclObjective::new(data, n.ridge)?))
        }
    }
}

fn net_data(n: &NetSpec, with_linear: bool) -> Result<NetData> {
    positive("input_dim", n.input_dim)?;
    positive("feature_dim", n.feature_dim)?;
    positive("samples", n.samples)?;
    positive("teacher_count", n.teacher_count)?;
    let (k, l) = (n.feature_dim, n.input_dim);
    let scale = n.teacher_scale.unwrap_or(1.0 / ((k + l) as f64).sqrt());
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!("teacher_scale must be positive, got {scale}")));
    }
    let inputs = normal_matrix(n.samples, l, 1.0, &mut stream(n.seed, INPUT_STREAM));
    let teacher = normal_matrix(
        n.teacher_count,
        k + l,
        scale,
        &mut stream(n.seed, TEACHER_STREAM),
    );
    let teacher = ParticleEnsemble::new(n.teacher_count, k + l, teacher)?;
    let linear = with_linear
        .then(|| normal_matrix(k, k, 1.0 / (k as f64).sqrt(), &mut stream(n.seed, LINEAR_STREAM)));
    NetData::new(k, l, inputs, &teacher, linear.as_deref(), n.activation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coulomb_spec() -> CoulombSpec {
        CoulombSpec {
            dim: 3,
            modes: vec![vec![2.0, 0.0, 0.0], vec![-2.0, 0.0, 0.0]],
            noise: 0.25,
            target_samples: 400,
            eps_ker: 5e-2,
            seed: 3,
            target_csv: None,
        }
    }

    #[test]
    fn make_is_deterministic() {
        let spec = ObjectiveSpec::CoulombMmd(coulomb_spec());
        let a = make_objective(&spec).unwrap();
        let b = make_objective(&spec).unwrap();
        match (a, b) {
            (Objective::CoulombMmd(a), Objective::CoulombMmd(b)) => {
                assert_eq!(a.targets(), b.targets());
                assert_eq!(a.targets().count(), 400);
            }
            _ => unreachable!(),
        }
        let icl = ObjectiveSpec::Icl(NetSpec {
            input_dim: 15,
            feature_dim: 5,
            samples: 300,
            teacher_count: 4,
            activation: Activation::Tanh,
            seed: 9,
            ridge: 1e-6,
            teacher_scale: None,
        });
        let a = make_objective(&icl).unwrap();
        assert_eq!(a.dim(), 20);
        assert_eq!(a.kind(), ObjectiveKind::Icl);
    }

    #[test]
    fn make_rejects_bad_specs() {
        let mut c = coulomb_spec();
        c.dim = 2;
        c.modes = vec![vec![1.0, 0.0]];
        assert!(matches!(make_objective(&ObjectiveSpec::CoulombMmd(c)), Err(Error::InvalidInput(_))));
        let net = NetSpec {
            input_dim: 0,
            feature_dim: 5,
            samples: 3,
            teacher_count: 1,
            activation: Activation::Tanh,
            seed: 0,
            ridge: 1e-6,
            teacher_scale: Some(1.0),
        };
        assert!(make_objective(&ObjectiveSpec::MatrixDecomp(net)).is_err());
        let bad: std::result::Result<ObjectiveSpec, _> =
            serde_json::from_str(r#"{"kind":"entropy","dim":2}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec: ObjectiveSpec = serde_json::from_str(
            r#"{"kind":"potential","shape":"quadratic","center":[0.0,0.0]}"#,
        )
        .unwrap();
        let obj = make_objective(&spec).unwrap();
        let mu = ParticleEnsemble::new(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(obj.grad(&mu).unwrap().as_slice(), mu.as_slice());
    }
}
