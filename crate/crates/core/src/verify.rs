//! Property suite: every derived check at pinned seeds and sizes.
//!
//! Each check compares an implementation route against an independent oracle
//! (finite differences, dense eigendecomposition, Monte-Carlo moments, closed
//! forms) and reports the measured discrepancy next to its tolerance.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{estimate_constants, HessianOperator, HvpMode, DEFAULT_FD_STEP};
use crate::measure::{l2_inner, push, ParticleEnsemble, TangentField};
use crate::objectives::{
    make_objective, Activation, CoulombMmd, Functional, Interaction, InteractionKernel, NetSpec, Objective,
    ObjectiveSpec, Potential, PotentialShape,
};
use crate::optimize::{lm_direction, newton_direction, step_newton, step_wgf, step_wsfn, wsfn_direction, WsfnParams};
use crate::perturb::{sample_gp, sample_isotropic};
use crate::rng::{stream, Rng};
use crate::spectral;

pub const DEFAULT_SEED: u64 = 20;

/// Relative step of the centered gradient oracle.
pub const GRAD_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        }
    }
}

/// Direction of the comparison `measured <op> tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Bound {
    pub fn symbol(self) -> &'static str {
        match self {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub status: Status,
    /// `null` in JSON when the check errored before producing a value.
    pub measured: Option<f64>,
    pub bound: Bound,
    pub tolerance: f64,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub overall: Status,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.overall == Status::Pass
    }

    pub fn row(&self, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:<7}  {:>12}     {:<12}  detail", "check", "status", "measured", "tolerance");
        for r in &self.rows {
            let measured = r.measured.map_or_else(|| "-".to_string(), |m| format!("{m:.4e}"));
            let _ = writeln!(
                out,
                "{:<width$}  {:<7}  {:>12}  {}  {:<12.4e}  {}",
                r.name,
                r.status.name(),
                measured,
                r.bound.symbol(),
                r.tolerance,
                r.detail
            );
        }
        let failed = self.rows.iter().filter(|r| r.status == Status::Fail).count();
        let _ = writeln!(out, "overall: {} ({} checks, {failed} failed, seed {})", self.overall.name(), self.rows.len(), self.seed);
        out
    }
}

struct Outcome {
    measured: f64,
    detail: String,
}

fn outcome(measured: f64, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { measured, detail: detail.into() })
}

type CheckFn = fn(u64) -> Result<Outcome>;

struct Check {
    name: &'static str,
    bound: Bound,
    tolerance: f64,
    run: CheckFn,
}

const CHECKS: &[Check] = &[
    Check { name: "descent_lemma", bound: Bound::AtLeast, tolerance: -1e-10, run: descent_lemma },
    Check { name: "gp_covariance", bound: Bound::AtMost, tolerance: 1.0, run: gp_covariance },
    Check { name: "gp_norm_law", bound: Bound::AtMost, tolerance: 0.02, run: gp_norm_law },
    Check { name: "gp_zero_kernel", bound: Bound::AtMost, tolerance: 0.0, run: gp_zero_kernel },
    Check { name: "grad_fd", bound: Bound::AtMost, tolerance: 1e-5, run: grad_fd },
    Check { name: "hessian_dense_matvec", bound: Bound::AtMost, tolerance: 1e-12, run: hessian_dense_matvec },
    Check { name: "hessian_fd_transport", bound: Bound::AtMost, tolerance: 1e-4, run: hessian_fd_transport },
    Check { name: "hessian_second_order", bound: Bound::AtLeast, tolerance: 6.0, run: hessian_second_order },
    Check { name: "hessian_symmetry", bound: Bound::AtMost, tolerance: 1e-10, run: hessian_symmetry },
    Check { name: "hessian_symmetry_fd", bound: Bound::AtMost, tolerance: 1e-5, run: hessian_symmetry_fd },
    Check { name: "lanczos_eigenvector", bound: Bound::AtMost, tolerance: 1e-8, run: lanczos_eigenvector },
    Check { name: "lanczos_monotone", bound: Bound::AtMost, tolerance: 0.0, run: lanczos_monotone },
    Check { name: "lanczos_oracle", bound: Bound::AtMost, tolerance: 1e-8, run: lanczos_oracle },
    Check { name: "lanczos_positive", bound: Bound::AtLeast, tolerance: -1e-8, run: lanczos_positive },
    Check { name: "lm_limits", bound: Bound::AtMost, tolerance: 1.0, run: lm_limits },
    Check { name: "multipliers", bound: Bound::AtMost, tolerance: 1e-8, run: multipliers },
    Check { name: "rate_newton", bound: Bound::AtMost, tolerance: 1e-10, run: rate_newton },
    Check { name: "rate_quartic", bound: Bound::AtMost, tolerance: 1.0, run: rate_quartic },
    Check { name: "rate_wsfn", bound: Bound::AtMost, tolerance: 1e-12, run: rate_wsfn },
    Check { name: "wgf_monotone", bound: Bound::AtLeast, tolerance: -1e-14, run: wgf_monotone },
    Check { name: "wsfn_full_depth", bound: Bound::AtMost, tolerance: 1e-8, run: wsfn_full_depth },
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

fn evaluate(check: &Check, seed: u64) -> CheckRow {
    let (status, measured, detail) = match (check.run)(seed) {
        Ok(o) => {
            let ok = match check.bound {
                Bound::AtMost => o.measured <= check.tolerance,
                Bound::AtLeast => o.measured >= check.tolerance,
            };
            (if ok { Status::Pass } else { Status::Fail }, Some(o.measured), o.detail)
        }
        Err(e) => (Status::Fail, None, format!("error: {e}")),
    };
    CheckRow {
        name: check.name.to_string(),
        status,
        measured: measured.filter(|m| m.is_finite()),
        bound: check.bound,
        tolerance: check.tolerance,
        seed,
        detail,
    }
}

/// Runs the selected checks (all when `selection` is `None`) in parallel and
/// orders rows by name.
pub fn run_property_suite(selection: Option<&[String]>, seed: u64) -> Result<CheckReport> {
    let chosen: Vec<&Check> = match selection {
        None => CHECKS.iter().collect(),
        Some(names) => {
            let mut out = Vec::new();
            for n in names {
                let c = CHECKS.iter().find(|c| c.name == n.as_str()).ok_or_else(|| {
                    Error::InvalidInput(format!("unknown check {n:?}; known checks: {}", check_names().join(", ")))
                })?;
                if !out.iter().any(|o: &&Check| o.name == c.name) {
                    out.push(c);
                }
            }
            out
        }
    };
    let mut rows: Vec<CheckRow> = std::thread::scope(|s| {
        let handles: Vec<_> = chosen.iter().map(|c| s.spawn(move || evaluate(c, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("check thread panicked")).collect()
    });
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    let overall = if rows.iter().any(|r| r.status == Status::Fail) { Status::Fail } else { Status::Pass };
    Ok(CheckReport { seed, overall, rows })
}

// ---------------------------------------------------------------- instances

fn gaussian_ensemble(n: usize, d: usize, scale: f64, rng: &mut Rng) -> ParticleEnsemble {
    let pos = (0..n * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    ParticleEnsemble::new(n, d, pos).expect("positive sizes")
}

fn gaussian_field(n: usize, d: usize, rng: &mut Rng) -> TangentField {
    sample_isotropic(n, d, rng).expect("positive sizes")
}

fn bimodal_targets(count: usize, rng: &mut Rng) -> ParticleEnsemble {
    let mut pos = Vec::with_capacity(count * 3);
    for s in 0..count {
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        pos.push(2.0 * sign + 0.25 * rng.sample::<f64, _>(StandardNormal));
        pos.push(0.25 * rng.sample::<f64, _>(StandardNormal));
        pos.push(0.25 * rng.sample::<f64, _>(StandardNormal));
    }
    ParticleEnsemble::new(count, 3, pos).expect("positive sizes")
}

fn small_net(icl: bool, seed: u64) -> Result<Objective> {
    let spec = NetSpec {
        input_dim: 3,
        feature_dim: 2,
        samples: 20,
        teacher_count: 2,
        activation: Activation::Tanh,
        seed,
        ridge: 1e-6,
        teacher_scale: Some(1.0),
    };
    make_objective(&if icl { ObjectiveSpec::Icl(spec) } else { ObjectiveSpec::MatrixDecomp(spec) })
}

fn tilted_quadratic() -> Potential {
    Potential::new(PotentialShape::Quadratic {
        center: vec![1.0, -0.5],
        curvature: Some(vec![vec![2.0, 0.5], vec![0.5, 1.0]]),
    })
    .expect("symmetric curvature")
}

fn repulsive_gaussian(dim: usize) -> Interaction {
    Interaction::new(dim, InteractionKernel::Gaussian { amplitude: 1.0, width: 1.0 }).expect("valid kernel")
}

/// The five objective kinds at desk sizes, with a particle dimension each.
fn all_kinds(seed: u64) -> Result<Vec<(&'static str, Objective)>> {
    let mut rng = stream(seed, 0x7a);
    Ok(vec![
        ("potential", Objective::Potential(Potential::quartic(&[0.3, -0.2]))),
        ("interaction", Objective::Interaction(repulsive_gaussian(2))),
        ("coulomb_mmd", Objective::CoulombMmd(CoulombMmd::new(bimodal_targets(20, &mut rng), 5e-2)?)),
        ("matrix_decomp", small_net(false, seed)?),
        ("icl", small_net(true, seed)?),
    ])
}

// ------------------------------------------------------------------ oracles

/// Centered differences of `N F_N` with relative step `rel` per coordinate.
pub fn fd_gradient(obj: &dyn Functional, mu: &ParticleEnsemble, rel: f64) -> Result<TangentField> {
    let n = mu.count();
    let mut pos = mu.as_slice().to_vec();
    let mut out = vec![0.0; pos.len()];
    for k in 0..pos.len() {
        let x = pos[k];
        let h = rel * x.abs().max(1.0);
        pos[k] = x + h;
        let up = obj.value(&ParticleEnsemble::new(n, mu.dim(), pos.clone())?)?;
        pos[k] = x - h;
        let down = obj.value(&ParticleEnsemble::new(n, mu.dim(), pos.clone())?)?;
        pos[k] = x;
        out[k] = n as f64 * (up - down) / (2.0 * h);
    }
    TangentField::new(n, mu.dim(), out)
}

/// `‖g − g_fd‖∞ / ‖g_fd‖∞`
pub fn grad_fd_error(obj: &dyn Functional, mu: &ParticleEnsemble) -> Result<f64> {
    let g = obj.grad(mu)?;
    let fd = fd_gradient(obj, mu, GRAD_FD_STEP)?;
    let diff = g.as_slice().iter().zip(fd.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(diff / fd.max_abs().max(f64::MIN_POSITIVE))
}

/// Worst normwise relative gradient error over `seeds` random ensembles of 10 particles.
pub fn grad_fd_worst(obj: &dyn Functional, seed: u64, seeds: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let mu = gaussian_ensemble(10, obj.dim(), 1.0, &mut stream(seed, 0x9d0 + s));
        worst = worst.max(grad_fd_error(obj, &mu)?);
    }
    Ok(worst)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn flat_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A` as an `Nd × Nd` matrix straight from `k_block`.
fn kernel_matrix(obj: &dyn Functional, mu: &ParticleEnsemble) -> Result<DMatrix<f64>> {
    let (n, d) = (mu.count(), mu.dim());
    let mut a = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let b = obj.k_block(mu, i, j)?;
            a.view_mut((i * d, j * d), (d, d)).copy_from(&b);
        }
    }
    Ok(a)
}

fn random_symmetric(dim: usize, rng: &mut Rng) -> DMatrix<f64> {
    let x = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&x + x.transpose()) / (2.0 * (dim as f64).sqrt())
}

/// `Q diag(λ) Qᵀ` with a random orthogonal `Q` and the given spectrum.
fn with_spectrum(spectrum: &[f64], rng: &mut Rng) -> DMatrix<f64> {
    let n = spectrum.len();
    let x = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = x.qr().q();
    &q * DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)) * q.transpose()
}

fn random_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

// ------------------------------------------------------------------- checks

fn grad_fd(seed: u64) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, obj) in all_kinds(seed)? {
        let e = grad_fd_worst(&obj, seed, 5)?;
        parts.push(format!("{name} {e:.1e}"));
        worst = worst.max(e);
    }
    outcome(worst, format!("max relative error over 5 seeds, N=10: {}", parts.join(", ")))
}

fn analytic_instances(seed: u64) -> Result<Vec<(&'static str, Objective, ParticleEnsemble)>> {
    let mut rng = stream(seed, 0x4e5);
    let targets = bimodal_targets(20, &mut rng);
    Ok(vec![
        ("potential", Objective::Potential(Potential::quartic(&[0.3, -0.2])), gaussian_ensemble(10, 2, 1.0, &mut rng)),
        ("interaction", Objective::Interaction(repulsive_gaussian(2)), gaussian_ensemble(10, 2, 1.0, &mut rng)),
        (
            "coulomb_mmd",
            Objective::CoulombMmd(CoulombMmd::new(targets, 1e-3)?),
            gaussian_ensemble(10, 3, 1.0, &mut rng),
        ),
    ])
}

fn hessian_symmetry(seed: u64) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (_, obj, mu) in analytic_instances(seed)? {
        let op = HessianOperator::new(&obj, &mu, HvpMode::ExactBlocks)?;
        let mut rng = stream(seed, 0x5e1);
        for _ in 0..5 {
            let v = gaussian_field(mu.count(), mu.dim(), &mut rng);
            let w = gaussian_field(mu.count(), mu.dim(), &mut rng);
            let hv = op.hvp(&v)?;
            let hw = op.hvp(&w)?;
            let gap = (l2_inner(&hv, &w)? - l2_inner(&v, &hw)?).abs();
            worst = worst.max(gap / (1.0 + v.norm() * w.norm()));
        }
    }
    outcome(worst, "|<Hv,w> - <v,Hw>| / (1 + |v||w|), exact blocks, 3 analytic kinds")
}

fn hessian_symmetry_fd(seed: u64) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut rng = stream(seed, 0x5e2);
    for (_, obj) in all_kinds(seed)? {
        let mu = gaussian_ensemble(6, obj.dim(), 1.0, &mut rng);
        let op = HessianOperator::new(&obj, &mu, HvpMode::FdTransport { step: DEFAULT_FD_STEP })?;
        let v = gaussian_field(mu.count(), mu.dim(), &mut rng);
        let w = gaussian_field(mu.count(), mu.dim(), &mut rng);
        let gap = (l2_inner(&op.hvp(&v)?, &w)? - l2_inner(&v, &op.hvp(&w)?)?).abs();
        worst = worst.max(gap / (1.0 + v.norm() * w.norm()));
    }
    outcome(worst, "finite-difference transport HVP, all five kinds")
}

fn hessian_dense_matvec(seed: u64) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (_, obj, mu) in analytic_instances(seed)? {
        let op = HessianOperator::new(&obj, &mu, HvpMode::ExactBlocks)?;
        let dense = op.assemble_dense()?;
        let v = random_vec(op.flat_dim(), &mut stream(seed, 0xde5));
        let by_matrix = &dense * DVector::from_column_slice(&v);
        let by_hvp = op.apply_flat(&v)?;
        worst = worst.max(max_abs_diff(by_matrix.as_slice(), &by_hvp) / inf_norm(&by_hvp).max(1.0));
    }
    outcome(worst, "dense assembly times v against block HVP")
}

fn hessian_fd_transport(seed: u64) -> Result<Outcome> {
    let mut rng = stream(seed, 0xfd7);
    let obj = CoulombMmd::new(bimodal_targets(20, &mut rng), 5e-2)?;
    let mu = gaussian_ensemble(10, 3, 1.0, &mut rng);
    let exact = HessianOperator::new(&obj, &mu, HvpMode::ExactBlocks)?;
    let fd = HessianOperator::new(&obj, &mu, HvpMode::FdTransport { step: DEFAULT_FD_STEP })?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let v = gaussian_field(10, 3, &mut rng);
        let a = exact.hvp(&v)?;
        let b = fd.hvp(&v)?;
        worst = worst.max(max_abs_diff(a.as_slice(), b.as_slice()) / a.max_abs().max(1.0));
    }
    outcome(worst, "coulomb_mmd N=10 d=3, relative to |Hv|")
}

fn hessian_second_order(seed: u64) -> Result<Outcome> {
    let t = 2e-2;
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for (name, obj, mu) in analytic_instances(seed)? {
        let mut rng = stream(seed, 0x2e0);
        let v = gaussian_field(mu.count(), mu.dim(), &mut rng);
        let f0 = obj.value(&mu)?;
        let slope = l2_inner(&obj.grad(&mu)?, &v)?;
        let curv = l2_inner(&HessianOperator::new(&obj, &mu, HvpMode::ExactBlocks)?.hvp(&v)?, &v)?;
        let remainder = |s: f64| -> Result<f64> {
            Ok((obj.value(&push(&mu, &v, s)?)? - f0 - s * slope - 0.5 * s * s * curv).abs())
        };
        let ratio = remainder(t)? / remainder(t / 2.0)?;
        parts.push(format!("{name} {ratio:.2}"));
        worst = worst.min(ratio);
    }
    outcome(worst, format!("remainder(t)/remainder(t/2) at t={t}: {}", parts.join(", ")))
}

/// The two-particle instance used for the GP moment checks.
fn gp_instance() -> (Interaction, ParticleEnsemble) {
    (repulsive_gaussian(2), ParticleEnsemble::new(2, 2, vec![0.0, 0.0, 0.8, -0.4]).expect("fixed"))
}

const GP_SAMPLES: usize = 100_000;

fn gp_covariance(seed: u64) -> Result<Outcome> {
    let (obj, mu) = gp_instance();
    let n = mu.count() as f64;
    let a = kernel_matrix(&obj, &mu)?;
    let expected = &a * a.transpose() / n;
    let dim = expected.nrows();
    let mut rng = stream(seed, 0x6c0);
    let mut sum = DMatrix::<f64>::zeros(dim, dim);
    let mut sum_sq = DMatrix::<f64>::zeros(dim, dim);
    for _ in 0..GP_SAMPLES {
        let xi = sample_gp(&obj, &mu, &mut rng)?;
        let x = xi.as_slice();
        for r in 0..dim {
            for c in 0..dim {
                let p = x[r] * x[c];
                sum[(r, c)] += p;
                sum_sq[(r, c)] += p * p;
            }
        }
    }
    let s = GP_SAMPLES as f64;
    // worst entry as a fraction of its allowance max(5% relative, 3 SE)
    let mut worst = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            let mean = sum[(r, c)] / s;
            let var = (sum_sq[(r, c)] / s - mean * mean).max(0.0);
            let se = (var / s).sqrt();
            let allowance = (0.05 * expected[(r, c)].abs()).max(3.0 * se);
            worst = worst.max((mean - expected[(r, c)]).abs() / allowance);
        }
    }
    outcome(worst, format!("{GP_SAMPLES} samples; worst deviation / max(5% rel, 3 SE) against (1/N) A Aᵀ"))
}

fn gp_norm_law(seed: u64) -> Result<Outcome> {
    let (obj, mu) = gp_instance();
    let n = mu.count() as f64;
    let expected = kernel_matrix(&obj, &mu)?.norm_squared() / (n * n);
    let mut rng = stream(seed, 0x6c1);
    let mut acc = 0.0;
    for _ in 0..GP_SAMPLES {
        acc += sample_gp(&obj, &mu, &mut rng)?.norm().powi(2);
    }
    let mean = acc / GP_SAMPLES as f64;
    outcome((mean - expected).abs() / expected, format!("E|xi|^2 = {mean:.5} vs (1/N^2) sum |A_ij|_F^2 = {expected:.5}"))
}

fn gp_zero_kernel(seed: u64) -> Result<Outcome> {
    let obj = tilted_quadratic();
    let mu = gaussian_ensemble(5, 2, 1.0, &mut stream(seed, 0x6c2));
    let xi = sample_gp(&obj, &mu, &mut stream(seed, 0x6c3))?;
    outcome(xi.max_abs(), "potential energy has no kernel part, so its GP noise vanishes")
}

fn lanczos_oracle(seed: u64) -> Result<Outcome> {
    let mut rng = stream(seed, 0x1a0);
    let mut worst = 0.0f64;
    for dim in [4, 8, 16, 32, 64] {
        for beta in [1e-2, 1.0] {
            let h = random_symmetric(dim, &mut rng);
            let v = random_vec(dim, &mut rng);
            let approx = spectral::lanczos_apply_inv_sqrt(|x| Ok((&h * DVector::from_column_slice(x)).as_slice().to_vec()), &v, beta, dim)?;
            let exact = spectral::dense_inv_sqrt(&h, &v, beta)?;
            worst = worst.max(max_abs_diff(&approx, &exact) / inf_norm(&exact));
        }
    }
    outcome(worst, "full-depth Lanczos against dense eigendecomposition, dims 4..64")
}

fn lanczos_monotone(seed: u64) -> Result<Outcome> {
    let mut rng = stream(seed, 0x1a1);
    let beta = 0.5;
    let dim = 48;
    // worst increase of the error between consecutive depths, relative to the oracle norm
    let mut worst = 0.0f64;
    let mut errors_seen = Vec::new();
    for _ in 0..3 {
        let spectrum: Vec<f64> = (0..dim)
            .map(|k| {
                let mag = 1.0 + 2.0 * k as f64 / (dim - 1) as f64;
                if k % 2 == 0 { mag } else { -mag }
            })
            .collect();
        let h = with_spectrum(&spectrum, &mut rng);
        let v = random_vec(dim, &mut rng);
        let exact = spectral::dense_inv_sqrt(&h, &v, beta)?;
        let scale = inf_norm(&exact);
        let mut prev = f64::INFINITY;
        let mut errs = Vec::new();
        for m in [2, 4, 8, dim] {
            let approx = spectral::lanczos_apply_inv_sqrt(|x| Ok((&h * DVector::from_column_slice(x)).as_slice().to_vec()), &v, beta, m)?;
            let e = max_abs_diff(&approx, &exact) / scale;
            // errors at round-off level are not ordered
            if e > 1e-13 && prev.is_finite() {
                worst = worst.max(e - prev);
            }
            prev = e;
            errs.push(format!("{e:.1e}"));
        }
        errors_seen.push(errs.join("/"));
    }
    outcome(worst, format!("largest error increase over m in {{2,4,8,{dim}}}: {}", errors_seen.join("; ")))
}

fn lanczos_eigenvector(seed: u64) -> Result<Outcome> {
    let mut rng = stream(seed, 0x1a2);
    let h = random_symmetric(24, &mut rng);
    let (vals, vecs) = spectral::dense_eigen(&h)?;
    let beta = 0.1;
    let mut worst = 0.0f64;
    for k in [0, 5, 12, 23] {
        let e = vecs.column(k).as_slice().to_vec();
        let out = spectral::lanczos_apply_inv_sqrt(|x| Ok((&h * DVector::from_column_slice(x)).as_slice().to_vec()), &e, beta, 3)?;
        let want: Vec<f64> = e.iter().map(|x| x * spectral::inv_sqrt_weight(vals[k], beta)).collect();
        worst = worst.max(max_abs_diff(&out, &want));
    }
    outcome(worst, "eigenvector e maps to e/sqrt(lambda^2+beta) at depth 3, both signs of lambda")
}

fn lanczos_positive(seed: u64) -> Result<Outcome> {
    let mut rng = stream(seed, 0x1a3);
    let beta = 0.1;
    let mut worst = f64::INFINITY;
    for m in [1, 3, 8, 20] {
        let h = random_symmetric(20, &mut rng);
        let v = random_vec(20, &mut rng);
        let state = spectral::lanczos(|x| Ok((&h * DVector::from_column_slice(x)).as_slice().to_vec()), &v, m)?;
        let h_est = state.ritz_values().iter().fold(0.0f64, |a, l| a.max(l.abs()));
        let fv = state.apply_function(|l| spectral::inv_sqrt_weight(l, beta));
        let vv = flat_dot(&v, &v);
        worst = worst.min(flat_dot(&v, &fv) - vv / (h_est * h_est + beta).sqrt());
    }
    outcome(worst, "<v, f(H)v> - |v|^2 / sqrt(|H|_est^2 + beta), depths 1..20")
}

fn descent_lemma(seed: u64) -> Result<Outcome> {
    let obj = Potential::new(PotentialShape::Quadratic {
        center: vec![0.5, -1.0],
        curvature: Some(vec![vec![0.5, 0.0], vec![0.0, 2.0]]),
    })?;
    let beta: f64 = 0.04;
    let mut mu = gaussian_ensemble(8, 2, 2.0, &mut stream(seed, 0xde1));
    let c_h = estimate_constants(&obj, &mu)?.c_h();
    let tau = beta.sqrt() / c_h;
    let params = WsfnParams { tau, beta, lanczos_m: 16, hvp: HvpMode::ExactBlocks };
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let g = obj.grad(&mu)?;
        let dir = wsfn_direction(&obj, &mu, &g, beta, params.lanczos_m, params.hvp)?;
        let next = step_wsfn(&obj, &mu, &params)?;
        let slack = obj.value(&mu)? - obj.value(&next)? - 0.5 * tau * beta.sqrt() * dir.norm().powi(2);
        worst = worst.min(slack);
        mu = next;
    }
    outcome(worst, format!("min per-step slack over 200 steps, C_H={c_h}, tau=sqrt(beta)/C_H={tau:.3}"))
}

fn wgf_monotone(seed: u64) -> Result<Outcome> {
    let obj = tilted_quadratic();
    let mut mu = gaussian_ensemble(8, 2, 2.0, &mut stream(seed, 0x3f1));
    let mut worst = f64::INFINITY;
    let mut prev = obj.value(&mu)?;
    for _ in 0..100 {
        mu = step_wgf(&obj, &mu, 0.4)?;
        let f = obj.value(&mu)?;
        worst = worst.min(prev - f);
        prev = f;
    }
    outcome(worst, "min per-step decrease, tau=0.4 <= 1/L_F")
}

/// `W₂` to the Dirac mass at `m`, in closed form.
fn w2_to_point(mu: &ParticleEnsemble, m: &[f64]) -> f64 {
    let sq: f64 = mu.particles().map(|p| p.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
    (sq / mu.count() as f64).sqrt()
}

fn rate_wsfn(seed: u64) -> Result<Outcome> {
    let center = [1.0, -2.0];
    let obj = Potential::quadratic(&center);
    let (tau, beta): (f64, f64) = (0.8, 0.5);
    let factor = 1.0 - tau / (1.0 + beta).sqrt();
    let params = WsfnParams { tau, beta, lanczos_m: 4, hvp: HvpMode::ExactBlocks };
    let mut mu = gaussian_ensemble(5, 2, 1.0, &mut stream(seed, 0x7a1));
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let before = w2_to_point(&mu, &center);
        mu = step_wsfn(&obj, &mu, &params)?;
        worst = worst.max((w2_to_point(&mu, &center) / before - factor).abs());
    }
    outcome(worst, format!("|W2 ratio - (1 - tau/sqrt(1+beta))| over 10 steps, factor {factor:.6}"))
}

fn rate_newton(seed: u64) -> Result<Outcome> {
    let obj = tilted_quadratic();
    let mu = gaussian_ensemble(6, 2, 3.0, &mut stream(seed, 0x7a2));
    let out = step_newton(&obj, &mu, 1.0, HvpMode::ExactBlocks)?;
    outcome(w2_to_point(&out, &[1.0, -0.5]), "W2 to the minimizer after one tau=1 Newton step")
}

/// Quadratic-rate test for `V = x⁴/4` near its degenerate minimizer with
/// `τ = 1`: compares `e_{n+1}` with `(L_H/√β) e_n²`, where `L_H = 6 e_0` is
/// the Hessian Lipschitz constant on the starting ball and `e_0` sits inside
/// the admissible radius `√β / (2 L_H)`.
fn rate_quartic(_seed: u64) -> Result<Outcome> {
    let obj = Potential::quartic(&[0.0]);
    let beta: f64 = 1e-2;
    let radius = 0.9 * (beta.sqrt() / 12.0).sqrt();
    let mut mu = ParticleEnsemble::new(3, 1, vec![radius, -0.6 * radius, 0.3 * radius])?;
    let l_h = 6.0 * radius;
    let c = l_h / beta.sqrt();
    let params = WsfnParams { tau: 1.0, beta, lanczos_m: 3, hvp: HvpMode::ExactBlocks };
    let mut worst = 0.0f64;
    let mut errs = Vec::new();
    for _ in 0..5 {
        let e = w2_to_point(&mu, &[0.0]);
        mu = step_wsfn(&obj, &mu, &params)?;
        let next = w2_to_point(&mu, &[0.0]);
        worst = worst.max(next / (c * e * e));
        errs.push(format!("{e:.3e}"));
    }
    outcome(worst, format!("max e_(n+1) / (C e_n^2), C = L_H/sqrt(beta) = {c:.3}; errors {}", errs.join(", ")))
}

/// Coulomb instance with both signs of curvature: two particles between the modes.
fn saddle_instance() -> Result<(CoulombMmd, ParticleEnsemble)> {
    let targets = ParticleEnsemble::new(2, 3, vec![2.0, 0.0, 0.0, -2.0, 0.0, 0.0])?;
    let obj = CoulombMmd::new(targets, 5e-2)?;
    let mu = ParticleEnsemble::new(2, 3, vec![0.3, 0.1, 0.0, -0.2, -0.3, 0.1])?;
    Ok((obj, mu))
}

fn multipliers(_seed: u64) -> Result<Outcome> {
    let (obj, mu) = saddle_instance()?;
    let (tau, beta) = (0.5, 1e-2);
    let op = HessianOperator::new(&obj, &mu, HvpMode::ExactBlocks)?;
    let h = op.assemble_dense()?;
    let (vals, vecs) = spectral::dense_eigen(&h)?;
    if !(vals[0] < 0.0) {
        return Err(Error::Numeric(format!("instance has no negative curvature (lambda_min = {:.3e})", vals[0])));
    }
    let flat = op.flat_dim();
    let mut worst = 0.0f64;
    let mut negative = String::new();
    for k in 0..flat {
        let e = TangentField::new(2, 3, vecs.column(k).as_slice().to_vec())?;
        // linearized gradient at displacement e from the critical point
        let g = op.hvp(&e)?;
        let lam = vals[k];
        let coeff = |dir: &TangentField| flat_dot(e.as_slice(), dir.as_slice());
        let gd = 1.0 - tau * coeff(&g);
        let newton = 1.0 - tau * coeff(&newton_direction(&obj, &mu, &g, HvpMode::ExactBlocks)?);
        let wsfn = 1.0 - tau * coeff(&wsfn_direction(&obj, &mu, &g, beta, flat, HvpMode::ExactBlocks)?);
        let want_wsfn = 1.0 - tau * lam * spectral::inv_sqrt_weight(lam, beta);
        worst = worst
            .max((gd - (1.0 - tau * lam)).abs())
            .max((newton - (1.0 - tau)).abs())
            .max((wsfn - want_wsfn).abs());
        if k == 0 {
            negative = format!(
                "lambda={lam:.3}: gd {gd:.4}, newton {newton:.4} (attracts), wsfn {wsfn:.4} ({})",
                if wsfn > 1.0 { "repels" } else { "attracts" }
            );
            if wsfn <= 1.0 || newton >= 1.0 {
                worst = f64::INFINITY;
            }
        }
    }
    outcome(worst, negative)
}

fn lm_limits(seed: u64) -> Result<Outcome> {
    let obj = tilted_quadratic();
    let mu = gaussian_ensemble(4, 2, 1.0, &mut stream(seed, 0x1b1));
    let g = obj.grad(&mu)?;
    let rel = |a: &TangentField, b: &TangentField| {
        let diff: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
        (flat_dot(&diff, &diff) / flat_dot(b.as_slice(), b.as_slice())).sqrt()
    };
    let small = lm_direction(&obj, &mu, &g, 1e-3, HvpMode::ExactBlocks)?;
    let gradient_step = rel(&small, &g.scaled(1e-3));
    let large = lm_direction(&obj, &mu, &g, 1e3, HvpMode::ExactBlocks)?;
    let newton = newton_direction(&obj, &mu, &g, HvpMode::ExactBlocks)?;
    let newton_gap = rel(&large, &newton);
    outcome(
        (gradient_step / 0.05).max(newton_gap / 0.01),
        format!("tau=1e-3 vs tau*grad {gradient_step:.2e} of 5%, tau=1e3 vs Newton {newton_gap:.2e} of 1%"),
    )
}

fn wsfn_full_depth(seed: u64) -> Result<Outcome> {
    let mut rng = stream(seed, 0xf11);
    let obj = CoulombMmd::new(bimodal_targets(20, &mut rng), 5e-2)?;
    let mu = gaussian_ensemble(6, 3, 1.0, &mut rng);
    let beta = 1e-2;
    let g = obj.grad(&mu)?;
    let op = HessianOperator::new(&obj, &mu, HvpMode::ExactBlocks)?;
    let dense = spectral::dense_inv_sqrt(&op.assemble_dense()?, g.as_slice(), beta)?;
    let dir = wsfn_direction(&obj, &mu, &g, beta, op.flat_dim(), HvpMode::ExactBlocks)?;
    outcome(max_abs_diff(dir.as_slice(), &dense) / inf_norm(&dense), "Lanczos depth Nd against dense (H^2+beta)^(-1/2) grad")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::ObjectiveKind;

    #[test]
    fn unknown_check_is_an_error() {
        let sel = vec!["no_such_check".to_string()];
        assert!(matches!(run_property_suite(Some(&sel), 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn selection_keeps_order_by_name() {
        let sel = vec!["lanczos_oracle".to_string(), "grad_fd".to_string()];
        let r = run_property_suite(Some(&sel), DEFAULT_SEED).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].name, "grad_fd");
        assert_eq!(r.rows[1].name, "lanczos_oracle");
        assert!(r.passed(), "{}", r.to_table());
    }

    #[test]
    fn suite_is_large_enough() {
        assert!(CHECKS.len() >= 12);
        let names = check_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, names);
    }

    /// Gradient missing its `1/N` normalization, i.e. `N` times too large.
    struct Unnormalized(Interaction);

    impl Functional for Unnormalized {
        fn kind(&self) -> ObjectiveKind {
            self.0.kind()
        }
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn value(&self, mu: &ParticleEnsemble) -> Result<f64> {
            self.0.value(mu)
        }
        fn grad(&self, mu: &ParticleEnsemble) -> Result<TangentField> {
            Ok(self.0.grad(mu)?.scaled(mu.count() as f64))
        }
    }

    #[test]
    fn grad_check_catches_dropped_normalization() {
        let good = repulsive_gaussian(2);
        assert!(grad_fd_worst(&good, DEFAULT_SEED, 5).unwrap() <= GRAD_FD_STEP);
        let bad = Unnormalized(repulsive_gaussian(2));
        assert!(grad_fd_worst(&bad, DEFAULT_SEED, 5).unwrap() > 1.0);
    }

    #[test]
    fn fd_gradient_of_potential() {
        let f = Potential::quadratic(&[0.0]);
        let mu = ParticleEnsemble::new(2, 1, vec![1.0, -3.0]).unwrap();
        let fd = fd_gradient(&f, &mu, 1e-5).unwrap();
        assert!((fd.as_slice()[0] - 1.0).abs() < 1e-8);
        assert!((fd.as_slice()[1] + 3.0).abs() < 1e-8);
    }

    #[test]
    fn table_and_json_render() {
        let sel = vec!["gp_zero_kernel".to_string()];
        let r = run_property_suite(Some(&sel), 1).unwrap();
        assert!(r.to_table().contains("gp_zero_kernel"));
        let back: CheckReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
