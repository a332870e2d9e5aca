//! Optimizer configuration and the perturbed episode controller.

mod params;
mod steps;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{self, HvpMode, DEFAULT_FD_STEP};
use crate::measure::{self, ParticleEnsemble, TangentField, W2_EXACT_CAP};
use crate::objectives::Functional;
use crate::perturb::{self, PerturbMode, PerturbationSpec};
use crate::rng;

pub use params::{delta_tilde, kappa_bound, theoretical_params, TheoryConstants, TheoryParams};
pub use steps::{
    lm_direction, newton_direction, step_lm, step_newton, step_wgf, step_wsfn, wsfn_direction, WsfnParams,
    NEWTON_COND_CAP,
};

/// Seed-stream offset for perturbation draws; the draw at iteration `n` uses stream `PERTURB_STREAM + n`.
pub const PERTURB_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wgf,
    WgfIsotropic,
    Pwgf,
    Newton,
    Lm,
    Wsfn,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Wgf,
        Method::WgfIsotropic,
        Method::Pwgf,
        Method::Newton,
        Method::Lm,
        Method::Wsfn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wgf => "wgf",
            Method::WgfIsotropic => "wgf_isotropic",
            Method::Pwgf => "pwgf",
            Method::Newton => "newton",
            Method::Lm => "lm",
            Method::Wsfn => "wsfn",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Noise used on trigger, or `None` for methods that never perturb.
    pub fn default_perturbation(self) -> Option<PerturbMode> {
        match self {
            Method::WgfIsotropic => Some(PerturbMode::Isotropic),
            Method::Pwgf | Method::Wsfn => Some(PerturbMode::GpHessian),
            Method::Wgf | Method::Newton | Method::Lm => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Small gradient.
    GradNorm,
    /// Small gradient and kernel curvature below `−δ`.
    GradAndCurvature,
    /// Loss decreased by at most `F0` over the last `n_out` iterations.
    Stagnation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpChoice {
    /// Exact blocks when available, finite differences otherwise.
    #[default]
    Auto,
    Exact,
    Fd,
}

/// Decrease threshold, absolute or as a fraction of `|F(μ⁰)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    RelativeToInitial(f64),
}

impl Threshold {
    pub fn resolve(self, initial_loss: f64) -> f64 {
        match self {
            Threshold::Absolute(x) => x,
            Threshold::RelativeToInitial(r) => r * initial_loss.abs(),
        }
    }

    fn raw(self) -> f64 {
        match self {
            Threshold::Absolute(x) | Threshold::RelativeToInitial(x) => x,
        }
    }
}

fn default_beta() -> f64 {
    1e-3
}
fn default_lanczos_m() -> usize {
    10
}
fn default_n_out() -> usize {
    100
}
fn default_f0() -> Threshold {
    Threshold::RelativeToInitial(1e-3)
}
fn default_eta() -> f64 {
    1e-1
}
fn default_trigger() -> Trigger {
    Trigger::GradNorm
}
fn default_true() -> bool {
    true
}
fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub tau: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lanczos_m")]
    pub lanczos_m: usize,
    /// Gradient-norm gate; absent means unbounded (the gate always passes).
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_n_out")]
    pub n_out: usize,
    #[serde(default = "default_f0")]
    pub f0: Threshold,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_trigger")]
    pub trigger: Trigger,
    /// Overrides the method's default noise.
    #[serde(default)]
    pub perturbation: Option<PerturbMode>,
    #[serde(default = "default_true")]
    pub halt_on_failed_episode: bool,
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hvp: HvpChoice,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

impl OptimizerConfig {
    pub fn new(method: Method, tau: f64, max_iters: usize) -> Self {
        Self {
            method,
            tau,
            beta: default_beta(),
            lanczos_m: default_lanczos_m(),
            eps: None,
            delta: 0.0,
            n_out: default_n_out(),
            f0: default_f0(),
            eta: default_eta(),
            kappa: None,
            trigger: default_trigger(),
            perturbation: None,
            halt_on_failed_episode: true,
            max_iters,
            seed: 0,
            hvp: HvpChoice::Auto,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidInput(format!("{field}: {msg}")));
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad("tau", format!("must be finite and non-negative, got {}", self.tau));
        }
        if self.tau == 0.0 && self.method != Method::Newton {
            return bad("tau", "must be positive".into());
        }
        if self.method == Method::Wsfn && !(self.beta > 0.0) {
            return bad("beta", format!("must be positive, got {}", self.beta));
        }
        if self.lanczos_m == 0 {
            return bad("lanczos_m", "must be at least 1".into());
        }
        if self.n_out == 0 {
            return bad("n_out", "must be at least 1".into());
        }
        if !(self.f0.raw() >= 0.0) {
            return bad("f0", format!("must be non-negative, got {}", self.f0.raw()));
        }
        if let Some(e) = self.eps {
            if !(e >= 0.0) {
                return bad("eps", format!("must be non-negative, got {e}"));
            }
        }
        if !(self.delta >= 0.0) {
            return bad("delta", format!("must be non-negative, got {}", self.delta));
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step", format!("must be positive, got {}", self.fd_step));
        }
        if self.perturbation.is_some() && self.method.default_perturbation().is_none() {
            return bad("perturbation", format!("method {} never perturbs", self.method));
        }
        PerturbationSpec::new(PerturbMode::Isotropic, self.eta, self.kappa)
            .map(|_| ())
            .map_err(|e| Error::InvalidInput(format!("eta/kappa: {e}")))
    }

    pub fn hvp_mode(&self, obj: &dyn Functional) -> Result<HvpMode> {
        let fd = HvpMode::FdTransport { step: self.fd_step };
        match self.hvp {
            HvpChoice::Auto if obj.has_blocks() => Ok(HvpMode::ExactBlocks),
            HvpChoice::Auto | HvpChoice::Fd => Ok(fd),
            HvpChoice::Exact if obj.has_blocks() => Ok(HvpMode::ExactBlocks),
            HvpChoice::Exact => Err(Error::Capability(format!(
                "hvp: {} objective has no exact Hessian blocks",
                obj.kind().name()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Step,
    Perturb,
    EpisodeEnd,
    Terminate,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Step => "step",
            Event::Perturb => "perturb",
            Event::EpisodeEnd => "episode_end",
            Event::Terminate => "terminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub event: Event,
    pub elapsed_ms: Option<f64>,
    pub w2_to_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    pub decrease: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    /// An episode decreased the loss by at most `F0`; the ensemble right
    /// after that episode's perturbation is returned.
    FailedEpisode { perturbed_at: usize },
    Error { message: String },
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::MaxIters => f.write_str("iteration budget exhausted"),
            Termination::FailedEpisode { perturbed_at } => {
                write!(f, "episode starting at iteration {perturbed_at} failed to decrease the loss by F0")
            }
            Termination::Error { message } => write!(f, "error: {message}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub rows: Vec<TraceRow>,
    pub final_ensemble: ParticleEnsemble,
    pub termination: Termination,
    pub episodes: Vec<Episode>,
    /// Decrease threshold after resolving a relative setting.
    pub f0: f64,
    pub perturbation: Option<PerturbMode>,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn perturbation_count(&self) -> usize {
        self.rows.iter().filter(|r| r.event == Event::Perturb).count()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn failed(&self) -> bool {
        matches!(self.termination, Termination::Error { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Reference measure for the distance column.
    pub target: Option<&'a ParticleEnsemble>,
    /// Record wall-clock time per row. Off by default so traces are reproducible byte for byte.
    pub timing: bool,
}

/// Distance to the reference measure when it can be computed exactly.
fn w2_to(mu: &ParticleEnsemble, target: &ParticleEnsemble) -> Option<f64> {
    if target.dim() != mu.dim() {
        return None;
    }
    if target.count() == 1 {
        let y = target.particle(0);
        let mean: f64 = mu
            .particles()
            .map(|x| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / mu.count() as f64;
        return Some(mean.sqrt());
    }
    if target.count() != mu.count() {
        return None;
    }
    if mu.dim() == 1 {
        return measure::w2_1d(mu, target).ok();
    }
    measure::w2_exact_capped(mu, target, W2_EXACT_CAP).ok()
}

struct State {
    mu: ParticleEnsemble,
    loss: f64,
    grad: TangentField,
    grad_norm: f64,
}

fn evaluate(obj: &dyn Functional, mu: ParticleEnsemble) -> Result<State> {
    let loss = obj.value(&mu)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite ({loss})")));
    }
    let grad = obj.grad(&mu)?;
    if !grad.is_finite() {
        return Err(Error::Numeric("gradient is not finite".into()));
    }
    let grad_norm = grad.norm();
    Ok(State { mu, loss, grad, grad_norm })
}

pub fn run(obj: &dyn Functional, mu0: &ParticleEnsemble, cfg: &OptimizerConfig) -> Result<RunRecord> {
    run_with(obj, mu0, cfg, &RunOptions::default())
}

/// Runs one optimizer from `mu0`.
///
/// Iteration `n` first checks the trigger (a perturbation replaces `μ^n`),
/// then, `n_out` iterations after a perturbation, compares the loss with the
/// loss right after that perturbation, then steps. One row is logged per
/// iteration; a final `terminate` row describes the returned ensemble.
///
/// Configuration problems are returned as `Err`. Failures during the run end
/// it early with [`Termination::Error`] and keep the rows logged so far.
pub fn run_with(
    obj: &dyn Functional,
    mu0: &ParticleEnsemble,
    cfg: &OptimizerConfig,
    opts: &RunOptions<'_>,
) -> Result<RunRecord> {
    cfg.validate()?;
    obj.check(mu0)?;
    let hvp = cfg.hvp_mode(obj)?;
    let mut warnings = Vec::new();

    let mut noise = cfg.perturbation.or(cfg.method.default_perturbation());
    if let Some(mode) = noise {
        if mode.needs_kernel() && !obj.has_blocks() && !obj.has_kernel_action() {
            warnings.push(format!(
                "{} objective exposes no Hessian kernel; falling back to isotropic perturbations",
                obj.kind().name()
            ));
            noise = Some(PerturbMode::Isotropic);
        } else if mode.needs_kernel() && obj.has_blocks() && !obj.has_kernel() {
            warnings.push(format!(
                "the Hessian kernel of the {} objective vanishes, so Hessian-guided perturbations are zero",
                obj.kind().name()
            ));
        }
    }
    if noise.is_some() && cfg.trigger == Trigger::GradAndCurvature && !obj.has_blocks() && !obj.has_kernel_action() {
        return Err(Error::Capability(format!(
            "trigger: the curvature test needs the Hessian kernel, which the {} objective does not expose",
            obj.kind().name()
        )));
    }
    if let Some(t) = opts.target {
        if w2_to(mu0, t).is_none() {
            warnings.push("distance to target is not computable for these sizes; column left empty".into());
        }
    }
    let pert_spec = noise.map(|mode| PerturbationSpec { mode, eta: cfg.eta, kappa: cfg.kappa });
    let wsfn = WsfnParams { tau: cfg.tau, beta: cfg.beta, lanczos_m: cfg.lanczos_m, hvp };

    // started only on request: the clock is unavailable on some targets
    let clock = opts.timing.then(Instant::now);
    let elapsed = |timing: bool| clock.filter(|_| timing).map(|c| c.elapsed().as_secs_f64() * 1e3);
    let distance = |mu: &ParticleEnsemble| opts.target.and_then(|t| w2_to(mu, t));

    let mut rows = Vec::with_capacity(cfg.max_iters + 1);
    let mut episodes = Vec::new();
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iters + 1);

    let mut state = evaluate(obj, mu0.clone())?;
    let f0 = cfg.f0.resolve(state.loss);
    // reference for the spacing rule; iteration 0 before any perturbation
    let mut last_pert = 0usize;
    let mut pending: Option<(usize, f64, ParticleEnsemble)> = None;

    let fail = |rows: Vec<TraceRow>, episodes, mu: ParticleEnsemble, warnings, err: Error| RunRecord {
        method: cfg.method,
        rows,
        final_ensemble: mu,
        termination: Termination::Error { message: err.to_string() },
        episodes,
        f0,
        perturbation: noise,
        warnings,
    };

    for n in 0..cfg.max_iters {
        let mut event = Event::Step;

        if let Some(spec) = &pert_spec {
            let spaced = n > last_pert + cfg.n_out;
            let fire = spaced
                && match cfg.trigger {
                    Trigger::GradNorm => cfg.eps.is_none_or(|e| state.grad_norm <= e),
                    Trigger::GradAndCurvature => {
                        cfg.eps.is_none_or(|e| state.grad_norm <= e)
                            && match hessian::min_eig_kernel(obj, &state.mu) {
                                Ok(l) => l < -cfg.delta,
                                Err(e) => return Ok(fail(rows, episodes, state.mu, warnings, e)),
                            }
                    }
                    Trigger::Stagnation => n >= cfg.n_out && history[n - cfg.n_out] - state.loss <= f0,
                };
            if fire {
                let mut rng = rng::stream(cfg.seed, PERTURB_STREAM + n as u64);
                let outcome = perturb::perturb(obj, &state.mu, spec, &mut rng).and_then(|p| evaluate(obj, p.ensemble));
                match outcome {
                    Ok(next) => state = next,
                    Err(e) => return Ok(fail(rows, episodes, state.mu, warnings, e)),
                }
                last_pert = n;
                pending = Some((n, state.loss, state.mu.clone()));
                event = Event::Perturb;
            }
        }

        if let Some((start, start_loss, _)) = &pending {
            if n == start + cfg.n_out {
                let decrease = start_loss - state.loss;
                let success = decrease > f0;
                episodes.push(Episode { start: *start, end: n, decrease, success });
                event = Event::EpisodeEnd;
                let (start, _, start_mu) = pending.take().expect("pending episode");
                if !success && cfg.halt_on_failed_episode {
                    rows.push(TraceRow {
                        iter: n,
                        loss: state.loss,
                        grad_norm: state.grad_norm,
                        event,
                        elapsed_ms: elapsed(opts.timing),
                        w2_to_target: distance(&state.mu),
                    });
                    let back = match evaluate(obj, start_mu) {
                        Ok(s) => s,
                        Err(e) => return Ok(fail(rows, episodes, state.mu, warnings, e)),
                    };
                    rows.push(TraceRow {
                        iter: n,
                        loss: back.loss,
                        grad_norm: back.grad_norm,
                        event: Event::Terminate,
                        elapsed_ms: elapsed(opts.timing),
                        w2_to_target: distance(&back.mu),
                    });
                    return Ok(RunRecord {
                        method: cfg.method,
                        rows,
                        final_ensemble: back.mu,
                        termination: Termination::FailedEpisode { perturbed_at: start },
                        episodes,
                        f0,
                        perturbation: noise,
                        warnings,
                    });
                }
            }
        }

        history.push(state.loss);
        rows.push(TraceRow {
            iter: n,
            loss: state.loss,
            grad_norm: state.grad_norm,
            event,
            elapsed_ms: elapsed(opts.timing),
            w2_to_target: distance(&state.mu),
        });

        let next = match cfg.method {
            Method::Wgf | Method::WgfIsotropic | Method::Pwgf => measure::push(&state.mu, &state.grad, -cfg.tau),
            Method::Wsfn => wsfn_direction(obj, &state.mu, &state.grad, wsfn.beta, wsfn.lanczos_m, hvp)
                .and_then(|d| measure::push(&state.mu, &d, -cfg.tau)),
            Method::Newton => newton_direction(obj, &state.mu, &state.grad, hvp)
                .and_then(|d| measure::push(&state.mu, &d, -cfg.tau)),
            Method::Lm => lm_direction(obj, &state.mu, &state.grad, cfg.tau, hvp)
                .and_then(|d| measure::push(&state.mu, &d, -1.0)),
        };
        match next.and_then(|mu| evaluate(obj, mu)) {
            Ok(s) => state = s,
            Err(e) => return Ok(fail(rows, episodes, state.mu, warnings, e)),
        }
    }

    rows.push(TraceRow {
        iter: cfg.max_iters,
        loss: state.loss,
        grad_norm: state.grad_norm,
        event: Event::Terminate,
        elapsed_ms: elapsed(opts.timing),
        w2_to_target: distance(&state.mu),
    });
    Ok(RunRecord {
        method: cfg.method,
        rows,
        final_ensemble: state.mu,
        termination: Termination::MaxIters,
        episodes,
        f0,
        perturbation: noise,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Interaction, InteractionKernel, Potential};

    #[test]
    fn wsfn_contracts_quadratic_geometrically() {
        let f = Potential::quadratic(&[0.0, 0.0]);
        let mu = ParticleEnsemble::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Wsfn, 0.5, 20);
        cfg.beta = 0.2;
        cfg.eps = Some(0.0);
        let rec = run(&f, &mu, &cfg).unwrap();
        assert_eq!(rec.termination, Termination::MaxIters);
        let rate = (1.0 - cfg.tau / (1.0 + cfg.beta).sqrt()).powi(2);
        let l = rec.losses();
        for w in l.windows(2) {
            assert!(w[1] < w[0]);
            assert!((w[1] / w[0] - rate).abs() < 1e-10);
        }
        assert_eq!(rec.perturbation_count(), 0);
    }

    #[test]
    fn unbounded_gate_perturbs_right_after_first_window() {
        let f = Interaction::new(1, InteractionKernel::Gaussian { amplitude: 1.0, width: 1.0 }).unwrap();
        let mu = ParticleEnsemble::new(4, 1, vec![-0.3, -0.1, 0.1, 0.3]).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Pwgf, 0.1, 12);
        cfg.n_out = 5;
        cfg.halt_on_failed_episode = false;
        let rec = run(&f, &mu, &cfg).unwrap();
        let first = rec.rows.iter().find(|r| r.event == Event::Perturb).unwrap();
        assert_eq!(first.iter, cfg.n_out + 1);
        assert_eq!(rec.rows.iter().filter(|r| r.event == Event::EpisodeEnd).count(), 1);
        assert_eq!(rec.rows.iter().find(|r| r.event == Event::EpisodeEnd).unwrap().iter, 2 * cfg.n_out + 1);
        assert_eq!(rec.rows.last().unwrap().event, Event::Terminate);
    }

    #[test]
    fn failed_episode_returns_perturbed_iterate() {
        // at the minimizer nothing can decrease, so the first episode fails
        let f = Potential::quadratic(&[0.0]);
        let mu = ParticleEnsemble::new(2, 1, vec![0.0, 0.0]).unwrap();
        let mut cfg = OptimizerConfig::new(Method::WgfIsotropic, 0.1, 100);
        cfg.n_out = 3;
        cfg.f0 = Threshold::Absolute(1e-3);
        let rec = run(&f, &mu, &cfg).unwrap();
        assert_eq!(rec.termination, Termination::FailedEpisode { perturbed_at: 4 });
        let perturb_row = rec.rows.iter().find(|r| r.event == Event::Perturb).unwrap();
        let last = rec.rows.last().unwrap();
        assert_eq!(last.event, Event::Terminate);
        assert_eq!(last.loss, perturb_row.loss);
        assert_eq!(f.value(&rec.final_ensemble).unwrap(), perturb_row.loss);
    }

    #[test]
    fn stagnation_trigger_and_zero_kernel_warning() {
        let f = Potential::quadratic(&[0.0]);
        let mu = ParticleEnsemble::new(2, 1, vec![1.0, -1.0]).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Pwgf, 0.5, 30);
        cfg.trigger = Trigger::Stagnation;
        cfg.n_out = 4;
        cfg.f0 = Threshold::Absolute(1e-3);
        cfg.halt_on_failed_episode = false;
        let rec = run(&f, &mu, &cfg).unwrap();
        assert!(rec.warnings.iter().any(|w| w.contains("vanishes")));
        assert!(rec.perturbation_count() > 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let f = Interaction::new(2, InteractionKernel::Gaussian { amplitude: 1.0, width: 0.7 }).unwrap();
        let mu = ParticleEnsemble::new(4, 2, vec![0.1, 0.0, -0.1, 0.05, 0.0, 0.1, 0.05, -0.1]).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Wsfn, 0.05, 40);
        cfg.n_out = 5;
        cfg.halt_on_failed_episode = false;
        cfg.seed = 9;
        let a = run(&f, &mu, &cfg).unwrap();
        let b = run(&f, &mu, &cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_ensemble, b.final_ensemble);
        assert!(a.perturbation_count() > 0);
    }

    #[test]
    fn step_errors_end_the_run() {
        let f = Interaction::quadratic(1);
        let mu = ParticleEnsemble::new(2, 1, vec![0.0, 2.0]).unwrap();
        let rec = run(&f, &mu, &OptimizerConfig::new(Method::Newton, 1.0, 5)).unwrap();
        assert!(rec.failed());
        assert_eq!(rec.rows.len(), 1);
    }

    #[test]
    fn config_validation() {
        let f = Potential::quadratic(&[0.0]);
        let mu = ParticleEnsemble::new(1, 1, vec![1.0]).unwrap();
        let mut cfg = OptimizerConfig::new(Method::Wsfn, 0.1, 5);
        cfg.beta = 0.0;
        assert!(run(&f, &mu, &cfg).is_err());
        let mut cfg = OptimizerConfig::new(Method::Wgf, 0.1, 5);
        cfg.perturbation = Some(PerturbMode::Isotropic);
        assert!(cfg.validate().is_err());
        let json = r#"{"method":"wsfn","tau":0.1,"max_iters":3,"f0":{"absolute":0.01},"trigger":"stagnation"}"#;
        let parsed: OptimizerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.f0, Threshold::Absolute(0.01));
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"method":"wsfn","tau":0.1,"max_iters":3,"typo":1}"#).is_err());
    }

    #[test]
    fn distance_column_for_point_targets() {
        let f = Potential::quadratic(&[1.0]);
        let mu = ParticleEnsemble::new(2, 1, vec![0.0, 3.0]).unwrap();
        let target = ParticleEnsemble::dirac(1, &[1.0]).unwrap();
        let opts = RunOptions { target: Some(&target), timing: false };
        let rec = run_with(&f, &mu, &OptimizerConfig::new(Method::Wgf, 0.5, 2), &opts).unwrap();
        let w = rec.rows.iter().map(|r| r.w2_to_target.unwrap()).collect::<Vec<_>>();
        assert!((w[0] - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((w[1] - 0.5 * 2.5f64.sqrt()).abs() < 1e-15);
    }
}
