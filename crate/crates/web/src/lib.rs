//! Browser bindings: a small Coulomb race, the parameter calculator and the
//! one-step multiplier curves. Every export takes and returns JSON text.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use wsfn_core::hessian::HvpMode;
use wsfn_core::measure::ParticleEnsemble;
use wsfn_core::objectives::{make_objective, CoulombSpec, ObjectiveSpec, Potential, PotentialShape};
use wsfn_core::optimize::{
    run, step_newton, step_wgf, step_wsfn, theoretical_params, Event, Method, OptimizerConfig, Threshold, TheoryConstants,
    Trigger, WsfnParams,
};
use wsfn_core::rng::stream;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceRequest {
    pub particles: usize,
    pub targets: usize,
    pub iters: usize,
    pub seed: u64,
    pub tau: f64,
    pub beta: f64,
    pub n_out: usize,
    pub f0: f64,
    pub eta: f64,
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub label: String,
    pub loss: Vec<f64>,
    pub perturbations: Vec<usize>,
    /// First two coordinates of the final particles.
    pub particles: Vec<[f64; 2]>,
    pub termination: String,
}

#[derive(Debug, Serialize)]
pub struct RaceResult {
    pub targets: Vec<[f64; 2]>,
    pub initial: Vec<[f64; 2]>,
    pub traces: Vec<Trace>,
}

fn project(mu: &ParticleEnsemble) -> Vec<[f64; 2]> {
    mu.particles().map(|p| [p[0], p[1]]).collect()
}

fn fail(e: impl std::fmt::Display) -> String {
    format!("{{\"error\":{}}}", serde_json::Value::String(e.to_string()))
}

/// WGF against WSFN on a two-mode Coulomb MMD problem, both from the same
/// particles clustered at the origin.
pub fn race(req: &RaceRequest) -> Result<RaceResult, String> {
    if req.particles < 2 || req.particles > 400 || req.targets < 2 || req.targets > 400 {
        return Err("particles and targets must lie in 2..=400".into());
    }
    if req.iters == 0 || req.iters > 5000 {
        return Err("iters must lie in 1..=5000".into());
    }
    let spec = CoulombSpec {
        dim: 3,
        modes: vec![vec![2.0, 0.0, 0.0], vec![-2.0, 0.0, 0.0]],
        noise: 0.25,
        target_samples: req.targets,
        eps_ker: 5e-2,
        seed: req.seed,
        target_csv: None,
    };
    let obj = make_objective(&ObjectiveSpec::CoulombMmd(spec)).map_err(|e| e.to_string())?;
    let targets = match &obj {
        wsfn_core::objectives::Objective::CoulombMmd(c) => project(c.targets()),
        _ => unreachable!(),
    };
    let mut rng = stream(req.seed, 0x1417);
    let pos = (0..req.particles * 3).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mu0 = ParticleEnsemble::new(req.particles, 3, pos).map_err(|e| e.to_string())?;

    let mut traces = Vec::new();
    for method in [Method::Wgf, Method::Wsfn] {
        let mut cfg = OptimizerConfig::new(method, req.tau, req.iters);
        cfg.beta = req.beta;
        cfg.lanczos_m = 12;
        cfg.n_out = req.n_out;
        cfg.f0 = Threshold::Absolute(req.f0);
        cfg.eta = req.eta;
        cfg.trigger = Trigger::Stagnation;
        cfg.halt_on_failed_episode = false;
        cfg.seed = req.seed;
        let rec = run(&obj, &mu0, &cfg).map_err(|e| e.to_string())?;
        let mut loss = Vec::with_capacity(req.iters + 1);
        for r in &rec.rows {
            if r.iter == loss.len() {
                loss.push(r.loss);
            } else if r.event != Event::Terminate {
                if let Some(last) = loss.last_mut() {
                    *last = r.loss;
                }
            }
        }
        traces.push(Trace {
            label: method.name().to_string(),
            loss,
            perturbations: rec.rows.iter().filter(|r| r.event == Event::Perturb).map(|r| r.iter).collect(),
            particles: project(&rec.final_ensemble),
            termination: rec.termination.to_string(),
        });
    }
    Ok(RaceResult { targets, initial: project(&mu0), traces })
}

#[wasm_bindgen]
pub fn coulomb_race(request: &str) -> String {
    match serde_json::from_str::<RaceRequest>(request).map_err(|e| e.to_string()).and_then(|r| race(&r)) {
        Ok(r) => serde_json::to_string(&r).expect("result serializes"),
        Err(e) => fail(e),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRequest {
    pub constants: TheoryConstants,
    pub beta: f64,
    pub delta: f64,
    pub eps: f64,
}

#[wasm_bindgen]
pub fn params(request: &str) -> String {
    let out = serde_json::from_str::<ParamsRequest>(request)
        .map_err(|e| e.to_string())
        .and_then(|r| theoretical_params(&r.constants, r.beta, r.delta, r.eps).map_err(|e| e.to_string()));
    match out {
        Ok(p) => serde_json::to_string(&p).expect("params serialize"),
        Err(e) => fail(e),
    }
}

#[derive(Debug, Serialize)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub gd: Vec<f64>,
    pub newton: Vec<f64>,
    pub wsfn: Vec<f64>,
}

/// One step of each method on `V(x) = λx²/2` from `x = 1`; the new position
/// is the multiplier of that curvature direction.
pub fn multiplier_curves(tau: f64, beta: f64, lo: f64, hi: f64, points: usize) -> Result<Multipliers, String> {
    if !(points >= 2 && points <= 2001 && lo < hi) {
        return Err("need lo < hi and 2..=2001 points".into());
    }
    let start = ParticleEnsemble::new(1, 1, vec![1.0]).map_err(|e| e.to_string())?;
    let mut out = Multipliers { lambda: Vec::new(), gd: Vec::new(), newton: Vec::new(), wsfn: Vec::new() };
    let wsfn = WsfnParams { tau, beta, lanczos_m: 1, hvp: HvpMode::ExactBlocks };
    for k in 0..points {
        let lambda = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let v = Potential::new(PotentialShape::Quadratic { center: vec![0.0], curvature: Some(vec![vec![lambda]]) })
            .map_err(|e| e.to_string())?;
        let at = |mu: wsfn_core::Result<ParticleEnsemble>| mu.map(|m| m.as_slice()[0]).unwrap_or(f64::NAN);
        out.lambda.push(lambda);
        out.gd.push(at(step_wgf(&v, &start, tau)));
        out.newton.push(at(step_newton(&v, &start, tau, HvpMode::ExactBlocks)));
        out.wsfn.push(at(step_wsfn(&v, &start, &wsfn)));
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn multipliers(tau: f64, beta: f64, lo: f64, hi: f64, points: usize) -> String {
    match multiplier_curves(tau, beta, lo, hi, points) {
        Ok(m) => serde_json::to_string(&m).expect("curves serialize"),
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipliers_match_the_scalar_formulas() {
        let m = multiplier_curves(0.5, 0.25, -2.0, 2.0, 9).unwrap();
        for (k, &l) in m.lambda.iter().enumerate() {
            assert!((m.gd[k] - (1.0 - 0.5 * l)).abs() < 1e-12);
            assert!((m.wsfn[k] - (1.0 - 0.5 * l / (l * l + 0.25).sqrt())).abs() < 1e-12);
            if l != 0.0 {
                assert!((m.newton[k] - 0.5).abs() < 1e-12);
            }
        }
        assert!(multiplier_curves(0.5, 0.25, 1.0, 0.0, 9).is_err());
    }

    #[test]
    fn race_runs_and_reports() {
        let req = RaceRequest { particles: 12, targets: 12, iters: 40, seed: 1, tau: 1e-3, beta: 1e-3, n_out: 5, f0: 1e-2, eta: 0.1 };
        let r = race(&req).unwrap();
        assert_eq!(r.traces.len(), 2);
        assert!(r.traces.iter().all(|t| t.loss.len() == 41 && t.particles.len() == 12));
        let json = coulomb_race(&serde_json::to_string(&serde_json::json!({"particles": 1})).unwrap());
        assert!(json.contains("error"));
    }

    #[test]
    fn params_json() {
        let req = r#"{"constants":{"c_h":1,"l_h":1,"r_f":1,"zeta":0.1,"f_min":1,"kernel_norm":1,"zeta_ep":0.04},"beta":1,"delta":1,"eps":0.001}"#;
        let v: serde_json::Value = serde_json::from_str(&params(req)).unwrap();
        assert_eq!(v["tau"], 1.0);
        assert!(params(&req.replace("\"beta\":1", "\"beta\":0")).contains("error"));
    }
}
