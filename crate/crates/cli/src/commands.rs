//! `run`, `verify` and `params` subcommands.

use std::fs;
use std::path::Path;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wsfn_core::optimize::{theoretical_params, TheoryConstants, TheoryParams};
use wsfn_core::verify::{run_property_suite, DEFAULT_SEED};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::presets;
use crate::runner::{self, mean_std};

#[derive(Debug, Parser)]
#[command(name = "wsfn-lab", version, about = "Particle Wasserstein saddle-free Newton experiments", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a preset (exp1_icl, exp2_matdec, exp3_coulomb) or a JSON config file.
    Run(RunArgs),
    /// Run the numerical property suite.
    Verify(VerifyArgs),
    /// Evaluate the theoretical parameter choices for given problem constants.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Preset name or path to a config JSON.
    pub target: String,
    /// Shrink particle count, target samples and iterations (floors 20 and 50).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Iteration budget for every optimizer, applied after --scale.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Comma-separated subset of configured methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Worker threads; the WSFN_LAB_JOBS variable takes precedence.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default runs/<name>).
    #[arg(long)]
    pub out: Option<String>,
    /// Record wall-clock time per row.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub no_plot: bool,
    /// Print the materialized config and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated check names.
    #[arg(long, value_delimiter = ',')]
    pub select: Option<Vec<String>>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// List check names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Hessian bound C_H.
    #[arg(long = "c-h")]
    pub c_h: f64,
    /// Hessian Lipschitz constant L_H.
    #[arg(long = "l-h")]
    pub l_h: f64,
    /// Ratio bound R_F.
    #[arg(long = "r-f", default_value_t = 1.0)]
    pub r_f: f64,
    /// Overall failure probability.
    #[arg(long, default_value_t = 0.1)]
    pub zeta: f64,
    /// F(mu^0) - inf F.
    #[arg(long = "f-min", default_value_t = 1.0)]
    pub f_min: f64,
    /// Norm of the kernel part at the saddle.
    #[arg(long = "kernel-norm", default_value_t = 1.0)]
    pub kernel_norm: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub delta: f64,
    /// Target gradient norm.
    #[arg(long)]
    pub eps: f64,
    /// Assumed overlap |c|; its lower bound when absent.
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Per-episode failure probability; solved from --zeta when absent.
    #[arg(long = "zeta-ep")]
    pub zeta_ep: Option<f64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

pub fn dispatch(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Params(a) => cmd_params(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wsfn-lab: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(target: &str) -> Result<RunConfig, CliError> {
    if presets::PRESETS.contains(&target) {
        return presets::preset(target);
    }
    let path = Path::new(target);
    if path.extension().is_some_and(|e| e == "json") || path.exists() {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {target}: {e}")))?;
        return RunConfig::from_json(&text);
    }
    presets::preset(target)
}

pub fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.target)?;
    cfg.apply(&Overrides {
        scale: a.scale,
        trials: a.trials,
        iters: a.iters,
        methods: a.methods.clone(),
        seed: a.seed,
        out: a.out.clone(),
        timing: a.timing,
        no_plot: a.no_plot,
    })?;
    if a.dry_run {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let jobs = runner::resolve_jobs(a.jobs)?;
    let exp = runner::execute(&cfg, jobs)?;
    let dir = runner::output_dir(&cfg);
    let written = runner::write_artifacts(&exp, &dir)?;

    println!("{}: {} trials, {} jobs, output in {}", cfg.name, cfg.trials, jobs, dir.display());
    println!("{:<16} {:>14} {:>12} {:>14}", "method", "final mean", "final std", "perturbations");
    for m in &exp.methods {
        let (mean, std) = mean_std(&m.final_losses());
        let perturbations: usize = m.runs.iter().map(|r| r.perturbation_count()).sum();
        println!("{:<16} {:>14.6e} {:>12.3e} {:>14}", m.label, mean, std, perturbations);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    let failures = exp.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{} run(s) stopped on a numerical error:\n  {}", failures.len(), failures.join("\n  "))))
    }
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    if a.list {
        for n in wsfn_core::verify::check_names() {
            println!("{n}");
        }
        return Ok(());
    }
    let report = run_property_suite(a.select.as_deref(), a.seed).map_err(|e| CliError::config(format!("--select: {e}")))?;
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        fs::write(path, report.to_json()).map_err(|e| CliError::config(format!("cannot write {path}: {e}")))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> =
            report.rows.iter().filter(|r| r.status != wsfn_core::verify::Status::Pass).map(|r| r.name.as_str()).collect();
        Err(CliError::Verify(format!("failed checks: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct ParamsOut<'a> {
    constants: &'a TheoryConstants,
    beta: f64,
    delta: f64,
    eps: f64,
    params: &'a TheoryParams,
}

pub fn params_of(a: &ParamsArgs) -> Result<(TheoryConstants, TheoryParams), CliError> {
    let c = TheoryConstants {
        c_h: a.c_h,
        l_h: a.l_h,
        r_f: a.r_f,
        zeta: a.zeta,
        f_min: a.f_min,
        kernel_norm: a.kernel_norm,
        overlap: a.overlap,
        zeta_ep: a.zeta_ep,
    };
    let p = theoretical_params(&c, a.beta, a.delta, a.eps).map_err(|e| CliError::from_core("params", e))?;
    Ok((c, p))
}

pub fn params_table(p: &TheoryParams) -> String {
    let rows: [(&str, String); 12] = [
        ("tau", p.tau.to_string()),
        ("delta_tilde", p.delta_tilde.to_string()),
        ("zeta_ep", p.zeta_ep.to_string()),
        ("kappa", p.kappa.to_string()),
        ("overlap", p.overlap.to_string()),
        ("n_out", p.n_out.to_string()),
        ("n_out_steps", p.n_out_steps.to_string()),
        ("F0", p.f0.to_string()),
        ("eta", p.eta.to_string()),
        ("admissibility_lhs", p.admissibility_lhs.to_string()),
        ("admissibility_rhs", p.admissibility_rhs.to_string()),
        ("admissible", p.admissible.to_string()),
    ];
    rows.iter().map(|(k, v)| format!("{k:<18} {v}\n")).collect()
}

pub fn cmd_params(a: &ParamsArgs) -> Result<(), CliError> {
    let (c, p) = params_of(a)?;
    if a.json {
        let out = ParamsOut { constants: &c, beta: a.beta, delta: a.delta, eps: a.eps, params: &p };
        println!("{}", serde_json::to_string_pretty(&out).expect("params serialize"));
    } else {
        print!("{}", params_table(&p));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> ParamsArgs {
        let mut argv = vec!["wsfn-lab", "params", "--c-h", "1", "--l-h", "1", "--beta", "1", "--delta", "1", "--eps", "1e-3"];
        argv.extend_from_slice(extra);
        match Cli::parse_from(argv).command {
            Command::Params(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn params_examples() {
        let (_, p) = params_of(&args(&[])).unwrap();
        assert_eq!(p.tau, 1.0);
        assert!((p.delta_tilde - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(params_table(&p).contains("admissible         true"));
        let (_, p) = params_of(&args(&["--eps", "1e6"])).unwrap();
        assert!(!p.admissible);
        assert_eq!(params_of(&args(&["--beta", "0"])).unwrap_err().exit_code(), 2);
        assert_eq!(params_of(&args(&["--c-h=-1"])).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn config_resolution() {
        assert_eq!(load_config("exp3_coulomb").unwrap().name, "exp3_coulomb");
        assert_eq!(load_config("exp9").unwrap_err().exit_code(), 2);
        assert_eq!(load_config("missing.json").unwrap_err().exit_code(), 2);
    }
}
