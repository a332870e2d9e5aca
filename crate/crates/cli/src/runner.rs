//! Trial orchestration and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use wsfn_core::measure::{read_ensemble, ParticleEnsemble};
use wsfn_core::objectives::{make_objective, Functional};
use wsfn_core::optimize::{run_with, Event, RunOptions, RunRecord, Termination};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot;

pub const JOBS_ENV: &str = "WSFN_LAB_JOBS";

/// Worker count: `WSFN_LAB_JOBS` wins over `--jobs`, which wins over the core count.
pub fn resolve_jobs(flag: Option<usize>) -> Result<usize, CliError> {
    if let Ok(v) = std::env::var(JOBS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::config(format!("{JOBS_ENV}: expected a positive integer, got {v:?}"))),
        };
    }
    match flag {
        Some(0) => Err(CliError::config("--jobs: must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub struct MethodRuns {
    pub label: String,
    /// One record per trial, in trial order.
    pub runs: Vec<RunRecord>,
}

impl MethodRuns {
    pub fn final_losses(&self) -> Vec<f64> {
        self.runs.iter().map(RunRecord::final_loss).collect()
    }
}

pub struct Experiment {
    pub config: RunConfig,
    pub methods: Vec<MethodRuns>,
    pub initial_losses: Vec<f64>,
}

impl Experiment {
    pub fn method(&self, label: &str) -> Option<&MethodRuns> {
        self.methods.iter().find(|m| m.label == label)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for m in &self.methods {
            for (t, r) in m.runs.iter().enumerate() {
                if let Termination::Error { message } = &r.termination {
                    out.push(format!("{} trial {t}: {message}", m.label));
                }
            }
        }
        out
    }
}

/// Runs every (optimizer, trial) pair on up to `jobs` threads. Trials of one
/// optimizer share nothing but the objective, so the merged records do not
/// depend on scheduling.
pub fn execute(cfg: &RunConfig, jobs: usize) -> Result<Experiment, CliError> {
    cfg.validate()?;
    let objective = make_objective(&cfg.objective).map_err(|e| CliError::from_core("objective", e))?;
    let target = match &cfg.target {
        Some(p) => Some(read_ensemble(p).map_err(|e| CliError::config(format!("target: {e}")))?),
        None => None,
    };
    let inits: Vec<ParticleEnsemble> =
        (0..cfg.trials).map(|t| cfg.init.sample(cfg.trial_seed(t))).collect::<Result<_, _>>()?;
    objective
        .check(&inits[0])
        .map_err(|e| CliError::config(format!("init does not fit the objective: {e}")))?;
    let initial_losses =
        inits.iter().map(|mu| objective.value(mu)).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::from_core("initial loss", e))?;

    let tasks: Vec<(usize, usize)> =
        (0..cfg.optimizers.len()).flat_map(|o| (0..cfg.trials).map(move |t| (o, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let opts = RunOptions { target: target.as_ref(), timing: cfg.output.timing };
    let records: Vec<Result<RunRecord, CliError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(o, t)| {
                let mut oc = cfg.optimizers[o].clone();
                oc.seed = oc.seed.wrapping_add(cfg.trial_seed(t));
                run_with(&objective, &inits[t], &oc, &opts)
                    .map_err(|e| CliError::config(format!("optimizers[{o}] ({}): {e}", oc.method)))
            })
            .collect()
    });
    let mut records = records.into_iter();
    let mut methods = Vec::new();
    for label in cfg.labels() {
        let runs = records.by_ref().take(cfg.trials).collect::<Result<Vec<_>, _>>()?;
        methods.push(MethodRuns { label, runs });
    }
    Ok(Experiment { config: cfg.clone(), methods, initial_losses })
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// `trial,iter,loss,grad_norm,event,elapsed_ms[,w2_to_target]`
pub fn trace_csv(m: &MethodRuns, with_distance: bool) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["trial", "iter", "loss", "grad_norm", "event", "elapsed_ms"];
    if with_distance {
        header.push("w2_to_target");
    }
    w.write_record(&header).expect("in-memory write");
    for (t, run) in m.runs.iter().enumerate() {
        for r in &run.rows {
            let mut rec = vec![
                t.to_string(),
                r.iter.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.event.name().to_string(),
                cell(r.elapsed_ms),
            ];
            if with_distance {
                rec.push(cell(r.w2_to_target));
            }
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

#[derive(Serialize)]
struct TrialSummary {
    trial: usize,
    seed: u64,
    initial_loss: f64,
    final_loss: f64,
    iterations: usize,
    perturbations: usize,
    successful_episodes: usize,
    failed_episodes: usize,
    f0: f64,
    termination: String,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct MethodSummary {
    label: String,
    method: String,
    csv: String,
    noise: Option<String>,
    final_loss_mean: f64,
    final_loss_std: f64,
    trials: Vec<TrialSummary>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    csv_columns: Vec<&'static str>,
    trial_seeds: Vec<u64>,
    seed_rule: &'static str,
    decided_defaults: Vec<String>,
    methods: Vec<MethodSummary>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn decided_defaults(cfg: &RunConfig) -> Vec<String> {
    let mut out = cfg.notes.clone();
    out.push("perturbation trigger 'stagnation' compares F(mu^(n-n_out)) - F(mu^n) with F0 once n - last perturbation > n_out".into());
    out.push("the perturbation draw at iteration n uses seed stream (trial seed, 2^32 + n)".into());
    if !cfg.output.timing {
        out.push("elapsed_ms left empty so traces are byte-reproducible; pass --timing to record it".into());
    }
    out
}

pub fn metadata_json(exp: &Experiment) -> String {
    let cfg = &exp.config;
    let with_distance = cfg.target.is_some();
    let mut columns = vec!["trial", "iter", "loss", "grad_norm", "event", "elapsed_ms"];
    if with_distance {
        columns.push("w2_to_target");
    }
    let methods = exp
        .methods
        .iter()
        .zip(&cfg.optimizers)
        .map(|(m, oc)| {
            let (mean, std) = mean_std(&m.final_losses());
            MethodSummary {
                label: m.label.clone(),
                method: oc.method.name().into(),
                csv: format!("{}.csv", m.label),
                noise: m.runs.first().and_then(|r| r.perturbation).and_then(|p| serde_json::to_value(p).ok()).and_then(|v| v.as_str().map(String::from)),
                final_loss_mean: mean,
                final_loss_std: std,
                trials: m
                    .runs
                    .iter()
                    .enumerate()
                    .map(|(t, r)| TrialSummary {
                        trial: t,
                        seed: oc.seed.wrapping_add(cfg.trial_seed(t)),
                        initial_loss: exp.initial_losses[t],
                        final_loss: r.final_loss(),
                        iterations: r.rows.iter().filter(|row| row.event != Event::Terminate).map(|row| row.iter).max().unwrap_or(0),
                        perturbations: r.perturbation_count(),
                        successful_episodes: r.episodes.iter().filter(|e| e.success).count(),
                        failed_episodes: r.episodes.iter().filter(|e| !e.success).count(),
                        f0: r.f0,
                        termination: r.termination.to_string(),
                        warnings: r.warnings.clone(),
                    })
                    .collect(),
            }
        })
        .collect();
    let meta = Metadata {
        tool: "wsfn-lab",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        csv_columns: columns,
        trial_seeds: (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect(),
        seed_rule: "trial t uses seed + t for its initial ensemble and, added to each optimizer's seed, for its noise",
        decided_defaults: decided_defaults(cfg),
        methods,
    };
    serde_json::to_string_pretty(&meta).expect("metadata serializes")
}

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.dir.as_ref().map_or_else(|| Path::new("runs").join(&cfg.name), PathBuf::from)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

/// Writes one CSV per optimizer, the metadata sidecar and, when enabled, the
/// plot rendered from the CSV text.
pub fn write_artifacts(exp: &Experiment, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let with_distance = exp.config.target.is_some();
    let mut written = Vec::new();
    let mut traces = Vec::new();
    for m in &exp.methods {
        let text = trace_csv(m, with_distance);
        let path = dir.join(format!("{}.csv", m.label));
        write(&path, &text)?;
        written.push(path);
        traces.push((m.label.clone(), text));
    }
    let meta = dir.join("metadata.json");
    write(&meta, &metadata_json(exp))?;
    written.push(meta);
    if exp.config.output.plot {
        let svg = plot::loss_plot_svg(&exp.config.name, &traces).map_err(CliError::config)?;
        let path = dir.join("loss.svg");
        write(&path, &svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;
    use crate::presets;

    fn tiny() -> RunConfig {
        let mut c = presets::preset("exp3_coulomb").unwrap();
        c.apply(&Overrides { scale: Some(0.01), trials: Some(2), iters: Some(30), ..Default::default() }).unwrap();
        c
    }

    #[test]
    fn scheduling_does_not_change_traces() {
        let c = tiny();
        let a = execute(&c, 1).unwrap();
        let b = execute(&c, 4).unwrap();
        for (x, y) in a.methods.iter().zip(&b.methods) {
            assert_eq!(trace_csv(x, false), trace_csv(y, false));
        }
        assert_eq!(metadata_json(&a), metadata_json(&b));
    }

    #[test]
    fn csv_layout() {
        let exp = execute(&tiny(), 2).unwrap();
        let text = trace_csv(&exp.methods[0], false);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("trial,iter,loss,grad_norm,event,elapsed_ms"));
        assert!(lines.next().unwrap().starts_with("0,0,"));
        assert!(text.lines().any(|l| l.starts_with("1,")));
        assert!(text.lines().last().unwrap().contains(",terminate,"));
    }

    #[test]
    fn jobs_flag() {
        if std::env::var(JOBS_ENV).is_err() {
            assert_eq!(resolve_jobs(Some(3)).unwrap(), 3);
            assert!(resolve_jobs(Some(0)).is_err());
        }
    }
}
