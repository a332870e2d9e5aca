//! Run configuration: one JSON document per experiment.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use wsfn_core::measure::{read_ensemble, ParticleEnsemble};
use wsfn_core::objectives::ObjectiveSpec;
use wsfn_core::optimize::{Method, OptimizerConfig};
use wsfn_core::rng::stream;

use crate::error::CliError;

/// Stream id for initial particle positions within a trial seed.
pub const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub objective: ObjectiveSpec,
    pub init: InitSpec,
    pub optimizers: Vec<OptimizerConfig>,
    pub trials: usize,
    /// Base seed; trial `t` uses `seed + t` for its initialization and noise.
    #[serde(default)]
    pub seed: u64,
    /// Ensemble CSV of a reference measure for the `w2_to_target` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Choices the paper leaves open, recorded in the metadata sidecar.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "yes")]
    pub plot: bool,
    /// Fill the `elapsed_ms` column. Off by default so traces are byte-stable.
    #[serde(default)]
    pub timing: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, plot: true, timing: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// I.i.d. `N(mean, std²)` coordinates.
    Gaussian {
        count: usize,
        dim: usize,
        std: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
    },
    /// Network particles `(a, w)`: output weights with `output_std`, input weights with `input_std`.
    Network {
        count: usize,
        feature_dim: usize,
        input_dim: usize,
        output_std: f64,
        input_std: f64,
    },
    Csv { path: String },
}

impl InitSpec {
    pub fn count(&self) -> Option<usize> {
        match self {
            InitSpec::Gaussian { count, .. } | InitSpec::Network { count, .. } => Some(*count),
            InitSpec::Csv { .. } => None,
        }
    }

    fn set_count(&mut self, n: usize) {
        if let InitSpec::Gaussian { count, .. } | InitSpec::Network { count, .. } = self {
            *count = n;
        }
    }

    pub fn sample(&self, trial_seed: u64) -> Result<ParticleEnsemble, CliError> {
        let mut rng = stream(trial_seed, INIT_STREAM);
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        match self {
            InitSpec::Gaussian { count, dim, std, mean } => {
                let mean = mean.clone().unwrap_or_else(|| vec![0.0; *dim]);
                if mean.len() != *dim {
                    return Err(CliError::config(format!("init.mean has {} entries, expected dim {dim}", mean.len())));
                }
                let pos = (0..count * dim).map(|k| mean[k % dim] + std * normal()).collect();
                ParticleEnsemble::new(*count, *dim, pos).map_err(|e| CliError::config(format!("init: {e}")))
            }
            InitSpec::Network { count, feature_dim, input_dim, output_std, input_std } => {
                let width = feature_dim + input_dim;
                let pos = (0..count * width)
                    .map(|k| if k % width < *feature_dim { output_std * normal() } else { input_std * normal() })
                    .collect();
                ParticleEnsemble::new(*count, width, pos).map_err(|e| CliError::config(format!("init: {e}")))
            }
            InitSpec::Csv { path } => read_ensemble(path).map_err(|e| CliError::config(format!("init.path: {e}"))),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::config(msg));
        match self {
            InitSpec::Gaussian { count, dim, std, .. } => {
                if *count == 0 || *dim == 0 {
                    return bad("init.count and init.dim must be positive".into());
                }
                if !(*std >= 0.0) || !std.is_finite() {
                    return bad(format!("init.std must be finite and non-negative, got {std}"));
                }
            }
            InitSpec::Network { count, feature_dim, input_dim, output_std, input_std } => {
                if *count == 0 || *feature_dim == 0 || *input_dim == 0 {
                    return bad("init.count, init.feature_dim and init.input_dim must be positive".into());
                }
                for (field, v) in [("output_std", output_std), ("input_std", input_std)] {
                    if !(*v >= 0.0) || !v.is_finite() {
                        return bad(format!("init.{field} must be finite and non-negative, got {v}"));
                    }
                }
            }
            InitSpec::Csv { .. } => {}
        }
        Ok(())
    }
}

/// Command-line adjustments applied on top of a preset or config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scale: Option<f64>,
    pub trials: Option<usize>,
    pub iters: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub timing: bool,
    pub no_plot: bool,
}

pub const MIN_SCALED_PARTICLES: usize = 20;
pub const MIN_SCALED_ITERS: usize = 50;

fn scaled(n: usize, factor: f64, floor: usize) -> usize {
    ((n as f64 * factor).round() as usize).max(floor.min(n))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::config(format!("name: {:?} is not usable as a file name", self.name)));
        }
        if self.trials == 0 {
            return Err(CliError::config("trials: must be at least 1"));
        }
        if self.optimizers.is_empty() {
            return Err(CliError::config("optimizers: at least one optimizer is required"));
        }
        for (k, o) in self.optimizers.iter().enumerate() {
            o.validate().map_err(|e| CliError::config(format!("optimizers[{k}] ({}): {e}", o.method)))?;
        }
        self.init.validate()
    }

    /// Shrinks particle count, generated target samples and iteration budgets
    /// by `factor`, never below 20 particles and 50 iterations.
    pub fn scale(&mut self, factor: f64) -> Result<(), CliError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(CliError::config(format!("--scale must be positive, got {factor}")));
        }
        if let Some(n) = self.init.count() {
            self.init.set_count(scaled(n, factor, MIN_SCALED_PARTICLES));
        }
        if let ObjectiveSpec::CoulombMmd(c) = &mut self.objective {
            if c.target_csv.is_none() {
                c.target_samples = scaled(c.target_samples, factor, MIN_SCALED_PARTICLES);
            }
        }
        for o in &mut self.optimizers {
            o.max_iters = scaled(o.max_iters, factor, MIN_SCALED_ITERS);
        }
        Ok(())
    }

    pub fn apply(&mut self, ov: &Overrides) -> Result<(), CliError> {
        if let Some(s) = ov.scale {
            self.scale(s)?;
        }
        if let Some(t) = ov.trials {
            self.trials = t;
        }
        if let Some(n) = ov.iters {
            for o in &mut self.optimizers {
                o.max_iters = n;
            }
        }
        if let Some(names) = &ov.methods {
            let mut wanted = Vec::new();
            for n in names {
                let m = Method::parse(n).ok_or_else(|| {
                    let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                    CliError::config(format!("--methods: unknown method {n:?} (known: {})", known.join(", ")))
                })?;
                if !self.optimizers.iter().any(|o| o.method == m) {
                    return Err(CliError::config(format!("--methods: {n} is not configured in {}", self.name)));
                }
                wanted.push(m);
            }
            self.optimizers.retain(|o| wanted.contains(&o.method));
        }
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(dir) = &ov.out {
            self.output.dir = Some(dir.clone());
        }
        if ov.timing {
            self.output.timing = true;
        }
        if ov.no_plot {
            self.output.plot = false;
        }
        self.validate()
    }

    /// Output file stem per optimizer: the method name, suffixed on repeats.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.optimizers.len());
        for (k, o) in self.optimizers.iter().enumerate() {
            let repeats = self.optimizers[..k].iter().filter(|p| p.method == o.method).count();
            out.push(if repeats == 0 { o.method.name().to_string() } else { format!("{}_{}", o.method, repeats + 1) });
        }
        out
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}
