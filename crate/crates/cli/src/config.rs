//! Run configuration: defaults, then an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use lormika_core::blackbox::{BuiltinParams, EndpointSpec};
use lormika_core::eval::BenchmarkParams;
use lormika_core::explain::ExplainConfig;
use lormika_core::miner::Objective;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MODEL_CMD_ENV: &str = "LORMIKA_MODEL_CMD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub n_instances: usize,
    pub n_repeats: usize,
    pub test_fraction: f64,
    pub jobs: Option<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        let b = BenchmarkParams::default();
        EvaluateConfig {
            n_instances: b.n_instances,
            n_repeats: b.n_repeats,
            test_fraction: b.test_fraction,
            jobs: b.jobs,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    /// Schema JSON as written by `infer-schema`; replaces inference.
    pub schema: Option<PathBuf>,
    pub model: Option<EndpointSpec>,
    pub builtin: BuiltinParams,
    /// `explain.seed` seeds every command.
    pub explain: ExplainConfig,
    pub evaluate: EvaluateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn benchmark_params(&self) -> BenchmarkParams {
        BenchmarkParams {
            n_instances: self.evaluate.n_instances,
            n_repeats: self.evaluate.n_repeats,
            seed: self.explain.seed,
            test_fraction: self.evaluate.test_fraction,
            jobs: self.evaluate.jobs,
            builtin: self.builtin.clone(),
        }
    }

    /// The model to use, falling back to the bridge command in the
    /// environment and then to the builtin logistic model.
    pub fn endpoint(&self) -> Result<EndpointSpec, CliError> {
        let from_env = || {
            std::env::var(MODEL_CMD_ENV)
                .ok()
                .filter(|c| !c.trim().is_empty())
                .map(EndpointSpec::Process)
        };
        match &self.model {
            Some(EndpointSpec::Process(cmd)) if cmd.trim().is_empty() => from_env().ok_or_else(|| {
                CliError::Config(format!("`process:` without a command and {MODEL_CMD_ENV} is unset"))
            }),
            Some(spec) => Ok(spec.clone()),
            None => Ok(from_env().unwrap_or_else(|| "builtin:logistic".parse().expect("valid spec"))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.explain.effective().validate().map_err(CliError::from_config)?;
        self.benchmark_params().validate().map_err(CliError::from_config)
    }
}

/// Input selection shared by the data-reading commands.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the class column.
    #[arg(long)]
    pub target: Option<String>,
    /// Schema JSON from `infer-schema`, used instead of inference.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

/// Options every pipeline command accepts.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress the human-readable rendering on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// builtin:logistic, builtin:tree, file:PATH, process:CMD or an http(s) URL.
    #[arg(long)]
    pub model: Option<EndpointSpec>,
}

#[derive(Debug, Args)]
pub struct MiningArgs {
    /// Rules kept per objective and class.
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated objectives.
    #[arg(long, value_delimiter = ',')]
    pub objective: Option<Vec<Objective>>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_coverage: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    /// Restrict mining to these consequent classes.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct NeighborhoodArgs {
    /// L: guaranteed neighbors per class.
    #[arg(long)]
    pub min_per_class: Option<usize>,
    /// M: cap on neighbors per class.
    #[arg(long)]
    pub max_per_class: Option<usize>,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub n_generated: Option<usize>,
    #[arg(long)]
    pub crossover_fraction: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl InputArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        if self.target.is_some() {
            c.target = self.target.clone();
        }
        if self.schema.is_some() {
            c.schema = self.schema.clone();
        }
    }
}

impl CommonArgs {
    pub fn base(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.explain.seed, self.seed);
        Ok(c)
    }
}

impl ModelArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if self.model.is_some() {
            c.model = self.model.clone();
        }
    }
}

impl MiningArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let m = &mut c.explain.mining;
        set(&mut m.k, self.k);
        set(&mut m.max_antecedent_len, self.max_len);
        set(&mut m.min_coverage_count, self.min_coverage);
        set(&mut m.fisher_alpha, self.alpha);
        set(&mut m.m, self.m);
        if self.classes.is_some() {
            m.target_classes = self.classes.clone();
        }
        set(&mut c.explain.objectives, self.objective.clone());
    }
}

impl NeighborhoodArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.explain.similarity;
        set(&mut s.min_per_class, self.min_per_class);
        if self.max_per_class.is_some() {
            s.max_per_class = self.max_per_class;
        }
        if self.kernel_width.is_some() {
            s.kernel_width = self.kernel_width;
        }
        let g = &mut c.explain.generation;
        set(&mut g.n_generated, self.n_generated);
        set(&mut g.crossover_fraction, self.crossover_fraction);
    }
}
