//! `lormika`: explain single predictions of a tabular classifier with
//! k-optimal class association rules.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 model endpoint error.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lormika_core::data::{infer_schema, load_csv, DatasetSchema, InstanceTable};
use lormika_core::eval::run_benchmark;
use lormika_core::explain::{explain_detailed, mine_objectives, ExplainedRule, SCHEMA_VERSION};
use lormika_core::miner::MiningData;
use lormika_core::preprocess::fit;
use serde::Serialize;

use config::{CommonArgs, InputArgs, MiningArgs, ModelArgs, NeighborhoodArgs, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Endpoint(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Endpoint(_) => 4,
        }
    }

    /// Classifies a library error raised while validating parameters.
    pub fn from_config(e: lormika_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Endpoint(m) => write!(f, "model endpoint error: {m}"),
        }
    }
}

impl From<lormika_core::Error> for CliError {
    fn from(e: lormika_core::Error) -> Self {
        use lormika_core::Error as E;
        if e.is_endpoint_error() {
            return CliError::Endpoint(e.to_string());
        }
        match e {
            E::InvalidParameter(_) | E::NonPositiveWidth(_) | E::InvalidFraction(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lormika", version, about = "Rule-based local explanations for black-box classifiers")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explain the prediction for one row of the data.
    Explain {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        hood: NeighborhoodArgs,
        /// Zero-based data row to explain.
        #[arg(long)]
        row: Option<usize>,
        /// Also write the neighborhood with its black-box labels.
        #[arg(long)]
        neighborhood_out: Option<PathBuf>,
        /// Save the trained builtin model for later `file:` use.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Mine k-optimal rules directly on a labelled CSV.
    Mine {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mining: MiningArgs,
    },
    /// Benchmark explanation quality and stability over sampled rows.
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        mining: MiningArgs,
        #[command(flatten)]
        hood: NeighborhoodArgs,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        test_fraction: Option<f64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write per-run rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the schema inferred from a CSV.
    InferSchema {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Handshake with a model endpoint and run a small probe batch.
    ServeCheck {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Rows sent in the probe batch.
        #[arg(long, default_value_t = 5)]
        probe: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lormika: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Explain {
            input,
            common,
            model,
            mining,
            hood,
            row,
            neighborhood_out,
            save_model,
        } => {
            let mut cfg = common.base()?;
            input.apply(&mut cfg);
            model.apply(&mut cfg);
            mining.apply(&mut cfg);
            hood.apply(&mut cfg);
            if common.dump_config {
                return dump_config(cfg, true, common.out.as_deref());
            }
            cfg.validate()?;
            let row = row.ok_or_else(|| CliError::Config("--row is required".into()))?;
            let table = load_table(&cfg)?;
            let instance = table.rows.get(row).ok_or_else(|| {
                CliError::Config(format!("--row {row} is out of range ({} rows)", table.len()))
            })?;
            let spec = cfg.endpoint()?;
            log::info!("opening model {spec}");
            let endpoint = spec.open(&table, &cfg.builtin)?;
            if let Some(path) = save_model {
                endpoint.save(&path)?;
            }
            let exp = explain_detailed(&table, instance, &endpoint, &spec.to_string(), &cfg.explain)?;
            if let Some(path) = neighborhood_out {
                write_text(Some(&path), &to_json(&exp.neighborhood_json())?)?;
            }
            if !common.quiet {
                eprintln!("{}", exp.set.render());
            }
            emit_json(&exp.set, common.out.as_deref())
        }
        Command::Mine { input, common, mining } => {
            let mut cfg = common.base()?;
            input.apply(&mut cfg);
            mining.apply(&mut cfg);
            if common.dump_config {
                return dump_config(cfg, false, common.out.as_deref());
            }
            cfg.validate()?;
            let table = load_table(&cfg)?;
            let pre = fit(&table)?;
            let data = MiningData::from_labeled(&pre.discretize(&table)?)?;
            let mut rules = mine_objectives(&data, &cfg.explain.effective().mining, &cfg.explain.objectives)?;
            rules.sort_by(|a, b| {
                a.rule
                    .class_index
                    .cmp(&b.rule.class_index)
                    .then_with(|| a.rule.rank_cmp(&b.rule, a.objectives[0]))
            });
            if !common.quiet {
                for r in &rules {
                    eprintln!("{}", r.rendered);
                }
            }
            emit_json(
                &MineOutput {
                    schema_version: SCHEMA_VERSION,
                    n_rows: data.n(),
                    config: &cfg.explain.effective(),
                    rules: &rules,
                },
                common.out.as_deref(),
            )
        }
        Command::Evaluate {
            input,
            common,
            model,
            mining,
            hood,
            instances,
            repeats,
            test_fraction,
            jobs,
            csv,
        } => {
            let mut cfg = common.base()?;
            input.apply(&mut cfg);
            model.apply(&mut cfg);
            mining.apply(&mut cfg);
            hood.apply(&mut cfg);
            if let Some(n) = instances {
                cfg.evaluate.n_instances = n;
            }
            if let Some(n) = repeats {
                cfg.evaluate.n_repeats = n;
            }
            if let Some(f) = test_fraction {
                cfg.evaluate.test_fraction = f;
            }
            if jobs.is_some() {
                cfg.evaluate.jobs = jobs;
            }
            if common.dump_config {
                return dump_config(cfg, true, common.out.as_deref());
            }
            cfg.validate()?;
            let table = load_table(&cfg)?;
            let name = cfg
                .data
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let report = run_benchmark(&table, &name, &cfg.endpoint()?, &cfg.explain, &cfg.benchmark_params())?;
            if let Some(path) = csv {
                write_text(Some(&path), &report.to_csv()?)?;
            }
            if !common.quiet {
                eprint!("{}", report.text_table());
            }
            if !report.failures.is_empty() && report.failures.len() == report.n_instances * report.n_repeats {
                emit_json(&report, common.out.as_deref())?;
                return Err(CliError::Endpoint(format!(
                    "every explanation failed; first error: {}",
                    report.failures[0].error
                )));
            }
            emit_json(&report, common.out.as_deref())
        }
        Command::InferSchema { data, target, out } => {
            let schema = infer_schema(&data, &target)?;
            emit_json(&schema, out.as_deref())
        }
        Command::ServeCheck { input, model, probe } => {
            let mut cfg = RunConfig::default();
            input.apply(&mut cfg);
            model.apply(&mut cfg);
            let spec = cfg.endpoint()?;
            let (schema, table) = match (&cfg.data, &cfg.schema) {
                (Some(_), _) => {
                    let t = load_table(&cfg)?;
                    (t.schema.clone(), Some(t))
                }
                (None, Some(path)) => (read_schema(path)?, None),
                (None, None) => return Err(CliError::Config("serve-check needs --data or --schema".into())),
            };
            let endpoint = match &table {
                Some(t) => spec.open(t, &cfg.builtin)?,
                None => spec.open(&InstanceTable::new(schema.clone(), Vec::new())?, &cfg.builtin)?,
            };
            let mut labels = Vec::new();
            if let Some(t) = &table {
                let batch = &t.rows[..probe.min(t.len())];
                for p in endpoint.predict_batch(&schema, batch)? {
                    labels.push(schema.class_labels()[p.class_index].clone());
                }
            }
            emit_json(
                &serde_json::json!({
                    "endpoint": spec.to_string(),
                    "kind": endpoint.kind_name(),
                    "columns": schema.feature_names(),
                    "classes": schema.class_labels(),
                    "probe_predictions": labels,
                    "ok": true,
                }),
                None,
            )
        }
    }
}

#[derive(Serialize)]
struct MineOutput<'a> {
    schema_version: &'a str,
    n_rows: usize,
    config: &'a lormika_core::explain::ExplainConfig,
    rules: &'a [ExplainedRule],
}

/// Writes the configuration a run would use, in a form `--config` reloads.
fn dump_config(mut cfg: RunConfig, with_model: bool, out: Option<&Path>) -> Result<(), CliError> {
    cfg.explain = cfg.explain.effective();
    cfg.model = if with_model { Some(cfg.endpoint()?) } else { None };
    emit_json(&cfg, out)
}

fn read_schema(path: &Path) -> Result<DatasetSchema, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read schema {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("schema {}: {e}", path.display())))
}

fn load_table(cfg: &RunConfig) -> Result<InstanceTable, CliError> {
    let data = cfg
        .data
        .as_deref()
        .ok_or_else(|| CliError::Config("--data is required".into()))?;
    let schema = match (&cfg.schema, &cfg.target) {
        (Some(path), target) => {
            let schema = read_schema(path)?;
            if let Some(t) = target {
                if t != schema.target_name() {
                    return Err(CliError::Config(format!(
                        "--target {t} disagrees with schema target {}",
                        schema.target_name()
                    )));
                }
            }
            schema
        }
        (None, Some(target)) => infer_schema(data, target)?,
        (None, None) => return Err(CliError::Config("--target is required (see --help)".into())),
    };
    log::info!("loading {}", data.display());
    Ok(load_csv(data, &schema)?)
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))
}

fn emit_json<T: Serialize + ?Sized>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    write_text(out, &to_json(value)?)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    let text = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    let result = match out {
        Some(path) => std::fs::write(path, &text),
        None => {
            let mut stdout = std::io::stdout().lock();
            match write!(stdout, "{text}").and_then(|_| stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => other,
            }
        }
    };
    result.map_err(|e| CliError::Data(format!("cannot write output: {e}")))
}
