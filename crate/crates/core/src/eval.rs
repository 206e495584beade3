//! Batch evaluation: quality, stability, brevity and runtime of the top
//! confidence rule over many explained instances.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{BuiltinParams, EndpointSpec, ModelEndpoint};
use crate::data::InstanceTable;
use crate::error::{Error, Result};
use crate::explain::{explain_detailed, ExplainConfig, ExplanationSet};

const SPLIT_STREAM: u64 = 3;

/// Distance of a lift from independence.
pub fn rate_of_interestingness(lift: f64) -> Result<f64> {
    if !(lift >= 0.0) {
        return Err(Error::NegativeLift(lift));
    }
    Ok((lift - 1.0).abs())
}

/// `|A ∩ B| / |A ∪ B|`, and 1 for two empty sets.
pub fn jaccard<T: Ord + Eq + Hash>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for repeat `repeat` of the `index`-th explained instance.
pub fn derive_seed(base: u64, index: u64, repeat: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_mul(0x1_0000_0001) ^ splitmix64(repeat)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    pub n_instances: usize,
    /// Explanations per instance with distinct seeds.
    pub n_repeats: usize,
    pub seed: u64,
    pub test_fraction: f64,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    pub builtin: BuiltinParams,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            n_instances: 20,
            n_repeats: 3,
            seed: 0,
            test_fraction: 0.2,
            jobs: None,
            builtin: BuiltinParams::default(),
        }
    }
}

impl BenchmarkParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 || self.n_repeats == 0 {
            return Err(Error::InvalidParameter(
                "n_instances and n_repeats must be at least 1".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidFraction(self.test_fraction));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidParameter("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Stat { mean, std, n }
    }

    pub fn cell(&self) -> String {
        if self.n == 0 {
            "n/a".into()
        } else {
            format!("{:.2} ±{:.2}", self.mean, self.std)
        }
    }
}

/// Outcome of one explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub prediction: String,
    pub top_rule: Option<String>,
    pub features: BTreeSet<String>,
    pub coverage: Option<f64>,
    pub confidence: Option<f64>,
    pub lift: Option<f64>,
}

impl RunResult {
    fn from_set(set: &ExplanationSet, seed: u64, secs: f64) -> RunResult {
        let top = set.top_confidence_rule();
        RunResult {
            seed,
            wall_time_seconds: secs,
            prediction: set.global_prediction.clone(),
            top_rule: top.map(|r| r.rendered.clone()),
            features: top
                .map(|r| r.rule.antecedent.iter().map(|c| c.column.clone()).collect())
                .unwrap_or_default(),
            coverage: top.map(|r| r.rule.metrics.coverage),
            confidence: top.map(|r| r.rule.metrics.confidence),
            lift: top.map(|r| r.rule.metrics.lift),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    /// Row index in the input table.
    pub row: usize,
    /// One entry per distinct-seed repeat.
    pub runs: Vec<RunResult>,
    /// The first repeat again, with its seed.
    pub rerun: Option<RunResult>,
    pub jaccard_distinct: Option<f64>,
    pub jaccard_same_seed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub row: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub n_instances: usize,
    pub n_repeats: usize,
    pub seed: u64,
    pub coverage: Stat,
    pub confidence: Stat,
    pub interestingness: Stat,
    pub n_features: Stat,
    pub jaccard: Stat,
    pub jaccard_same_seed: Stat,
    /// Set when a single repeat leaves no pairs; `jaccard` is then 1 by
    /// convention.
    pub jaccard_single_run: bool,
    pub wall_time_seconds: Stat,
    /// Explanations whose neighborhood yielded no current-supporting rule
    /// from the confidence objective.
    pub n_without_rule: usize,
    pub failures: Vec<Failure>,
    pub config: ExplainConfig,
    pub instances: Vec<InstanceResult>,
}

impl EvalReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned `mean ±std` table.
    pub fn text_table(&self) -> String {
        let rows = [
            ("coverage", &self.coverage),
            ("confidence", &self.confidence),
            ("interestingness", &self.interestingness),
            ("jaccard (distinct seeds)", &self.jaccard),
            ("jaccard (same seed)", &self.jaccard_same_seed),
            ("n_features", &self.n_features),
            ("wall_time_seconds", &self.wall_time_seconds),
        ];
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} / {}  ({} instances x {} repeats, seed {})",
            self.dataset, self.model, self.n_instances, self.n_repeats, self.seed
        );
        for (name, stat) in rows {
            let _ = writeln!(out, "{name:<26}{:>14}  (n={})", stat.cell(), stat.n);
        }
        if self.jaccard_single_run {
            let _ = writeln!(out, "note: single repeat, distinct-seed jaccard set to 1.0");
        }
        if self.n_without_rule > 0 {
            let _ = writeln!(out, "explanations without a top rule: {}", self.n_without_rule);
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "failed explanations: {}", self.failures.len());
        }
        out
    }

    /// One line per explanation.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "row", "repeat", "seed", "prediction", "coverage", "confidence", "lift", "n_features",
            "wall_time_seconds", "top_rule",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for inst in &self.instances {
            let labelled = inst
                .runs
                .iter()
                .enumerate()
                .map(|(i, r)| (i.to_string(), r))
                .chain(inst.rerun.iter().map(|r| ("rerun".to_string(), r)));
            for (repeat, r) in labelled {
                w.write_record([
                    inst.row.to_string(),
                    repeat,
                    r.seed.to_string(),
                    r.prediction.clone(),
                    opt(r.coverage),
                    opt(r.confidence),
                    opt(r.lift),
                    r.features.len().to_string(),
                    r.wall_time_seconds.to_string(),
                    r.top_rule.clone().unwrap_or_default(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Seeded split into `(train rows, test rows)`.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

fn mean_pairwise_jaccard(sets: &[&BTreeSet<String>]) -> Option<f64> {
    let mut vals = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            vals.push(jaccard(sets[i], sets[j]));
        }
    }
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn explain_timed(
    train: &InstanceTable,
    table: &InstanceTable,
    row: usize,
    endpoint: &ModelEndpoint,
    name: &str,
    config: &ExplainConfig,
    seed: u64,
) -> std::result::Result<RunResult, Failure> {
    let start = Instant::now();
    match explain_detailed(train, &table.rows[row], endpoint, name, &config.with_seed(seed)) {
        Ok(exp) => Ok(RunResult::from_set(&exp.set, seed, start.elapsed().as_secs_f64())),
        Err(e) => {
            log::warn!("row {row} seed {seed}: {e}");
            Err(Failure {
                row,
                seed,
                error: e.to_string(),
            })
        }
    }
}

/// Splits `table`, opens the endpoint (training builtins on the train
/// part) and explains sampled test rows `n_repeats` times each plus one
/// same-seed rerun.
pub fn run_benchmark(
    table: &InstanceTable,
    dataset_name: &str,
    endpoint: &EndpointSpec,
    config: &ExplainConfig,
    params: &BenchmarkParams,
) -> Result<EvalReport> {
    params.validate()?;
    config.validate()?;
    let (train_rows, test_rows) = train_test_split(table.len(), params.test_fraction, params.seed);
    let train = table.subset(&train_rows);
    let model = endpoint.open(&train, &params.builtin)?;
    let model_name = endpoint.to_string();

    let mut picked = test_rows;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(SPLIT_STREAM + 1);
    picked.shuffle(&mut rng);
    picked.truncate(params.n_instances);

    let work = |(i, &row): (usize, &usize)| {
        let mut failures = Vec::new();
        let mut runs = Vec::new();
        for r in 0..params.n_repeats {
            let seed = derive_seed(params.seed, i as u64, r as u64);
            match explain_timed(&train, table, row, &model, &model_name, config, seed) {
                Ok(run) => runs.push(run),
                Err(f) => failures.push(f),
            }
        }
        let rerun = runs.first().and_then(|first| {
            match explain_timed(&train, table, row, &model, &model_name, config, first.seed) {
                Ok(run) => Some(run),
                Err(f) => {
                    failures.push(f);
                    None
                }
            }
        });
        let sets: Vec<&BTreeSet<String>> = runs.iter().map(|r| &r.features).collect();
        let jaccard_distinct = if params.n_repeats == 1 && runs.len() == 1 {
            Some(1.0)
        } else {
            mean_pairwise_jaccard(&sets)
        };
        let jaccard_same_seed = rerun
            .as_ref()
            .map(|again| jaccard(&runs[0].features, &again.features));
        (
            InstanceResult {
                row,
                runs,
                rerun,
                jaccard_distinct,
                jaccard_same_seed,
            },
            failures,
        )
    };
    let results: Vec<(InstanceResult, Vec<Failure>)> = match params.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(|| picked.par_iter().enumerate().map(work).collect()),
        None => picked.par_iter().enumerate().map(work).collect(),
    };

    let mut instances = Vec::new();
    let mut failures = Vec::new();
    for (inst, f) in results {
        instances.push(inst);
        failures.extend(f);
    }
    let runs = || instances.iter().flat_map(|i| i.runs.iter());
    let collect = |f: &dyn Fn(&RunResult) -> Option<f64>| -> Vec<f64> { runs().filter_map(f).collect() };
    let interestingness = runs()
        .filter_map(|r| r.lift)
        .map(rate_of_interestingness)
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        dataset: dataset_name.to_string(),
        model: model_name,
        n_instances: instances.len(),
        n_repeats: params.n_repeats,
        seed: params.seed,
        coverage: Stat::of(&collect(&|r| r.coverage)),
        confidence: Stat::of(&collect(&|r| r.confidence)),
        interestingness: Stat::of(&interestingness),
        n_features: Stat::of(&collect(&|r| r.top_rule.as_ref().map(|_| r.features.len() as f64))),
        jaccard: Stat::of(&instances.iter().filter_map(|i| i.jaccard_distinct).collect::<Vec<_>>()),
        jaccard_same_seed: Stat::of(
            &instances.iter().filter_map(|i| i.jaccard_same_seed).collect::<Vec<_>>(),
        ),
        jaccard_single_run: params.n_repeats == 1,
        wall_time_seconds: Stat::of(&collect(&|r| Some(r.wall_time_seconds))),
        n_without_rule: runs().filter(|r| r.top_rule.is_none()).count(),
        failures,
        config: config.effective(),
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn interestingness_examples() {
        assert_eq!(rate_of_interestingness(1.0).unwrap(), 0.0);
        assert!((rate_of_interestingness(3.7).unwrap() - 2.7).abs() < 1e-12);
        assert!((rate_of_interestingness(0.2).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(rate_of_interestingness(-0.1), Err(Error::NegativeLift(_))));
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
        let j = jaccard(&set(&["age", "priors"]), &set(&["age", "sex", "priors"]));
        assert!((j - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = train_test_split(100, 0.2, 4);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_eq!(train_test_split(100, 0.2, 4), (a, b.clone()));
        assert_ne!(train_test_split(100, 0.2, 5).1, b);
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: BTreeSet<u64> = (0..10)
            .flat_map(|i| (0..10).map(move |r| derive_seed(7, i, r)))
            .collect();
        assert_eq!(seeds.len(), 100);
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 3));
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
        assert_eq!(s.cell(), "2.00 ±1.00");
    }
}
