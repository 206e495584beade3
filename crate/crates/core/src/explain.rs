//! End-to-end explanation of one prediction and the four rule categories.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::blackbox::ModelEndpoint;
use crate::data::{Cell, DatasetSchema, Instance, InstanceTable};
use crate::error::{Error, Result};
use crate::miner::{dedupe_redundant, mine_k_optimal, Atom, MiningConfig, MiningData, Objective, Rule};
use crate::neighborhood::{build_neighborhood, GenerationParams, Neighborhood, SimilarityParams};
use crate::preprocess::{fit, PreprocessorModel};

pub const SCHEMA_VERSION: &str = "lormika/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub seed: u64,
    pub similarity: SimilarityParams,
    /// `rng_seed` here is overwritten by `seed`.
    pub generation: GenerationParams,
    /// `objective` here is overwritten by each entry of `objectives`.
    pub mining: MiningConfig,
    pub objectives: Vec<Objective>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            seed: 0,
            similarity: SimilarityParams::default(),
            generation: GenerationParams::default(),
            mining: MiningConfig::default(),
            objectives: Objective::ALL.to_vec(),
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.generation.validate()?;
        self.mining.validate()?;
        if self.objectives.is_empty() {
            return Err(Error::InvalidParameter("at least one objective is required".into()));
        }
        Ok(())
    }

    /// The configuration actually used, with the seed propagated.
    pub fn effective(&self) -> ExplainConfig {
        let mut c = self.clone();
        c.generation.rng_seed = self.seed;
        c.mining.objective = self.objectives.first().copied().unwrap_or(c.mining.objective);
        c
    }

    pub fn with_seed(&self, seed: u64) -> ExplainConfig {
        ExplainConfig {
            seed,
            ..self.clone()
        }
        .effective()
    }
}

/// A surfaced rule together with the objectives whose top-k produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedRule {
    #[serde(flatten)]
    pub rule: Rule,
    pub objectives: Vec<Objective>,
    pub rendered: String,
}

impl AsRef<Rule> for ExplainedRule {
    fn as_ref(&self) -> &Rule {
        &self.rule
    }
}

impl AsRef<Rule> for Rule {
    fn as_ref(&self) -> &Rule {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categories<T> {
    pub current_supporting: Vec<T>,
    pub current_contradicting: Vec<T>,
    pub hypothetically_supporting: Vec<T>,
    pub counterfactual: Vec<T>,
}

impl<T> Categories<T> {
    pub fn len(&self) -> usize {
        self.current_supporting.len()
            + self.current_contradicting.len()
            + self.hypothetically_supporting.len()
            + self.counterfactual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, rules)` pairs in presentation order.
    pub fn named(&self) -> [(&'static str, &[T]); 4] {
        [
            ("current_supporting", &self.current_supporting),
            ("current_contradicting", &self.current_contradicting),
            ("hypothetically_supporting", &self.hypothetically_supporting),
            ("counterfactual", &self.counterfactual),
        ]
    }
}

/// Whether every antecedent condition holds on a discretized instance of
/// `schema`.
pub fn lhs_truth(rule: &Rule, instance: &Instance, schema: &DatasetSchema) -> Result<bool> {
    if instance.values.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "instance has {} cells, schema {}",
            instance.values.len(),
            schema.len()
        )));
    }
    for c in &rule.antecedent {
        let Some(col) = schema.columns().get(c.column_index).filter(|col| col.name == c.column) else {
            return Err(Error::SchemaMismatch(format!("rule column `{}` not in schema", c.column)));
        };
        if col.categories.get(c.value_index as usize) != Some(&c.value) {
            return Err(Error::SchemaMismatch(format!(
                "rule value `{}` not a category of `{}`",
                c.value, c.column
            )));
        }
        match instance.values[c.column_index] {
            Cell::Cat(v) if v == c.value_index => {}
            Cell::Cat(_) | Cell::Missing => return Ok(false),
            Cell::Num(_) => {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` is not discretized in the instance",
                    c.column
                )))
            }
        }
    }
    Ok(true)
}

fn category_order(a: &Rule, b: &Rule, objective: Objective) -> Ordering {
    a.rank_cmp(b, objective).then(a.class_index.cmp(&b.class_index))
}

/// Whether every antecedent condition holds on an undiscretized instance:
/// numeric conditions are checked against their interval, categorical ones
/// by label. Missing cells never satisfy a condition.
pub fn lhs_truth_raw(rule: &Rule, instance: &Instance, schema: &DatasetSchema) -> Result<bool> {
    instance.conforms_to(schema)?;
    for c in &rule.antecedent {
        let idx = schema
            .column_index(&c.column)
            .ok_or_else(|| Error::SchemaMismatch(format!("rule column `{}` not in schema", c.column)))?;
        let holds = match (c.interval, &instance.values[idx]) {
            (_, Cell::Missing) => false,
            (Some(iv), Cell::Num(v)) => iv.contains(*v),
            (None, Cell::Cat(v)) => schema.column(idx).categories[*v as usize] == c.value,
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "condition on `{}` does not match the column kind",
                    c.column
                )))
            }
        };
        if !holds {
            return Ok(false);
        }
    }
    Ok(true)
}

fn split_by<T, F>(rules: &[T], prediction: usize, lhs: F) -> Result<Categories<T>>
where
    T: AsRef<Rule> + Clone,
    F: Fn(&Rule) -> Result<bool>,
{
    let mut out = Categories {
        current_supporting: Vec::new(),
        current_contradicting: Vec::new(),
        hypothetically_supporting: Vec::new(),
        counterfactual: Vec::new(),
    };
    for r in rules {
        let lhs = lhs(r.as_ref())?;
        let rhs = r.as_ref().class_index == prediction;
        let bucket = match (lhs, rhs) {
            (true, true) => &mut out.current_supporting,
            (true, false) => &mut out.current_contradicting,
            (false, true) => &mut out.hypothetically_supporting,
            (false, false) => &mut out.counterfactual,
        };
        bucket.push(r.clone());
    }
    let by = |o: Objective| move |a: &T, b: &T| category_order(a.as_ref(), b.as_ref(), o);
    out.current_supporting.sort_by(by(Objective::Confidence));
    out.hypothetically_supporting.sort_by(by(Objective::Confidence));
    out.current_contradicting.sort_by(by(Objective::Lift));
    out.counterfactual.sort_by(by(Objective::Lift));
    Ok(out)
}

/// Splits rules by antecedent truth on a discretized instance and by
/// whether the consequent equals the prediction. Supporting lists are
/// ordered by confidence, the other two by lift.
pub fn categorize<T: AsRef<Rule> + Clone>(
    rules: &[T],
    instance: &Instance,
    schema: &DatasetSchema,
    prediction: usize,
) -> Result<Categories<T>> {
    split_by(rules, prediction, |r| lhs_truth(r, instance, schema))
}

/// As [`categorize`], for an undiscretized instance.
pub fn categorize_raw<T: AsRef<Rule> + Clone>(
    rules: &[T],
    instance: &Instance,
    schema: &DatasetSchema,
    prediction: usize,
) -> Result<Categories<T>> {
    split_by(rules, prediction, |r| lhs_truth_raw(r, instance, schema))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSummary {
    pub n_selected: usize,
    pub n_generated: usize,
    pub cut_point: f64,
    pub eligible_per_class: Vec<usize>,
    /// Black-box label counts over the combined neighborhood, by class.
    pub predicted_class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub endpoint: String,
    pub config: ExplainConfig,
    pub neighborhood: NeighborhoodSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub schema_version: String,
    pub explained_instance: Map<String, Value>,
    pub global_prediction: String,
    pub prediction_index: usize,
    #[serde(flatten)]
    pub categories: Categories<ExplainedRule>,
    pub provenance: Provenance,
}

impl ExplanationSet {
    /// Best current-supporting rule among those mined for confidence.
    pub fn top_confidence_rule(&self) -> Option<&ExplainedRule> {
        self.categories
            .current_supporting
            .iter()
            .find(|r| r.objectives.contains(&Objective::Confidence))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let inst = self
            .explained_instance
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("instance: {inst}\nprediction: {}\n", self.global_prediction));
        for (name, rules) in self.categories.named() {
            out.push_str(&format!("\n{name} ({})\n", rules.len()));
            for r in rules {
                out.push_str("  ");
                out.push_str(&r.rendered);
                out.push('\n');
            }
        }
        out
    }
}

/// Everything produced while explaining one instance.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub set: ExplanationSet,
    pub neighborhood: Neighborhood,
    /// Black-box labels of `neighborhood.combined()`.
    pub labels: Vec<usize>,
    pub preprocessor: PreprocessorModel,
}

impl Explanation {
    /// Neighborhood dump with the black-box labels attached.
    pub fn neighborhood_json(&self) -> Value {
        let schema = &self.preprocessor.schema;
        let mut v = self.neighborhood.to_json(schema);
        v["predictions"] = self
            .labels
            .iter()
            .map(|&l| Value::String(schema.class_labels()[l].clone()))
            .collect();
        v
    }

    /// Mining snapshot the rules were drawn from.
    pub fn mining_data(&self) -> Result<MiningData> {
        mining_data(&self.preprocessor, &self.neighborhood, self.labels.clone())
    }
}

pub fn mining_data(
    pre: &PreprocessorModel,
    neighborhood: &Neighborhood,
    labels: Vec<usize>,
) -> Result<MiningData> {
    let table = InstanceTable::new(pre.schema.clone(), neighborhood.combined())?;
    MiningData::with_labels(&pre.discretize(&table)?, labels)
}

/// Mines each objective, dedupes within it and merges the results. A rule
/// found by several objectives appears once, listing all of them.
pub fn mine_objectives(
    data: &MiningData,
    mining: &MiningConfig,
    objectives: &[Objective],
) -> Result<Vec<ExplainedRule>> {
    let mut merged: Vec<ExplainedRule> = Vec::new();
    let mut index: HashMap<(usize, Vec<Atom>), usize> = HashMap::new();
    for &objective in objectives {
        let cfg = MiningConfig {
            objective,
            ..mining.clone()
        };
        let rules = dedupe_redundant(&mine_k_optimal(data, &cfg)?, objective);
        for rule in rules {
            let key = (rule.class_index, rule.atoms());
            match index.get(&key) {
                Some(&i) => {
                    if !merged[i].objectives.contains(&objective) {
                        merged[i].objectives.push(objective);
                    }
                }
                None => {
                    index.insert(key, merged.len());
                    merged.push(ExplainedRule {
                        rendered: rule.render(),
                        rule,
                        objectives: vec![objective],
                    });
                }
            }
        }
    }
    Ok(merged)
}

/// Runs the whole pipeline for `instance`, a row of `train`'s schema.
pub fn explain_detailed(
    train: &InstanceTable,
    instance: &Instance,
    endpoint: &ModelEndpoint,
    endpoint_name: &str,
    config: &ExplainConfig,
) -> Result<Explanation> {
    let config = config.effective();
    config.validate()?;
    let schema = &train.schema;
    instance.conforms_to(schema)?;

    let pre = fit(train)?;
    let train_encoded = pre.transform(train)?;
    let prediction = endpoint
        .predict_batch(schema, std::slice::from_ref(instance))?
        .first()
        .ok_or(Error::PredictionCountMismatch { expected: 1, got: 0 })?
        .class_index;

    let neighborhood = build_neighborhood(
        train,
        &train_encoded,
        &pre,
        instance,
        &config.similarity,
        &config.generation,
    )?;
    let combined = neighborhood.combined();
    let labels: Vec<usize> = endpoint
        .predict_batch(schema, &combined)?
        .into_iter()
        .map(|p| p.class_index)
        .collect();
    if labels.len() != combined.len() {
        return Err(Error::PredictionCountMismatch {
            expected: combined.len(),
            got: labels.len(),
        });
    }

    let data = mining_data(&pre, &neighborhood, labels.clone())?;
    let rules = mine_objectives(&data, &config.mining, &config.objectives)?;
    let discretized = pre.discretize_instance(instance)?;
    let categories = categorize(&rules, &discretized, data.schema(), prediction)?;

    let mut predicted_class_counts = vec![0; schema.class_labels().len()];
    for &l in &labels {
        predicted_class_counts[l] += 1;
    }
    let set = ExplanationSet {
        schema_version: SCHEMA_VERSION.to_string(),
        explained_instance: instance.to_json_object(schema),
        global_prediction: schema.class_labels()[prediction].clone(),
        prediction_index: prediction,
        categories,
        provenance: Provenance {
            seed: config.seed,
            endpoint: endpoint_name.to_string(),
            neighborhood: NeighborhoodSummary {
                n_selected: neighborhood.selected.len(),
                n_generated: neighborhood.generated.len(),
                cut_point: neighborhood.cut_point,
                eligible_per_class: neighborhood.eligible_per_class.clone(),
                predicted_class_counts,
            },
            config,
        },
    };
    Ok(Explanation {
        set,
        neighborhood,
        labels,
        preprocessor: pre,
    })
}

pub fn explain_instance(
    train: &InstanceTable,
    instance: &Instance,
    endpoint: &ModelEndpoint,
    config: &ExplainConfig,
) -> Result<ExplanationSet> {
    Ok(explain_detailed(train, instance, endpoint, endpoint.kind_name(), config)?.set)
}
