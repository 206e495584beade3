//! k-optimal class association rule mining over a discretized, labeled
//! table.

pub mod fisher;
pub mod metrics;
mod search;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fisher::fisher_one_sided;
pub use metrics::{Counts, Ratios, RuleMetrics};
pub use search::mine_class;

use crate::data::{Cell, DatasetSchema, Instance};
use crate::error::{Error, Result};
use crate::preprocess::{DiscretizedTable, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Support,
    Coverage,
    Confidence,
    Lift,
    Leverage,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Support,
        Objective::Coverage,
        Objective::Confidence,
        Objective::Lift,
        Objective::Leverage,
    ];

    /// Ranking score. Confidence and lift are ranked by their m-estimate
    /// forms, which equal the raw values when `m = 0`.
    pub fn score(self, r: &Ratios) -> f64 {
        match self {
            Objective::Support => r.support,
            Objective::Coverage => r.coverage,
            Objective::Confidence => r.confidence_m,
            Objective::Lift => r.lift_m,
            Objective::Leverage => r.leverage,
        }
    }

    pub fn score_metrics(self, m: &RuleMetrics) -> f64 {
        match self {
            Objective::Support => m.support,
            Objective::Coverage => m.coverage,
            Objective::Confidence => m.confidence_m,
            Objective::Lift => m.lift_m,
            Objective::Leverage => m.leverage,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Support => "support",
            Objective::Coverage => "coverage",
            Objective::Confidence => "confidence",
            Objective::Lift => "lift",
            Objective::Leverage => "leverage",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Rules kept per target class.
    pub k: usize,
    pub objective: Objective,
    pub max_antecedent_len: usize,
    pub min_coverage_count: usize,
    pub fisher_alpha: f64,
    pub m: f64,
    /// Class labels to mine rules for; `None` means every class.
    pub target_classes: Option<Vec<String>>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            k: 5,
            objective: Objective::Confidence,
            max_antecedent_len: 4,
            min_coverage_count: 5,
            fisher_alpha: 0.05,
            m: 2.0,
            target_classes: None,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.max_antecedent_len == 0 {
            return bad("max_antecedent_len must be at least 1");
        }
        if self.min_coverage_count == 0 {
            return bad("min_coverage_count must be at least 1");
        }
        if !(self.fisher_alpha >= 0.0 && self.fisher_alpha.is_finite()) {
            return bad("fisher_alpha must be a finite non-negative number");
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return bad("m must be a finite non-negative number");
        }
        Ok(())
    }
}

/// A `(column, value)` condition by index. Atoms order lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub column: usize,
    pub value: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    pub value: String,
    /// Numeric range behind a discretization bin.
    #[serde(with = "interval_pair")]
    pub interval: Option<Interval>,
    pub column_index: usize,
    pub value_index: u32,
}

mod interval_pair {
    use super::Interval;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Interval>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|i| [i.lo, i.hi]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Interval>, D::Error> {
        let pair = Option::<[Option<f64>; 2]>::deserialize(d)?;
        Ok(pair.map(|[lo, hi]| Interval { lo, hi }))
    }
}

impl Condition {
    pub fn atom(&self) -> Atom {
        Atom {
            column: self.column_index,
            value: self.value_index,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.interval {
            Some(Interval { lo: None, hi: Some(hi) }) => write!(f, "{} ≤ {}", self.column, fmt_bound(hi)),
            Some(Interval { lo: Some(lo), hi: None }) => write!(f, "{} > {}", self.column, fmt_bound(lo)),
            Some(Interval { lo: Some(lo), hi: Some(hi) }) => {
                write!(f, "{} < {} ≤ {}", fmt_bound(lo), self.column, fmt_bound(hi))
            }
            _ => write!(f, "{} = {}", self.column, self.value),
        }
    }
}

fn fmt_bound(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Three decimals, trailing zeros and the leading zero dropped: `.226`.
fn fmt_metric(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "" | "-0" => "0".to_string(),
        _ => match s.strip_prefix("0.") {
            Some(frac) => format!(".{frac}"),
            None => s.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Conditions in column order, at most one per column.
    pub antecedent: Vec<Condition>,
    pub consequent: String,
    pub class_index: usize,
    pub metrics: RuleMetrics,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.antecedent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antecedent.is_empty()
    }

    pub fn atoms(&self) -> Vec<Atom> {
        self.antecedent.iter().map(Condition::atom).collect()
    }

    pub fn score(&self, objective: Objective) -> f64 {
        objective.score_metrics(&self.metrics)
    }

    /// Best first: higher score, then shorter antecedent, then
    /// lexicographically smaller atom sequence.
    pub fn rank_cmp(&self, other: &Rule, objective: Objective) -> Ordering {
        other
            .score(objective)
            .total_cmp(&self.score(objective))
            .then(self.len().cmp(&other.len()))
            .then_with(|| self.atoms().cmp(&other.atoms()))
    }

    /// Same antecedent and consequent.
    pub fn same_rule(&self, other: &Rule) -> bool {
        self.class_index == other.class_index && self.atoms() == other.atoms()
    }

    /// True iff every condition holds on a discretized instance.
    pub fn lhs_holds(&self, instance: &Instance) -> bool {
        self.antecedent.iter().all(|c| {
            instance.values.get(c.column_index) == Some(&Cell::Cat(c.value_index))
        })
    }

    pub fn render(&self) -> String {
        let lhs = self
            .antecedent
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" & ");
        let m = &self.metrics;
        format!(
            "({lhs}) ⇒ {}  [supp {} cov {} conf {} lift {}]",
            self.consequent,
            fmt_metric(m.support),
            fmt_metric(m.coverage),
            fmt_metric(m.confidence),
            fmt_metric(m.lift)
        )
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Row sets as packed bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RowSet(Vec<u64>);

impl RowSet {
    fn empty(n: usize) -> Self {
        RowSet(vec![0; n.div_ceil(64)])
    }

    fn full(n: usize) -> Self {
        let mut s = RowSet::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub(crate) fn and(&self, other: &RowSet) -> RowSet {
        RowSet(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    pub(crate) fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub(crate) fn count_and(&self, other: &RowSet) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// Immutable snapshot the miner works on: categorical feature values per
/// row, one class label per row, and per-atom row sets.
#[derive(Debug, Clone)]
pub struct MiningData {
    schema: DatasetSchema,
    intervals: Vec<Option<[Interval; 3]>>,
    rows: Vec<Instance>,
    labels: Vec<usize>,
    atoms: Vec<Atom>,
    atom_rows: Vec<RowSet>,
    class_rows: Vec<RowSet>,
}

impl MiningData {
    /// `rows` must be categorical in every feature column; `labels[i]` is
    /// the class of `rows[i]`. Missing feature cells match no atom.
    pub fn new(
        schema: DatasetSchema,
        intervals: Vec<Option<[Interval; 3]>>,
        rows: Vec<Instance>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch(rows.len(), labels.len()));
        }
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        let features = schema.feature_indices();
        if features.is_empty() || features.iter().any(|&c| schema.column(c).is_numeric()) {
            return Err(Error::NoCategoricalColumns);
        }
        let n_classes = schema.class_labels().len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidParameter(format!("label index {bad} out of range")));
        }
        for r in &rows {
            r.conforms_to(&schema)?;
        }
        let n = rows.len();
        let mut atoms = Vec::new();
        let mut atom_rows = Vec::new();
        for &column in &features {
            let n_cats = schema.column(column).categories.len();
            let mut sets = vec![RowSet::empty(n); n_cats];
            for (i, r) in rows.iter().enumerate() {
                if let Cell::Cat(v) = r.values[column] {
                    sets[v as usize].insert(i);
                }
            }
            for (value, set) in sets.into_iter().enumerate() {
                if set.count() > 0 {
                    atoms.push(Atom {
                        column,
                        value: value as u32,
                    });
                    atom_rows.push(set);
                }
            }
        }
        let mut class_rows = vec![RowSet::empty(n); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            class_rows[l].insert(i);
        }
        Ok(MiningData {
            schema,
            intervals,
            rows,
            labels,
            atoms,
            atom_rows,
            class_rows,
        })
    }

    /// Uses externally supplied labels, typically black-box predictions.
    pub fn with_labels(disc: &DiscretizedTable, labels: Vec<usize>) -> Result<Self> {
        MiningData::new(
            disc.table.schema.clone(),
            disc.intervals.clone(),
            disc.table.rows.clone(),
            labels,
        )
    }

    /// Labels taken from the target column; rows without a target are
    /// dropped.
    pub fn from_labeled(disc: &DiscretizedTable) -> Result<Self> {
        let schema = &disc.table.schema;
        let (rows, labels) = disc
            .table
            .rows
            .iter()
            .filter_map(|r| r.target(schema).map(|y| (r.clone(), y)))
            .unzip();
        MiningData::new(schema.clone(), disc.intervals.clone(), rows, labels)
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Every `(column, value)` pair that occurs at least once, in order.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.class_rows[class].count()
    }

    pub(crate) fn atom_rows(&self, i: usize) -> &RowSet {
        &self.atom_rows[i]
    }

    pub(crate) fn class_rows(&self, class: usize) -> &RowSet {
        &self.class_rows[class]
    }

    pub(crate) fn full_rows(&self) -> RowSet {
        RowSet::full(self.n())
    }

    pub fn condition(&self, atom: Atom) -> Condition {
        let col = self.schema.column(atom.column);
        Condition {
            column: col.name.clone(),
            value: col.categories[atom.value as usize].clone(),
            interval: self
                .intervals
                .get(atom.column)
                .copied()
                .flatten()
                .map(|bins| bins[atom.value as usize]),
            column_index: atom.column,
            value_index: atom.value,
        }
    }

    /// Builds a rule with freshly computed metrics. Fails on an empty
    /// antecedent, a repeated column or zero coverage.
    pub fn make_rule(&self, atoms: &[Atom], class: usize, m: f64) -> Result<Rule> {
        let mut atoms = atoms.to_vec();
        atoms.sort();
        if atoms.is_empty() || atoms.windows(2).any(|w| w[0].column == w[1].column) {
            return Err(Error::InvalidParameter(
                "antecedent must be non-empty with one condition per column".into(),
            ));
        }
        let metrics = RuleMetrics::compute(self.counts(&atoms, class), m)?;
        Ok(self.assemble(&atoms, class, metrics))
    }

    pub(crate) fn assemble(&self, atoms: &[Atom], class: usize, metrics: RuleMetrics) -> Rule {
        Rule {
            antecedent: atoms.iter().map(|&a| self.condition(a)).collect(),
            consequent: self.schema.class_labels()[class].clone(),
            class_index: class,
            metrics,
        }
    }

    /// Contingency counts by a plain scan over the rows.
    pub fn counts(&self, atoms: &[Atom], class: usize) -> Counts {
        let mut np = 0;
        let mut npq = 0;
        for (r, &l) in self.rows.iter().zip(&self.labels) {
            if atoms.iter().all(|a| r.values[a.column] == Cell::Cat(a.value)) {
                np += 1;
                npq += usize::from(l == class);
            }
        }
        Counts {
            n: self.n(),
            np,
            nq: self.labels.iter().filter(|&&l| l == class).count(),
            npq,
        }
    }

    pub(crate) fn target_class_indices(&self, config: &MiningConfig) -> Result<Vec<usize>> {
        match &config.target_classes {
            None => Ok((0..self.schema.class_labels().len()).collect()),
            Some(labels) => labels
                .iter()
                .map(|l| {
                    self.schema.class_index(l).ok_or_else(|| Error::UnknownCategory {
                        column: self.schema.target_name().to_string(),
                        value: l.clone(),
                    })
                })
                .collect(),
        }
    }
}

/// Top-k rules for every target class, grouped by class index and ranked
/// within each group.
pub fn mine_k_optimal(data: &MiningData, config: &MiningConfig) -> Result<Vec<Rule>> {
    use rayon::prelude::*;
    config.validate()?;
    let classes = data.target_class_indices(config)?;
    let per_class: Vec<Vec<Rule>> = classes
        .par_iter()
        .map(|&c| mine_class(data, config, c))
        .collect();
    Ok(per_class.into_iter().flatten().collect())
}

/// Drops every rule whose antecedent strictly contains that of a kept rule
/// with the same consequent scoring at least as well. Input order is kept.
pub fn dedupe_redundant(rules: &[Rule], objective: Objective) -> Vec<Rule> {
    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.sort_by_key(|&i| rules[i].len());
    let atoms: Vec<Vec<Atom>> = rules.iter().map(Rule::atoms).collect();
    let mut keep = vec![false; rules.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let r = &rules[i];
        let dominated = kept.iter().any(|&j| {
            let s = &rules[j];
            s.class_index == r.class_index
                && s.len() < r.len()
                && atoms[j].iter().all(|a| atoms[i].contains(a))
                && s.score(objective) >= r.score(objective)
        });
        if !dominated {
            keep[i] = true;
            kept.push(i);
        }
    }
    rules
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;

    fn toy() -> MiningData {
        let schema = DatasetSchema::new(
            vec![
                ColumnSpec::categorical("a", ["0", "1"]),
                ColumnSpec::categorical("b", ["0", "1"]),
                ColumnSpec::categorical("y", ["n", "p"]),
            ],
            "y",
        )
        .unwrap();
        let raw = [(1, 0, 1), (1, 1, 1), (1, 0, 1), (1, 1, 1), (0, 0, 0), (0, 1, 0), (0, 0, 0), (0, 1, 1)];
        let rows = raw
            .iter()
            .map(|&(a, b, _)| Instance::new(vec![Cell::Cat(a), Cell::Cat(b), Cell::Missing]))
            .collect();
        let labels = raw.iter().map(|&(_, _, y)| y as usize).collect();
        MiningData::new(schema, vec![None; 3], rows, labels).unwrap()
    }

    #[test]
    fn perfect_predictor_wins() {
        let data = toy();
        let cfg = MiningConfig {
            k: 1,
            min_coverage_count: 1,
            fisher_alpha: 1.0,
            m: 0.0,
            target_classes: Some(vec!["p".into()]),
            ..Default::default()
        };
        let rules = mine_k_optimal(&data, &cfg).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].atoms(), vec![Atom { column: 0, value: 1 }]);
        assert_eq!(rules[0].metrics.confidence, 1.0);
        assert_eq!(rules[0].render(), "(a = 1) ⇒ p  [supp .5 cov .5 conf 1 lift 1.6]");
    }

    #[test]
    fn make_rule_rejects_bad_antecedents() {
        let data = toy();
        assert!(data.make_rule(&[], 0, 2.0).is_err());
        let dup = [Atom { column: 0, value: 0 }, Atom { column: 0, value: 1 }];
        assert!(data.make_rule(&dup, 0, 2.0).is_err());
        let r = data.make_rule(&[Atom { column: 1, value: 1 }, Atom { column: 0, value: 0 }], 1, 2.0).unwrap();
        assert_eq!(r.atoms()[0].column, 0);
        assert_eq!(r.metrics.counts, Counts { n: 8, np: 2, nq: 5, npq: 1 });
    }

    #[test]
    fn condition_rendering_and_json() {
        let c = Condition {
            column: "age".into(),
            value: "bin_1".into(),
            interval: Some(Interval { lo: Some(25.0), hi: Some(29.25) }),
            column_index: 0,
            value_index: 1,
        };
        assert_eq!(c.to_string(), "25 < age ≤ 29.25");
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["interval"], serde_json::json!([25.0, 29.25]));
        let open = Condition {
            interval: Some(Interval { lo: Some(29.25), hi: None }),
            ..c.clone()
        };
        assert_eq!(open.to_string(), "age > 29.25");
        let v = serde_json::to_value(&open).unwrap();
        assert_eq!(v["interval"], serde_json::json!([29.25, null]));
        let back: Condition = serde_json::from_value(v).unwrap();
        assert_eq!(back, open);
    }

    #[test]
    fn metric_formatting() {
        assert_eq!(fmt_metric(0.2261), ".226");
        assert_eq!(fmt_metric(0.24), ".24");
        assert_eq!(fmt_metric(1.2249), "1.225");
        assert_eq!(fmt_metric(0.0), "0");
        assert_eq!(fmt_metric(1.0), "1");
    }

    fn rule(data: &MiningData, atoms: &[(usize, u32)], class: usize) -> Rule {
        let atoms: Vec<Atom> = atoms.iter().map(|&(column, value)| Atom { column, value }).collect();
        data.make_rule(&atoms, class, 0.0).unwrap()
    }

    #[test]
    fn dedupe_drops_non_improving_supersets() {
        let data = toy();
        // a=1 => p has confidence 1; adding b cannot improve it
        let base = rule(&data, &[(0, 1)], 1);
        let sup = rule(&data, &[(0, 1), (1, 0)], 1);
        let out = dedupe_redundant(&[sup.clone(), base.clone()], Objective::Confidence);
        assert_eq!(out, vec![base]);
        // b=0 => n has confidence .5; adding a=0 improves it to 1
        let weak = rule(&data, &[(1, 0)], 0);
        let strong = rule(&data, &[(0, 0), (1, 0)], 0);
        let out = dedupe_redundant(&[weak.clone(), strong.clone()], Objective::Confidence);
        assert_eq!(out.len(), 2);
        // different consequents never interact
        let other = rule(&data, &[(0, 1), (1, 0)], 0);
        assert_eq!(dedupe_redundant(&[sup, other], Objective::Confidence).len(), 2);
    }

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("accuracy".parse::<Objective>().is_err());
    }
}
