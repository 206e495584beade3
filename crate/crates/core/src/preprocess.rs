//! Fit-and-apply preprocessing: mean/mode imputation, z-score scaling,
//! one-hot encoding and three-bin equal-frequency discretization.
//!
//! The encoded layout puts every numeric feature first (schema order),
//! followed by the one-hot blocks of the categorical features, so the
//! one-hot offsets cover one contiguous index range.

use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, ColumnSpec, DatasetSchema, Instance, InstanceTable};
use crate::error::{Error, Result};

/// Labels given to the three sub-ranges of a discretized numeric column.
pub const BIN_LABELS: [&str; 3] = ["bin_0", "bin_1", "bin_2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureStats {
    Numeric {
        column: usize,
        mean: f64,
        stddev: f64,
        impute_value: f64,
        /// Interior cut points at the 1/3 and 2/3 empirical quantiles.
        bin_edges: [f64; 2],
        offset: usize,
    },
    Categorical {
        column: usize,
        mode_index: u32,
        one_hot_offset: usize,
        n_categories: usize,
    },
}

impl FeatureStats {
    pub fn column(&self) -> usize {
        match *self {
            FeatureStats::Numeric { column, .. } | FeatureStats::Categorical { column, .. } => {
                column
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorModel {
    pub schema: DatasetSchema,
    pub features: Vec<FeatureStats>,
    pub encoded_len: usize,
}

/// Dense encoded feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedInstance(pub Vec<f64>);

impl EncodedInstance {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Half-open numeric interval `(lo, hi]`; `None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v > lo) && self.hi.is_none_or(|hi| v <= hi)
    }
}

/// A discretized table together with the numeric interval behind every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedTable {
    pub table: InstanceTable,
    /// Indexed by column; `Some` only for columns that were numeric.
    pub intervals: Vec<Option<[Interval; 3]>>,
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bin index of `v` under the `(edge_{i-1}, edge_i]` convention.
pub fn bin_index(v: f64, edges: &[f64; 2]) -> u32 {
    if v <= edges[0] {
        0
    } else if v <= edges[1] {
        1
    } else {
        2
    }
}

pub fn fit(train: &InstanceTable) -> Result<PreprocessorModel> {
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let schema = &train.schema;
    let features = schema.feature_indices();
    let n_numeric = features
        .iter()
        .filter(|&&i| schema.column(i).is_numeric())
        .count();
    let mut next_numeric = 0;
    let mut next_onehot = n_numeric;
    let mut stats = Vec::with_capacity(features.len());
    for col in features {
        let spec = schema.column(col);
        match spec.kind {
            ColumnKind::Numeric => {
                let mut values: Vec<f64> =
                    train.rows.iter().filter_map(|r| r.values[col].as_num()).collect();
                if values.is_empty() {
                    return Err(Error::AllMissingColumn(spec.name.clone()));
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                values.sort_by(f64::total_cmp);
                let bin_edges = [
                    quantile_sorted(&values, 1.0 / 3.0),
                    quantile_sorted(&values, 2.0 / 3.0),
                ];
                stats.push(FeatureStats::Numeric {
                    column: col,
                    mean,
                    stddev: var.sqrt(),
                    impute_value: mean,
                    bin_edges,
                    offset: next_numeric,
                });
                next_numeric += 1;
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; spec.categories.len()];
                for c in train.rows.iter().filter_map(|r| r.values[col].as_cat()) {
                    counts[c as usize] += 1;
                }
                if counts.iter().all(|&c| c == 0) {
                    return Err(Error::AllMissingColumn(spec.name.clone()));
                }
                // first maximum wins, i.e. the lowest category index on ties
                let mode_index = counts
                    .iter()
                    .enumerate()
                    .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
                    .0 as u32;
                stats.push(FeatureStats::Categorical {
                    column: col,
                    mode_index,
                    one_hot_offset: next_onehot,
                    n_categories: spec.categories.len(),
                });
                next_onehot += spec.categories.len();
            }
        }
    }
    Ok(PreprocessorModel {
        schema: schema.clone(),
        features: stats,
        encoded_len: next_onehot,
    })
}

impl PreprocessorModel {
    fn check(&self, schema: &DatasetSchema) -> Result<()> {
        if schema != &self.schema {
            return Err(Error::SchemaMismatch(
                "table schema differs from the schema the preprocessor was fitted on".into(),
            ));
        }
        Ok(())
    }

    /// Replaces missing feature cells with the fitted mean or mode. The
    /// target cell is left untouched.
    pub fn impute(&self, instance: &Instance) -> Instance {
        let mut out = instance.clone();
        for f in &self.features {
            match *f {
                FeatureStats::Numeric {
                    column,
                    impute_value,
                    ..
                } => {
                    if out.values[column].is_missing() {
                        out.values[column] = Cell::Num(impute_value);
                    }
                }
                FeatureStats::Categorical {
                    column, mode_index, ..
                } => {
                    if out.values[column].is_missing() {
                        out.values[column] = Cell::Cat(mode_index);
                    }
                }
            }
        }
        out
    }

    pub fn encode(&self, instance: &Instance) -> Result<EncodedInstance> {
        instance.conforms_to(&self.schema)?;
        let mut v = vec![0.0; self.encoded_len];
        for f in &self.features {
            match *f {
                FeatureStats::Numeric {
                    column,
                    mean,
                    stddev,
                    impute_value,
                    offset,
                    ..
                } => {
                    let x = instance.values[column].as_num().unwrap_or(impute_value);
                    v[offset] = if stddev > 0.0 { (x - mean) / stddev } else { 0.0 };
                }
                FeatureStats::Categorical {
                    column,
                    mode_index,
                    one_hot_offset,
                    ..
                } => {
                    let c = instance.values[column].as_cat().unwrap_or(mode_index);
                    v[one_hot_offset + c as usize] = 1.0;
                }
            }
        }
        Ok(EncodedInstance(v))
    }

    pub fn transform(&self, table: &InstanceTable) -> Result<Vec<EncodedInstance>> {
        self.check(&table.schema)?;
        table.rows.iter().map(|r| self.encode(r)).collect()
    }

    /// Schema of discretized tables: numeric features become three-bin
    /// categorical columns, everything else is kept.
    pub fn discretized_schema(&self) -> DatasetSchema {
        let columns = self
            .schema
            .columns()
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numeric => ColumnSpec::categorical(c.name.clone(), BIN_LABELS),
                ColumnKind::Categorical => c.clone(),
            })
            .collect();
        DatasetSchema::new(columns, self.schema.target_name())
            .expect("discretized schema preserves validity")
    }

    pub fn bin_intervals(&self) -> Vec<Option<[Interval; 3]>> {
        let mut out = vec![None; self.schema.len()];
        for f in &self.features {
            if let FeatureStats::Numeric {
                column, bin_edges, ..
            } = *f
            {
                out[column] = Some([
                    Interval {
                        lo: None,
                        hi: Some(bin_edges[0]),
                    },
                    Interval {
                        lo: Some(bin_edges[0]),
                        hi: Some(bin_edges[1]),
                    },
                    Interval {
                        lo: Some(bin_edges[1]),
                        hi: None,
                    },
                ]);
            }
        }
        out
    }

    /// Imputes, then maps every numeric feature to its bin index.
    pub fn discretize_instance(&self, instance: &Instance) -> Result<Instance> {
        instance.conforms_to(&self.schema)?;
        let mut out = self.impute(instance);
        for f in &self.features {
            if let FeatureStats::Numeric {
                column, bin_edges, ..
            } = *f
            {
                let v = out.values[column].as_num().expect("imputed");
                out.values[column] = Cell::Cat(bin_index(v, &bin_edges));
            }
        }
        Ok(out)
    }

    pub fn discretize(&self, table: &InstanceTable) -> Result<DiscretizedTable> {
        self.check(&table.schema)?;
        let rows = table
            .rows
            .iter()
            .map(|r| self.discretize_instance(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscretizedTable {
            table: InstanceTable {
                schema: self.discretized_schema(),
                rows,
            },
            intervals: self.bin_intervals(),
        })
    }

    pub fn numeric_stats(&self, column: usize) -> Option<(f64, f64)> {
        self.features.iter().find_map(|f| match *f {
            FeatureStats::Numeric {
                column: c,
                mean,
                stddev,
                ..
            } if c == column => Some((mean, stddev)),
            _ => None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
