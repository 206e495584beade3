//! Tabular data: schema, instances and CSV ingestion.
//!
//! Every cell is either a float (numeric columns), an index into the column's
//! sorted category list (categorical columns), or an explicit missing marker.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted, duplicate-free category labels. Empty for numeric columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    /// Builds a categorical column; categories are sorted lexically so that
    /// indices are stable across runs.
    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        let mut categories: Vec<String> = categories.into_iter().map(Into::into).collect();
        categories.sort();
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }

    pub fn category_index(&self, label: &str) -> Option<u32> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(label))
            .ok()
            .map(|i| i as u32)
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ColumnKind::Numeric if !self.categories.is_empty() => Err(Error::InvalidSchema(
                format!("numeric column `{}` declares categories", self.name),
            )),
            ColumnKind::Categorical => {
                if self.categories.is_empty() {
                    return Err(Error::InvalidSchema(format!(
                        "categorical column `{}` has no categories",
                        self.name
                    )));
                }
                if self.categories.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSchema(format!(
                        "categories of `{}` must be sorted and duplicate-free",
                        self.name
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct DatasetSchema {
    columns: Vec<ColumnSpec>,
    target: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    columns: Vec<ColumnSpec>,
    target: String,
    #[serde(default)]
    class_labels: Vec<String>,
}

impl TryFrom<SchemaRepr> for DatasetSchema {
    type Error = Error;

    fn try_from(repr: SchemaRepr) -> Result<Self> {
        let schema = DatasetSchema::new(repr.columns, &repr.target)?;
        if !repr.class_labels.is_empty() && repr.class_labels != schema.class_labels() {
            return Err(Error::InvalidSchema(
                "class_labels disagree with the target column categories".into(),
            ));
        }
        Ok(schema)
    }
}

impl From<DatasetSchema> for SchemaRepr {
    fn from(schema: DatasetSchema) -> Self {
        SchemaRepr {
            target: schema.target_name().to_string(),
            class_labels: schema.class_labels().to_vec(),
            columns: schema.columns,
        }
    }
}

impl DatasetSchema {
    pub fn new(columns: Vec<ColumnSpec>, target: &str) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate column `{}`", c.name)));
            }
            c.validate()?;
        }
        let target = columns
            .iter()
            .position(|c| c.name == target)
            .ok_or_else(|| Error::TargetNotFound(target.to_string()))?;
        if columns[target].kind != ColumnKind::Categorical {
            return Err(Error::InvalidSchema(format!(
                "target column `{}` must be categorical",
                columns[target].name
            )));
        }
        Ok(DatasetSchema { columns, target })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &ColumnSpec {
        &self.columns[index]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target_name(&self) -> &str {
        &self.columns[self.target].name
    }

    pub fn class_labels(&self) -> &[String] {
        &self.columns[self.target].categories
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.columns[self.target]
            .category_index(label)
            .map(|i| i as usize)
    }

    /// Indices of every non-target column, in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&i| i != self.target).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_indices()
            .into_iter()
            .map(|i| self.columns[i].name.clone())
            .collect()
    }
}

/// A single table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Cat(u32),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match *self {
            Cell::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<u32> {
        match *self {
            Cell::Cat(c) => Some(c),
            _ => None,
        }
    }

    /// Wire form: numbers stay numbers, categories become their label,
    /// missing becomes `null`.
    pub fn to_json(&self, column: &ColumnSpec) -> Value {
        match *self {
            Cell::Num(v) => serde_json::Number::from_f64(v)
                .map(Value::Number)
                .unwrap_or(Value::Null),
            Cell::Cat(c) => Value::String(column.categories[c as usize].clone()),
            Cell::Missing => Value::Null,
        }
    }

    pub fn from_json(value: &Value, column: &ColumnSpec) -> Result<Cell> {
        match (value, column.kind) {
            (Value::Null, _) => Ok(Cell::Missing),
            (Value::Number(n), ColumnKind::Numeric) => n
                .as_f64()
                .map(Cell::Num)
                .ok_or_else(|| Error::SchemaMismatch(format!("bad number in `{}`", column.name))),
            (Value::String(s), ColumnKind::Categorical) => column
                .category_index(s)
                .map(Cell::Cat)
                .ok_or_else(|| Error::UnknownCategory {
                    column: column.name.clone(),
                    value: s.clone(),
                }),
            (other, _) => Err(Error::SchemaMismatch(format!(
                "value {other} does not fit column `{}`",
                column.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub values: Vec<Cell>,
}

impl Instance {
    pub fn new(values: Vec<Cell>) -> Self {
        Instance { values }
    }

    pub fn conforms_to(&self, schema: &DatasetSchema) -> Result<()> {
        if self.values.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "instance has {} cells, schema has {} columns",
                self.values.len(),
                schema.len()
            )));
        }
        for (cell, col) in self.values.iter().zip(schema.columns()) {
            let ok = match (cell, col.kind) {
                (Cell::Missing, _) => true,
                (Cell::Num(_), ColumnKind::Numeric) => true,
                (Cell::Cat(c), ColumnKind::Categorical) => (*c as usize) < col.categories.len(),
                _ => false,
            };
            if !ok {
                return Err(Error::SchemaMismatch(format!(
                    "cell {cell:?} does not fit column `{}`",
                    col.name
                )));
            }
        }
        Ok(())
    }

    /// Feature cells (target dropped) in wire form.
    pub fn features_to_json(&self, schema: &DatasetSchema) -> Vec<Value> {
        schema
            .feature_indices()
            .into_iter()
            .map(|i| self.values[i].to_json(schema.column(i)))
            .collect()
    }

    pub fn to_json_object(&self, schema: &DatasetSchema) -> serde_json::Map<String, Value> {
        schema
            .columns()
            .iter()
            .zip(&self.values)
            .map(|(col, cell)| (col.name.clone(), cell.to_json(col)))
            .collect()
    }

    pub fn target(&self, schema: &DatasetSchema) -> Option<usize> {
        self.values[schema.target_index()]
            .as_cat()
            .map(|c| c as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTable {
    pub schema: DatasetSchema,
    pub rows: Vec<Instance>,
}

impl InstanceTable {
    pub fn new(schema: DatasetSchema, rows: Vec<Instance>) -> Result<Self> {
        for row in &rows {
            row.conforms_to(&schema)?;
        }
        Ok(InstanceTable { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> InstanceTable {
        InstanceTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Writes the table as CSV. Numbers use the shortest representation
    /// that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            let record: Vec<String> = row
                .values
                .iter()
                .zip(self.schema.columns())
                .map(|(cell, col)| match *cell {
                    Cell::Num(v) => format!("{v}"),
                    Cell::Cat(c) => col.categories[c as usize].clone(),
                    Cell::Missing => String::new(),
                })
                .collect();
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

impl fmt::Display for InstanceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rows x {} columns (target `{}`)",
            self.rows.len(),
            self.schema.len(),
            self.schema.target_name()
        )
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<InstanceTable> {
    read_csv(open(path.as_ref())?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<InstanceTable> {
    let mut rdr = csv_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "header {header:?} does not match schema columns {expected:?}"
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "data row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                schema.len()
            )));
        }
        let values = record
            .iter()
            .zip(schema.columns())
            .map(|(raw, col)| {
                let raw = raw.trim();
                if raw.is_empty() {
                    return Ok(Cell::Missing);
                }
                match col.kind {
                    ColumnKind::Numeric => Ok(parse_number(raw).map_or(Cell::Missing, Cell::Num)),
                    ColumnKind::Categorical => {
                        col.category_index(raw)
                            .map(Cell::Cat)
                            .ok_or_else(|| Error::UnknownCategory {
                                column: col.name.clone(),
                                value: raw.to_string(),
                            })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Instance { values });
    }
    Ok(InstanceTable {
        schema: schema.clone(),
        rows,
    })
}

pub fn infer_schema(path: impl AsRef<Path>, target: &str) -> Result<DatasetSchema> {
    infer_schema_from_reader(open(path.as_ref())?, target)
}

/// A column is numeric iff every non-empty cell parses as a finite number;
/// the target column is always categorical.
pub fn infer_schema_from_reader<R: Read>(reader: R, target: &str) -> Result<DatasetSchema> {
    let mut rdr = csv_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if !header.iter().any(|h| h == target) {
        return Err(Error::TargetNotFound(target.to_string()));
    }
    let mut numeric = vec![true; header.len()];
    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); header.len()];
    let mut n_rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::SchemaMismatch(format!(
                "data row {} has {} fields, expected {}",
                n_rows + 1,
                record.len(),
                header.len()
            )));
        }
        n_rows += 1;
        for (i, raw) in record.iter().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            if numeric[i] && parse_number(raw).is_none() {
                numeric[i] = false;
            }
            distinct[i].insert(raw.to_string());
        }
    }
    if n_rows == 0 {
        return Err(Error::EmptyFile);
    }
    let columns = header
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            if numeric[i] && name != target {
                ColumnSpec::numeric(name)
            } else {
                ColumnSpec::categorical(name, std::mem::take(&mut distinct[i]))
            }
        })
        .collect();
    DatasetSchema::new(columns, target)
}
