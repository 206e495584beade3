//! Uniform batch prediction over any classifier. The explanation pipeline only
//! ever sees hard class labels coming back from a [`ModelEndpoint`].

pub mod external;
pub mod logistic;
pub mod protocol;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use external::{HttpModel, ProcessModel};
pub use logistic::{LogisticModel, LogisticParams};
pub use tree::{DecisionTree, TreeParams};

use crate::data::{DatasetSchema, Instance, InstanceTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prediction {
    pub class_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinKind {
    Tree,
    Logistic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuiltinParams {
    pub tree: TreeParams,
    pub logistic: LogisticParams,
}

/// Serialized form of a trained builtin model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinModel {
    Tree(DecisionTree),
    Logistic(LogisticModel),
}

pub enum ModelEndpoint {
    BuiltinTree(DecisionTree),
    BuiltinLogistic(LogisticModel),
    ExternalProcess(ProcessModel),
    ExternalHttp(HttpModel),
}

impl fmt::Debug for ModelEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelEndpoint::BuiltinTree(t) => write!(f, "builtin_tree({} nodes)", t.nodes.len()),
            ModelEndpoint::BuiltinLogistic(_) => write!(f, "builtin_logistic"),
            ModelEndpoint::ExternalProcess(p) => write!(f, "external_process({})", p.command()),
            ModelEndpoint::ExternalHttp(h) => write!(f, "external_http({})", h.base_url()),
        }
    }
}

pub fn train_builtin(
    kind: BuiltinKind,
    train: &InstanceTable,
    params: &BuiltinParams,
) -> Result<ModelEndpoint> {
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(match kind {
        BuiltinKind::Tree => ModelEndpoint::BuiltinTree(DecisionTree::train(train, &params.tree)?),
        BuiltinKind::Logistic => {
            ModelEndpoint::BuiltinLogistic(LogisticModel::train(train, &params.logistic)?)
        }
    })
}

impl ModelEndpoint {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelEndpoint::BuiltinTree(_) => "builtin_tree",
            ModelEndpoint::BuiltinLogistic(_) => "builtin_logistic",
            ModelEndpoint::ExternalProcess(_) => "external_process",
            ModelEndpoint::ExternalHttp(_) => "external_http",
        }
    }

    /// One prediction per instance, in input order. Instances are full rows of
    /// `schema`; external models receive only the feature cells.
    pub fn predict_batch(
        &self,
        schema: &DatasetSchema,
        instances: &[Instance],
    ) -> Result<Vec<Prediction>> {
        for inst in instances {
            inst.conforms_to(schema)?;
        }
        let wrap = |c: usize| Prediction { class_index: c };
        match self {
            ModelEndpoint::BuiltinTree(t) => Ok(instances.iter().map(|i| wrap(t.predict(i))).collect()),
            ModelEndpoint::BuiltinLogistic(m) => {
                instances.iter().map(|i| m.predict(i).map(wrap)).collect()
            }
            ModelEndpoint::ExternalProcess(_) | ModelEndpoint::ExternalHttp(_) => {
                if instances.is_empty() {
                    return Ok(Vec::new());
                }
                let rows = instances.iter().map(|i| i.features_to_json(schema)).collect();
                let labels = match self {
                    ModelEndpoint::ExternalProcess(p) => p.predict_labels(rows)?,
                    ModelEndpoint::ExternalHttp(h) => h.predict_labels(rows)?,
                    _ => unreachable!(),
                };
                labels
                    .iter()
                    .map(|l| {
                        schema.class_index(l).map(wrap).ok_or_else(|| {
                            Error::Protocol(format!("model predicted unknown class `{l}`"))
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn to_builtin(&self) -> Option<BuiltinModel> {
        match self {
            ModelEndpoint::BuiltinTree(t) => Some(BuiltinModel::Tree(t.clone())),
            ModelEndpoint::BuiltinLogistic(m) => Some(BuiltinModel::Logistic(m.clone())),
            _ => None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let model = self.to_builtin().ok_or_else(|| {
            Error::InvalidParameter("only builtin models can be saved".into())
        })?;
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(&model)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str::<BuiltinModel>(&text)?.into())
    }
}

impl From<BuiltinModel> for ModelEndpoint {
    fn from(m: BuiltinModel) -> Self {
        match m {
            BuiltinModel::Tree(t) => ModelEndpoint::BuiltinTree(t),
            BuiltinModel::Logistic(l) => ModelEndpoint::BuiltinLogistic(l),
        }
    }
}

/// Textual endpoint description:
/// `builtin:tree`, `builtin:logistic`, `file:<model.json>`,
/// `process:<command line>` or an `http://` URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EndpointSpec {
    Builtin(BuiltinKind),
    File(String),
    Process(String),
    Http(String),
}

impl FromStr for EndpointSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("builtin:") {
            return match rest {
                "tree" => Ok(EndpointSpec::Builtin(BuiltinKind::Tree)),
                "logistic" => Ok(EndpointSpec::Builtin(BuiltinKind::Logistic)),
                other => Err(Error::InvalidParameter(format!("unknown builtin model `{other}`"))),
            };
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(EndpointSpec::File(path.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("process:") {
            return Ok(EndpointSpec::Process(cmd.to_string()));
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(EndpointSpec::Http(s.to_string()));
        }
        Err(Error::InvalidParameter(format!("unrecognised model endpoint `{s}`")))
    }
}

impl TryFrom<String> for EndpointSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EndpointSpec> for String {
    fn from(e: EndpointSpec) -> String {
        e.to_string()
    }
}

impl fmt::Display for EndpointSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointSpec::Builtin(BuiltinKind::Tree) => write!(f, "builtin:tree"),
            EndpointSpec::Builtin(BuiltinKind::Logistic) => write!(f, "builtin:logistic"),
            EndpointSpec::File(p) => write!(f, "file:{p}"),
            EndpointSpec::Process(c) => write!(f, "process:{c}"),
            EndpointSpec::Http(u) => write!(f, "{u}"),
        }
    }
}

impl EndpointSpec {
    /// Opens the endpoint. Builtin kinds are trained on `train`.
    pub fn open(&self, train: &InstanceTable, params: &BuiltinParams) -> Result<ModelEndpoint> {
        match self {
            EndpointSpec::Builtin(kind) => train_builtin(*kind, train, params),
            EndpointSpec::File(path) => ModelEndpoint::load(path),
            EndpointSpec::Process(cmd) => {
                Ok(ModelEndpoint::ExternalProcess(ProcessModel::spawn(cmd, &train.schema)?))
            }
            EndpointSpec::Http(url) => {
                Ok(ModelEndpoint::ExternalHttp(HttpModel::connect(url, &train.schema)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, ColumnSpec};

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                ColumnSpec::numeric("a"),
                ColumnSpec::numeric("b"),
                ColumnSpec::categorical("y", ["0", "1"]),
            ],
            "y",
        )
        .unwrap()
    }

    fn table(points: &[(f64, f64, u32)]) -> InstanceTable {
        let rows = points
            .iter()
            .map(|&(a, b, y)| Instance::new(vec![Cell::Num(a), Cell::Num(b), Cell::Cat(y)]))
            .collect();
        InstanceTable::new(schema(), rows).unwrap()
    }

    fn accuracy(model: &ModelEndpoint, t: &InstanceTable) -> f64 {
        let preds = model.predict_batch(&t.schema, &t.rows).unwrap();
        let hits = preds
            .iter()
            .zip(&t.rows)
            .filter(|(p, r)| Some(p.class_index) == r.target(&t.schema))
            .count();
        hits as f64 / t.len() as f64
    }

    #[test]
    fn tree_separates_linear_toy_set() {
        let t = table(&[
            (0.0, 0.0, 0),
            (1.0, 0.5, 0),
            (0.5, 1.0, 0),
            (3.0, 3.0, 1),
            (4.0, 2.5, 1),
            (2.5, 4.0, 1),
        ]);
        let m = train_builtin(BuiltinKind::Tree, &t, &BuiltinParams::default()).unwrap();
        assert_eq!(accuracy(&m, &t), 1.0);
        // the hand-built split a <= 1.75 separates the classes; the tree agrees
        for (a, expect) in [(1.7, 0), (1.8, 1)] {
            let probe = Instance::new(vec![Cell::Num(a), Cell::Num(a), Cell::Missing]);
            let p = m.predict_batch(&t.schema, &[probe]).unwrap();
            assert_eq!(p[0].class_index, expect);
        }
    }

    #[test]
    fn tree_learns_xor_at_depth_two() {
        let t = table(&[(0.0, 0.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)]);
        let params = BuiltinParams {
            tree: TreeParams {
                max_depth: 2,
                min_samples_split: 2,
            },
            ..Default::default()
        };
        let m = train_builtin(BuiltinKind::Tree, &t, &params).unwrap();
        assert_eq!(accuracy(&m, &t), 1.0);
    }

    #[test]
    fn logistic_fits_linear_toy_set() {
        let t = table(&[
            (0.0, 0.0, 0),
            (1.0, 0.5, 0),
            (0.5, 1.0, 0),
            (3.0, 3.0, 1),
            (4.0, 2.5, 1),
            (2.5, 4.0, 1),
        ]);
        let m = train_builtin(BuiltinKind::Logistic, &t, &BuiltinParams::default()).unwrap();
        assert_eq!(accuracy(&m, &t), 1.0);
    }

    #[test]
    fn single_class_training_fails() {
        let t = table(&[(0.0, 0.0, 1), (1.0, 1.0, 1)]);
        for kind in [BuiltinKind::Tree, BuiltinKind::Logistic] {
            assert!(matches!(
                train_builtin(kind, &t, &BuiltinParams::default()),
                Err(Error::SingleClassTraining)
            ));
        }
    }

    #[test]
    fn empty_batch_and_statelessness() {
        let t = table(&[(0.0, 0.0, 0), (1.0, 1.0, 1), (2.0, 0.0, 1), (0.0, 2.0, 0)]);
        let m = train_builtin(BuiltinKind::Logistic, &t, &BuiltinParams::default()).unwrap();
        assert!(m.predict_batch(&t.schema, &[]).unwrap().is_empty());
        let all = m.predict_batch(&t.schema, &t.rows).unwrap();
        let mut parts = m.predict_batch(&t.schema, &t.rows[..2]).unwrap();
        parts.extend(m.predict_batch(&t.schema, &t.rows[2..]).unwrap());
        assert_eq!(all, parts);
    }

    #[test]
    fn saved_models_reproduce_predictions() {
        let t = table(&[(0.0, 0.0, 0), (1.0, 1.0, 1), (2.0, 0.0, 1), (0.0, 2.0, 0), (3.0, 1.0, 1)]);
        let dir = tempfile::tempdir().unwrap();
        for kind in [BuiltinKind::Tree, BuiltinKind::Logistic] {
            let m = train_builtin(kind, &t, &BuiltinParams::default()).unwrap();
            let path = dir.path().join("m.json");
            m.save(&path).unwrap();
            let back = ModelEndpoint::load(&path).unwrap();
            assert_eq!(
                m.predict_batch(&t.schema, &t.rows).unwrap(),
                back.predict_batch(&t.schema, &t.rows).unwrap()
            );
        }
    }

    #[test]
    fn endpoint_spec_parsing() {
        assert_eq!(
            "builtin:logistic".parse::<EndpointSpec>().unwrap(),
            EndpointSpec::Builtin(BuiltinKind::Logistic)
        );
        assert_eq!(
            "process:python3 bridge.py --stdio".parse::<EndpointSpec>().unwrap(),
            EndpointSpec::Process("python3 bridge.py --stdio".into())
        );
        assert!(matches!(
            "http://127.0.0.1:9/".parse::<EndpointSpec>().unwrap(),
            EndpointSpec::Http(_)
        ));
        assert!("builtin:svm".parse::<EndpointSpec>().is_err());
        assert!("gopher://x".parse::<EndpointSpec>().is_err());
        let s = EndpointSpec::File("m.json".into());
        assert_eq!(s.to_string().parse::<EndpointSpec>().unwrap(), s);
    }
}
