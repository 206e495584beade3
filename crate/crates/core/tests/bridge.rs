//! Wire-protocol tests against the bundled echo bridge, over both
//! standard streams and HTTP.

use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};

use lormika_core::blackbox::{BuiltinParams, EndpointSpec, ModelEndpoint};
use lormika_core::data::{Cell, ColumnSpec, DatasetSchema, Instance, InstanceTable};
use lormika_core::explain::{explain_instance, ExplainConfig};
use lormika_core::Error;

const BRIDGE: &str = env!("CARGO_BIN_EXE_lormika-echo-bridge");

fn table() -> InstanceTable {
    let schema = DatasetSchema::new(
        vec![
            ColumnSpec::numeric("a"),
            ColumnSpec::categorical("b", ["u", "v"]),
            ColumnSpec::categorical("y", ["no", "yes"]),
        ],
        "y",
    )
    .unwrap();
    let rows = (0..60)
        .map(|i| {
            let a = i as f64 / 4.0;
            Instance::new(vec![
                if i == 7 { Cell::Missing } else { Cell::Num(a) },
                Cell::Cat((i % 2) as u32),
                Cell::Cat(u32::from(a > 7.0)),
            ])
        })
        .collect();
    InstanceTable::new(schema, rows).unwrap()
}

fn process(extra: &str) -> EndpointSpec {
    EndpointSpec::Process(format!("{BRIDGE} --columns a,b --classes no,yes {extra}"))
}

fn open(spec: &EndpointSpec) -> lormika_core::Result<ModelEndpoint> {
    spec.open(&table(), &BuiltinParams::default())
}

fn expected(t: &InstanceTable) -> Vec<usize> {
    t.rows
        .iter()
        .map(|r| match r.values[0] {
            Cell::Num(a) if a > 7.0 => 1,
            _ => 0,
        })
        .collect()
}

#[test]
fn stdio_split_model_labels_every_row() {
    let t = table();
    let model = open(&process("--split a=7")).unwrap();
    assert_eq!(model.kind_name(), "external_process");
    let got: Vec<usize> = model
        .predict_batch(&t.schema, &t.rows)
        .unwrap()
        .into_iter()
        .map(|p| p.class_index)
        .collect();
    assert_eq!(got, expected(&t));
    // a second batch on the same process keeps request ids in step
    let again = model.predict_batch(&t.schema, &t.rows[..5]).unwrap();
    assert_eq!(again.len(), 5);
    assert!(model.predict_batch(&t.schema, &[]).unwrap().is_empty());
}

#[test]
fn stdio_constant_model_answers_class_zero() {
    let t = table();
    let model = open(&process("--class no")).unwrap();
    let got = model.predict_batch(&t.schema, &t.rows).unwrap();
    assert!(got.iter().all(|p| p.class_index == 0));
}

#[test]
fn short_response_is_a_count_mismatch() {
    let t = table();
    let model = open(&process("--split a=7 --short")).unwrap();
    match model.predict_batch(&t.schema, &t.rows[..4]) {
        Err(Error::PredictionCountMismatch { expected: 4, got: 3 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn handshake_rejects_foreign_columns() {
    let spec = EndpointSpec::Process(format!("{BRIDGE} --columns a,zzz --classes no,yes --class no"));
    let err = open(&spec).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn handshake_rejects_unknown_class() {
    // the bridge advertises `maybe` alongside no/yes
    let model = open(&process("--class maybe"));
    assert!(matches!(model, Err(Error::Protocol(_))));
}

#[test]
fn dead_process_is_unreachable() {
    let err = open(&EndpointSpec::Process("exit 0".into())).unwrap_err();
    assert!(err.is_endpoint_error(), "{err}");
    assert!(matches!(err, Error::EndpointUnreachable(_)), "{err}");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http_server(extra: &[&str]) -> (Server, String) {
    let mut child = Command::new(BRIDGE)
        .args(["--columns", "a,b", "--classes", "no,yes", "--http", "127.0.0.1:0"])
        .args(extra)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    (Server(child), format!("http://{}", line.trim()))
}

#[test]
fn http_split_model_matches_stdio() {
    let t = table();
    let (_server, url) = http_server(&["--split", "a=7"]);
    let spec: EndpointSpec = url.parse().unwrap();
    let model = open(&spec).unwrap();
    assert_eq!(model.kind_name(), "external_http");
    let got: Vec<usize> = model
        .predict_batch(&t.schema, &t.rows)
        .unwrap()
        .into_iter()
        .map(|p| p.class_index)
        .collect();
    assert_eq!(got, expected(&t));
}

#[test]
fn http_short_response_is_a_count_mismatch() {
    let t = table();
    let (_server, url) = http_server(&["--split", "a=7", "--short"]);
    let model = open(&EndpointSpec::Http(url)).unwrap();
    assert!(matches!(
        model.predict_batch(&t.schema, &t.rows),
        Err(Error::PredictionCountMismatch { .. })
    ));
}

#[test]
fn http_wrong_path_is_reported() {
    let (_server, url) = http_server(&["--class", "no"]);
    let err = open(&EndpointSpec::Http(format!("{url}/nested"))).unwrap_err();
    assert!(err.is_endpoint_error(), "{err}");
}

#[test]
fn http_nobody_listening_is_unreachable() {
    let err = open(&EndpointSpec::Http("http://127.0.0.1:9".into())).unwrap_err();
    assert!(matches!(err, Error::EndpointUnreachable(_)), "{err}");
}

#[test]
fn explanation_through_the_bridge_names_the_split_column() {
    let t = table();
    let model = open(&process("--split a=7")).unwrap();
    let config = ExplainConfig {
        seed: 11,
        ..Default::default()
    };
    let set = explain_instance(&t, &t.rows[26], &model, &config).unwrap();
    assert_eq!(set.global_prediction, "no");
    let mentions_a = set
        .categories
        .named()
        .iter()
        .flat_map(|(_, rules)| rules.iter())
        .any(|r| r.rule.antecedent.iter().any(|c| c.column == "a"));
    assert!(mentions_a, "{}", set.render());
    assert_eq!(set.provenance.endpoint, "external_process");
}
