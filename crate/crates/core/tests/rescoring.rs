//! Reported rule metrics must be reproducible from the persisted
//! neighborhood dump alone.

use std::path::PathBuf;

use lormika_core::blackbox::{BuiltinKind, BuiltinParams, EndpointSpec};
use lormika_core::data::{infer_schema, load_csv};
use lormika_core::eval::{run_benchmark, BenchmarkParams};
use lormika_core::explain::{explain_detailed, lhs_truth_raw, ExplainConfig};
use lormika_core::neighborhood::Neighborhood;

fn german() -> lormika_core::data::InstanceTable {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/german.csv");
    let schema = infer_schema(&path, "class").unwrap();
    load_csv(&path, &schema).unwrap()
}

#[test]
fn metrics_match_a_rescan_of_the_neighborhood_dump() {
    let table = german();
    let model = EndpointSpec::Builtin(BuiltinKind::Tree)
        .open(&table, &BuiltinParams::default())
        .unwrap();
    for row in [3usize, 400] {
        let config = ExplainConfig {
            seed: row as u64,
            ..Default::default()
        };
        let exp = explain_detailed(&table, &table.rows[row], &model, "tree", &config).unwrap();

        let text = serde_json::to_string(&exp.neighborhood_json()).unwrap();
        let dump: serde_json::Value = serde_json::from_str(&text).unwrap();
        let hood = Neighborhood::from_json(&dump, &table.schema).unwrap();
        let rows = hood.combined();
        let labels: Vec<usize> = dump["predictions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| table.schema.class_index(l.as_str().unwrap()).unwrap())
            .collect();
        assert_eq!(rows.len(), labels.len());

        let mut checked = 0;
        for (_, rules) in exp.set.categories.named() {
            for r in rules {
                let (mut np, mut npq) = (0usize, 0usize);
                for (inst, &l) in rows.iter().zip(&labels) {
                    if lhs_truth_raw(&r.rule, inst, &table.schema).unwrap() {
                        np += 1;
                        npq += usize::from(l == r.rule.class_index);
                    }
                }
                let n = rows.len();
                let m = &r.rule.metrics;
                assert_eq!((m.counts.n, m.counts.np, m.counts.npq), (n, np, npq), "{}", r.rendered);
                assert_eq!(m.coverage, np as f64 / n as f64);
                assert_eq!(m.confidence, npq as f64 / np as f64);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}

#[test]
fn benchmark_is_reproducible_apart_from_timing() {
    let table = german();
    let spec = EndpointSpec::Builtin(BuiltinKind::Logistic);
    let params = BenchmarkParams {
        n_instances: 3,
        n_repeats: 2,
        seed: 5,
        ..Default::default()
    };
    let run = || {
        let mut v = serde_json::to_value(
            run_benchmark(&table, "german", &spec, &ExplainConfig::default(), &params).unwrap(),
        )
        .unwrap();
        v.as_object_mut().unwrap().remove("wall_time_seconds");
        for inst in v["instances"].as_array_mut().unwrap() {
            for run in inst["runs"].as_array_mut().unwrap() {
                run.as_object_mut().unwrap().remove("wall_time_seconds");
            }
            inst["rerun"].as_object_mut().map(|r| r.remove("wall_time_seconds"));
        }
        v
    };
    assert_eq!(run(), run());
}
