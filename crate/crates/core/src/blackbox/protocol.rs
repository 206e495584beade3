//! Wire format shared with external model bridges.
//!
//! One JSON document per line (stdio) or per request body (HTTP):
//!
//! ```text
//! -> {"op":"schema"}
//! <- {"columns":["age","sex"],"classes":["bad","good"]}
//! -> {"id":1,"instances":[[31,"M"],[null,"F"]]}
//! <- {"id":1,"predictions":["good","bad"]}
//! <- {"id":1,"error":"..."}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: u64,
    pub instances: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: u64,
    pub predictions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: Option<u64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub columns: Vec<String>,
    pub classes: Vec<String>,
}

pub fn schema_request() -> Value {
    serde_json::json!({ "op": "schema" })
}

/// Server-side dispatcher for one request document. Never fails: malformed
/// input yields an error envelope.
pub fn handle_request<F>(line: &str, schema: &SchemaResponse, predict: F) -> String
where
    F: Fn(&[Vec<Value>]) -> Result<Vec<String>, String>,
{
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_line(None, format!("malformed request: {e}")),
    };
    if value.get("op").and_then(Value::as_str) == Some("schema") {
        return serde_json::to_string(schema).expect("serializable");
    }
    let id = value.get("id").and_then(Value::as_u64);
    let req: PredictRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return error_line(id, format!("malformed request: {e}")),
    };
    if let Some(bad) = req.instances.iter().position(|r| r.len() != schema.columns.len()) {
        return error_line(
            Some(req.id),
            format!(
                "instance {bad} has {} cells, expected {}",
                req.instances[bad].len(),
                schema.columns.len()
            ),
        );
    }
    match predict(&req.instances) {
        Ok(predictions) => serde_json::to_string(&PredictResponse {
            id: req.id,
            predictions,
        })
        .expect("serializable"),
        Err(e) => error_line(Some(req.id), e),
    }
}

fn error_line(id: Option<u64>, error: String) -> String {
    serde_json::to_string(&ErrorResponse { id, error }).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaResponse {
        SchemaResponse {
            columns: vec!["a".into()],
            classes: vec!["n".into(), "p".into()],
        }
    }

    fn constant(rows: &[Vec<Value>]) -> Result<Vec<String>, String> {
        Ok(vec!["n".to_string(); rows.len()])
    }

    #[test]
    fn handshake_and_predict() {
        let s = handle_request(r#"{"op":"schema"}"#, &schema(), constant);
        assert_eq!(s, r#"{"columns":["a"],"classes":["n","p"]}"#);
        let p = handle_request(r#"{"id":4,"instances":[[1],[null]]}"#, &schema(), constant);
        assert_eq!(p, r#"{"id":4,"predictions":["n","n"]}"#);
    }

    #[test]
    fn malformed_lines_get_error_envelopes() {
        let e: ErrorResponse =
            serde_json::from_str(&handle_request("{nope", &schema(), constant)).unwrap();
        assert_eq!(e.id, None);
        let e: ErrorResponse = serde_json::from_str(&handle_request(
            r#"{"id":2,"instances":[[1,2]]}"#,
            &schema(),
            constant,
        ))
        .unwrap();
        assert_eq!(e.id, Some(2));
    }
}
