//! Clients for models living outside this process: a child process speaking
//! newline-delimited JSON over its standard streams, or an HTTP server
//! accepting `POST /predict`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;

use super::protocol::{schema_request, PredictRequest, SchemaResponse};
use crate::data::DatasetSchema;
use crate::error::{Error, Result};

/// Interprets a response document: either a labelled prediction list with the
/// expected id, or an error envelope.
pub(crate) fn parse_predictions(value: Value, id: u64, expected: usize) -> Result<Vec<String>> {
    if let Some(err) = value.get("error") {
        return Err(Error::Protocol(format!(
            "model reported: {}",
            err.as_str().unwrap_or("<non-string error>")
        )));
    }
    let got_id = value
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Protocol("response lacks an integer `id`".into()))?;
    if got_id != id {
        return Err(Error::Protocol(format!("response id {got_id} != request id {id}")));
    }
    let preds = value
        .get("predictions")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol("response lacks `predictions`".into()))?;
    if preds.len() != expected {
        return Err(Error::PredictionCountMismatch {
            expected,
            got: preds.len(),
        });
    }
    preds
        .iter()
        .map(|p| {
            p.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Protocol(format!("prediction {p} is not a string")))
        })
        .collect()
}

pub(crate) fn check_handshake(value: Value, schema: &DatasetSchema) -> Result<SchemaResponse> {
    let resp: SchemaResponse = serde_json::from_value(value)
        .map_err(|e| Error::Protocol(format!("bad schema handshake: {e}")))?;
    let expected = schema.feature_names();
    if resp.columns != expected {
        return Err(Error::Protocol(format!(
            "model columns {:?} differ from dataset features {:?}",
            resp.columns, expected
        )));
    }
    for class in &resp.classes {
        if schema.class_index(class).is_none() {
            return Err(Error::Protocol(format!("model class `{class}` unknown to the dataset")));
        }
    }
    Ok(resp)
}

struct ProcessIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl ProcessIo {
    fn roundtrip(&mut self, request: &Value) -> Result<Value> {
        let line = serde_json::to_string(request)?;
        let gone = |e: std::io::Error| Error::EndpointUnreachable(format!("model process: {e}"));
        self.stdin.write_all(line.as_bytes()).map_err(gone)?;
        self.stdin.write_all(b"\n").map_err(gone)?;
        self.stdin.flush().map_err(gone)?;
        let mut reply = String::new();
        let n = self.stdout.read_line(&mut reply).map_err(gone)?;
        if n == 0 {
            return Err(Error::EndpointUnreachable("model process closed its output".into()));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response line: {e}")))
    }
}

/// A model bridge running as a child process. One request is in flight at
/// a time.
pub struct ProcessModel {
    command: String,
    io: Mutex<ProcessIo>,
    pub handshake: SchemaResponse,
}

impl std::fmt::Debug for ProcessModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessModel").field("command", &self.command).finish()
    }
}

impl ProcessModel {
    /// Spawns `command` through `sh -c` and performs the schema handshake.
    pub fn spawn(command: &str, schema: &DatasetSchema) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::EndpointUnreachable(format!("cannot start `{command}`: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped"));
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut io = ProcessIo {
            child,
            stdin,
            stdout,
            next_id: 1,
        };
        let handshake = check_handshake(io.roundtrip(&schema_request())?, schema)?;
        Ok(ProcessModel {
            command: command.to_string(),
            io: Mutex::new(io),
            handshake,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn predict_labels(&self, instances: Vec<Vec<Value>>) -> Result<Vec<String>> {
        let mut io = self.io.lock().unwrap_or_else(|p| p.into_inner());
        let id = io.next_id;
        io.next_id += 1;
        let expected = instances.len();
        let req = serde_json::to_value(PredictRequest { id, instances })?;
        parse_predictions(io.roundtrip(&req)?, id, expected)
    }
}

impl Drop for ProcessModel {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// A model server reachable at `{base_url}/predict`.
#[derive(Debug)]
pub struct HttpModel {
    base_url: String,
    agent: ureq::Agent,
    next_id: std::sync::atomic::AtomicU64,
    pub handshake: SchemaResponse,
}

impl HttpModel {
    pub fn connect(base_url: &str, schema: &DatasetSchema) -> Result<Self> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        let mut model = HttpModel {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: config.into(),
            next_id: std::sync::atomic::AtomicU64::new(1),
            handshake: SchemaResponse {
                columns: vec![],
                classes: vec![],
            },
        };
        model.handshake = check_handshake(model.post(&schema_request())?, schema)?;
        Ok(model)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post(&self, body: &Value) -> Result<Value> {
        let url = format!("{}/predict", self.base_url);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => Error::Protocol(format!("HTTP status {code} from {url}")),
            other => Error::EndpointUnreachable(format!("{url}: {other}")),
        })?;
        resp.body_mut()
            .with_config()
            .limit(1 << 30)
            .read_json::<Value>()
            .map_err(|e| Error::Protocol(format!("malformed response body: {e}")))
    }

    pub fn predict_labels(&self, instances: Vec<Vec<Value>>) -> Result<Vec<String>> {
        let id = self.next_id.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let expected = instances.len();
        let req = serde_json::to_value(PredictRequest { id, instances })?;
        parse_predictions(self.post(&req)?, id, expected)
    }
}
