//! Minimal model bridge used for protocol testing.
//!
//! ```text
//! lormika-echo-bridge --columns a,b --classes no,yes --split a=3.5 [--http 127.0.0.1:0]
//! ```
//!
//! With `--split COL=THR` it answers the first class when `COL <= THR` (or the
//! cell is null) and the second class otherwise. With `--class LABEL` every
//! answer is `LABEL`. `--short` drops the last prediction of every batch.

use std::io::{BufRead, Write};
use std::process::ExitCode;

use lormika_core::blackbox::protocol::{handle_request, SchemaResponse};
use serde_json::Value;

struct Rule {
    split: Option<(usize, f64)>,
    constant: Option<String>,
    classes: Vec<String>,
    short: bool,
}

impl Rule {
    fn predict(&self, rows: &[Vec<Value>]) -> Result<Vec<String>, String> {
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let label = if let Some(c) = &self.constant {
                c.clone()
            } else {
                let (col, thr) = self.split.expect("validated");
                match &row[col] {
                    Value::Null => self.classes[0].clone(),
                    Value::Number(n) if n.as_f64().unwrap_or(f64::NAN) <= thr => self.classes[0].clone(),
                    Value::Number(_) => self.classes[1].clone(),
                    other => return Err(format!("column {col} is not numeric: {other}")),
                }
            };
            out.push(label);
        }
        if self.short {
            out.pop();
        }
        Ok(out)
    }
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

fn parse_args() -> Result<(SchemaResponse, Rule, Option<String>), String> {
    let mut args = std::env::args().skip(1);
    let (mut columns, mut classes) = (Vec::new(), Vec::new());
    let (mut split, mut constant, mut http, mut short) = (None, None, None, false);
    while let Some(flag) = args.next() {
        let mut value = || args.next().ok_or_else(|| format!("{flag} needs a value"));
        match flag.as_str() {
            "--columns" => columns = list(&value()?),
            "--classes" => classes = list(&value()?),
            "--class" => constant = Some(value()?),
            "--split" => split = Some(value()?),
            "--http" => http = Some(value()?),
            "--short" => short = true,
            other => return Err(format!("unknown flag {other}")),
        }
    }
    let split = match split {
        None => None,
        Some(s) => {
            let (col, thr) = s.split_once('=').ok_or("--split expects COL=THR")?;
            let idx = columns
                .iter()
                .position(|c| c == col)
                .ok_or_else(|| format!("split column {col} not in --columns"))?;
            Some((idx, thr.parse::<f64>().map_err(|e| e.to_string())?))
        }
    };
    if split.is_none() && constant.is_none() {
        return Err("one of --split or --class is required".into());
    }
    if split.is_some() && classes.len() < 2 {
        return Err("--split needs at least two --classes".into());
    }
    if let Some(c) = &constant {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }
    Ok((
        SchemaResponse { columns, classes },
        Rule { split, constant, classes: Vec::new(), short },
        http,
    ))
}

fn main() -> ExitCode {
    let (schema, mut rule, http) = match parse_args() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("lormika-echo-bridge: {e}");
            return ExitCode::from(2);
        }
    };
    rule.classes = schema.classes.clone();
    let answer = |line: &str| handle_request(line, &schema, |rows| rule.predict(rows));
    match http {
        None => {
            let stdin = std::io::stdin();
            let mut stdout = std::io::stdout().lock();
            for line in stdin.lock().lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if writeln!(stdout, "{}", answer(&line)).and_then(|_| stdout.flush()).is_err() {
                    break;
                }
            }
        }
        Some(addr) => {
            let server = match tiny_http::Server::http(&addr) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("lormika-echo-bridge: cannot bind {addr}: {e}");
                    return ExitCode::from(4);
                }
            };
            // the bound address goes to stdout so callers can use port 0
            println!("{}", server.server_addr());
            let _ = std::io::stdout().flush();
            for mut request in server.incoming_requests() {
                let mut body = String::new();
                let reply = if request.url().trim_end_matches('/') != "/predict" {
                    tiny_http::Response::from_string("not found").with_status_code(404)
                } else if request.as_reader().read_to_string(&mut body).is_err() {
                    tiny_http::Response::from_string("bad body").with_status_code(400)
                } else {
                    tiny_http::Response::from_string(answer(&body))
                };
                let _ = request.respond(reply);
            }
        }
    }
    ExitCode::SUCCESS
}
