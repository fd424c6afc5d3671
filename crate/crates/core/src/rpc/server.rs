//! Scorer side of the protocol, for scorers hosted in Rust.

use std::io::{self, BufRead, Write};

use serde_json::Value;

use super::{read_message, write_message, ErrorCode, ErrorMessage, HelloReply, RpcError, ScoreMatrixResponse, PROTOCOL_VERSION};
use crate::metrics::Grid;

/// A scorer that answers whole-matrix requests.
pub trait MatrixScorer {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn needs_source(&self) -> bool;
    fn score_matrix(&mut self, source: &str, candidates: &[String], support: &[String]) -> Result<Grid, String>;
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Protocol version advertised in the hello reply.
    pub protocol: Option<u32>,
}

/// Answers requests from `input` until it is closed.
pub fn serve<S, R, W>(scorer: &mut S, input: &mut R, output: &mut W, opts: &ServeOptions) -> io::Result<()>
where
    S: MatrixScorer + ?Sized,
    R: BufRead,
    W: Write,
{
    loop {
        let value = match read_message(input) {
            Ok(Some(v)) => v,
            Ok(None) => return Ok(()),
            Err(RpcError::Transport(e)) => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, e)),
            Err(e) => {
                write_message(output, &ErrorMessage::new(None, ErrorCode::BadRequest, e.to_string()))?;
                continue;
            }
        };
        handle_message(scorer, value, output, opts)?;
    }
}

/// Handles one decoded message, writing exactly one reply line.
pub fn handle_message<S, W>(scorer: &mut S, value: Value, output: &mut W, opts: &ServeOptions) -> io::Result<()>
where
    S: MatrixScorer + ?Sized,
    W: Write,
{
    let id = value.get("id").and_then(Value::as_str).map(str::to_string);
    match value.get("op").and_then(Value::as_str) {
        Some("hello") => {
            let reply = HelloReply {
                op: "hello".into(),
                name: scorer.name().to_string(),
                version: scorer.version().to_string(),
                needs_source: scorer.needs_source(),
                protocol: Some(opts.protocol.unwrap_or(PROTOCOL_VERSION)),
            };
            write_message(output, &reply)
        }
        Some("score_matrix") => {
            let req: super::ScoreMatrixRequest = match serde_json::from_value(value) {
                Ok(r) => r,
                Err(e) => {
                    return write_message(output, &ErrorMessage::new(id, ErrorCode::BadRequest, e.to_string()));
                }
            };
            if req.candidates.is_empty() || req.support.is_empty() {
                return write_message(
                    output,
                    &ErrorMessage::new(id, ErrorCode::BadRequest, "candidates and support must be non-empty"),
                );
            }
            match scorer.score_matrix(&req.source, &req.candidates, &req.support) {
                Ok(matrix) => write_message(output, &ScoreMatrixResponse { id: req.id, matrix }),
                Err(message) => write_message(output, &ErrorMessage::new(Some(req.id), ErrorCode::Internal, message)),
            }
        }
        Some(op) => write_message(
            output,
            &ErrorMessage::new(id, ErrorCode::Unsupported, format!("unsupported op {op:?}")),
        ),
        None => write_message(output, &ErrorMessage::new(id, ErrorCode::BadRequest, "missing op")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpc::mock::MockScorer;
    use std::io::BufReader;

    fn run(input: &str) -> Vec<Value> {
        let mut out = Vec::new();
        serve(&mut MockScorer::default(), &mut BufReader::new(input.as_bytes()), &mut out, &ServeOptions::default()).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn hello_and_matrix() {
        let replies = run(concat!(
            "{\"op\":\"hello\",\"protocol\":1}\n",
            "{\"op\":\"score_matrix\",\"id\":\"1\",\"source\":\"abc\",\"candidates\":[\"abc\",\"a\"],\"support\":[\"abc\"]}\n",
        ));
        assert_eq!(replies[0]["name"], "mock");
        assert_eq!(replies[0]["needs_source"], true);
        assert_eq!(replies[1]["id"], "1");
        let m: Vec<Vec<f64>> = serde_json::from_value(replies[1]["matrix"].clone()).unwrap();
        assert_eq!(m[0][0], 0.0);
        assert!((m[1][0] + 2.2).abs() < 1e-12);
    }

    #[test]
    fn error_codes() {
        let replies = run(concat!(
            "{\"op\":\"frobnicate\",\"id\":\"9\"}\n",
            "{\"op\":\"score_matrix\",\"id\":\"2\"}\n",
            "not json\n",
            "{\"op\":\"score_matrix\",\"id\":\"3\",\"source\":\"\",\"candidates\":[],\"support\":[\"a\"]}\n",
        ));
        assert_eq!(replies[0]["code"], "unsupported");
        assert_eq!(replies[0]["id"], "9");
        assert_eq!(replies[1]["code"], "bad_request");
        assert_eq!(replies[1]["id"], "2");
        assert_eq!(replies[2]["code"], "bad_request");
        assert_eq!(replies[3]["code"], "bad_request");
        assert!(replies.iter().all(|r| r["op"] == "error"));
    }
}
