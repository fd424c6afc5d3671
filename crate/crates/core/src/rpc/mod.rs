//! JSON-lines protocol for external scorers, spoken over the stdio of a
//! spawned subprocess.
//!
//! Every message is one JSON object on one LF-terminated UTF-8 line.
//!
//! ```text
//! -> {"op":"hello","protocol":1}
//! <- {"op":"hello","name":"comet","version":"1.0","needs_source":true}
//! -> {"op":"score_matrix","id":"1","source":"..","candidates":[..],"support":[..]}
//! <- {"id":"1","matrix":[[..],..]}
//! <- {"op":"error","id":"1","code":"internal","message":".."}
//! ```
//!
//! The matrix request lets a neural scorer encode every string once and
//! score all pairs internally.

pub mod client;
pub mod mock;
pub mod server;

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use client::{connect, ConnectOptions, RemoteUtility, ScorerHandle};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    Internal,
    Unsupported,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadRequest => "bad_request",
            ErrorCode::Internal => "internal",
            ErrorCode::Unsupported => "unsupported",
        }
    }
}

#[derive(Debug, Error)]
pub enum RpcError {
    #[error("cannot start scorer: {0}")]
    Spawn(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scorer error {code}: {message}", code = .code.as_str())]
    Remote { code: ErrorCode, message: String },
    #[error("scorer returned a {got_rows}x{got_cols} matrix for a {rows}x{cols} request")]
    Shape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloRequest {
    pub op: String,
    pub protocol: u32,
}

impl HelloRequest {
    pub fn new() -> Self {
        HelloRequest {
            op: "hello".into(),
            protocol: PROTOCOL_VERSION,
        }
    }
}

impl Default for HelloRequest {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub op: String,
    pub name: String,
    pub version: String,
    pub needs_source: bool,
    /// Absent means the scorer speaks the client's version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrixRequest {
    pub op: String,
    pub id: String,
    pub source: String,
    pub candidates: Vec<String>,
    pub support: Vec<String>,
}

impl ScoreMatrixRequest {
    pub fn new(id: impl Into<String>, source: &str, candidates: &[String], support: &[String]) -> Self {
        ScoreMatrixRequest {
            op: "score_matrix".into(),
            id: id.into(),
            source: source.to_string(),
            candidates: candidates.to_vec(),
            support: support.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrixResponse {
    pub id: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub op: String,
    #[serde(default)]
    pub id: Option<String>,
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorMessage {
    pub fn new(id: Option<String>, code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorMessage {
            op: "error".into(),
            id,
            code,
            message: message.into(),
        }
    }
}

/// A reply to a `score_matrix` request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Matrix(ScoreMatrixResponse),
    Error(ErrorMessage),
}

/// Classifies a decoded line as a matrix response or an error object.
pub fn parse_reply(value: Value) -> Result<Reply, RpcError> {
    match value.get("op").and_then(Value::as_str) {
        Some("error") => serde_json::from_value(value)
            .map(Reply::Error)
            .map_err(|e| RpcError::Protocol(format!("malformed error object: {e}"))),
        Some("score_matrix") | None => serde_json::from_value(value)
            .map(Reply::Matrix)
            .map_err(|e| RpcError::Protocol(format!("malformed score_matrix response: {e}"))),
        Some(other) => Err(RpcError::Protocol(format!("unexpected op {other:?}"))),
    }
}

/// Serializes `msg` and writes it as one line with a single `write_all`.
pub fn write_message<W: Write, T: Serialize>(out: &mut W, msg: &T) -> io::Result<()> {
    let mut buf = serde_json::to_vec(msg).map_err(io::Error::other)?;
    buf.push(b'\n');
    out.write_all(&buf)?;
    out.flush()
}

/// Reads the next non-blank line as a JSON value. `Ok(None)` at end of
/// stream; a trailing line without LF is rejected as truncated.
pub fn read_message<R: BufRead>(input: &mut R) -> Result<Option<Value>, RpcError> {
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = input
            .read_until(b'\n', &mut buf)
            .map_err(|e| RpcError::Transport(e.to_string()))?;
        if n == 0 {
            return Ok(None);
        }
        if buf.last() != Some(&b'\n') {
            return Err(RpcError::Transport("stream ended inside a message".into()));
        }
        let line = std::str::from_utf8(&buf).map_err(|e| RpcError::Protocol(format!("invalid UTF-8: {e}")))?;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        return serde_json::from_str(line)
            .map(Some)
            .map_err(|e| RpcError::Protocol(format!("invalid JSON line: {e}")));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufReader, Read};

    /// Reader that hands out data in fixed-pattern small chunks.
    struct Chunked<'a> {
        data: &'a [u8],
        sizes: Vec<usize>,
        next: usize,
    }

    impl Read for Chunked<'_> {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            if self.data.is_empty() {
                return Ok(0);
            }
            let want = self.sizes[self.next % self.sizes.len()].max(1);
            self.next += 1;
            let n = want.min(buf.len()).min(self.data.len());
            buf[..n].copy_from_slice(&self.data[..n]);
            self.data = &self.data[n..];
            Ok(n)
        }
    }

    #[test]
    fn wire_format_is_exact() {
        let mut out = Vec::new();
        write_message(&mut out, &HelloRequest::new()).unwrap();
        assert_eq!(out, b"{\"op\":\"hello\",\"protocol\":1}\n");
        out.clear();
        let req = ScoreMatrixRequest::new("7", "src", &["a".into()], &["b".into()]);
        write_message(&mut out, &req).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "{\"op\":\"score_matrix\",\"id\":\"7\",\"source\":\"src\",\"candidates\":[\"a\"],\"support\":[\"b\"]}\n"
        );
        out.clear();
        write_message(&mut out, &ErrorMessage::new(Some("7".into()), ErrorCode::BadRequest, "x")).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "{\"op\":\"error\",\"id\":\"7\",\"code\":\"bad_request\",\"message\":\"x\"}\n"
        );
    }

    #[test]
    fn reply_classification() {
        let m = parse_reply(serde_json::json!({"id": "1", "matrix": [[0.5]]})).unwrap();
        assert!(matches!(m, Reply::Matrix(ref r) if r.matrix == vec![vec![0.5]]));
        let e = parse_reply(serde_json::json!({"op": "error", "id": "1", "code": "internal", "message": "m"})).unwrap();
        assert!(matches!(e, Reply::Error(ref r) if r.code == ErrorCode::Internal));
        assert!(parse_reply(serde_json::json!({"op": "hello"})).is_err());
        assert!(parse_reply(serde_json::json!({"id": "1"})).is_err());
    }

    #[test]
    fn framing_survives_arbitrary_chunking() {
        let mut wire = Vec::new();
        let msgs: Vec<ScoreMatrixResponse> = (0..20)
            .map(|i| ScoreMatrixResponse {
                id: format!("{i}"),
                matrix: vec![vec![i as f64 * 0.1, -1.5], vec![1e-3, 2.0]],
            })
            .collect();
        for m in &msgs {
            write_message(&mut wire, m).unwrap();
        }
        for pattern in [vec![1], vec![2, 3, 1], vec![7, 1, 13], vec![64]] {
            let mut r = BufReader::with_capacity(
                3,
                Chunked {
                    data: &wire,
                    sizes: pattern,
                    next: 0,
                },
            );
            for m in &msgs {
                let v = read_message(&mut r).unwrap().unwrap();
                assert_eq!(&serde_json::from_value::<ScoreMatrixResponse>(v).unwrap(), m);
            }
            assert!(read_message(&mut r).unwrap().is_none());
        }
    }

    #[test]
    fn truncated_line_is_transport_error() {
        let mut r = BufReader::new(&b"{\"id\":\"1\""[..]);
        assert!(matches!(read_message(&mut r), Err(RpcError::Transport(_))));
    }
}
