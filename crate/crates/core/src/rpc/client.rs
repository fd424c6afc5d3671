use std::io::BufReader;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::{
    parse_reply, read_message, write_message, HelloReply, HelloRequest, Reply, RpcError, ScoreMatrixRequest,
    PROTOCOL_VERSION,
};
use crate::metrics::{Grid, Utility, UtilityError};

#[derive(Debug, Clone)]
pub struct ConnectOptions {
    pub handshake_timeout: Duration,
    /// `None` waits for each matrix reply indefinitely.
    pub request_timeout: Option<Duration>,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions {
            handshake_timeout: Duration::from_secs(30),
            request_timeout: None,
        }
    }
}

type Incoming = Result<Value, RpcError>;

/// A live connection to one scorer process. One request is in flight at a
/// time; `&mut self` on [`ScorerHandle::score_matrix`] enforces that.
pub struct ScorerHandle {
    child: Child,
    stdin: Option<ChildStdin>,
    incoming: Receiver<Incoming>,
    pub name: String,
    pub version: String,
    pub needs_source: bool,
    next_id: u64,
    request_timeout: Option<Duration>,
    requests: usize,
}

impl std::fmt::Debug for ScorerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerHandle")
            .field("name", &self.name)
            .field("version", &self.version)
            .field("needs_source", &self.needs_source)
            .field("pid", &self.child.id())
            .finish()
    }
}

/// Splits a command line into words, honouring single and double quotes.
pub fn split_command(line: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut in_word = false;
    for c in line.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => cur.push(c),
            None if c == '"' || c == '\'' => {
                quote = Some(c);
                in_word = true;
            }
            None if c.is_whitespace() => {
                if in_word {
                    words.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            None => {
                cur.push(c);
                in_word = true;
            }
        }
    }
    if in_word {
        words.push(cur);
    }
    words
}

/// Spawns `argv` and performs the hello handshake.
pub fn connect(argv: &[String], opts: &ConnectOptions) -> Result<ScorerHandle, RpcError> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| RpcError::Spawn("empty scorer command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| RpcError::Spawn(format!("{program}: {e}")))?;
    let stdout = child.stdout.take().expect("piped stdout");
    let stdin = child.stdin.take().expect("piped stdin");
    let (tx, rx) = mpsc::channel::<Incoming>();
    thread::Builder::new()
        .name("scorer-reader".into())
        .spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                match read_message(&mut reader) {
                    Ok(Some(v)) => {
                        if tx.send(Ok(v)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => return,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        })
        .map_err(|e| RpcError::Spawn(e.to_string()))?;

    let mut handle = ScorerHandle {
        child,
        stdin: Some(stdin),
        incoming: rx,
        name: String::new(),
        version: String::new(),
        needs_source: false,
        next_id: 0,
        request_timeout: opts.request_timeout,
        requests: 0,
    };
    if let Err(e) = handle.send(&HelloRequest::new()) {
        return Err(handle.startup_failure(e.to_string()));
    }
    let value = match handle.incoming.recv_timeout(opts.handshake_timeout) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => return Err(RpcError::Handshake(e.to_string())),
        Err(RecvTimeoutError::Timeout) => {
            return Err(RpcError::Handshake(format!(
                "no hello reply within {:?}",
                opts.handshake_timeout
            )))
        }
        Err(RecvTimeoutError::Disconnected) => return Err(handle.startup_failure("no hello reply".into())),
    };
    if value.get("op").and_then(Value::as_str) != Some("hello") {
        return Err(RpcError::Handshake(format!("expected hello reply, got {value}")));
    }
    let reply: HelloReply =
        serde_json::from_value(value).map_err(|e| RpcError::Handshake(format!("malformed hello reply: {e}")))?;
    if let Some(p) = reply.protocol {
        if p != PROTOCOL_VERSION {
            return Err(RpcError::Handshake(format!(
                "protocol version mismatch: scorer speaks {p}, client speaks {PROTOCOL_VERSION}"
            )));
        }
    }
    handle.name = reply.name;
    handle.version = reply.version;
    handle.needs_source = reply.needs_source;
    Ok(handle)
}

impl ScorerHandle {
    fn send<T: serde::Serialize>(&mut self, msg: &T) -> Result<(), RpcError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| RpcError::Transport("connection closed".into()))?;
        write_message(stdin, msg).map_err(|e| RpcError::Transport(e.to_string()))
    }

    /// The scorer went away before finishing the handshake.
    fn startup_failure(&mut self, detail: String) -> RpcError {
        let status = self
            .child
            .wait_timeout_ms(500)
            .map(|s| format!(" (exit status {s})"))
            .unwrap_or_default();
        RpcError::Spawn(format!("scorer exited during startup{status}: {detail}"))
    }

    /// Number of `score_matrix` requests sent so far.
    pub fn requests(&self) -> usize {
        self.requests
    }

    pub fn score_matrix(&mut self, source: &str, candidates: &[String], support: &[String]) -> Result<Grid, RpcError> {
        if candidates.is_empty() || support.is_empty() {
            return Err(RpcError::Protocol("candidates and support must be non-empty".into()));
        }
        self.next_id += 1;
        let id = self.next_id.to_string();
        self.send(&ScoreMatrixRequest::new(id.clone(), source, candidates, support))?;
        self.requests += 1;
        let incoming = match self.request_timeout {
            Some(t) => self.incoming.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => RpcError::Transport(format!("no reply within {t:?}")),
                RecvTimeoutError::Disconnected => RpcError::Transport("scorer closed its output".into()),
            })?,
            None => self
                .incoming
                .recv()
                .map_err(|_| RpcError::Transport("scorer closed its output".into()))?,
        };
        match parse_reply(incoming?)? {
            Reply::Error(e) => {
                if e.id.as_deref().is_some_and(|x| x != id) {
                    return Err(RpcError::Protocol(format!("error reply for id {:?}, expected {id:?}", e.id)));
                }
                Err(RpcError::Remote {
                    code: e.code,
                    message: e.message,
                })
            }
            Reply::Matrix(r) => {
                if r.id != id {
                    return Err(RpcError::Protocol(format!("reply id {:?} does not match request id {id:?}", r.id)));
                }
                let (rows, cols) = (candidates.len(), support.len());
                let bad = r.matrix.iter().find(|row| row.len() != cols).map(Vec::len);
                if r.matrix.len() != rows || bad.is_some() {
                    return Err(RpcError::Shape {
                        rows,
                        cols,
                        got_rows: r.matrix.len(),
                        got_cols: bad.unwrap_or(cols),
                    });
                }
                if r.matrix.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(RpcError::Protocol("non-finite value in matrix".into()));
                }
                Ok(r.matrix)
            }
        }
    }
}

trait WaitTimeout {
    fn wait_timeout_ms(&mut self, ms: u64) -> Option<std::process::ExitStatus>;
}

impl WaitTimeout for Child {
    fn wait_timeout_ms(&mut self, ms: u64) -> Option<std::process::ExitStatus> {
        for _ in 0..(ms / 10).max(1) {
            if let Ok(Some(s)) = self.try_wait() {
                return Some(s);
            }
            thread::sleep(Duration::from_millis(10));
        }
        None
    }
}

impl Drop for ScorerHandle {
    fn drop(&mut self) {
        // Closing stdin asks the scorer to exit; kill it if it lingers.
        drop(self.stdin.take());
        if self.child.wait_timeout_ms(200).is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// A pool of scorer handles exposed as a [`Utility`]. Each matrix request
/// goes to a free handle, so callers on several threads share the pool
/// without ever having two requests in flight on one handle.
pub struct RemoteUtility {
    handles: Vec<Mutex<ScorerHandle>>,
    name: String,
    needs_source: bool,
    cursor: AtomicUsize,
    requests: AtomicUsize,
}

impl RemoteUtility {
    pub fn new(handles: Vec<ScorerHandle>) -> Result<Self, RpcError> {
        let first = handles
            .first()
            .ok_or_else(|| RpcError::Spawn("remote utility needs at least one handle".into()))?;
        let (name, needs_source) = (first.name.clone(), first.needs_source);
        Ok(RemoteUtility {
            handles: handles.into_iter().map(Mutex::new).collect(),
            name,
            needs_source,
            cursor: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
        })
    }

    /// Spawns `n` copies of the scorer command.
    pub fn spawn(argv: &[String], n: usize, opts: &ConnectOptions) -> Result<Self, RpcError> {
        let handles = (0..n.max(1))
            .map(|_| connect(argv, opts))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(handles)
    }

    pub fn pool_size(&self) -> usize {
        self.handles.len()
    }

    /// Total `score_matrix` requests issued through this utility.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn with_handle<T>(&self, f: impl FnOnce(&mut ScorerHandle) -> T) -> T {
        let n = self.handles.len();
        let start = self.cursor.fetch_add(1, Ordering::Relaxed);
        for k in 0..n {
            if let Ok(mut h) = self.handles[(start + k) % n].try_lock() {
                return f(&mut h);
            }
        }
        let mut h = self.handles[start % n]
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner());
        f(&mut h)
    }

    pub fn matrix(&self, source: &str, candidates: &[String], support: &[String]) -> Result<Grid, RpcError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let source = if self.needs_source { source } else { "" };
        self.with_handle(|h| h.score_matrix(source, candidates, support))
    }
}

impl Utility for RemoteUtility {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_source(&self) -> bool {
        self.needs_source
    }

    fn score(&self, source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError> {
        let grid = self.matrix(source, &[candidate.to_string()], &[support.to_string()])?;
        Ok(grid[0][0])
    }

    fn score_matrix(&self, source: &str, candidates: &[String], support: &[String]) -> Option<Result<Grid, UtilityError>> {
        Some(self.matrix(source, candidates, support).map_err(UtilityError::from))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_splitting() {
        assert_eq!(split_command("python comet_bridge.py --model x"), vec!["python", "comet_bridge.py", "--model", "x"]);
        assert_eq!(split_command(r#"sh -c "echo hi""#), vec!["sh", "-c", "echo hi"]);
        assert_eq!(split_command("  a  ''  b "), vec!["a", "", "b"]);
        assert!(split_command("   ").is_empty());
    }

    #[test]
    fn missing_program_is_spawn_error() {
        let err = connect(&["/definitely/not/a/scorer".into()], &ConnectOptions::default()).unwrap_err();
        assert!(matches!(err, RpcError::Spawn(_)), "{err}");
        assert!(matches!(connect(&[], &ConnectOptions::default()), Err(RpcError::Spawn(_))));
    }

    #[test]
    fn immediate_exit_is_spawn_error() {
        let err = connect(&["true".into()], &ConnectOptions::default()).unwrap_err();
        assert!(matches!(err, RpcError::Spawn(_)), "{err}");
    }

    #[test]
    fn silent_scorer_times_out() {
        let opts = ConnectOptions {
            handshake_timeout: Duration::from_millis(200),
            request_timeout: None,
        };
        let err = connect(&["sleep".into(), "5".into()], &opts).unwrap_err();
        assert!(matches!(err, RpcError::Handshake(_)), "{err}");
    }

    #[test]
    fn garbage_hello_is_handshake_error() {
        let argv: Vec<String> = ["sh", "-c", "read line; echo '{\"op\":\"nope\"}'; sleep 1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let err = connect(&argv, &ConnectOptions::default()).unwrap_err();
        assert!(matches!(err, RpcError::Handshake(_)), "{err}");
    }
}
