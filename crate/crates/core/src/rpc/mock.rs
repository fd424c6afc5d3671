//! Deterministic stand-in for a neural scorer, used by tests and the
//! `mbr-mock-scorer` binary.
//!
//! `u(x, c, s) = -|len(c) - len(s)| - 0.1 * |len(c) - len(x)|`, lengths in
//! chars.

use std::io::{self, Write};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::server::MatrixScorer;
use crate::metrics::{Grid, Utility, UtilityError};

pub fn mock_utility(source: &str, candidate: &str, support: &str) -> f64 {
    let (x, c, s) = (
        source.chars().count() as f64,
        candidate.chars().count() as f64,
        support.chars().count() as f64,
    );
    -(c - s).abs() - 0.1 * (c - x).abs()
}

/// Fault injection for protocol tests.
#[derive(Debug, Clone, Default)]
pub struct MockFaults {
    /// Exit without replying to the n-th matrix request (1-based).
    pub die_on_request: Option<usize>,
    /// Add one spurious column to every matrix.
    pub bad_shape: bool,
    /// Reply to the n-th matrix request with an `internal` error.
    pub error_on_request: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MockScorer {
    pub faults: MockFaults,
    requests: usize,
}

impl MockScorer {
    pub fn new(faults: MockFaults) -> Self {
        MockScorer { faults, requests: 0 }
    }
}

impl MatrixScorer for MockScorer {
    fn name(&self) -> &str {
        "mock"
    }

    fn version(&self) -> &str {
        env!("CARGO_PKG_VERSION")
    }

    fn needs_source(&self) -> bool {
        true
    }

    fn score_matrix(&mut self, source: &str, candidates: &[String], support: &[String]) -> Result<Grid, String> {
        self.requests += 1;
        if self.faults.die_on_request == Some(self.requests) {
            std::process::exit(3);
        }
        if self.faults.error_on_request == Some(self.requests) {
            return Err(format!("injected failure on request {}", self.requests));
        }
        let extra = usize::from(self.faults.bad_shape);
        Ok(candidates
            .iter()
            .map(|c| {
                let mut row: Vec<f64> = support.iter().map(|s| mock_utility(source, c, s)).collect();
                row.extend(std::iter::repeat_n(0.0, extra));
                row
            })
            .collect())
    }
}

/// The mock formula as an in-process utility (no matrix path).
#[derive(Debug, Clone, Copy, Default)]
pub struct MockUtility;

impl Utility for MockUtility {
    fn name(&self) -> &str {
        "mock"
    }

    fn needs_source(&self) -> bool {
        true
    }

    fn score(&self, source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError> {
        Ok(mock_utility(source, candidate, support))
    }
}

/// Writer that forwards data in seeded random-size pieces, flushing and
/// pausing between them, so readers see lines split at arbitrary bytes.
pub struct ChunkedWriter<W: Write> {
    inner: W,
    rng: ChaCha8Rng,
    max_chunk: usize,
    pause: Duration,
}

impl<W: Write> ChunkedWriter<W> {
    pub fn new(inner: W, seed: u64, max_chunk: usize, pause: Duration) -> Self {
        ChunkedWriter {
            inner,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_chunk: max_chunk.max(1),
            pause,
        }
    }
}

impl<W: Write> Write for ChunkedWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let n = self.rng.gen_range(1..=self.max_chunk).min(buf.len());
        self.inner.write_all(&buf[..n])?;
        self.inner.flush()?;
        if !self.pause.is_zero() {
            thread::sleep(self.pause);
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example() {
        let mut m = MockScorer::default();
        let grid = m
            .score_matrix("abc", &["abc".into(), "a".into()], &["abc".into()])
            .unwrap();
        assert_eq!(grid[0], vec![0.0]);
        assert!((grid[1][0] - (-2.2)).abs() < 1e-12);
    }

    #[test]
    fn chunked_writer_preserves_bytes() {
        let mut out = Vec::new();
        {
            let mut w = ChunkedWriter::new(&mut out, 1, 3, Duration::ZERO);
            w.write_all(b"hello world\n").unwrap();
        }
        assert_eq!(out, b"hello world\n");
    }
}
