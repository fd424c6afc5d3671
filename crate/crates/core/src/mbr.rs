//! Sampling-based MBR decoding: deduplicated pools, the pairwise utility
//! matrix, row-mean expected utility and argmax selection.
//!
//! Cells are computed independently (in parallel when run inside a rayon
//! pool) and written to fixed slots. Row means are summed left to right
//! after the matrix is complete, so results do not depend on thread count.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Segment;
use crate::metrics::{Grid, Utility, UtilityError};

#[derive(Debug, Error)]
pub enum MbrError {
    #[error("empty hypothesis pool")]
    EmptyPool,
    #[error("segment {segment:?}: missing field {field}")]
    MissingField { segment: String, field: String },
    #[error("utility failed on pair ({candidate}, {support}): {source}")]
    Scorer {
        candidate: usize,
        support: usize,
        #[source]
        source: UtilityError,
    },
    #[error("utility failed on matrix request: {0}")]
    ScorerMatrix(#[source] UtilityError),
    #[error("utility matrix has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("non-finite utility {value} at ({candidate}, {support})")]
    NonFinite { candidate: usize, support: usize, value: f64 },
    #[error("segment {segment:?}: {source}")]
    InSegment {
        segment: String,
        #[source]
        source: Box<MbrError>,
    },
}

impl MbrError {
    pub fn in_segment(self, segment: &str) -> MbrError {
        match self {
            e @ MbrError::InSegment { .. } => e,
            e @ MbrError::MissingField { .. } => e,
            e => MbrError::InSegment {
                segment: segment.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Segment the error was raised for, if known.
    pub fn segment(&self) -> Option<&str> {
        match self {
            MbrError::InSegment { segment, .. } | MbrError::MissingField { segment, .. } => Some(segment),
            _ => None,
        }
    }
}

/// Candidates `C` and support `S`. `shared` is set when both sides come
/// from the same deduplicated sample list, so `candidates[i] == support[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisPool {
    pub candidates: Vec<String>,
    pub support: Vec<String>,
    pub shared: bool,
}

/// Drops exact duplicates, keeping first occurrences in order.
pub fn unique_in_order(samples: &[String]) -> Vec<String> {
    let mut seen = HashSet::with_capacity(samples.len());
    samples
        .iter()
        .filter(|s| seen.insert(s.as_str()))
        .cloned()
        .collect()
}

/// Builds the `C = S` pool from a raw sample list.
pub fn dedup_pool(samples: &[String]) -> Result<HypothesisPool, MbrError> {
    if samples.is_empty() {
        return Err(MbrError::EmptyPool);
    }
    let unique = unique_in_order(samples);
    Ok(HypothesisPool {
        candidates: unique.clone(),
        support: unique,
        shared: true,
    })
}

impl HypothesisPool {
    /// Candidates and support used verbatim (no deduplication).
    pub fn explicit(candidates: Vec<String>, support: Vec<String>) -> Result<HypothesisPool, MbrError> {
        if candidates.is_empty() || support.is_empty() {
            return Err(MbrError::EmptyPool);
        }
        Ok(HypothesisPool {
            candidates,
            support,
            shared: false,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatrixOptions {
    /// Leave `(h, h)` out of the row mean of a shared pool. A singleton pool
    /// keeps its only cell.
    pub exclude_diagonal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    /// `values[i][j] = u(x, candidates[i], support[j])`.
    pub values: Grid,
    pub mbr_scores: Vec<f64>,
}

/// Left-to-right row mean, optionally skipping column `skip`.
fn row_mean(row: &[f64], skip: Option<usize>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (j, v) in row.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Row means of a finished matrix.
pub fn mbr_scores_from_values(values: &Grid, shared: bool, opts: MatrixOptions) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let skip = (shared && opts.exclude_diagonal && row.len() > 1).then_some(i);
            row_mean(row, skip)
        })
        .collect()
}

fn check_grid(grid: &Grid, rows: usize, cols: usize) -> Result<(), MbrError> {
    let bad_cols = grid.iter().find(|r| r.len() != cols).map(Vec::len);
    if grid.len() != rows || bad_cols.is_some() {
        return Err(MbrError::Shape {
            rows,
            cols,
            got_rows: grid.len(),
            got_cols: bad_cols.unwrap_or(cols),
        });
    }
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(MbrError::NonFinite {
                    candidate: i,
                    support: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Evaluates every (candidate, support) pair exactly once.
///
/// Utilities with a matrix path get a single call; otherwise each cell is
/// scored independently. On failure the lowest failing `(i, j)` in row-major
/// order is reported.
pub fn compute_utility_matrix<U: Utility + ?Sized>(
    source: &str,
    pool: &HypothesisPool,
    utility: &U,
    opts: MatrixOptions,
) -> Result<UtilityMatrix, MbrError> {
    let (rows, cols) = (pool.candidates.len(), pool.support.len());
    if rows == 0 || cols == 0 {
        return Err(MbrError::EmptyPool);
    }
    let values = match utility.score_matrix(source, &pool.candidates, &pool.support) {
        Some(grid) => grid.map_err(MbrError::ScorerMatrix)?,
        None => {
            let cells: Vec<Result<f64, UtilityError>> = (0..rows * cols)
                .into_par_iter()
                .map(|k| utility.score(source, &pool.candidates[k / cols], &pool.support[k % cols]))
                .collect();
            let mut values = vec![Vec::with_capacity(cols); rows];
            for (k, cell) in cells.into_iter().enumerate() {
                let v = cell.map_err(|source| MbrError::Scorer {
                    candidate: k / cols,
                    support: k % cols,
                    source,
                })?;
                values[k / cols].push(v);
            }
            values
        }
    };
    check_grid(&values, rows, cols)?;
    let mbr_scores = mbr_scores_from_values(&values, pool.shared, opts);
    Ok(UtilityMatrix { values, mbr_scores })
}

/// Smallest index attaining the maximum.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSource {
    Samples,
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SupportSource {
    Samples,
    /// The reference, followed by the alternative reference when present.
    References,
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbrResult {
    pub chosen_index: usize,
    pub chosen_text: String,
    pub mbr_scores: Vec<f64>,
    pub pool: HypothesisPool,
    /// Set when references-as-support fell back to the single reference.
    pub support_fallback: bool,
}

/// Picks the candidate with the highest mean utility over the support.
pub fn mbr_select<U: Utility + ?Sized>(
    source: &str,
    pool: HypothesisPool,
    utility: &U,
    opts: MatrixOptions,
) -> Result<MbrResult, MbrError> {
    let matrix = compute_utility_matrix(source, &pool, utility, opts)?;
    let chosen_index = argmax_first(&matrix.mbr_scores).ok_or(MbrError::EmptyPool)?;
    Ok(MbrResult {
        chosen_index,
        chosen_text: pool.candidates[chosen_index].clone(),
        mbr_scores: matrix.mbr_scores,
        pool,
        support_fallback: false,
    })
}

/// Builds the support list for a segment. Returns the list and whether the
/// references mode fell back to the single reference.
pub fn support_for(segment: &Segment, support: &SupportSource) -> Result<(Vec<String>, bool), MbrError> {
    match support {
        SupportSource::Samples => {
            if segment.samples.is_empty() {
                return Err(MbrError::EmptyPool.in_segment(&segment.id));
            }
            Ok((unique_in_order(&segment.samples), false))
        }
        SupportSource::References => {
            let refs: Vec<String> = segment.references().into_iter().map(str::to_string).collect();
            let fallback = segment.alternative_reference.is_none();
            if fallback {
                log::warn!(
                    "segment {:?}: no alternative_reference, support is the single reference",
                    segment.id
                );
            }
            Ok((refs, fallback))
        }
        SupportSource::Explicit(list) => {
            if list.is_empty() {
                return Err(MbrError::EmptyPool.in_segment(&segment.id));
            }
            Ok((list.clone(), false))
        }
    }
}

/// MBR decoding of one segment. Sample lists are deduplicated; explicit and
/// reference lists are used verbatim. Errors carry the segment id.
pub fn mbr_decode<U: Utility + ?Sized>(
    segment: &Segment,
    utility: &U,
    candidates: &CandidateSource,
    support: &SupportSource,
    opts: MatrixOptions,
) -> Result<MbrResult, MbrError> {
    let pool = match (candidates, support) {
        (CandidateSource::Samples, SupportSource::Samples) => {
            dedup_pool(&segment.samples).map_err(|e| e.in_segment(&segment.id))?
        }
        (cands, sup) => {
            let cands = match cands {
                CandidateSource::Samples => unique_in_order(&segment.samples),
                CandidateSource::Explicit(list) => list.clone(),
            };
            let (sup, _) = support_for(segment, sup)?;
            HypothesisPool::explicit(cands, sup).map_err(|e| e.in_segment(&segment.id))?
        }
    };
    let fallback = matches!(support, SupportSource::References) && segment.alternative_reference.is_none();
    let mut result = mbr_select(&segment.source.text, pool, utility, opts).map_err(|e| e.in_segment(&segment.id))?;
    result.support_fallback = fallback;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedText;
    use crate::metrics::{as_utility, MetricKind};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn segment(samples: &[&str]) -> Segment {
        Segment {
            id: "s".into(),
            source: AnnotatedText::plain("quelle"),
            reference: AnnotatedText::plain("ref"),
            alternative_reference: None,
            beam_output: None,
            samples: strings(samples),
        }
    }

    struct Counting(AtomicUsize);

    impl Utility for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn needs_source(&self) -> bool {
            false
        }
        fn score(&self, _: &str, c: &str, s: &str) -> Result<f64, UtilityError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(if c == s { 1.0 } else { 0.0 })
        }
    }

    struct FailsOn(&'static str);

    impl Utility for FailsOn {
        fn name(&self) -> &str {
            "fails"
        }
        fn needs_source(&self) -> bool {
            false
        }
        fn score(&self, _: &str, c: &str, _: &str) -> Result<f64, UtilityError> {
            if c == self.0 {
                Err(UtilityError::Other("boom".into()))
            } else {
                Ok(1.0)
            }
        }
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let pool = dedup_pool(&strings(&["a", "b", "a"])).unwrap();
        assert_eq!(pool.candidates, strings(&["a", "b"]));
        assert_eq!(pool.support, pool.candidates);
        assert!(pool.shared);
        assert_eq!(dedup_pool(&strings(&["a"])).unwrap().candidates, strings(&["a"]));
        assert!(matches!(dedup_pool(&[]), Err(MbrError::EmptyPool)));
    }

    #[test]
    fn dedup_cardinality() {
        let samples: Vec<String> = (0..100).map(|i| format!("h{}", i % 40)).collect();
        assert_eq!(dedup_pool(&samples).unwrap().len(), 40);
    }

    #[test]
    fn diagonal_is_identity_for_chrf() {
        let u = as_utility(MetricKind::ChrfPP);
        let pool = dedup_pool(&strings(&["a", "b"])).unwrap();
        let m = compute_utility_matrix("", &pool, &u, MatrixOptions::default()).unwrap();
        assert_eq!(m.values[0][0], 100.0);
        assert_eq!(m.values[1][1], 100.0);
    }

    #[test]
    fn singleton_pool() {
        let u = as_utility(MetricKind::ChrfPP);
        let pool = dedup_pool(&strings(&["hello"])).unwrap();
        let m = compute_utility_matrix("x", &pool, &u, MatrixOptions::default()).unwrap();
        assert_eq!(m.values, vec![vec![100.0]]);
        assert_eq!(m.mbr_scores, vec![100.0]);
        let m = compute_utility_matrix("x", &pool, &u, MatrixOptions { exclude_diagonal: true }).unwrap();
        assert_eq!(m.mbr_scores, vec![100.0]);
    }

    #[test]
    fn every_pair_scored_once() {
        let u = Counting(AtomicUsize::new(0));
        let pool = dedup_pool(&strings(&["a", "b", "c", "d", "e"])).unwrap();
        let m = compute_utility_matrix("", &pool, &u, MatrixOptions::default()).unwrap();
        assert_eq!(u.0.load(Ordering::SeqCst), 25);
        assert_eq!(m.mbr_scores, vec![0.2; 5]);
    }

    #[test]
    fn exclude_diagonal_flag() {
        let u = Counting(AtomicUsize::new(0));
        let pool = dedup_pool(&strings(&["a", "b", "c"])).unwrap();
        let m = compute_utility_matrix("", &pool, &u, MatrixOptions { exclude_diagonal: true }).unwrap();
        assert_eq!(m.mbr_scores, vec![0.0; 3]);
    }

    #[test]
    fn all_identical_samples_collapse() {
        let u = as_utility(MetricKind::ChrfPP);
        let r = mbr_decode(
            &segment(&["t", "t", "t"]),
            &u,
            &CandidateSource::Samples,
            &SupportSource::Samples,
            MatrixOptions::default(),
        )
        .unwrap();
        assert_eq!(r.chosen_text, "t");
        assert_eq!(r.mbr_scores, vec![100.0]);
    }

    #[test]
    fn ties_go_to_first_candidate() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
        let u = Counting(AtomicUsize::new(0));
        let r = mbr_decode(
            &segment(&["z", "y", "x"]),
            &u,
            &CandidateSource::Samples,
            &SupportSource::Samples,
            MatrixOptions::default(),
        )
        .unwrap();
        assert_eq!(r.chosen_index, 0);
        assert_eq!(r.chosen_text, "z");
    }

    #[test]
    fn references_support_falls_back_without_alternative() {
        let u = as_utility(MetricKind::ChrfPP);
        let r = mbr_decode(
            &segment(&["ref", "other"]),
            &u,
            &CandidateSource::Samples,
            &SupportSource::References,
            MatrixOptions::default(),
        )
        .unwrap();
        assert!(r.support_fallback);
        assert_eq!(r.pool.support, strings(&["ref"]));
        assert_eq!(r.chosen_text, "ref");
    }

    #[test]
    fn scorer_error_carries_pair_and_segment() {
        let err = mbr_decode(
            &segment(&["ok", "bad"]),
            &FailsOn("bad"),
            &CandidateSource::Samples,
            &SupportSource::Samples,
            MatrixOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.segment(), Some("s"));
        match err {
            MbrError::InSegment { source, .. } => {
                assert!(matches!(*source, MbrError::Scorer { candidate: 1, support: 0, .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_samples_is_empty_pool() {
        let u = as_utility(MetricKind::ChrfPP);
        let err = mbr_decode(
            &segment(&[]),
            &u,
            &CandidateSource::Samples,
            &SupportSource::Samples,
            MatrixOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.segment(), Some("s"));
    }

    #[test]
    fn shape_and_finiteness_checked() {
        assert!(matches!(check_grid(&vec![vec![0.0; 3]; 2], 2, 2), Err(MbrError::Shape { got_cols: 3, .. })));
        assert!(matches!(check_grid(&vec![vec![0.0]; 2], 3, 1), Err(MbrError::Shape { got_rows: 2, .. })));
        assert!(matches!(check_grid(&vec![vec![f64::NAN]], 1, 1), Err(MbrError::NonFinite { .. })));
    }
}
