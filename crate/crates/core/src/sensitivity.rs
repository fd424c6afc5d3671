//! MBR-based sensitivity analysis.
//!
//! For every segment, a candidate pool (base text plus one perturbed or
//! reference-point candidate per kind) is scored against a fixed support in
//! a single utility matrix. The per-kind statistic is the mean over segments
//! of `|mbr(perturbed) - mbr(base)|`; segments where a kind does not apply
//! are counted as skipped and left out of that kind's mean.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Segment};
use crate::mbr::{compute_utility_matrix, unique_in_order, HypothesisPool, MatrixOptions, MbrError};
use crate::metrics::Utility;
use crate::perturb::{
    build_candidate_pool, hallucination_donors, segment_seed, BaseSource, PerturbError, PerturbationKind, PoolContext,
    SkipReason,
};
use crate::tsv;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no segment has the fields this setup needs")]
    NothingApplicable,
    #[error("segment {segment:?}: {source}")]
    Scorer {
        segment: String,
        #[source]
        source: MbrError,
    },
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

impl SensitivityError {
    pub fn segment(&self) -> Option<&str> {
        match self {
            SensitivityError::Scorer { segment, .. } => Some(segment),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Deduplicated ancestral samples.
    Samples,
    /// Reference and alternative reference, verbatim.
    References,
}

impl FromStr for SupportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "samples" => Ok(SupportMode::Samples),
            "references" => Ok(SupportMode::References),
            _ => Err(format!("unknown support source {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivitySetup {
    pub base_source: BaseSource,
    pub support_source: SupportMode,
    pub utility: String,
    pub seed: u64,
}

impl SensitivitySetup {
    /// The two configurations studied originally: perturbed references
    /// against samples, and perturbed beam outputs against references.
    pub fn is_paper_setup(&self) -> bool {
        matches!(
            (self.base_source, self.support_source),
            (BaseSource::Reference, SupportMode::Samples) | (BaseSource::BeamOutput, SupportMode::References)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub kind: PerturbationKind,
    pub text: String,
    pub mbr_score: f64,
    pub abs_diff: f64,
}

/// Scores of one segment's candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnalysis {
    pub id: String,
    pub base_score: f64,
    pub support: Vec<String>,
    /// Non-base candidates in pool order.
    pub candidates: Vec<CandidateScore>,
    pub skipped: Vec<(PerturbationKind, SkipReason)>,
}

impl SegmentAnalysis {
    pub fn diff(&self, kind: PerturbationKind) -> Option<f64> {
        self.candidates.iter().find(|c| c.kind == kind).map(|c| c.abs_diff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    /// `None` when the kind applied to no segment.
    pub mean_abs_diff: Option<f64>,
    pub n_segments: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub setup: SensitivitySetup,
    pub paper_setup: bool,
    pub per_kind: BTreeMap<PerturbationKind, KindStats>,
}

impl SensitivityReport {
    pub fn mean(&self, kind: PerturbationKind) -> Option<f64> {
        self.per_kind.get(&kind).and_then(|s| s.mean_abs_diff)
    }

    /// Applied kinds sorted by ascending mean, ties in canonical kind order.
    pub fn ranked(&self) -> Vec<(PerturbationKind, KindStats)> {
        let mut rows: Vec<_> = self
            .per_kind
            .iter()
            .filter(|(_, s)| s.mean_abs_diff.is_some())
            .map(|(k, s)| (*k, *s))
            .collect();
        rows.sort_by(|a, b| {
            a.1.mean_abs_diff
                .partial_cmp(&b.1.mean_abs_diff)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        rows
    }

    pub fn write_tsv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = tsv::writer(out);
        w.write_record(["kind", "mean_abs_diff", "n_segments", "skipped"])?;
        for (kind, s) in self.ranked() {
            w.write_record([
                kind.as_str().to_string(),
                tsv::fmt_f64(s.mean_abs_diff.unwrap_or(0.0)),
                s.n_segments.to_string(),
                s.skipped.to_string(),
            ])?;
        }
        w.flush()
    }
}

fn support_list(segment: &Segment, mode: SupportMode) -> Option<Vec<String>> {
    match mode {
        SupportMode::Samples if segment.samples.is_empty() => None,
        SupportMode::Samples => Some(unique_in_order(&segment.samples)),
        SupportMode::References => {
            if segment.alternative_reference.is_none() {
                log::warn!(
                    "segment {:?}: no alternative_reference, support is the single reference",
                    segment.id
                );
            }
            Some(segment.references().into_iter().map(str::to_string).collect())
        }
    }
}

/// Scores one segment. `Ok(None)` when the segment lacks the base text or
/// the support this setup needs.
pub fn analyze_segment<U: Utility + ?Sized>(
    segment: &Segment,
    setup: &SensitivitySetup,
    utility: &U,
    kinds: &BTreeSet<PerturbationKind>,
    ctx: &PoolContext<'_>,
    opts: MatrixOptions,
) -> Result<Option<SegmentAnalysis>, SensitivityError> {
    let seed = segment_seed(setup.seed, &segment.id);
    let pool = match build_candidate_pool(segment, setup.base_source, kinds, ctx, seed) {
        Ok(p) => p,
        Err(PerturbError::MissingField { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let Some(support) = support_list(segment, setup.support_source) else {
        return Ok(None);
    };
    let hyp = HypothesisPool::explicit(pool.texts(), support).map_err(|source| SensitivityError::Scorer {
        segment: segment.id.clone(),
        source,
    })?;
    let matrix =
        compute_utility_matrix(&segment.source.text, &hyp, utility, opts).map_err(|source| SensitivityError::Scorer {
            segment: segment.id.clone(),
            source,
        })?;
    let base_score = matrix.mbr_scores[0];
    let candidates = pool
        .candidates
        .iter()
        .zip(&matrix.mbr_scores)
        .skip(1)
        .map(|(c, &score)| CandidateScore {
            kind: c.kind,
            text: c.text.clone(),
            mbr_score: score,
            abs_diff: (score - base_score).abs(),
        })
        .collect();
    Ok(Some(SegmentAnalysis {
        id: segment.id.clone(),
        base_score,
        support: hyp.support,
        candidates,
        skipped: pool.skipped,
    }))
}

/// One result per segment in corpus order, so a failing segment does not
/// discard the others.
pub fn analyze_each<U: Utility + ?Sized>(
    corpus: &Corpus,
    setup: &SensitivitySetup,
    utility: &U,
    kinds: &BTreeSet<PerturbationKind>,
    opts: MatrixOptions,
) -> Vec<Result<Option<SegmentAnalysis>, SensitivityError>> {
    let letters = corpus.target_alphabet();
    let donors = hallucination_donors(corpus, setup.seed);
    corpus
        .segments
        .par_iter()
        .zip(donors.par_iter())
        .map(|(segment, donor)| {
            let ctx = PoolContext {
                letters: &letters,
                hallucination: donor.map(|d| corpus.segments[d].reference.text.as_str()),
            };
            analyze_segment(segment, setup, utility, kinds, &ctx, opts)
        })
        .collect()
}

/// Per-segment analyses in corpus order (`None` for segments lacking the
/// fields the setup needs). Fails on the first failing segment.
pub fn analyze_corpus<U: Utility + ?Sized>(
    corpus: &Corpus,
    setup: &SensitivitySetup,
    utility: &U,
    kinds: &BTreeSet<PerturbationKind>,
    opts: MatrixOptions,
) -> Result<Vec<Option<SegmentAnalysis>>, SensitivityError> {
    if corpus.is_empty() {
        return Err(SensitivityError::EmptyCorpus);
    }
    analyze_each(corpus, setup, utility, kinds, opts).into_iter().collect()
}

/// Reduces per-segment analyses in corpus order.
pub fn aggregate(
    setup: &SensitivitySetup,
    kinds: &BTreeSet<PerturbationKind>,
    analyses: &[Option<SegmentAnalysis>],
) -> SensitivityReport {
    let mut per_kind = BTreeMap::new();
    for &kind in kinds.iter().filter(|k| **k != PerturbationKind::Base) {
        let mut sum = 0.0;
        let mut n = 0;
        let mut skipped = 0;
        for a in analyses {
            match a.as_ref().and_then(|a| a.diff(kind)) {
                Some(d) => {
                    sum += d;
                    n += 1;
                }
                None => skipped += 1,
            }
        }
        per_kind.insert(
            kind,
            KindStats {
                mean_abs_diff: (n > 0).then(|| sum / n as f64),
                n_segments: n,
                skipped,
            },
        );
    }
    SensitivityReport {
        setup: setup.clone(),
        paper_setup: setup.is_paper_setup(),
        per_kind,
    }
}

pub fn sensitivity_analysis<U: Utility + ?Sized>(
    corpus: &Corpus,
    setup: &SensitivitySetup,
    utility: &U,
    kinds: &BTreeSet<PerturbationKind>,
    opts: MatrixOptions,
) -> Result<SensitivityReport, SensitivityError> {
    let analyses = analyze_corpus(corpus, setup, utility, kinds, opts)?;
    if analyses.iter().all(Option::is_none) {
        return Err(SensitivityError::NothingApplicable);
    }
    if !setup.is_paper_setup() {
        log::info!(
            "base {:?} with support {:?} is not one of the two reference setups",
            setup.base_source,
            setup.support_source
        );
    }
    Ok(aggregate(setup, kinds, &analyses))
}
