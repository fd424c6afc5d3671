//! Targeted edits to numbers, named entities and nouns, plus the copy,
//! hallucination and alternative-translation reference points.
//!
//! Every random choice is drawn from a caller-provided seeded generator, and
//! every edit is confined to one annotated span.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedText, Corpus, Segment, SpanKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    NumAdd,
    NumDel,
    NumSub,
    NumWhole,
    NeAdd,
    NeDel,
    NeSub,
    NounAdd,
    NounDel,
    NounSub,
    Altern,
    Copy,
    Hallucin,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Add,
    Del,
    Sub,
}

impl PerturbationKind {
    /// Every kind except `base`, in canonical order.
    pub const ALL: [PerturbationKind; 13] = [
        PerturbationKind::NumAdd,
        PerturbationKind::NumDel,
        PerturbationKind::NumSub,
        PerturbationKind::NumWhole,
        PerturbationKind::NeAdd,
        PerturbationKind::NeDel,
        PerturbationKind::NeSub,
        PerturbationKind::NounAdd,
        PerturbationKind::NounDel,
        PerturbationKind::NounSub,
        PerturbationKind::Altern,
        PerturbationKind::Copy,
        PerturbationKind::Hallucin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::NumAdd => "num_add",
            PerturbationKind::NumDel => "num_del",
            PerturbationKind::NumSub => "num_sub",
            PerturbationKind::NumWhole => "num_whole",
            PerturbationKind::NeAdd => "ne_add",
            PerturbationKind::NeDel => "ne_del",
            PerturbationKind::NeSub => "ne_sub",
            PerturbationKind::NounAdd => "noun_add",
            PerturbationKind::NounDel => "noun_del",
            PerturbationKind::NounSub => "noun_sub",
            PerturbationKind::Altern => "altern",
            PerturbationKind::Copy => "copy",
            PerturbationKind::Hallucin => "hallucin",
            PerturbationKind::Base => "base",
        }
    }

    /// Span kind and edit mode for single-character edits.
    pub fn char_edit(self) -> Option<(SpanKind, EditMode)> {
        use PerturbationKind::*;
        Some(match self {
            NumAdd => (SpanKind::Number, EditMode::Add),
            NumDel => (SpanKind::Number, EditMode::Del),
            NumSub => (SpanKind::Number, EditMode::Sub),
            NeAdd => (SpanKind::NamedEntity, EditMode::Add),
            NeDel => (SpanKind::NamedEntity, EditMode::Del),
            NeSub => (SpanKind::NamedEntity, EditMode::Sub),
            NounAdd => (SpanKind::Noun, EditMode::Add),
            NounDel => (SpanKind::Noun, EditMode::Del),
            NounSub => (SpanKind::Noun, EditMode::Sub),
            _ => return None,
        })
    }

    pub fn from_char_edit(target: SpanKind, mode: EditMode) -> PerturbationKind {
        use PerturbationKind::*;
        match (target, mode) {
            (SpanKind::Number, EditMode::Add) => NumAdd,
            (SpanKind::Number, EditMode::Del) => NumDel,
            (SpanKind::Number, EditMode::Sub) => NumSub,
            (SpanKind::NamedEntity, EditMode::Add) => NeAdd,
            (SpanKind::NamedEntity, EditMode::Del) => NeDel,
            (SpanKind::NamedEntity, EditMode::Sub) => NeSub,
            (SpanKind::Noun, EditMode::Add) => NounAdd,
            (SpanKind::Noun, EditMode::Del) => NounDel,
            (SpanKind::Noun, EditMode::Sub) => NounSub,
        }
    }

    /// Kinds that edit a span of the base text (as opposed to reference points).
    pub fn is_targeted(self) -> bool {
        self.char_edit().is_some() || self == PerturbationKind::NumWhole
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbationKind::ALL
            .iter()
            .chain(std::iter::once(&PerturbationKind::Base))
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown perturbation kind {s:?}"))
    }
}

/// Parses a comma-separated kind list; `all` expands to every non-base kind.
pub fn parse_kinds(list: &str) -> Result<BTreeSet<PerturbationKind>, String> {
    let mut kinds = BTreeSet::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "all" {
            kinds.extend(PerturbationKind::ALL);
        } else {
            kinds.insert(item.parse()?);
        }
    }
    Ok(kinds)
}

/// Audit trail of one edit: `removed` was replaced by `inserted` at byte
/// offset `position` inside span `span_index` of the base text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub kind: PerturbationKind,
    pub span_index: Option<usize>,
    pub position: usize,
    pub removed: String,
    pub inserted: String,
}

impl EditRecord {
    /// Re-applies the edit to `base`.
    pub fn apply(&self, base: &AnnotatedText) -> Option<String> {
        let span = base.spans.get(self.span_index?)?;
        let at = span.start + self.position;
        let end = at + self.removed.len();
        if end > span.end || base.text.get(at..end)? != self.removed {
            return None;
        }
        let mut out = String::with_capacity(base.text.len() + self.inserted.len());
        out.push_str(&base.text[..at]);
        out.push_str(&self.inserted);
        out.push_str(&base.text[end..]);
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedCandidate {
    pub kind: PerturbationKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditRecord>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("no {0} span to perturb")]
    NoTarget(SpanKind),
    #[error("every {0} span is too short to delete from")]
    UnperturbableSpan(SpanKind),
    #[error("empty replacement alphabet")]
    EmptyAlphabet,
    #[error("span index {0} out of range or of the wrong kind")]
    BadSpan(usize),
    #[error("segment {segment:?}: missing field {field}")]
    MissingField { segment: String, field: String },
    #[error("{0} does not edit a span")]
    NotTargeted(PerturbationKind),
}

pub const DIGITS: [char; 10] = ['0', '1', '2', '3', '4', '5', '6', '7', '8', '9'];

/// Deterministic single-character edit at char index `char_pos` of span
/// `span_index`. `replacement` is required for add/sub and ignored for del.
pub fn apply_char_edit(
    text: &AnnotatedText,
    span_index: usize,
    mode: EditMode,
    char_pos: usize,
    replacement: Option<char>,
) -> Result<PerturbedCandidate, PerturbError> {
    let span = text.spans.get(span_index).ok_or(PerturbError::BadSpan(span_index))?;
    let surface = &span.surface;
    // Byte offset of char `char_pos` within the span (== len for one-past-end).
    let offsets: Vec<usize> = surface
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(surface.len()))
        .collect();
    let n_chars = offsets.len() - 1;
    let limit = if mode == EditMode::Add { n_chars } else { n_chars.saturating_sub(1) };
    if char_pos > limit || (mode != EditMode::Add && n_chars == 0) {
        return Err(PerturbError::BadSpan(span_index));
    }
    let position = offsets[char_pos];
    let removed = match mode {
        EditMode::Add => String::new(),
        EditMode::Del | EditMode::Sub => surface[position..offsets[char_pos + 1]].to_string(),
    };
    let inserted = match mode {
        EditMode::Del => String::new(),
        EditMode::Add | EditMode::Sub => replacement.ok_or(PerturbError::EmptyAlphabet)?.to_string(),
    };
    let record = EditRecord {
        kind: PerturbationKind::from_char_edit(span.kind, mode),
        span_index: Some(span_index),
        position,
        removed,
        inserted,
    };
    let out = record.apply(text).ok_or(PerturbError::BadSpan(span_index))?;
    Ok(PerturbedCandidate {
        kind: record.kind,
        text: out,
        edit: Some(record),
    })
}

/// Adds, deletes or substitutes one character at a uniformly random position
/// of a uniformly random span of `target`. Numbers use the digit alphabet;
/// named entities and nouns use `letters`.
pub fn perturb_char<R: Rng + ?Sized>(
    text: &AnnotatedText,
    target: SpanKind,
    mode: EditMode,
    letters: &[char],
    rng: &mut R,
) -> Result<PerturbedCandidate, PerturbError> {
    let candidates: Vec<usize> = text
        .spans
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == target)
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(PerturbError::NoTarget(target));
    }
    let eligible: Vec<usize> = match mode {
        // A deletion must not erase the whole span.
        EditMode::Del => candidates
            .into_iter()
            .filter(|&i| text.spans[i].char_len() >= 2)
            .collect(),
        _ => candidates,
    };
    let span_index = *eligible
        .choose(rng)
        .ok_or(PerturbError::UnperturbableSpan(target))?;
    let alphabet: &[char] = if target == SpanKind::Number { &DIGITS } else { letters };
    let n_chars = text.spans[span_index].char_len();
    let (char_pos, replacement) = match mode {
        EditMode::Add => {
            let pos = rng.gen_range(0..=n_chars);
            let c = *alphabet.choose(rng).ok_or(PerturbError::EmptyAlphabet)?;
            (pos, Some(c))
        }
        EditMode::Del => (rng.gen_range(0..n_chars), None),
        EditMode::Sub => {
            let pos = rng.gen_range(0..n_chars);
            let original = text.spans[span_index].surface.chars().nth(pos);
            let choices: Vec<char> = alphabet.iter().copied().filter(|&c| Some(c) != original).collect();
            let c = *choices.choose(rng).ok_or(PerturbError::EmptyAlphabet)?;
            (pos, Some(c))
        }
    };
    apply_char_edit(text, span_index, mode, char_pos, replacement)
}

/// Replaces one uniformly chosen number span with a different, uniformly
/// drawn digit string of the same shape: every digit is redrawn, any `.`/`,`
/// separators stay in place.
pub fn perturb_whole_number<R: Rng + ?Sized>(text: &AnnotatedText, rng: &mut R) -> Result<PerturbedCandidate, PerturbError> {
    let numbers: Vec<usize> = text
        .spans
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SpanKind::Number)
        .map(|(i, _)| i)
        .collect();
    let span_index = *numbers.choose(rng).ok_or(PerturbError::NoTarget(SpanKind::Number))?;
    let surface = &text.spans[span_index].surface;
    if !surface.chars().any(|c| c.is_ascii_digit()) {
        return Err(PerturbError::UnperturbableSpan(SpanKind::Number));
    }
    let replacement = loop {
        let drawn: String = surface
            .chars()
            .map(|c| if c.is_ascii_digit() { DIGITS[rng.gen_range(0..10)] } else { c })
            .collect();
        if drawn != *surface {
            break drawn;
        }
    };
    let record = EditRecord {
        kind: PerturbationKind::NumWhole,
        span_index: Some(span_index),
        position: 0,
        removed: surface.clone(),
        inserted: replacement,
    };
    let out = record.apply(text).ok_or(PerturbError::BadSpan(span_index))?;
    Ok(PerturbedCandidate {
        kind: PerturbationKind::NumWhole,
        text: out,
        edit: Some(record),
    })
}

/// Applies one targeted kind (char edit or whole-number replacement).
pub fn perturb_kind<R: Rng + ?Sized>(
    text: &AnnotatedText,
    kind: PerturbationKind,
    letters: &[char],
    rng: &mut R,
) -> Result<PerturbedCandidate, PerturbError> {
    match kind.char_edit() {
        Some((target, mode)) => perturb_char(text, target, mode, letters, rng),
        None if kind == PerturbationKind::NumWhole => perturb_whole_number(text, rng),
        None => Err(PerturbError::NotTargeted(kind)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSource {
    Reference,
    BeamOutput,
}

impl FromStr for BaseSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(BaseSource::Reference),
            "beam_output" | "beam" => Ok(BaseSource::BeamOutput),
            _ => Err(format!("unknown base source {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoTarget,
    UnperturbableSpan,
    NoAlternativeReference,
    /// The alternative reference is not a candidate when the base is the beam output.
    NotApplicable,
    NoHallucinationDonor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    /// `candidates[0]` is always the base.
    pub candidates: Vec<PerturbedCandidate>,
    pub skipped: Vec<(PerturbationKind, SkipReason)>,
}

impl CandidatePool {
    pub fn texts(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.text.clone()).collect()
    }
}

/// Inputs shared by every segment of a run.
#[derive(Debug, Clone, Copy)]
pub struct PoolContext<'a> {
    pub letters: &'a [char],
    /// Unrelated target-side sentence for the hallucination candidate.
    pub hallucination: Option<&'a str>,
}

pub fn base_text(segment: &Segment, base: BaseSource) -> Result<&AnnotatedText, PerturbError> {
    match base {
        BaseSource::Reference => Ok(&segment.reference),
        BaseSource::BeamOutput => segment.beam_output.as_ref().ok_or_else(|| PerturbError::MissingField {
            segment: segment.id.clone(),
            field: "beam_output".into(),
        }),
    }
}

/// Base candidate first, then one candidate per requested and applicable
/// kind in canonical order. Each kind draws from its own stream of `seed`,
/// so adding or removing kinds never changes the others.
pub fn build_candidate_pool(
    segment: &Segment,
    base: BaseSource,
    kinds: &BTreeSet<PerturbationKind>,
    ctx: &PoolContext<'_>,
    seed: u64,
) -> Result<CandidatePool, PerturbError> {
    let base_text = base_text(segment, base)?;
    let mut pool = CandidatePool {
        candidates: vec![PerturbedCandidate {
            kind: PerturbationKind::Base,
            text: base_text.text.clone(),
            edit: None,
        }],
        skipped: Vec::new(),
    };
    for &kind in kinds {
        let reference_point = |text: &str| PerturbedCandidate {
            kind,
            text: text.to_string(),
            edit: None,
        };
        let made = match kind {
            PerturbationKind::Base => continue,
            PerturbationKind::Copy => Ok(reference_point(&segment.source.text)),
            PerturbationKind::Altern => match (base, &segment.alternative_reference) {
                (BaseSource::BeamOutput, _) => Err(SkipReason::NotApplicable),
                (BaseSource::Reference, Some(alt)) => Ok(reference_point(&alt.text)),
                (BaseSource::Reference, None) => Err(SkipReason::NoAlternativeReference),
            },
            PerturbationKind::Hallucin => ctx
                .hallucination
                .map(reference_point)
                .ok_or(SkipReason::NoHallucinationDonor),
            targeted => {
                let mut rng = kind_rng(seed, targeted);
                match perturb_kind(base_text, targeted, ctx.letters, &mut rng) {
                    Ok(c) => Ok(c),
                    Err(PerturbError::NoTarget(_)) => Err(SkipReason::NoTarget),
                    Err(PerturbError::UnperturbableSpan(_)) => Err(SkipReason::UnperturbableSpan),
                    Err(e) => return Err(e),
                }
            }
        };
        match made {
            Ok(c) => pool.candidates.push(c),
            Err(reason) => pool.skipped.push((kind, reason)),
        }
    }
    Ok(pool)
}

/// Generator for one perturbation kind of one segment.
pub fn kind_rng(seed: u64, kind: PerturbationKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind as u64 + 1);
    rng
}

/// Stable 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-segment seed: run seed xor a stable hash of the segment id.
pub fn segment_seed(seed: u64, segment_id: &str) -> u64 {
    seed ^ fnv1a(segment_id.as_bytes())
}

/// Random cyclic permutation (Sattolo), which has no fixed points.
/// `None` when `n < 2`.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Option<Vec<usize>> {
    if n < 2 {
        return None;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    Some(perm)
}

/// Hallucination donor segment for every segment of `corpus`.
pub fn hallucination_donors(corpus: &Corpus, seed: u64) -> Vec<Option<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x68616c6c); // "hall"
    match derangement(corpus.len(), &mut rng) {
        Some(perm) => perm.into_iter().map(Some).collect(),
        None => vec![None; corpus.len()],
    }
}
