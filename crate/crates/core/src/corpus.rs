//! Corpus data model and the JSONL reader/writer.
//!
//! One segment per line. Spans are byte offsets into the UTF-8 text of the
//! object that owns them; `surface` is never stored on disk and is rebuilt
//! from the offsets on load.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Language tag used when the caller does not provide one.
pub const UNDETERMINED_LANGUAGE: &str = "und";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("segment {segment:?}, field {field}: {message}")]
    Validation {
        segment: String,
        field: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Number,
    NamedEntity,
    Noun,
}

impl SpanKind {
    pub const ALL: [SpanKind; 3] = [SpanKind::Number, SpanKind::NamedEntity, SpanKind::Noun];

    pub fn as_str(self) -> &'static str {
        match self {
            SpanKind::Number => "number",
            SpanKind::NamedEntity => "named_entity",
            SpanKind::Noun => "noun",
        }
    }
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed byte range `[start, end)` of an owning text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
    pub surface: String,
}

impl Span {
    /// Builds a span over `text`, checking bounds and char boundaries.
    pub fn new(text: &str, start: usize, end: usize, kind: SpanKind) -> Result<Span, String> {
        if start >= end {
            return Err(format!("span start {start} must be < end {end}"));
        }
        if end > text.len() {
            return Err(format!("span end {end} exceeds text length {}", text.len()));
        }
        if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
            return Err(format!("span [{start}, {end}) splits a UTF-8 code point"));
        }
        Ok(Span {
            start,
            end,
            kind,
            surface: text[start..end].to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn char_len(&self) -> usize {
        self.surface.chars().count()
    }
}

/// Span as it appears on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSpan {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

impl From<&Span> for RawSpan {
    fn from(span: &Span) -> Self {
        RawSpan {
            start: span.start,
            end: span.end,
            kind: span.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedText {
    pub text: String,
    pub spans: Vec<Span>,
}

impl AnnotatedText {
    pub fn plain(text: impl Into<String>) -> Self {
        AnnotatedText {
            text: text.into(),
            spans: Vec::new(),
        }
    }

    /// Validates raw spans against `text`. Spans of the same kind must be
    /// sorted by start and non-overlapping.
    pub fn new(text: impl Into<String>, raw: &[RawSpan]) -> Result<Self, String> {
        let text = text.into();
        let mut spans = Vec::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            let span = Span::new(&text, r.start, r.end, r.kind).map_err(|e| format!("spans[{i}]: {e}"))?;
            spans.push(span);
        }
        check_span_order(&spans)?;
        Ok(AnnotatedText { text, spans })
    }

    /// Plain text annotated with number spans found by [`extract_number_spans`].
    pub fn with_number_spans(text: impl Into<String>) -> Self {
        let text = text.into();
        let spans = extract_number_spans(&text);
        AnnotatedText { text, spans }
    }

    pub fn spans_of(&self, kind: SpanKind) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(move |s| s.kind == kind)
    }

    pub fn has_kind(&self, kind: SpanKind) -> bool {
        self.spans.iter().any(|s| s.kind == kind)
    }

    pub fn surfaces(&self, kind: SpanKind) -> Vec<String> {
        self.spans_of(kind).map(|s| s.surface.clone()).collect()
    }

    pub fn raw_spans(&self) -> Vec<RawSpan> {
        self.spans.iter().map(RawSpan::from).collect()
    }

    /// Re-checks every span invariant against the current text.
    pub fn validate(&self) -> Result<(), String> {
        for (i, span) in self.spans.iter().enumerate() {
            let rebuilt = Span::new(&self.text, span.start, span.end, span.kind)
                .map_err(|e| format!("spans[{i}]: {e}"))?;
            if rebuilt.surface != span.surface {
                return Err(format!("spans[{i}]: surface does not match text"));
            }
        }
        check_span_order(&self.spans)
    }
}

fn check_span_order(spans: &[Span]) -> Result<(), String> {
    for kind in SpanKind::ALL {
        let mut prev: Option<&Span> = None;
        for span in spans.iter().filter(|s| s.kind == kind) {
            if let Some(p) = prev {
                if span.start < p.start {
                    return Err(format!("{kind} spans not sorted by start ({} after {})", span.start, p.start));
                }
                if span.start < p.end {
                    return Err(format!(
                        "{kind} spans overlap: [{}, {}) and [{}, {})",
                        p.start, p.end, span.start, span.end
                    ));
                }
            }
            prev = Some(span);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub source: AnnotatedText,
    pub reference: AnnotatedText,
    pub alternative_reference: Option<AnnotatedText>,
    pub beam_output: Option<AnnotatedText>,
    /// Ancestral sample pool, duplicates kept.
    pub samples: Vec<String>,
}

impl Segment {
    /// Human references in order: the primary reference, then the alternative.
    pub fn references(&self) -> Vec<&str> {
        let mut refs = vec![self.reference.text.as_str()];
        if let Some(alt) = &self.alternative_reference {
            refs.push(alt.text.as_str());
        }
        refs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub segments: Vec<Segment>,
    pub source_language: String,
    pub target_language: String,
}

impl Default for Corpus {
    fn default() -> Self {
        Corpus {
            segments: Vec::new(),
            source_language: UNDETERMINED_LANGUAGE.to_string(),
            target_language: UNDETERMINED_LANGUAGE.to_string(),
        }
    }
}

impl Corpus {
    /// Builds a corpus, enforcing unique non-empty ids and non-empty references.
    pub fn new(segments: Vec<Segment>) -> Result<Corpus, CorpusError> {
        let mut seen = HashSet::new();
        for seg in &segments {
            validate_segment(seg)?;
            if !seen.insert(seg.id.as_str()) {
                return Err(validation(&seg.id, "id", "duplicate segment id"));
            }
        }
        Ok(Corpus {
            segments,
            ..Corpus::default()
        })
    }

    pub fn with_languages(mut self, source: &str, target: &str) -> Self {
        self.source_language = source.to_string();
        self.target_language = target.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn index_by_id(&self) -> BTreeMap<&str, usize> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Letters usable for NE/noun edits: every alphabetic char found on the
    /// target side of the corpus plus ASCII `a..=z`, sorted.
    pub fn target_alphabet(&self) -> Vec<char> {
        let mut letters: BTreeSet<char> = ('a'..='z').collect();
        for seg in &self.segments {
            let mut texts: Vec<&str> = vec![&seg.reference.text];
            if let Some(alt) = &seg.alternative_reference {
                texts.push(&alt.text);
            }
            if let Some(beam) = &seg.beam_output {
                texts.push(&beam.text);
            }
            texts.extend(seg.samples.iter().map(String::as_str));
            for t in texts {
                letters.extend(t.chars().filter(|c| c.is_alphabetic()));
            }
        }
        letters.into_iter().collect()
    }
}

fn validation(segment: &str, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Validation {
        segment: segment.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn validate_segment(seg: &Segment) -> Result<(), CorpusError> {
    if seg.id.is_empty() {
        return Err(validation(&seg.id, "id", "segment id must be non-empty"));
    }
    if seg.reference.text.is_empty() {
        return Err(validation(&seg.id, "reference", "reference text must be non-empty"));
    }
    let sides = [
        ("source", Some(&seg.source)),
        ("reference", Some(&seg.reference)),
        ("alternative_reference", seg.alternative_reference.as_ref()),
        ("beam_output", seg.beam_output.as_ref()),
    ];
    for (field, side) in sides {
        if let Some(side) = side {
            side.validate().map_err(|m| validation(&seg.id, field, m))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RawText {
    text: String,
    #[serde(default)]
    spans: Vec<RawSpan>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSegment {
    id: String,
    source: RawText,
    reference: RawText,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alternative_reference: Option<RawText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beam_output: Option<RawText>,
    samples: Vec<String>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, Value>,
}

impl RawText {
    fn from_annotated(t: &AnnotatedText) -> Self {
        RawText {
            text: t.text.clone(),
            spans: t.raw_spans(),
            extra: BTreeMap::new(),
        }
    }
}

fn convert_text(id: &str, field: &str, raw: RawText, line: usize) -> Result<AnnotatedText, CorpusError> {
    for key in raw.extra.keys() {
        log::warn!("line {line}: segment {id:?}: ignoring unknown field {field}.{key}");
    }
    AnnotatedText::new(raw.text, &raw.spans).map_err(|m| validation(id, field, m))
}

/// Parses one JSONL line into a segment. `line` is 1-based and only used in
/// messages.
pub fn parse_segment(json: &str, line: usize) -> Result<Segment, CorpusError> {
    let raw: RawSegment = serde_json::from_str(json).map_err(|e| CorpusError::Parse {
        line,
        message: e.to_string(),
    })?;
    for key in raw.extra.keys() {
        log::warn!("line {line}: segment {:?}: ignoring unknown field {key}", raw.id);
    }
    let id = raw.id;
    let seg = Segment {
        source: convert_text(&id, "source", raw.source, line)?,
        reference: convert_text(&id, "reference", raw.reference, line)?,
        alternative_reference: raw
            .alternative_reference
            .map(|t| convert_text(&id, "alternative_reference", t, line))
            .transpose()?,
        beam_output: raw
            .beam_output
            .map(|t| convert_text(&id, "beam_output", t, line))
            .transpose()?,
        samples: raw.samples,
        id,
    };
    validate_segment(&seg)?;
    Ok(seg)
}

/// Reads a corpus from any line-oriented reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut segments = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let seg = parse_segment(&line, line_no)?;
        if !seen.insert(seg.id.clone()) {
            return Err(validation(&seg.id, "id", format!("duplicate segment id (line {line_no})")));
        }
        segments.push(seg);
    }
    Ok(Corpus {
        segments,
        ..Corpus::default()
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file))
}

pub fn segment_to_json(seg: &Segment) -> String {
    let raw = RawSegment {
        id: seg.id.clone(),
        source: RawText::from_annotated(&seg.source),
        reference: RawText::from_annotated(&seg.reference),
        alternative_reference: seg.alternative_reference.as_ref().map(RawText::from_annotated),
        beam_output: seg.beam_output.as_ref().map(RawText::from_annotated),
        samples: seg.samples.clone(),
        extra: BTreeMap::new(),
    };
    serde_json::to_string(&raw).expect("segment serialization cannot fail")
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> io::Result<()> {
    for seg in &corpus.segments {
        writeln!(out, "{}", segment_to_json(seg))?;
    }
    Ok(())
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9]+(?:[.,][0-9]+)*").expect("valid number pattern"))
}

/// Every maximal match of `[0-9]+([.,][0-9]+)*`, left to right. Matching is
/// on raw text and no normalization is applied, so `"1,000"` and `"1000"`
/// stay distinct.
pub fn extract_numbers(text: &str) -> Vec<String> {
    number_regex()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Same matches as [`extract_numbers`], as number spans.
pub fn extract_number_spans(text: &str) -> Vec<Span> {
    number_regex()
        .find_iter(text)
        .map(|m| Span {
            start: m.start(),
            end: m.end(),
            kind: SpanKind::Number,
            surface: m.as_str().to_string(),
        })
        .collect()
}
