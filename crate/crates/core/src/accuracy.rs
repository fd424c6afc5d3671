//! Number and named-entity error rates of system outputs.
//!
//! Numbers are compared against the source (found with the number regex on
//! both sides), named entities against the reference (caller-supplied spans
//! on the output side). Both directions are pooled into one micro-averaged
//! rate:
//!
//! ```text
//! rate = 100 * (1 - (sum a_covered + sum b_covered) / (sum |a| + sum |b|))
//! ```
//!
//! Matching is exact string equality. `"3 pm"` against `"15:00"` counts as
//! an error.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{extract_numbers, Corpus, Span, SpanKind};
use crate::tsv;

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error("output for unknown segment {0:?}")]
    UnknownSegment(String),
    #[error("segment {segment:?}: missing named-entity annotation on the {side} side")]
    MissingAnnotation { segment: String, side: String },
    #[error("unknown baseline system {0:?}")]
    UnknownBaseline(String),
    #[error("system name {0:?} is reserved or used twice")]
    DuplicateSystem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Each item matches at most one item on the other side.
    #[default]
    Multiset,
    /// Duplicates are collapsed on both sides before matching.
    Set,
}

impl std::str::FromStr for OverlapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiset" => Ok(OverlapMode::Multiset),
            "set" => Ok(OverlapMode::Set),
            _ => Err(format!("unknown matching mode {s:?} (expected multiset or set)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemOverlap {
    pub a_items: Vec<String>,
    pub b_items: Vec<String>,
    pub a_covered: usize,
    pub b_covered: usize,
}

impl ItemOverlap {
    pub fn covered(&self) -> usize {
        self.a_covered + self.b_covered
    }

    pub fn total(&self) -> usize {
        self.a_items.len() + self.b_items.len()
    }
}

/// Greedy multiset matching on exact equality.
pub fn item_overlap(a: &[String], b: &[String]) -> ItemOverlap {
    item_overlap_with(a, b, OverlapMode::Multiset)
}

pub fn item_overlap_with(a: &[String], b: &[String], mode: OverlapMode) -> ItemOverlap {
    let (a_items, b_items) = match mode {
        OverlapMode::Multiset => (a.to_vec(), b.to_vec()),
        OverlapMode::Set => (dedup(a), dedup(b)),
    };
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for x in &b_items {
        *remaining.entry(x.as_str()).or_insert(0) += 1;
    }
    let mut matched = 0;
    for x in &a_items {
        if let Some(n) = remaining.get_mut(x.as_str()) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    ItemOverlap {
        a_items,
        b_items,
        a_covered: matched,
        b_covered: matched,
    }
}

fn dedup(xs: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    xs.iter().filter(|x| seen.insert(x.as_str())).cloned().collect()
}

/// Corpus-level counts behind one rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RateCounts {
    pub covered: usize,
    pub total: usize,
    pub segments: usize,
}

impl RateCounts {
    /// Error rate in percent; 0 when there are no items at all.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * (1.0 - self.covered as f64 / self.total as f64)
        }
    }

    fn add(mut self, o: &ItemOverlap) -> Self {
        self.covered += o.covered();
        self.total += o.total();
        if o.total() > 0 {
            self.segments += 1;
        }
        self
    }
}

fn check_ids(corpus: &Corpus, outputs: &BTreeMap<String, String>) -> Result<(), AccuracyError> {
    let index = corpus.index_by_id();
    match outputs.keys().find(|id| !index.contains_key(id.as_str())) {
        Some(id) => Err(AccuracyError::UnknownSegment(id.clone())),
        None => Ok(()),
    }
}

/// Number counts over the segments that have an output, in corpus order.
pub fn number_counts(corpus: &Corpus, outputs: &BTreeMap<String, String>, mode: OverlapMode) -> Result<RateCounts, AccuracyError> {
    check_ids(corpus, outputs)?;
    let overlaps: Vec<ItemOverlap> = corpus
        .segments
        .par_iter()
        .filter_map(|seg| {
            outputs
                .get(&seg.id)
                .map(|out| item_overlap_with(&extract_numbers(&seg.source.text), &extract_numbers(out), mode))
        })
        .collect();
    Ok(overlaps.iter().fold(RateCounts::default(), RateCounts::add))
}

/// Micro-averaged bidirectional number error rate against the source.
pub fn number_error_rate(corpus: &Corpus, outputs: &BTreeMap<String, String>) -> Result<f64, AccuracyError> {
    Ok(number_counts(corpus, outputs, OverlapMode::Multiset)?.rate())
}

fn ne_surfaces(spans: &[Span]) -> Vec<String> {
    spans
        .iter()
        .filter(|s| s.kind == SpanKind::NamedEntity)
        .map(|s| s.surface.clone())
        .collect()
}

/// Whether any reference in the corpus carries a named-entity span.
pub fn corpus_has_ne_annotations(corpus: &Corpus) -> bool {
    corpus.segments.iter().any(|s| s.reference.has_kind(SpanKind::NamedEntity))
}

pub fn ne_counts(
    corpus: &Corpus,
    outputs: &BTreeMap<String, String>,
    output_ne_spans: &BTreeMap<String, Vec<Span>>,
    mode: OverlapMode,
) -> Result<RateCounts, AccuracyError> {
    check_ids(corpus, outputs)?;
    if !corpus_has_ne_annotations(corpus) {
        let segment = corpus.segments.first().map(|s| s.id.clone()).unwrap_or_default();
        return Err(AccuracyError::MissingAnnotation {
            segment,
            side: "reference".into(),
        });
    }
    let mut counts = RateCounts::default();
    for seg in &corpus.segments {
        if !outputs.contains_key(&seg.id) {
            continue;
        }
        let spans = output_ne_spans.get(&seg.id).ok_or_else(|| AccuracyError::MissingAnnotation {
            segment: seg.id.clone(),
            side: "output".into(),
        })?;
        let o = item_overlap_with(&seg.reference.surfaces(SpanKind::NamedEntity), &ne_surfaces(spans), mode);
        counts = counts.add(&o);
    }
    Ok(counts)
}

/// Micro-averaged bidirectional named-entity error rate against the reference.
pub fn ne_error_rate(
    corpus: &Corpus,
    outputs: &BTreeMap<String, String>,
    output_ne_spans: &BTreeMap<String, Vec<Span>>,
) -> Result<f64, AccuracyError> {
    Ok(ne_counts(corpus, outputs, output_ne_spans, OverlapMode::Multiset)?.rate())
}

/// One system's outputs, optionally with named-entity spans per segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SystemOutputs {
    pub texts: BTreeMap<String, String>,
    pub ne_spans: Option<BTreeMap<String, Vec<Span>>>,
}

pub const REFERENCE_SYSTEM: &str = "reference";
pub const ALTERNATIVE_SYSTEM: &str = "alternative";

/// The reference and alternative translations as pseudo-systems.
pub fn pseudo_systems(corpus: &Corpus) -> Vec<(String, SystemOutputs)> {
    let mut reference = SystemOutputs {
        ne_spans: Some(BTreeMap::new()),
        ..Default::default()
    };
    let mut alternative = reference.clone();
    for seg in &corpus.segments {
        reference.texts.insert(seg.id.clone(), seg.reference.text.clone());
        if let Some(spans) = reference.ne_spans.as_mut() {
            spans.insert(seg.id.clone(), seg.reference.spans.clone());
        }
        if let Some(alt) = &seg.alternative_reference {
            alternative.texts.insert(seg.id.clone(), alt.text.clone());
            if let Some(spans) = alternative.ne_spans.as_mut() {
                spans.insert(seg.id.clone(), alt.spans.clone());
            }
        }
    }
    let mut out = vec![(REFERENCE_SYSTEM.to_string(), reference)];
    if !alternative.texts.is_empty() {
        out.push((ALTERNATIVE_SYSTEM.to_string(), alternative));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub number_error_rate: f64,
    pub number_delta: f64,
    pub n_number_items: usize,
    pub ne_error_rate: Option<f64>,
    pub ne_delta: Option<f64>,
    pub n_ne_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub rows: Vec<SystemRow>,
    pub number_baseline: String,
    pub ne_baseline: String,
    pub averaging: String,
    pub matching: OverlapMode,
}

impl ErrorRateReport {
    pub fn row(&self, system: &str) -> Option<&SystemRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    pub fn write_tsv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = tsv::writer(out);
        w.write_record([
            "system",
            "number_error_rate",
            "number_delta",
            "n_number_items",
            "ne_error_rate",
            "ne_delta",
            "n_ne_items",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            w.write_record([
                r.system.clone(),
                format!("{:.6}", r.number_error_rate),
                format!("{:+.6}", r.number_delta),
                r.n_number_items.to_string(),
                opt(r.ne_error_rate),
                r.ne_delta.map(|x| format!("{x:+.6}")).unwrap_or_else(|| "NA".into()),
                r.n_ne_items.to_string(),
            ])?;
        }
        w.flush()
    }
}

/// One row per system (pseudo-systems first) with signed deltas against
/// the baseline rows. Named-entity rates are reported only for systems that
/// supply spans and when the corpus references are annotated.
pub fn audit_report(
    corpus: &Corpus,
    systems: &BTreeMap<String, SystemOutputs>,
    number_baseline: &str,
    ne_baseline: &str,
    mode: OverlapMode,
) -> Result<ErrorRateReport, AccuracyError> {
    let mut all = pseudo_systems(corpus);
    for (name, outputs) in systems {
        if all.iter().any(|(n, _)| n == name) {
            return Err(AccuracyError::DuplicateSystem(name.clone()));
        }
        all.push((name.clone(), outputs.clone()));
    }
    for b in [number_baseline, ne_baseline] {
        if !all.iter().any(|(n, _)| n == b) {
            return Err(AccuracyError::UnknownBaseline(b.to_string()));
        }
    }
    let annotated = corpus_has_ne_annotations(corpus);
    let mut rows = Vec::with_capacity(all.len());
    for (name, outputs) in &all {
        let numbers = number_counts(corpus, &outputs.texts, mode)?;
        let ne = match (&outputs.ne_spans, annotated) {
            (Some(spans), true) => Some(ne_counts(corpus, &outputs.texts, spans, mode)?),
            _ => None,
        };
        rows.push(SystemRow {
            system: name.clone(),
            number_error_rate: numbers.rate(),
            number_delta: 0.0,
            n_number_items: numbers.total,
            ne_error_rate: ne.map(|c| c.rate()),
            ne_delta: None,
            n_ne_items: ne.map(|c| c.total).unwrap_or(0),
        });
    }
    let base_num = rows.iter().find(|r| r.system == number_baseline).map(|r| r.number_error_rate).unwrap_or(0.0);
    let base_ne = rows.iter().find(|r| r.system == ne_baseline).and_then(|r| r.ne_error_rate);
    for r in &mut rows {
        r.number_delta = r.number_error_rate - base_num;
        r.ne_delta = match (r.ne_error_rate, base_ne) {
            (Some(x), Some(b)) => Some(x - b),
            _ => None,
        };
    }
    Ok(ErrorRateReport {
        rows,
        number_baseline: number_baseline.to_string(),
        ne_baseline: ne_baseline.to_string(),
        averaging: "micro".into(),
        matching: mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedText, RawSpan, Segment};

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    fn seg(id: &str, source: &str, reference: AnnotatedText) -> Segment {
        Segment {
            id: id.into(),
            source: AnnotatedText::plain(source),
            reference,
            alternative_reference: None,
            beam_output: None,
            samples: vec![],
        }
    }

    fn outputs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn overlap_examples() {
        let o = item_overlap(&s(&["1970"]), &s(&["1970"]));
        assert_eq!((o.a_covered, o.b_covered), (1, 1));
        let o = item_overlap(&s(&["1970"]), &s(&["1980"]));
        assert_eq!((o.a_covered, o.b_covered), (0, 0));
        let o = item_overlap(&s(&["5", "5"]), &s(&["5"]));
        assert_eq!((o.a_covered, o.b_covered), (1, 1));
        let o = item_overlap_with(&s(&["5", "5"]), &s(&["5"]), OverlapMode::Set);
        assert_eq!((o.a_covered, o.b_covered, o.total()), (1, 1, 2));
    }

    #[test]
    fn number_rate_cases() {
        let corpus = Corpus::new(vec![seg("a", "1970", AnnotatedText::plain("1970"))]).unwrap();
        assert_eq!(number_error_rate(&corpus, &outputs(&[("a", "1970")])).unwrap(), 0.0);
        assert_eq!(number_error_rate(&corpus, &outputs(&[("a", "1980")])).unwrap(), 100.0);
        assert_eq!(
            number_error_rate(&corpus, &outputs(&[("zz", "1")])),
            Err(AccuracyError::UnknownSegment("zz".into()))
        );
    }

    #[test]
    fn two_segment_micro_average() {
        // (src 2 / matched 1, out 1 / matched 1) and (src 1 / matched 1, out 2 / matched 1).
        let corpus = Corpus::new(vec![
            seg("a", "3 and 4", AnnotatedText::plain("r")),
            seg("b", "7", AnnotatedText::plain("r")),
        ])
        .unwrap();
        let rate = number_error_rate(&corpus, &outputs(&[("a", "3"), ("b", "7 and 8")])).unwrap();
        assert!((rate - 100.0 * (1.0 - 4.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn ne_rate_table_one_failure() {
        let reference = AnnotatedText::new(
            "Mahmoud met Tebboune",
            &[
                RawSpan { start: 0, end: 7, kind: SpanKind::NamedEntity },
                RawSpan { start: 12, end: 20, kind: SpanKind::NamedEntity },
            ],
        )
        .unwrap();
        let corpus = Corpus::new(vec![seg("a", "src", reference)]).unwrap();
        let out = AnnotatedText::new(
            "Mahmud met Tebboene",
            &[
                RawSpan { start: 0, end: 6, kind: SpanKind::NamedEntity },
                RawSpan { start: 11, end: 19, kind: SpanKind::NamedEntity },
            ],
        )
        .unwrap();
        let spans: BTreeMap<_, _> = [("a".to_string(), out.spans.clone())].into();
        let rate = ne_error_rate(&corpus, &outputs(&[("a", &out.text)]), &spans).unwrap();
        assert_eq!(rate, 100.0);
        let same: BTreeMap<_, _> = [("a".to_string(), corpus.segments[0].reference.spans.clone())].into();
        assert_eq!(ne_error_rate(&corpus, &outputs(&[("a", "x")]), &same).unwrap(), 0.0);
        assert!(matches!(
            ne_error_rate(&corpus, &outputs(&[("a", "x")]), &BTreeMap::new()),
            Err(AccuracyError::MissingAnnotation { .. })
        ));
    }

    #[test]
    fn unannotated_corpus_has_no_ne_rate() {
        let corpus = Corpus::new(vec![seg("a", "1", AnnotatedText::plain("1"))]).unwrap();
        assert!(matches!(
            ne_error_rate(&corpus, &outputs(&[("a", "1")]), &BTreeMap::new()),
            Err(AccuracyError::MissingAnnotation { side, .. }) if side == "reference"
        ));
    }

    #[test]
    fn reference_against_itself() {
        let corpus = Corpus::new(vec![seg("a", "in 1970", AnnotatedText::plain("in 1970"))]).unwrap();
        let report = audit_report(&corpus, &BTreeMap::new(), "reference", "reference", OverlapMode::Multiset).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].number_delta, 0.0);
        assert!(report.rows[0].ne_delta.is_none());
        assert_eq!(
            audit_report(&corpus, &BTreeMap::new(), "nope", "reference", OverlapMode::Multiset),
            Err(AccuracyError::UnknownBaseline("nope".into()))
        );
    }

    #[test]
    fn rates_empty_totals_are_zero() {
        assert_eq!(RateCounts::default().rate(), 0.0);
    }
}
