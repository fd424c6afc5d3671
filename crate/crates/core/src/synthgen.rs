//! Synthetic metric-training examples: translations containing a number or
//! named entity get one targeted perturbation and a lowered score.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{extract_number_spans, AnnotatedText, RawSpan, SpanKind};
use crate::perturb::{perturb_kind, EditRecord, PerturbationKind};
use crate::tsv;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("example {0} is not an original example")]
    NotOriginal(usize),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Synthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub source: String,
    pub translation: String,
    pub reference: String,
    pub score: f64,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<EditRecord>,
}

impl TrainingExample {
    pub fn original(source: &str, translation: &str, reference: &str, score: f64) -> Self {
        TrainingExample {
            source: source.into(),
            translation: translation.into(),
            reference: reference.into(),
            score,
            origin: Origin::Original,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub score_offset: f64,
    /// Synthetic examples per original example.
    pub target_ratio: f64,
    pub seed: u64,
    pub eligible_kinds: BTreeSet<PerturbationKind>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            score_offset: 0.20,
            target_ratio: 0.10,
            seed: 0,
            eligible_kinds: default_kinds(),
        }
    }
}

/// Number and named-entity kinds.
pub fn default_kinds() -> BTreeSet<PerturbationKind> {
    PerturbationKind::ALL
        .into_iter()
        .filter(|k| {
            matches!(
                k.char_edit().map(|(t, _)| t),
                Some(SpanKind::Number | SpanKind::NamedEntity)
            ) || *k == PerturbationKind::NumWhole
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.score_offset >= 0.0 && self.score_offset.is_finite()) {
            return Err(SynthError::InvalidConfig(format!(
                "score_offset must be >= 0, got {}",
                self.score_offset
            )));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio < 1.0) {
            return Err(SynthError::InvalidConfig(format!(
                "target_ratio must be in (0, 1), got {}",
                self.target_ratio
            )));
        }
        if let Some(k) = self.eligible_kinds.iter().find(|k| !k.is_targeted()) {
            return Err(SynthError::InvalidConfig(format!("{k} is not a span edit")));
        }
        if self.eligible_kinds.is_empty() {
            return Err(SynthError::InvalidConfig("no eligible kinds".into()));
        }
        Ok(())
    }
}

/// Annotates the translation of an example.
pub trait SpanProvider: Sync {
    fn annotate(&self, index: usize, example: &TrainingExample) -> AnnotatedText;
}

/// Number spans found by the number pattern; no named entities.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegexNumbers;

impl SpanProvider for RegexNumbers {
    fn annotate(&self, _index: usize, example: &TrainingExample) -> AnnotatedText {
        AnnotatedText::with_number_spans(example.translation.clone())
    }
}

/// Externally supplied spans per example, plus pattern-matched numbers for
/// examples whose spans include no number.
#[derive(Debug, Clone, Default)]
pub struct StoredSpans(pub Vec<Option<Vec<RawSpan>>>);

impl SpanProvider for StoredSpans {
    fn annotate(&self, index: usize, example: &TrainingExample) -> AnnotatedText {
        let given = self.0.get(index).and_then(|s| s.as_ref());
        let Some(given) = given else {
            return RegexNumbers.annotate(index, example);
        };
        let mut raw = given.clone();
        if !raw.iter().any(|s| s.kind == SpanKind::Number) {
            raw.extend(extract_number_spans(&example.translation).iter().map(|s| RawSpan {
                start: s.start,
                end: s.end,
                kind: s.kind,
            }));
        }
        match AnnotatedText::new(example.translation.clone(), &raw) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("example {index}: ignoring invalid spans: {e}");
                RegexNumbers.annotate(index, example)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub synthetic: Vec<TrainingExample>,
    pub eligible: usize,
    pub selection_probability: f64,
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn alphabet(examples: &[TrainingExample]) -> Vec<char> {
    let mut set: BTreeSet<char> = ('a'..='z').collect();
    for e in examples {
        set.extend(e.translation.chars().chain(e.reference.chars()).filter(|c| c.is_alphabetic()));
    }
    set.into_iter().collect()
}

fn applicable(text: &AnnotatedText, kinds: &BTreeSet<PerturbationKind>, letters: &[char]) -> Vec<PerturbationKind> {
    let mut probe = ChaCha8Rng::seed_from_u64(0);
    kinds
        .iter()
        .copied()
        .filter(|&k| perturb_kind(text, k, letters, &mut probe).is_ok())
        .collect()
}

/// One synthetic copy per selected eligible example, in input order.
///
/// An example is eligible when its translation has a number or named-entity
/// span that some configured kind can edit. Eligible examples are selected
/// independently with probability `min(1, ratio * N / E)`.
pub fn generate_synthetic<P: SpanProvider + ?Sized>(
    examples: &[TrainingExample],
    spans: &P,
    cfg: &SynthConfig,
) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    if let Some(i) = examples.iter().position(|e| e.origin != Origin::Original) {
        return Err(SynthError::NotOriginal(i));
    }
    let letters = alphabet(examples);
    let annotated: Vec<(AnnotatedText, Vec<PerturbationKind>)> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let text = spans.annotate(i, e);
            let kinds = if text.has_kind(SpanKind::Number) || text.has_kind(SpanKind::NamedEntity) {
                applicable(&text, &cfg.eligible_kinds, &letters)
            } else {
                Vec::new()
            };
            (text, kinds)
        })
        .collect();
    let eligible = annotated.iter().filter(|(_, k)| !k.is_empty()).count();
    if eligible == 0 {
        log::warn!("no eligible examples: no translation has an editable number or named entity");
        return Ok(SynthOutput {
            synthetic: Vec::new(),
            eligible: 0,
            selection_probability: 0.0,
        });
    }
    let p = (cfg.target_ratio * examples.len() as f64 / eligible as f64).min(1.0);
    let synthetic: Vec<Option<TrainingExample>> = examples
        .par_iter()
        .zip(annotated.par_iter())
        .enumerate()
        .map(|(i, (e, (text, kinds)))| {
            if kinds.is_empty() {
                return None;
            }
            let mut rng = example_rng(cfg.seed, i);
            if rng.gen::<f64>() >= p {
                return None;
            }
            let kind = *kinds.choose(&mut rng)?;
            let cand = perturb_kind(text, kind, &letters, &mut rng).ok()?;
            Some(TrainingExample {
                source: e.source.clone(),
                translation: cand.text,
                reference: e.reference.clone(),
                score: e.score - cfg.score_offset,
                origin: Origin::Synthetic,
                perturbation: cand.edit,
            })
        })
        .collect();
    Ok(SynthOutput {
        synthetic: synthetic.into_iter().flatten().collect(),
        eligible,
        selection_probability: p,
    })
}

/// Concatenation followed by a seeded shuffle.
pub fn mix(original: &[TrainingExample], synthetic: &[TrainingExample], seed: u64) -> Vec<TrainingExample> {
    let mut all: Vec<TrainingExample> = original.iter().chain(synthetic).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6d6978); // "mix"
    all.shuffle(&mut rng);
    all
}

/// Reads a headed TSV with columns `src`, `mt`, `ref`, `score` and optional
/// `origin` and `mt_spans` (JSON list of spans over `mt`). Rows marked
/// synthetic are rejected.
pub fn read_examples<R: Read>(input: R) -> Result<(Vec<TrainingExample>, StoredSpans), SynthError> {
    let mut r = tsv::reader(input, true);
    let headers = r
        .headers()
        .map_err(|e| SynthError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(src), Some(mt), Some(rf), Some(score)) = (col("src"), col("mt"), col("ref"), col("score")) else {
        return Err(SynthError::Parse {
            line: 1,
            message: "header must name src, mt, ref and score".into(),
        });
    };
    let origin = col("origin");
    let spans_col = col("mt_spans");
    let mut examples = Vec::new();
    let mut spans = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| SynthError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            record.get(i).ok_or_else(|| SynthError::Parse {
                line,
                message: format!("missing column {}", headers.get(i).unwrap_or("?")),
            })
        };
        let value: f64 = field(score)?.trim().parse().map_err(|_| SynthError::Parse {
            line,
            message: format!("bad score {:?}", field(score).unwrap_or("")),
        })?;
        if let Some(o) = origin.and_then(|i| record.get(i)) {
            if !o.is_empty() && o != "original" {
                return Err(SynthError::Parse {
                    line,
                    message: format!("input rows must be original, got {o:?}"),
                });
            }
        }
        let given = match spans_col.and_then(|i| record.get(i)).filter(|s| !s.is_empty()) {
            Some(json) => Some(serde_json::from_str::<Vec<RawSpan>>(json).map_err(|e| SynthError::Parse {
                line,
                message: format!("mt_spans: {e}"),
            })?),
            None => None,
        };
        examples.push(TrainingExample::original(field(src)?, field(mt)?, field(rf)?, value));
        spans.push(given);
    }
    Ok((examples, StoredSpans(spans)))
}

/// Writes `src mt ref score origin`; synthetic rows carry the edit record as
/// a sixth JSON column.
pub fn write_examples<W: Write>(examples: &[TrainingExample], out: W) -> io::Result<()> {
    let mut w = tsv::writer(out);
    w.write_record(["src", "mt", "ref", "score", "origin"])?;
    for e in examples {
        let mut row = vec![
            e.source.clone(),
            e.translation.clone(),
            e.reference.clone(),
            tsv::fmt_f64(e.score),
            e.origin.as_str().to_string(),
        ];
        if let Some(edit) = &e.perturbation {
            row.push(serde_json::to_string(edit).map_err(io::Error::other)?);
        }
        w.write_record(&row)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_numbers(n: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| TrainingExample::original("src", &format!("It cost {} dollars.", 100 + i), "ref", 0.5))
            .collect()
    }

    #[test]
    fn offset_is_subtracted() {
        let cfg = SynthConfig {
            target_ratio: 0.9,
            ..SynthConfig::default()
        };
        let out = generate_synthetic(&with_numbers(20), &RegexNumbers, &cfg).unwrap();
        assert!(!out.synthetic.is_empty());
        for s in &out.synthetic {
            assert_eq!(s.score, 0.5 - 0.20);
            assert_eq!(s.score, 0.3);
            assert_eq!(s.origin, Origin::Synthetic);
            assert!(s.perturbation.is_some());
            assert_ne!(s.translation, "");
        }
    }

    #[test]
    fn examples_without_spans_are_never_selected() {
        let mut ex = with_numbers(5);
        ex.push(TrainingExample::original("s", "No digits here.", "r", 0.1));
        let cfg = SynthConfig {
            target_ratio: 0.99,
            ..SynthConfig::default()
        };
        let out = generate_synthetic(&ex, &RegexNumbers, &cfg).unwrap();
        assert_eq!(out.eligible, 5);
        assert!(out.synthetic.iter().all(|s| s.source == "src"));
    }

    #[test]
    fn no_eligible_returns_empty() {
        let ex = vec![TrainingExample::original("s", "nothing", "r", 0.1)];
        let out = generate_synthetic(&ex, &RegexNumbers, &SynthConfig::default()).unwrap();
        assert!(out.synthetic.is_empty());
        assert_eq!(out.eligible, 0);
    }

    #[test]
    fn half_ratio_on_ten_examples() {
        let cfg = SynthConfig {
            target_ratio: 0.5,
            ..SynthConfig::default()
        };
        let out = generate_synthetic(&with_numbers(10), &RegexNumbers, &cfg).unwrap();
        assert_eq!(out.selection_probability, 0.5);
        assert!((4..=6).contains(&out.synthetic.len()), "{}", out.synthetic.len());
    }

    #[test]
    fn ne_spans_are_used_and_nouns_ignored() {
        let ex = vec![
            TrainingExample::original("s", "Mahmoud left.", "r", 1.0),
            TrainingExample::original("s", "The house.", "r", 1.0),
        ];
        let spans = StoredSpans(vec![
            Some(vec![RawSpan { start: 0, end: 7, kind: SpanKind::NamedEntity }]),
            Some(vec![RawSpan { start: 4, end: 9, kind: SpanKind::Noun }]),
        ]);
        let cfg = SynthConfig {
            target_ratio: 0.9,
            ..SynthConfig::default()
        };
        let out = generate_synthetic(&ex, &spans, &cfg).unwrap();
        assert_eq!(out.eligible, 1);
        assert_eq!(out.synthetic.len(), 1);
        let edit = out.synthetic[0].perturbation.as_ref().unwrap();
        assert!(matches!(edit.kind, PerturbationKind::NeAdd | PerturbationKind::NeDel | PerturbationKind::NeSub));
        assert!(out.synthetic[0].translation.ends_with(" left."));
    }

    #[test]
    fn deterministic_under_seed() {
        let ex = with_numbers(200);
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&ex, &RegexNumbers, &cfg).unwrap();
        let b = generate_synthetic(&ex, &RegexNumbers, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&ex, &RegexNumbers, &SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.synthetic, c.synthetic);
    }

    #[test]
    fn mix_preserves_counts() {
        let orig = with_numbers(30);
        let syn = generate_synthetic(&orig, &RegexNumbers, &SynthConfig { target_ratio: 0.5, ..Default::default() })
            .unwrap()
            .synthetic;
        let mixed = mix(&orig, &syn, 3);
        assert_eq!(mixed.len(), orig.len() + syn.len());
        assert_eq!(mixed.iter().filter(|e| e.origin == Origin::Synthetic).count(), syn.len());
        assert_eq!(mixed, mix(&orig, &syn, 3));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            SynthConfig { score_offset: -0.1, ..Default::default() },
            SynthConfig { target_ratio: 1.0, ..Default::default() },
            SynthConfig { target_ratio: 0.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(SynthError::InvalidConfig(_))));
        }
        assert_eq!(default_kinds().len(), 7);
    }

    #[test]
    fn tsv_round_trip() {
        let input = "src\tmt\tref\tscore\tmt_spans\nQ\tMahmoud paid 5.\tR\t0.25\t[{\"start\":0,\"end\":7,\"kind\":\"named_entity\"}]\nQ2\tplain\tR2\t-1\t\n";
        let (ex, spans) = read_examples(input.as_bytes()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].score, -1.0);
        let t = spans.annotate(0, &ex[0]);
        assert!(t.has_kind(SpanKind::NamedEntity) && t.has_kind(SpanKind::Number));
        let mut buf = Vec::new();
        write_examples(&ex, &mut buf).unwrap();
        let (back, _) = read_examples(&buf[..]).unwrap();
        assert_eq!(back, ex);
    }

    #[test]
    fn rejects_synthetic_input_rows() {
        let input = "src\tmt\tref\tscore\torigin\na\tb\tc\t0.1\tsynthetic\n";
        assert!(matches!(read_examples(input.as_bytes()), Err(SynthError::Parse { .. })));
    }
}
