//! Native chrF++ and sentence-level BLEU, and the [`Utility`] abstraction the
//! MBR engine is generic over.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rpc::RpcError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    /// Both inputs are empty. The score is defined as 0.
    #[error("degenerate input: both strings are empty")]
    DegenerateInput,
    #[error("invalid metric parameters: {0}")]
    InvalidParams(String),
}

/// Failure of a utility evaluation.
#[derive(Debug, Error)]
pub enum UtilityError {
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error("{0}")]
    Other(String),
}

/// Multiset of n-grams of one order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NGramCounts {
    pub order: usize,
    pub counts: HashMap<String, usize>,
}

impl NGramCounts {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, gram: &str) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Clipped overlap: sum over n-grams of min(count here, count there).
    pub fn matches(&self, other: &NGramCounts) -> usize {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .map(|(g, &c)| c.min(large.get(g)))
            .sum()
    }
}

/// Character n-grams after removing all whitespace.
pub fn char_ngrams(text: &str, n: usize) -> NGramCounts {
    assert!(n >= 1, "n-gram order must be >= 1");
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    NGramCounts { order: n, counts }
}

/// Word n-grams over [`tokenize_words`]; tokens are joined by a single space.
pub fn word_ngrams(text: &str, n: usize) -> NGramCounts {
    word_ngrams_from_tokens(&tokenize_words(text), n)
}

fn word_ngrams_from_tokens(tokens: &[&str], n: usize) -> NGramCounts {
    assert!(n >= 1, "n-gram order must be >= 1");
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.join(" ")).or_insert(0) += 1;
        }
    }
    NGramCounts { order: n, counts }
}

/// Punctuation stripped from token edges: ASCII punctuation plus the common
/// typographic marks used in European news text.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '„' | '“' | '”' | '‘' | '’' | '‚' | '«' | '»' | '‹' | '›' | '–' | '—' | '…' | '¡' | '¿' | '·' | '§'
        )
}

/// Split on Unicode whitespace, trim punctuation from both ends of each
/// token, drop tokens that become empty.
pub fn tokenize_words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(is_punctuation))
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfParams {
    pub max_char_order: usize,
    pub max_word_order: usize,
    pub beta: f64,
}

impl Default for ChrfParams {
    fn default() -> Self {
        ChrfParams {
            max_char_order: 6,
            max_word_order: 2,
            beta: 2.0,
        }
    }
}

impl ChrfParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.max_char_order < 1 {
            return Err(MetricError::InvalidParams("max_char_order must be >= 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(MetricError::InvalidParams("beta must be a positive finite number".into()));
        }
        Ok(())
    }
}

/// Precomputed n-gram statistics of one string for chrF++.
#[derive(Debug, Clone)]
pub struct ChrfStats {
    char_orders: Vec<NGramCounts>,
    word_orders: Vec<NGramCounts>,
    empty: bool,
}

impl ChrfStats {
    pub fn new(text: &str, params: &ChrfParams) -> Self {
        let tokens = tokenize_words(text);
        ChrfStats {
            char_orders: (1..=params.max_char_order).map(|n| char_ngrams(text, n)).collect(),
            word_orders: (1..=params.max_word_order)
                .map(|n| word_ngrams_from_tokens(&tokens, n))
                .collect(),
            empty: text.is_empty(),
        }
    }
}

/// chrF++ from precomputed statistics; see [`chrf_pp`].
pub fn chrf_pp_stats(candidate: &ChrfStats, support: &ChrfStats, beta: f64) -> Result<f64, MetricError> {
    if candidate.empty && support.empty {
        return Err(MetricError::DegenerateInput);
    }
    let (mut p_sum, mut p_n) = (0.0_f64, 0_usize);
    let (mut r_sum, mut r_n) = (0.0_f64, 0_usize);
    let orders = candidate
        .char_orders
        .iter()
        .zip(&support.char_orders)
        .chain(candidate.word_orders.iter().zip(&support.word_orders));
    for (c, s) in orders {
        let (c_total, s_total) = (c.total(), s.total());
        if c_total == 0 && s_total == 0 {
            continue;
        }
        let m = c.matches(s) as f64;
        if c_total > 0 {
            p_sum += m / c_total as f64;
            p_n += 1;
        }
        if s_total > 0 {
            r_sum += m / s_total as f64;
            r_n += 1;
        }
    }
    let precision = if p_n > 0 { p_sum / p_n as f64 } else { 0.0 };
    let recall = if r_n > 0 { r_sum / r_n as f64 } else { 0.0 };
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (1.0 + b2) * precision * recall / denom)
}

/// chrF++ of `candidate` against `support_hyp`, in `[0, 100]`.
///
/// Precision and recall are macro-averaged over character orders
/// `1..=max_char_order` and word orders `1..=max_word_order`. An order counts
/// towards the precision average only if the candidate has n-grams of that
/// order, and towards recall only if the support has.
pub fn chrf_pp(candidate: &str, support_hyp: &str, params: &ChrfParams) -> Result<f64, MetricError> {
    params.validate()?;
    chrf_pp_stats(
        &ChrfStats::new(candidate, params),
        &ChrfStats::new(support_hyp, params),
        params.beta,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "value")]
pub enum Smoothing {
    Exp,
    Floor(f64),
    None,
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothing::Exp => f.write_str("exp"),
            Smoothing::Floor(v) => write!(f, "floor:{v}"),
            Smoothing::None => f.write_str("none"),
        }
    }
}

impl FromStr for Smoothing {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Smoothing::Exp),
            "none" => Ok(Smoothing::None),
            "floor" => Ok(Smoothing::Floor(0.1)),
            _ => match s.strip_prefix("floor:") {
                Some(v) => v
                    .parse()
                    .map(Smoothing::Floor)
                    .map_err(|_| MetricError::InvalidParams(format!("bad floor value {v:?}"))),
                None => Err(MetricError::InvalidParams(format!("unknown smoothing {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuParams {
    pub max_order: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuParams {
    fn default() -> Self {
        BleuParams {
            max_order: 4,
            smoothing: Smoothing::Exp,
        }
    }
}

impl BleuParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.max_order < 1 {
            return Err(MetricError::InvalidParams("max_order must be >= 1".into()));
        }
        if let Smoothing::Floor(v) = self.smoothing {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MetricError::InvalidParams("floor smoothing value must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Per-string n-gram statistics for BLEU.
#[derive(Debug, Clone)]
pub struct BleuStats {
    len: usize,
    orders: Vec<NGramCounts>,
}

impl BleuStats {
    pub fn new(text: &str, params: &BleuParams) -> Self {
        let tokens = tokenize_words(text);
        BleuStats {
            len: tokens.len(),
            orders: (1..=params.max_order)
                .map(|n| word_ngrams_from_tokens(&tokens, n))
                .collect(),
        }
    }
}

/// Sentence BLEU from precomputed statistics; see [`sentence_bleu`].
pub fn sentence_bleu_stats(candidate: &BleuStats, support: &BleuStats, params: &BleuParams) -> Result<f64, MetricError> {
    if candidate.len == 0 && support.len == 0 {
        return Err(MetricError::DegenerateInput);
    }
    let matches: Vec<usize> = candidate
        .orders
        .iter()
        .zip(&support.orders)
        .map(|(c, s)| c.matches(s))
        .collect();
    if matches.iter().all(|&m| m == 0) {
        return Ok(0.0);
    }
    // Effective order: stop at the first order the candidate has no n-grams for.
    let mut log_sum = 0.0;
    let mut effective_order = 0;
    let mut smooth_mteval = 1.0;
    for (n, counts) in candidate.orders.iter().enumerate() {
        let total = counts.total();
        if total == 0 {
            break;
        }
        effective_order = n + 1;
        let precision = if matches[n] > 0 {
            matches[n] as f64 / total as f64
        } else {
            match params.smoothing {
                Smoothing::Exp => {
                    smooth_mteval *= 2.0;
                    1.0 / (smooth_mteval * total as f64)
                }
                Smoothing::Floor(v) => v / total as f64,
                Smoothing::None => return Ok(0.0),
            }
        };
        log_sum += precision.ln();
    }
    let brevity = if candidate.len >= support.len {
        1.0
    } else {
        (1.0 - support.len as f64 / candidate.len as f64).exp()
    };
    Ok(100.0 * brevity * (log_sum / effective_order as f64).exp())
}

/// Sentence-level BLEU in `[0, 100]` with the configured smoothing, using
/// effective-order geometric averaging (orders the candidate is too short
/// for are dropped).
pub fn sentence_bleu(candidate: &str, support_hyp: &str, params: &BleuParams) -> Result<f64, MetricError> {
    params.validate()?;
    sentence_bleu_stats(
        &BleuStats::new(candidate, params),
        &BleuStats::new(support_hyp, params),
        params,
    )
}

/// Dense row-major `|C| x |S|` grid.
pub type Grid = Vec<Vec<f64>>;

/// A utility function `u(source, candidate, support) -> score`, higher is
/// better. Implementations must be pure.
pub trait Utility: Send + Sync {
    fn name(&self) -> &str;

    fn needs_source(&self) -> bool;

    fn score(&self, source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError>;

    /// Whole-matrix evaluation for utilities that can amortize work across
    /// pairs (one request per segment for remote scorers). `None` means the
    /// engine falls back to per-pair [`Utility::score`] calls.
    fn score_matrix(
        &self,
        _source: &str,
        _candidates: &[String],
        _support: &[String],
    ) -> Option<Result<Grid, UtilityError>> {
        None
    }
}

impl<U: Utility + ?Sized> Utility for &U {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn needs_source(&self) -> bool {
        (**self).needs_source()
    }
    fn score(&self, source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError> {
        (**self).score(source, candidate, support)
    }
    fn score_matrix(&self, source: &str, candidates: &[String], support: &[String]) -> Option<Result<Grid, UtilityError>> {
        (**self).score_matrix(source, candidates, support)
    }
}

impl<U: Utility + ?Sized> Utility for Box<U> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn needs_source(&self) -> bool {
        (**self).needs_source()
    }
    fn score(&self, source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError> {
        (**self).score(source, candidate, support)
    }
    fn score_matrix(&self, source: &str, candidates: &[String], support: &[String]) -> Option<Result<Grid, UtilityError>> {
        (**self).score_matrix(source, candidates, support)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "chrf++")]
    ChrfPP,
    #[serde(rename = "bleu")]
    Bleu,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::ChrfPP => "chrf++",
            MetricKind::Bleu => "bleu",
        }
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chrf++" => Ok(MetricKind::ChrfPP),
            "bleu" => Ok(MetricKind::Bleu),
            _ => Err(MetricError::InvalidParams(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChrfUtility {
    pub params: ChrfParams,
}

impl Utility for ChrfUtility {
    fn name(&self) -> &str {
        "chrf++"
    }

    fn needs_source(&self) -> bool {
        false
    }

    fn score(&self, _source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError> {
        match chrf_pp(candidate, support, &self.params) {
            Ok(v) => Ok(v),
            Err(MetricError::DegenerateInput) => {
                log::debug!("chrf++: both strings empty, scoring 0");
                Ok(0.0)
            }
            Err(e) => Err(UtilityError::Other(e.to_string())),
        }
    }

    fn score_matrix(&self, _source: &str, candidates: &[String], support: &[String]) -> Option<Result<Grid, UtilityError>> {
        if let Err(e) = self.params.validate() {
            return Some(Err(UtilityError::Other(e.to_string())));
        }
        let stats = |xs: &[String]| xs.iter().map(|x| ChrfStats::new(x, &self.params)).collect::<Vec<_>>();
        let (cs, ss) = (stats(candidates), stats(support));
        let grid = cs
            .iter()
            .map(|c| {
                ss.iter()
                    .map(|s| chrf_pp_stats(c, s, self.params.beta).unwrap_or(0.0))
                    .collect()
            })
            .collect();
        Some(Ok(grid))
    }
}

#[derive(Debug, Clone, Default)]
pub struct BleuUtility {
    pub params: BleuParams,
}

impl Utility for BleuUtility {
    fn name(&self) -> &str {
        "bleu"
    }

    fn needs_source(&self) -> bool {
        false
    }

    fn score(&self, _source: &str, candidate: &str, support: &str) -> Result<f64, UtilityError> {
        match sentence_bleu(candidate, support, &self.params) {
            Ok(v) => Ok(v),
            Err(MetricError::DegenerateInput) => {
                log::debug!("bleu: both strings empty, scoring 0");
                Ok(0.0)
            }
            Err(e) => Err(UtilityError::Other(e.to_string())),
        }
    }

    fn score_matrix(&self, _source: &str, candidates: &[String], support: &[String]) -> Option<Result<Grid, UtilityError>> {
        if let Err(e) = self.params.validate() {
            return Some(Err(UtilityError::Other(e.to_string())));
        }
        let stats = |xs: &[String]| xs.iter().map(|x| BleuStats::new(x, &self.params)).collect::<Vec<_>>();
        let (cs, ss) = (stats(candidates), stats(support));
        let grid = cs
            .iter()
            .map(|c| {
                ss.iter()
                    .map(|s| sentence_bleu_stats(c, s, &self.params).unwrap_or(0.0))
                    .collect()
            })
            .collect();
        Some(Ok(grid))
    }
}

/// Wraps a native metric with default parameters as a source-free utility.
pub fn as_utility(metric: MetricKind) -> Box<dyn Utility> {
    match metric {
        MetricKind::ChrfPP => Box::new(ChrfUtility::default()),
        MetricKind::Bleu => Box::new(BleuUtility::default()),
    }
}
