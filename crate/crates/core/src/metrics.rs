//! BLEU, ROUGE-N, ROUGE-L and property-name-insensitive accuracy.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::sva;

const MULTI_CHAR_OPS: &[&str] = &[
    "===", "!==", "|->", "|=>", "##", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "->", "::",
];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$' || c == '\''
}

/// Whitespace split, then operator and punctuation characters split off as
/// their own tokens. Known multi-character operators stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            let len = if is_word_char(c) {
                rest.find(|ch: char| !is_word_char(ch)).unwrap_or(rest.len())
            } else if let Some(op) = MULTI_CHAR_OPS.iter().find(|op| rest.starts_with(**op)) {
                op.len()
            } else {
                c.len_utf8()
            };
            out.push(rest[..len].to_string());
            rest = &rest[len..];
        }
    }
    out
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Candidate n-grams matched in the reference, each clipped at its reference
/// count. Returns `(matched, candidate_total)`.
fn clipped_matches<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let total = candidate.len().saturating_sub(n - 1);
    let matched = cand.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
    (matched, total)
}

/// Clipped n-gram precision; 0 when the candidate has no n-grams.
pub fn modified_ngram_precision<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let (matched, total) = clipped_matches(candidate, reference, n);
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// 1 when `c > r`, otherwise `exp(1 - r/c)`; 0 for an empty candidate.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// `BP · exp(Σ wₙ log pₙ)` with uniform weights over orders `1..=max_n`.
///
/// A zero pₙ for n ≥ 2 is replaced by `1 / (2·count)`; a zero unigram
/// precision gives 0. Orders longer than the candidate are dropped and the
/// remaining weights renormalized.
pub fn bleu<T: AsRef<str>>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    let weights = vec![1.0 / max_n as f64; max_n];
    bleu_weighted(candidate, reference, &weights)
}

pub fn bleu_weighted<T: AsRef<str>>(candidate: &[T], reference: &[T], weights: &[f64]) -> f64 {
    if candidate.is_empty() || weights.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut weight_sum = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let n = i + 1;
        let (matched, total) = clipped_matches(candidate, reference, n);
        if total == 0 {
            continue;
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (2.0 * total as f64)
        };
        log_sum += w * p.ln();
        weight_sum += w;
    }
    if weight_sum == 0.0 {
        return 0.0;
    }
    brevity_penalty(candidate.len(), reference.len()) * (log_sum / weight_sum).exp()
}

/// Clipped n-gram overlap over the reference n-gram count; 0 when the
/// reference has no n-grams.
pub fn rouge_n<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let (matched, _) = clipped_matches(candidate, reference, n);
    let total = reference.len().saturating_sub(n - 1);
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeL {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when the candidate or the reference is empty.
    pub empty_input: bool,
}

pub fn rouge_l<T: AsRef<str> + PartialEq>(candidate: &[T], reference: &[T], beta: f64) -> RougeL {
    assert!(beta > 0.0, "beta must be positive");
    if candidate.is_empty() || reference.is_empty() {
        return RougeL { f: 0.0, precision: 0.0, recall: 0.0, empty_input: true };
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let f = if lcs == 0.0 {
        0.0
    } else {
        let b2 = beta * beta;
        (1.0 + b2) * r * p / (r + b2 * p)
    };
    RougeL { f, precision: p, recall: r, empty_input: false }
}

/// Canonical body tokens used for accuracy. Text that fails to lex, has
/// unbalanced property blocks or contains no assertion body falls back to
/// its whitespace-split words.
pub fn normalized_body(text: &str) -> Vec<String> {
    let body = sva::canonicalize(text).and_then(|c| sva::assertion_body(&c));
    match body {
        Ok(b) if !b.tokens.is_empty() => b.tokens.into_iter().map(|t| t.text).collect(),
        // marked so a fallback never equals a parsed body
        _ => text.split_whitespace().map(|w| format!("\u{0}{w}")).collect(),
    }
}

fn check_aligned(predictions: usize, references: usize) -> Result<()> {
    if predictions != references {
        return Err(Error::LengthMismatch { left: predictions, right: references });
    }
    if predictions == 0 {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    Ok(())
}

/// Fraction of pairs whose normalized assertion bodies are equal.
pub fn accuracy<S: AsRef<str> + Sync>(predictions: &[S], references: &[S]) -> Result<f64> {
    check_aligned(predictions.len(), references.len())?;
    let pairs: Vec<(&str, &str)> = predictions.iter().zip(references).map(|(p, r)| (p.as_ref(), r.as_ref())).collect();
    let hits = map_ordered(&pairs, |(p, r)| normalized_body(p) == normalized_body(r));
    Ok(hits.iter().filter(|&&h| h).count() as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub accuracy: f64,
    pub syntax_valid_rate: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleScores {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub correct: bool,
    pub syntax_valid: bool,
}

pub fn score_example(prediction: &str, reference: &str) -> ExampleScores {
    let c = tokenize(prediction);
    let r = tokenize(reference);
    ExampleScores {
        bleu: bleu(&c, &r, 4),
        rouge1: rouge_n(&c, &r, 1),
        rouge2: rouge_n(&c, &r, 2),
        rouge_l: rouge_l(&c, &r, 1.0).f,
        correct: normalized_body(prediction) == normalized_body(reference),
        syntax_valid: sva::validate_syntax(prediction).is_ok(),
    }
}

/// Sentence-level scores averaged over the corpus, reduced in input order.
pub fn evaluate_corpus<S: AsRef<str> + Sync>(predictions: &[S], references: &[S]) -> Result<MetricReport> {
    check_aligned(predictions.len(), references.len())?;
    let pairs: Vec<(&str, &str)> = predictions.iter().zip(references).map(|(p, r)| (p.as_ref(), r.as_ref())).collect();
    let scores = map_ordered(&pairs, |(p, r)| score_example(p, r));
    let n = scores.len() as f64;
    let mean = |f: fn(&ExampleScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        bleu: mean(|s| s.bleu),
        rouge1: mean(|s| s.rouge1),
        rouge2: mean(|s| s.rouge2),
        rouge_l: mean(|s| s.rouge_l),
        accuracy: mean(|s| if s.correct { 1.0 } else { 0.0 }),
        syntax_valid_rate: mean(|s| if s.syntax_valid { 1.0 } else { 0.0 }),
        n_examples: scores.len(),
    })
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "bleu,rouge1,rouge2,rougeL,accuracy,syntax_valid_rate,n_examples";

    /// Metric columns in ablation-table order: `bleu,rouge1,rouge2,rougeL,accuracy`.
    pub fn metric_fields(&self) -> String {
        format!("{:.6},{:.6},{:.6},{:.6},{:.6}", self.bleu, self.rouge1, self.rouge2, self.rouge_l, self.accuracy)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{:.6},{}\n",
            Self::CSV_HEADER,
            self.metric_fields(),
            self.syntax_valid_rate,
            self.n_examples
        )
    }

    pub fn in_range(&self) -> bool {
        [self.bleu, self.rouge1, self.rouge2, self.rouge_l, self.accuracy, self.syntax_valid_rate]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
            && self.n_examples >= 1
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples           {}", self.n_examples)?;
        writeln!(f, "BLEU               {:.4}", self.bleu)?;
        writeln!(f, "ROUGE-1            {:.4}", self.rouge1)?;
        writeln!(f, "ROUGE-2            {:.4}", self.rouge2)?;
        writeln!(f, "ROUGE-L            {:.4}", self.rouge_l)?;
        writeln!(f, "accuracy (normalized exact match) {:.4}", self.accuracy)?;
        write!(f, "syntax valid rate  {:.4}", self.syntax_valid_rate)
    }
}
