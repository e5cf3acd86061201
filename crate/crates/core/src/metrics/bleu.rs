//! Corpus-level BLEU-4.
//!
//! Orders 1 to 4 with uniform weights, a brevity penalty, and zero match counts
//! replaced by [`SMOOTHING_EPSILON`]. Orders for which the candidates contain no
//! n-grams at all are left out of the geometric mean and the weights renormalized.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const SMOOTHING_EPSILON: f64 = 0.1;

/// Splits punctuation and symbols off as single-character tokens, then splits
/// on whitespace. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sufficient statistics; additive over sentence pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn from_pair(candidate: &str, reference: &str) -> Self {
        let cand = tokenize(candidate);
        let refr = tokenize(reference);
        let mut stats = BleuStats {
            candidate_len: cand.len(),
            reference_len: refr.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let c = ngram_counts(&cand, n);
            let r = ngram_counts(&refr, n);
            stats.totals[n - 1] = cand.len().saturating_sub(n - 1);
            stats.matches[n - 1] = c
                .iter()
                .map(|(gram, &count)| count.min(r.get(gram).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return if self.reference_len == 0 { 1.0 } else { 0.0 };
        }
        let orders: Vec<usize> = (0..MAX_ORDER).filter(|&n| self.totals[n] > 0).collect();
        let weight = 1.0 / orders.len() as f64;
        let log_precision: f64 = orders
            .iter()
            .map(|&n| {
                let matched = if self.matches[n] == 0 {
                    SMOOTHING_EPSILON
                } else {
                    self.matches[n] as f64
                };
                weight * (matched / self.totals[n] as f64).ln()
            })
            .sum();
        let c = self.candidate_len as f64;
        let r = self.reference_len as f64;
        let brevity = if c > r { 0.0 } else { 1.0 - r / c };
        (brevity + log_precision).exp()
    }
}

/// Corpus BLEU-4 of `candidates[i]` against `references[i]`.
pub fn bleu4<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("bleu4 needs at least one sentence pair"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(
            "bleu4 input",
            format!(
                "{} candidates but {} references",
                candidates.len(),
                references.len()
            ),
        ));
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add(&BleuStats::from_pair(c.as_ref(), r.as_ref()));
    }
    Ok(stats.score())
}
