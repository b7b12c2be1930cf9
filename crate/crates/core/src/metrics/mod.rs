//! Caption accuracy and diversity metrics.

mod bleu;
mod cider;
mod dense;
mod diversity;

use std::collections::HashMap;

pub use bleu::{bleu4, bleu_stats, corpus_bleu4, BleuStats, Smoothing, MAX_ORDER};
pub use cider::{cider_d, CaptionPair, CiderD, CIDER_SIGMA};
pub use dense::{dense_eval, DenseEvalReport, DenseVideo, PairMetric, ThresholdScores, DEFAULT_THRESHOLDS};
pub use diversity::{
    diversity_report, repetition, self_bleu, video_repetition, video_self_bleu, DiversityMode,
    DiversityReport, DiversityStat, VideoCaptions, VideoDiversity,
};

/// Lowercases, splits on whitespace and strips leading/trailing characters
/// outside `[a-z0-9]` from every token, dropping tokens left empty.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|raw| {
            raw.to_lowercase()
                .trim_matches(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Multiset of the `n`-grams of `tokens`.
pub(crate) fn ngram_counts<S: AsRef<str> + Eq + std::hash::Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}
