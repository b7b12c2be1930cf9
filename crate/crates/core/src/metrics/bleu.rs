use serde::{Deserialize, Serialize};

use super::ngram_counts;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    Off,
    /// Add one to numerator and denominator of the 2..4-gram precisions.
    AddOne,
}

/// Sufficient statistics for BLEU-4: clipped matches and candidate n-gram
/// totals per order, plus candidate and effective reference lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = match smoothing {
                Smoothing::AddOne if n > 0 => (m + 1.0) / (t + 1.0),
                _ if t == 0.0 || m == 0.0 => return 0.0,
                _ => m / t,
            };
            log_sum += p.ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let brevity = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
        brevity * (log_sum / MAX_ORDER as f64).exp()
    }
}

/// Reference length closest to `candidate_len`, preferring the shorter one.
fn closest_reference_len<S>(candidate_len: usize, references: &[Vec<S>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(candidate_len), r))
        .unwrap_or(0)
}

pub fn bleu_stats<S: AsRef<str> + Eq + std::hash::Hash>(candidate: &[S], references: &[Vec<S>]) -> BleuStats {
    let mut stats = BleuStats {
        candidate_len: candidate.len(),
        reference_len: closest_reference_len(candidate.len(), references),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(candidate, n);
        let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        let mut matched = 0;
        for (gram, &count) in &cand {
            let max_ref = ref_counts.iter().filter_map(|rc| rc.get(gram)).copied().max().unwrap_or(0);
            matched += count.min(max_ref);
        }
        stats.matches[n - 1] = matched;
        stats.totals[n - 1] = candidate.len().saturating_sub(n - 1);
    }
    stats
}

/// Sentence-level BLEU-4 in `[0, 1]`: clipped n-gram precisions for
/// `n = 1..4`, geometric mean, times the brevity penalty.
pub fn bleu4<S: AsRef<str> + Eq + std::hash::Hash>(candidate: &[S], references: &[Vec<S>], smoothing: Smoothing) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    bleu_stats(candidate, references).score(smoothing)
}

/// Corpus-level BLEU-4 from statistics accumulated over all pairs.
pub fn corpus_bleu4<'a>(stats: impl IntoIterator<Item = &'a BleuStats>, smoothing: Smoothing) -> f64 {
    let mut total = BleuStats::default();
    for s in stats {
        total.add(s);
    }
    total.score(smoothing)
}
