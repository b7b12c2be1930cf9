//! CIDEr-D: per-order TF-IDF cosine between candidate and each reference,
//! with clipped candidate weights and a Gaussian penalty on the length
//! difference, averaged over orders 1..4 and references, scaled by 10.

use std::collections::HashMap;

use super::ngram_counts;
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_ORDER: usize = 4;
const CIDER_SCALE: f64 = 10.0;

/// A candidate caption with its reference captions, all tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

type TfIdf = HashMap<Vec<String>, f64>;

/// Document frequencies from a reference corpus, where one document is one
/// candidate's full reference set.
#[derive(Debug, Clone)]
pub struct CiderD {
    document_frequency: HashMap<Vec<String>, f64>,
    log_documents: f64,
}

impl CiderD {
    pub fn new<'a>(documents: impl IntoIterator<Item = &'a [Vec<String>]>) -> Result<Self> {
        let mut document_frequency: HashMap<Vec<String>, f64> = HashMap::new();
        let mut n_docs = 0usize;
        for refs in documents {
            n_docs += 1;
            let mut seen = std::collections::HashSet::new();
            for r in refs {
                for n in 1..=CIDER_ORDER {
                    for gram in ngram_counts(r, n).into_keys() {
                        seen.insert(gram);
                    }
                }
            }
            for gram in seen {
                *document_frequency.entry(gram.to_vec()).or_insert(0.0) += 1.0;
            }
        }
        if n_docs == 0 {
            return Err(Error::Empty("CIDEr reference corpus".into()));
        }
        Ok(Self {
            document_frequency,
            log_documents: (n_docs as f64).ln(),
        })
    }

    fn vectorize(&self, tokens: &[String]) -> (Vec<TfIdf>, Vec<f64>) {
        let mut vecs = Vec::with_capacity(CIDER_ORDER);
        let mut norms = Vec::with_capacity(CIDER_ORDER);
        for n in 1..=CIDER_ORDER {
            let mut v = TfIdf::new();
            let mut norm = 0.0;
            for (gram, count) in ngram_counts(tokens, n) {
                let df = self.document_frequency.get(gram).copied().unwrap_or(0.0).max(1.0);
                let w = count as f64 * (self.log_documents - df.ln());
                norm += w * w;
                v.insert(gram.to_vec(), w);
            }
            vecs.push(v);
            norms.push(norm.sqrt());
        }
        (vecs, norms)
    }

    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let (hyp, hyp_norm) = self.vectorize(candidate);
        let mut per_order = [0.0f64; CIDER_ORDER];
        for r in references {
            let (rv, r_norm) = self.vectorize(r);
            let delta = candidate.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..CIDER_ORDER {
                let mut val: f64 = hyp[n]
                    .iter()
                    .map(|(gram, &h)| {
                        let rw = rv[n].get(gram).copied().unwrap_or(0.0);
                        h.min(rw) * rw
                    })
                    .sum();
                if hyp_norm[n] != 0.0 && r_norm[n] != 0.0 {
                    val /= hyp_norm[n] * r_norm[n];
                }
                per_order[n] += val * penalty;
            }
        }
        let mean = per_order.iter().sum::<f64>() / CIDER_ORDER as f64;
        mean / references.len() as f64 * CIDER_SCALE
    }
}

/// Corpus CIDEr-D over `pairs`, with document frequencies taken from the
/// pairs' own reference sets. Returns the mean and per-pair scores.
pub fn cider_d(pairs: &[CaptionPair]) -> Result<(f64, Vec<f64>)> {
    let scorer = CiderD::new(pairs.iter().map(|p| p.references.as_slice()))?;
    let scores: Vec<f64> = pairs.iter().map(|p| scorer.score(&p.candidate, &p.references)).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((mean, scores))
}
