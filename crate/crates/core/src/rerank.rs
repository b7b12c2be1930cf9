//! Proposal and caption re-ranking, and training-set augmentation with
//! predicted proposals.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::concepts::ConceptVocabulary;
use crate::error::{Error, Result};
use crate::interval::best_match;
use crate::metrics::tokenize;
use crate::model::{AnnotationSet, PredictionEntry, TimeInterval, VideoMeta};

/// Predicted proposals must overlap their groundtruth strictly more than
/// this to be used for augmentation.
pub const AUGMENT_MIN_TIOU: f64 = 0.3;
/// Fused re-rank scores closer than this are ordered by start time.
pub const RANK_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankWeights {
    pub quality: f64,
    pub describability: f64,
    pub position: f64,
    pub length: f64,
    pub top_n: usize,
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self {
            quality: 1.0,
            describability: 1.0,
            position: 1.0,
            length: 1.0,
            top_n: 5,
        }
    }
}

impl RerankWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.quality, self.describability, self.position, self.length]
            .iter()
            .any(|w| !w.is_finite())
        {
            return Err(Error::InvalidConfig("re-rank weights must be finite".into()));
        }
        if self.top_n < 1 {
            return Err(Error::InvalidConfig("top must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Raw factor values of one candidate before normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankFactors {
    pub quality: f64,
    /// Length-normalised caption log-probability, when available.
    pub describability: Option<f64>,
    pub position: f64,
    pub length: f64,
}

impl RerankFactors {
    pub fn of(entry: &PredictionEntry, meta: &VideoMeta) -> Result<Self> {
        let quality = entry
            .proposal_score
            .ok_or_else(|| Error::InvalidConfig("proposal re-ranking needs proposal_score on every candidate".into()))?;
        let describability = entry.caption_logprob.map(|lp| {
            let tokens = entry.sentence.as_deref().map_or(0, |s| tokenize(s).len());
            lp / tokens.max(1) as f64
        });
        Ok(Self {
            quality,
            describability,
            position: entry.interval.center() / meta.duration,
            length: entry.interval.length() / meta.duration,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedProposal {
    pub index: usize,
    pub entry: PredictionEntry,
    pub fused_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub ranked: Vec<RankedProposal>,
    /// Fewer candidates than `top_n` were available.
    pub short: bool,
    /// Candidates lacking a caption log-probability.
    pub missing_describability: Vec<usize>,
}

/// Z-scores over the present values; absent entries and zero-variance
/// factors map to 0.
fn z_normalize(values: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return vec![0.0; values.len()];
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    values
        .iter()
        .map(|v| match v {
            Some(v) if std > 0.0 => (v - mean) / std,
            _ => 0.0,
        })
        .collect()
}

/// Scores each candidate by a weighted sum of z-normalised factors and
/// returns the best `top_n`, ties broken by earlier start.
pub fn proposal_rerank(
    candidates: &[PredictionEntry],
    meta: &VideoMeta,
    weights: &RerankWeights,
) -> Result<RerankOutcome> {
    weights.validate()?;
    let factors = candidates
        .iter()
        .map(|c| RerankFactors::of(c, meta))
        .collect::<Result<Vec<_>>>()?;
    Ok(rerank_factors(candidates, &factors, weights))
}

/// [`proposal_rerank`] on precomputed factors.
pub fn rerank_factors(
    candidates: &[PredictionEntry],
    factors: &[RerankFactors],
    weights: &RerankWeights,
) -> RerankOutcome {
    let quality = z_normalize(&factors.iter().map(|f| Some(f.quality)).collect::<Vec<_>>());
    let describability = z_normalize(&factors.iter().map(|f| f.describability).collect::<Vec<_>>());
    let position = z_normalize(&factors.iter().map(|f| Some(f.position)).collect::<Vec<_>>());
    let length = z_normalize(&factors.iter().map(|f| Some(f.length)).collect::<Vec<_>>());

    let mut ranked: Vec<RankedProposal> = candidates
        .iter()
        .enumerate()
        .map(|(i, entry)| RankedProposal {
            index: i,
            entry: entry.clone(),
            fused_score: weights.quality * quality[i]
                + weights.describability * describability[i]
                + weights.position * position[i]
                + weights.length * length[i],
        })
        .collect();
    // scores within rounding noise of each other count as tied
    let key = |r: &RankedProposal| (r.fused_score / RANK_RESOLUTION).round() + 0.0;
    ranked.sort_by(|a, b| {
        key(b)
            .total_cmp(&key(a))
            .then(a.entry.interval.start().total_cmp(&b.entry.interval.start()))
            .then(a.index.cmp(&b.index))
    });
    let short = ranked.len() < weights.top_n;
    ranked.truncate(weights.top_n);
    RerankOutcome {
        ranked,
        short,
        missing_describability: factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.describability.is_none())
            .map(|(i, _)| i)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionRerankParams {
    pub alpha: f64,
    pub beta: f64,
    pub top_concepts: usize,
}

impl Default for CaptionRerankParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            top_concepts: 20,
        }
    }
}

/// Function words ignored when matching captions against concepts.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "into", "onto", "with",
    "by", "for", "from", "up", "down", "out", "off", "over", "under", "while", "then", "as", "is",
    "are", "was", "were", "be", "been", "being", "it", "its", "he", "she", "they", "them", "his",
    "her", "their", "him", "this", "that", "these", "those", "there", "who", "which", "some",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionScore {
    pub unique_ratio: f64,
    pub concept_match: f64,
    pub score: f64,
}

/// Indices of the `top` most probable concepts (ties to the lower index).
fn top_concepts(probs: &[f64], top: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(top);
    order
}

pub fn score_caption(
    caption: &str,
    concept_words: &HashSet<&str>,
    params: &CaptionRerankParams,
) -> CaptionScore {
    let tokens = tokenize(caption);
    let unique_ratio = if tokens.is_empty() {
        0.0
    } else {
        tokens.iter().collect::<HashSet<_>>().len() as f64 / tokens.len() as f64
    };
    let content: Vec<&String> = tokens.iter().filter(|t| !is_stopword(t)).collect();
    let concept_match = if content.is_empty() {
        0.0
    } else {
        content.iter().filter(|t| concept_words.contains(t.as_str())).count() as f64 / content.len() as f64
    };
    CaptionScore {
        unique_ratio,
        concept_match,
        score: params.alpha * unique_ratio + params.beta * concept_match,
    }
}

/// Picks the best caption hypothesis for one proposal. Returns its index
/// and every hypothesis' score; ties keep the earliest hypothesis.
pub fn caption_rerank(
    hypotheses: &[String],
    concept_probs: &[f64],
    vocabulary: &ConceptVocabulary,
    params: &CaptionRerankParams,
) -> Result<(usize, Vec<CaptionScore>)> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("caption hypotheses".into()));
    }
    if concept_probs.len() != vocabulary.len() {
        return Err(Error::DimensionMismatch {
            expected: vocabulary.len(),
            actual: concept_probs.len(),
        });
    }
    let words: HashSet<&str> = top_concepts(concept_probs, params.top_concepts)
        .into_iter()
        .map(|i| vocabulary.concept(i))
        .collect();
    let scores: Vec<CaptionScore> = hypotheses.iter().map(|h| score_caption(h, &words, params)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.score > scores[best].score {
            best = i;
        }
    }
    Ok((best, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPair {
    pub interval: TimeInterval,
    pub gt_index: usize,
    pub tiou: f64,
    pub caption: String,
}

/// Predicted proposals overlapping a groundtruth event with tIoU strictly
/// above 0.3, each labelled with its best-matched groundtruth caption.
pub fn augment(predicted: &[TimeInterval], annotations: &AnnotationSet) -> Result<Vec<AugmentedPair>> {
    let mut out = Vec::new();
    for p in predicted {
        let (gt_index, tiou) = best_match(p, annotations.intervals())?;
        if tiou > AUGMENT_MIN_TIOU {
            out.push(AugmentedPair {
                interval: *p,
                gt_index,
                tiou,
                caption: annotations.sentences()[gt_index].clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval::new(s, e).unwrap()
    }

    fn meta() -> VideoMeta {
        VideoMeta::new("v", 100.0).unwrap()
    }

    fn cand(s: f64, e: f64, score: f64, logprob: Option<f64>) -> PredictionEntry {
        let mut p = PredictionEntry::new(iv(s, e)).with_proposal_score(score).with_sentence("a man runs fast");
        p.caption_logprob = logprob;
        p
    }

    #[test]
    fn single_candidate_returned() {
        let out = proposal_rerank(&[cand(0.0, 10.0, 0.1, None)], &meta(), &RerankWeights::default()).unwrap();
        assert_eq!(out.ranked.len(), 1);
        assert!(out.short);
        assert_eq!(out.missing_describability, vec![0]);
    }

    #[test]
    fn higher_quality_first() {
        let cands = [cand(10.0, 20.0, 0.1, Some(-2.0)), cand(10.0, 20.0, 0.9, Some(-2.0))];
        let w = RerankWeights {
            quality: 1.0,
            ..Default::default()
        };
        let out = proposal_rerank(&cands, &meta(), &w).unwrap();
        assert_eq!(out.ranked[0].index, 1);
    }

    #[test]
    fn hand_table_equal_weights() {
        // duration 100; factors (quality, logprob/4 tokens, center/100, length/100)
        let cands = [
            cand(0.0, 20.0, 0.8, Some(-4.0)),  // q .8, d -1, pos .1, len .2
            cand(40.0, 50.0, 0.4, Some(-8.0)), // q .4, d -2, pos .45, len .1
            cand(60.0, 100.0, 0.6, Some(-2.0)), // q .6, d -.5, pos .8, len .4
            cand(10.0, 40.0, 0.2, Some(-6.0)), // q .2, d -1.5, pos .25, len .3
        ];
        // z-scores by hand:
        // q mean .5 sd .2236: (1.342, -.447, .447, -1.342)
        // d mean -1.25 sd .559: (.447, -1.342, 1.342, -.447)
        // pos mean .4 sd .2622: (-1.144, .191, 1.526, -.572)
        // len mean .25 sd .1118: (-.447, -1.342, 1.342, .447)
        // sums: (.198, -2.940, 4.657, -1.914)
        let out = proposal_rerank(&cands, &meta(), &RerankWeights::default()).unwrap();
        let order: Vec<usize> = out.ranked.iter().map(|r| r.index).collect();
        assert_eq!(order, vec![2, 0, 3, 1]);
        assert!((out.ranked[0].fused_score - 4.657).abs() < 2e-3);
    }

    #[test]
    fn missing_score_rejected() {
        let p = PredictionEntry::new(iv(0.0, 1.0));
        assert!(proposal_rerank(&[p], &meta(), &RerankWeights::default()).is_err());
        let w = RerankWeights {
            top_n: 0,
            ..Default::default()
        };
        assert!(proposal_rerank(&[], &meta(), &w).is_err());
    }

    fn vocab() -> ConceptVocabulary {
        ConceptVocabulary::new(vec!["guitar".into(), "dog".into(), "pasta".into()]).unwrap()
    }

    #[test]
    fn caption_rerank_examples() {
        let v = vocab();
        let probs = [0.9, 0.1, 0.05];
        let one = vec!["anything".to_string()];
        assert_eq!(caption_rerank(&one, &probs, &v, &CaptionRerankParams::default()).unwrap().0, 0);

        let hyps = vec!["a man a man a man".to_string(), "a man runs fast".to_string()];
        let p = CaptionRerankParams {
            alpha: 1.0,
            beta: 0.0,
            top_concepts: 20,
        };
        assert_eq!(caption_rerank(&hyps, &probs, &v, &p).unwrap().0, 1);

        // both 4/4 unique; top-1 concept "guitar"
        let hyps = vec!["a man plays piano".to_string(), "a man plays guitar".to_string()];
        let p = CaptionRerankParams {
            alpha: 0.5,
            beta: 0.5,
            top_concepts: 1,
        };
        let (best, scores) = caption_rerank(&hyps, &probs, &v, &p).unwrap();
        assert_eq!(best, 1);
        // content tokens: man, plays, guitar -> 1/3 matched
        assert!((scores[1].score - (0.5 + 0.5 / 3.0)).abs() < 1e-12);
        assert!(caption_rerank(&[], &probs, &v, &p).is_err());
    }

    #[test]
    fn duplicate_hypotheses_keep_first() {
        let v = vocab();
        let hyps = vec!["a dog runs".to_string(), "a dog runs".to_string()];
        assert_eq!(caption_rerank(&hyps, &[0.1, 0.9, 0.0], &v, &CaptionRerankParams::default()).unwrap().0, 0);
    }

    #[test]
    fn augment_examples() {
        let set = AnnotationSet::new(vec![iv(0.0, 10.0), iv(20.0, 30.0)], vec!["first".into(), "second".into()])
            .unwrap();
        let pairs = augment(&[iv(20.0, 30.0)], &set).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].gt_index, pairs[0].tiou, pairs[0].caption.as_str()), (1, 1.0, "second"));

        // tIoU 0.2
        assert!(augment(&[iv(0.0, 2.0)], &set).unwrap().is_empty());
        // tIoU exactly 0.3: [0,3] vs [0,10]
        assert!(augment(&[iv(0.0, 3.0)], &set).unwrap().is_empty());
    }
}
