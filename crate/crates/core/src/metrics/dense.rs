//! tIoU-thresholded caption evaluation.
//!
//! At each threshold every predicted caption is compared against all
//! groundtruth sentences (from every annotation set) whose interval reaches
//! the threshold. Predictions matching nothing score zero. Scores are
//! averaged over a video's predictions, then over videos, then over
//! thresholds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{bleu_stats, BleuStats, Smoothing};
use super::cider::CiderD;
use super::{corpus_bleu4, tokenize};
use crate::error::{Error, Result};
use crate::interval::tiou;
use crate::model::{AnnotationSet, PredictionEntry};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

/// An externally computed caption metric (e.g. METEOR) scored per pair.
pub trait PairMetric: Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, references: &[&str]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVideo<'a> {
    pub video_id: &'a str,
    pub predictions: &'a [PredictionEntry],
    pub annotations: &'a [AnnotationSet],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScores {
    pub tiou: f64,
    #[serde(rename = "BLEU")]
    pub bleu4: f64,
    #[serde(rename = "BLEU_smoothed")]
    pub bleu4_smoothed: f64,
    #[serde(rename = "BLEU_corpus")]
    pub bleu4_corpus: f64,
    #[serde(rename = "CIDEr")]
    pub cider: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
    pub matched: usize,
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEvalReport {
    pub thresholds: Vec<f64>,
    pub per_threshold: Vec<ThresholdScores>,
    #[serde(rename = "BLEU")]
    pub bleu4: f64,
    #[serde(rename = "BLEU_smoothed")]
    pub bleu4_smoothed: f64,
    #[serde(rename = "BLEU_corpus")]
    pub bleu4_corpus: f64,
    #[serde(rename = "CIDEr")]
    pub cider: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
    pub n_videos: usize,
    pub videos_without_predictions: Vec<String>,
}

struct PreparedVideo<'a> {
    predictions: Vec<(Vec<String>, &'a str, &'a PredictionEntry)>,
    references: Vec<(Vec<String>, &'a str, &'a crate::model::TimeInterval)>,
}

/// Per-prediction matched references at one threshold.
struct Matched<'v> {
    refs: Vec<Vec<String>>,
    raw_refs: Vec<&'v str>,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

fn prepare<'a>(video: &DenseVideo<'a>) -> Result<PreparedVideo<'a>> {
    let predictions = video
        .predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let sentence = p.sentence.as_deref().ok_or_else(|| Error::MissingSentence {
                video_id: video.video_id.to_string(),
                index: i,
            })?;
            Ok((tokenize(sentence), sentence, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let references = video
        .annotations
        .iter()
        .flat_map(|set| set.iter())
        .map(|(iv, s)| (tokenize(s), s, iv))
        .collect();
    Ok(PreparedVideo {
        predictions,
        references,
    })
}

fn evaluate_threshold(
    prepared: &[PreparedVideo<'_>],
    threshold: f64,
    externals: &[&dyn PairMetric],
) -> Result<ThresholdScores> {
    let matched: Vec<Vec<Matched<'_>>> = prepared
        .par_iter()
        .map(|video| {
            video
                .predictions
                .iter()
                .map(|(_, _, pred)| {
                    let mut m = Matched {
                        refs: Vec::new(),
                        raw_refs: Vec::new(),
                    };
                    for (tokens, raw, iv) in &video.references {
                        if tiou(&pred.interval, iv) >= threshold {
                            m.refs.push(tokens.clone());
                            m.raw_refs.push(raw);
                        }
                    }
                    m
                })
                .collect()
        })
        .collect();

    let documents = matched.iter().flatten().filter(|m| !m.refs.is_empty());
    let cider = match CiderD::new(documents.map(|m| m.refs.as_slice())) {
        Ok(c) => Some(c),
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };

    struct VideoScores {
        bleu: f64,
        bleu_smoothed: f64,
        cider: f64,
        external: Vec<f64>,
        stats: Vec<BleuStats>,
        matched: usize,
    }

    let per_video: Vec<VideoScores> = prepared
        .par_iter()
        .zip(matched.par_iter())
        .map(|(video, matches)| {
            let n = video.predictions.len();
            let mut scores = VideoScores {
                bleu: 0.0,
                bleu_smoothed: 0.0,
                cider: 0.0,
                external: vec![0.0; externals.len()],
                stats: Vec::with_capacity(n),
                matched: 0,
            };
            let (mut b, mut bs, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            let mut ext: Vec<Vec<f64>> = vec![Vec::with_capacity(n); externals.len()];
            for ((tokens, raw, _), m) in video.predictions.iter().zip(matches) {
                if m.refs.is_empty() {
                    b.push(0.0);
                    bs.push(0.0);
                    c.push(0.0);
                    ext.iter_mut().for_each(|e| e.push(0.0));
                    // unmatched captions still count against corpus precision
                    let mut stats = bleu_stats(tokens, &[]);
                    stats.matches = [0; 4];
                    scores.stats.push(stats);
                    continue;
                }
                scores.matched += 1;
                let stats = bleu_stats(tokens, &m.refs);
                b.push(if tokens.is_empty() { 0.0 } else { stats.score(Smoothing::Off) });
                bs.push(if tokens.is_empty() { 0.0 } else { stats.score(Smoothing::AddOne) });
                scores.stats.push(stats);
                c.push(cider.as_ref().map_or(0.0, |s| s.score(tokens, &m.refs)));
                for (metric, out) in externals.iter().zip(ext.iter_mut()) {
                    out.push(metric.score(raw, &m.raw_refs));
                }
            }
            scores.bleu = mean(b.into_iter());
            scores.bleu_smoothed = mean(bs.into_iter());
            scores.cider = mean(c.into_iter());
            scores.external = ext.into_iter().map(|e| mean(e.into_iter())).collect();
            scores
        })
        .collect();

    let total: usize = prepared.iter().map(|v| v.predictions.len()).sum();
    let matched_count: usize = per_video.iter().map(|v| v.matched).sum();
    Ok(ThresholdScores {
        tiou: threshold,
        bleu4: mean(per_video.iter().map(|v| v.bleu)),
        bleu4_smoothed: mean(per_video.iter().map(|v| v.bleu_smoothed)),
        bleu4_corpus: corpus_bleu4(per_video.iter().flat_map(|v| v.stats.iter()), Smoothing::Off),
        cider: mean(per_video.iter().map(|v| v.cider)),
        external: externals
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name().to_string(), mean(per_video.iter().map(|v| v.external[i]))))
            .collect(),
        matched: matched_count,
        unmatched: total - matched_count,
    })
}

/// Dense captioning evaluation over `videos` at each threshold.
pub fn dense_eval(
    videos: &[DenseVideo<'_>],
    thresholds: &[f64],
    externals: &[&dyn PairMetric],
) -> Result<DenseEvalReport> {
    let prepared = videos.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let per_threshold = thresholds
        .iter()
        .map(|&t| evaluate_threshold(&prepared, t, externals))
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: fn(&ThresholdScores) -> f64| mean(per_threshold.iter().map(f));
    let external = externals
        .iter()
        .map(|m| {
            let name = m.name().to_string();
            let v = mean(per_threshold.iter().map(|t| t.external[&name]));
            (name, v)
        })
        .collect();
    Ok(DenseEvalReport {
        thresholds: thresholds.to_vec(),
        bleu4: avg(|t| t.bleu4),
        bleu4_smoothed: avg(|t| t.bleu4_smoothed),
        bleu4_corpus: avg(|t| t.bleu4_corpus),
        cider: avg(|t| t.cider),
        external,
        per_threshold,
        n_videos: videos.len(),
        videos_without_predictions: videos
            .iter()
            .filter(|v| v.predictions.is_empty())
            .map(|v| v.video_id.to_string())
            .collect(),
    })
}

impl DenseEvalReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:>8} {:>10} {:>10} {:>10} {:>10} {:>8} {:>9}\n",
            "tIoU", "BLEU", "BLEU_sm", "BLEU_corp", "CIDEr", "matched", "unmatched"
        );
        for t in &self.per_threshold {
            out.push_str(&format!(
                "{:>8.2} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8} {:>9}\n",
                t.tiou, t.bleu4, t.bleu4_smoothed, t.bleu4_corpus, t.cider, t.matched, t.unmatched
            ));
        }
        out.push_str(&format!(
            "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            "avg", self.bleu4, self.bleu4_smoothed, self.bleu4_corpus, self.cider
        ));
        for (name, v) in &self.external {
            out.push_str(&format!("{name}: {v:.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeInterval;

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval::new(s, e).unwrap()
    }

    fn gt() -> Vec<AnnotationSet> {
        vec![AnnotationSet::new(
            vec![iv(0.0, 10.0), iv(20.0, 30.0)],
            vec!["a man rides a red bike".into(), "a woman throws a blue ball".into()],
        )
        .unwrap()]
    }

    #[test]
    fn identity_gives_perfect_bleu() {
        let sets = gt();
        let preds: Vec<_> = sets[0]
            .iter()
            .map(|(iv, s)| PredictionEntry::new(*iv).with_sentence(s))
            .collect();
        let v = [DenseVideo { video_id: "v", predictions: &preds, annotations: &sets }];
        let r = dense_eval(&v, &[0.9], &[]).unwrap();
        assert_eq!(r.bleu4, 1.0);
        assert_eq!(r.per_threshold[0].matched, 2);
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let sets = gt();
        let preds = vec![PredictionEntry::new(iv(40.0, 50.0)).with_sentence("a man rides a red bike")];
        let v = [DenseVideo { video_id: "v", predictions: &preds, annotations: &sets }];
        let r = dense_eval(&v, &DEFAULT_THRESHOLDS, &[]).unwrap();
        assert_eq!((r.bleu4, r.bleu4_smoothed, r.bleu4_corpus, r.cider), (0.0, 0.0, 0.0, 0.0));
        assert!(r.per_threshold.iter().all(|t| t.unmatched == 1));
    }

    #[test]
    fn missing_sentence_rejected() {
        let sets = gt();
        let preds = vec![PredictionEntry::new(iv(0.0, 10.0))];
        let v = [DenseVideo { video_id: "v", predictions: &preds, annotations: &sets }];
        assert!(matches!(dense_eval(&v, &[0.5], &[]), Err(Error::MissingSentence { index: 0, .. })));
    }

    #[test]
    fn unmatched_prediction_halves_video_score() {
        let sets = gt();
        // [0,4] vs [0,10] has tIoU 0.4: matched at 0.3 only
        let preds = vec![
            PredictionEntry::new(iv(0.0, 4.0)).with_sentence("a man rides a red bike"),
            PredictionEntry::new(iv(40.0, 50.0)).with_sentence("a man rides a red bike"),
        ];
        let v = [DenseVideo { video_id: "v", predictions: &preds, annotations: &sets }];
        let r = dense_eval(&v, &[0.3, 0.5], &[]).unwrap();
        assert_eq!(r.per_threshold[0].bleu4, 0.5);
        assert_eq!(r.per_threshold[1].bleu4, 0.0);
        assert_eq!(r.bleu4, 0.25);
    }

    struct Constant;
    impl PairMetric for Constant {
        fn name(&self) -> &str {
            "METEOR"
        }
        fn score(&self, _: &str, _: &[&str]) -> f64 {
            0.5
        }
    }

    #[test]
    fn external_metric_plugs_in() {
        let sets = gt();
        let preds = vec![
            PredictionEntry::new(iv(0.0, 10.0)).with_sentence("x"),
            PredictionEntry::new(iv(40.0, 50.0)).with_sentence("y"),
        ];
        let v = [DenseVideo { video_id: "v", predictions: &preds, annotations: &sets }];
        let r = dense_eval(&v, &[0.5], &[&Constant]).unwrap();
        assert_eq!(r.external["METEOR"], 0.25);
        assert!(r.render().contains("METEOR"));
    }
}
