//! Temporal IoU, best-match lookup and proposal precision/recall.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimeInterval;

/// Temporal intersection over union, `|a ∩ b| / |a ∪ b|`.
#[inline]
pub fn tiou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.length() + b.length() - inter;
    (inter / union).min(1.0)
}

/// Index and tIoU of the groundtruth interval best overlapping `pred`.
/// Ties go to the lowest index.
pub fn best_match(pred: &TimeInterval, gts: &[TimeInterval]) -> Result<(usize, f64)> {
    let mut best = None::<(usize, f64)>;
    for (i, gt) in gts.iter().enumerate() {
        let t = tiou(pred, gt);
        if best.is_none_or(|(_, b)| t > b) {
            best = Some((i, t));
        }
    }
    best.ok_or_else(|| Error::Empty("no groundtruth intervals to match against".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pred_index: usize,
    /// `None` when the prediction overlaps no groundtruth interval.
    pub gt_index: Option<usize>,
    pub tiou: f64,
}

/// Independent best match for every prediction (no one-to-one assignment).
pub fn match_predictions(preds: &[TimeInterval], gts: &[TimeInterval]) -> Result<Vec<MatchResult>> {
    preds
        .iter()
        .enumerate()
        .map(|(pred_index, p)| {
            let (gt, t) = best_match(p, gts)?;
            Ok(MatchResult {
                pred_index,
                gt_index: (t > 0.0).then_some(gt),
                tiou: t,
            })
        })
        .collect()
}

/// One video's proposals and the union of its groundtruth sets.
#[derive(Debug, Clone)]
pub struct VideoProposals<'a> {
    pub video_id: &'a str,
    pub predictions: &'a [TimeInterval],
    pub groundtruth: &'a [TimeInterval],
}

/// Hit counts for one video at every threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoHits {
    pub video_id: String,
    pub n_predictions: usize,
    pub n_groundtruth: usize,
    /// Predictions whose best tIoU reaches each threshold.
    pub precise_predictions: Vec<usize>,
    /// Groundtruth intervals recalled at each threshold.
    pub recalled_groundtruth: Vec<usize>,
}

impl VideoHits {
    pub fn precision(&self, t: usize) -> f64 {
        if self.n_predictions == 0 {
            0.0
        } else {
            self.precise_predictions[t] as f64 / self.n_predictions as f64
        }
    }

    pub fn recall(&self, t: usize) -> f64 {
        if self.n_groundtruth == 0 {
            0.0
        } else {
            self.recalled_groundtruth[t] as f64 / self.n_groundtruth as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRTable {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub avg_proposals_per_video: f64,
    pub n_videos: usize,
    /// Videos without predictions; their precision is counted as zero.
    pub zero_prediction_videos: Vec<String>,
    pub per_video: Vec<VideoHits>,
}

/// Counts how many of `best` reach each threshold using a sorted copy.
fn count_at_thresholds(mut best: Vec<f64>, thresholds: &[f64]) -> Vec<usize> {
    best.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&t| best.len() - best.partition_point(|&v| v < t))
        .collect()
}

pub fn video_hits(video: &VideoProposals<'_>, thresholds: &[f64]) -> VideoHits {
    let preds = video.predictions;
    let gts = video.groundtruth;
    let mut best_pred = vec![0.0f64; preds.len()];
    let mut best_gt = vec![0.0f64; gts.len()];
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let t = tiou(p, g);
            best_pred[i] = best_pred[i].max(t);
            best_gt[j] = best_gt[j].max(t);
        }
    }
    VideoHits {
        video_id: video.video_id.to_string(),
        n_predictions: preds.len(),
        n_groundtruth: gts.len(),
        precise_predictions: count_at_thresholds(best_pred, thresholds),
        recalled_groundtruth: count_at_thresholds(best_gt, thresholds),
    }
}

/// Corpus precision and recall at each threshold, averaged over videos.
pub fn precision_recall(videos: &[VideoProposals<'_>], thresholds: &[f64]) -> PRTable {
    let per_video: Vec<VideoHits> = videos
        .par_iter()
        .map(|v| video_hits(v, thresholds))
        .collect();
    pr_table_from_hits(per_video, thresholds)
}

/// Reduces per-video hit counts into a [`PRTable`]. Summation runs in
/// video order so the result does not depend on how hits were computed.
pub fn pr_table_from_hits(per_video: Vec<VideoHits>, thresholds: &[f64]) -> PRTable {
    let n = per_video.len();
    let mut precision = vec![0.0; thresholds.len()];
    let mut recall = vec![0.0; thresholds.len()];
    for hits in &per_video {
        for t in 0..thresholds.len() {
            precision[t] += hits.precision(t);
            recall[t] += hits.recall(t);
        }
    }
    if n > 0 {
        for t in 0..thresholds.len() {
            precision[t] /= n as f64;
            recall[t] /= n as f64;
        }
    }
    let total_preds: usize = per_video.iter().map(|h| h.n_predictions).sum();
    let zero_prediction_videos = per_video
        .iter()
        .filter(|h| h.n_predictions == 0)
        .map(|h| h.video_id.clone())
        .collect();
    PRTable {
        thresholds: thresholds.to_vec(),
        precision,
        recall,
        avg_proposals_per_video: if n > 0 { total_preds as f64 / n as f64 } else { 0.0 },
        n_videos: n,
        zero_prediction_videos,
        per_video,
    }
}

impl PRTable {
    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:>8} {:>10} {:>10}\n", "tIoU", "precision", "recall"));
        for (i, t) in self.thresholds.iter().enumerate() {
            out.push_str(&format!(
                "{:>8.2} {:>10.4} {:>10.4}\n",
                t, self.precision[i], self.recall[i]
            ));
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        out.push_str(&format!(
            "{:>8} {:>10.4} {:>10.4}\n",
            "avg",
            mean(&self.precision),
            mean(&self.recall)
        ));
        out.push_str(&format!(
            "videos: {}  proposals/video: {:.2}  zero-prediction videos: {}\n",
            self.n_videos,
            self.avg_proposals_per_video,
            self.zero_prediction_videos.len()
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval::new(s, e).unwrap()
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou(&iv(0.0, 10.0), &iv(0.0, 10.0)), 1.0);
        assert_eq!(tiou(&iv(0.0, 10.0), &iv(20.0, 30.0)), 0.0);
        assert!((tiou(&iv(0.0, 10.0), &iv(5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(tiou(&iv(0.0, 10.0), &iv(10.0, 20.0)), 0.0);
    }

    #[test]
    fn best_match_examples() {
        let gts = [iv(0.0, 10.0), iv(20.0, 30.0)];
        assert_eq!(best_match(&iv(0.0, 10.0), &gts).unwrap(), (0, 1.0));
        let (i, t) = best_match(&iv(9.0, 21.0), &gts).unwrap();
        assert_eq!(i, 0);
        assert!((t - 1.0 / 21.0).abs() < 1e-12);
        assert_eq!(best_match(&iv(25.0, 30.0), &gts).unwrap(), (1, 0.5));
        assert!(best_match(&iv(0.0, 1.0), &[]).is_err());
    }

    #[test]
    fn unmatched_prediction_has_no_gt_index() {
        let m = match_predictions(&[iv(50.0, 60.0), iv(0.0, 5.0)], &[iv(0.0, 10.0)]).unwrap();
        assert_eq!(m[0].gt_index, None);
        assert_eq!(m[1].gt_index, Some(0));
    }

    fn single(preds: &[TimeInterval], gts: &[TimeInterval], t: f64) -> (f64, f64) {
        let table = precision_recall(
            &[VideoProposals {
                video_id: "v",
                predictions: preds,
                groundtruth: gts,
            }],
            &[t],
        );
        (table.precision[0], table.recall[0])
    }

    #[test]
    fn precision_recall_examples() {
        let gts = [iv(0.0, 10.0), iv(20.0, 30.0)];
        assert_eq!(single(&[iv(0.0, 10.0)], &gts, 0.5), (1.0, 0.5));
        for t in [0.3, 0.5, 0.7, 0.9] {
            assert_eq!(single(&gts, &gts, t), (1.0, 1.0));
        }
        assert_eq!(single(&[iv(0.0, 1.0)], &[iv(0.0, 10.0)], 0.3), (0.0, 0.0));
    }

    #[test]
    fn zero_prediction_video_flagged() {
        let gts = [iv(0.0, 10.0)];
        let table = precision_recall(
            &[
                VideoProposals { video_id: "a", predictions: &[], groundtruth: &gts },
                VideoProposals { video_id: "b", predictions: &gts, groundtruth: &gts },
            ],
            &[0.5],
        );
        assert_eq!(table.precision, vec![0.5]);
        assert_eq!(table.recall, vec![0.5]);
        assert_eq!(table.zero_prediction_videos, vec!["a".to_string()]);
        assert!(table.render().contains("zero-prediction videos: 1"));
    }

    fn arb_interval() -> impl Strategy<Value = TimeInterval> {
        (0.0f64..90.0, 0.01f64..40.0).prop_map(|(s, l)| iv(s, s + l))
    }

    proptest! {
        #[test]
        fn tiou_symmetric_and_bounded(a in arb_interval(), b in arb_interval()) {
            let ab = tiou(&a, &b);
            prop_assert_eq!(ab, tiou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(tiou(&a, &a), 1.0);
            let overlap = a.end().min(b.end()) - a.start().max(b.start());
            prop_assert_eq!(ab == 0.0, overlap <= 0.0);
        }

        #[test]
        fn raising_threshold_never_helps(
            preds in prop::collection::vec(arb_interval(), 0..8),
            gts in prop::collection::vec(arb_interval(), 1..6),
        ) {
            let ts = [0.1, 0.3, 0.5, 0.7, 0.9];
            let table = precision_recall(
                &[VideoProposals { video_id: "v", predictions: &preds, groundtruth: &gts }],
                &ts,
            );
            for w in 0..ts.len() - 1 {
                prop_assert!(table.precision[w] >= table.precision[w + 1]);
                prop_assert!(table.recall[w] >= table.recall[w + 1]);
            }
        }
    }
}
