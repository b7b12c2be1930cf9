//! Domain types shared by every stage: intervals, video metadata, the
//! fixed-length segment grid, annotation sets, predictions and the corpus
//! container that ties them together.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when an interval ends just past the video duration.
pub const DURATION_EPSILON: f64 = 1e-6;
pub const DEFAULT_FPS: f64 = 25.0;
pub const DEFAULT_FRAMES_PER_SEGMENT: u32 = 64;

// Guards floor/ceil against representation error when a boundary sits
// exactly on a segment edge (e.g. 7.68 / 2.56).
const GRID_SNAP: f64 = 1e-9;

/// A closed time span `[start, end]` in seconds with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start >= end {
            return Err(Error::InvalidInterval { start, end });
        }
        Ok(Self { start, end })
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.end
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Equality of both endpoints within `tol` seconds.
    pub fn approx_eq(&self, other: &TimeInterval, tol: f64) -> bool {
        (self.start - other.start).abs() <= tol && (self.end - other.end).abs() <= tol
    }
}

impl TryFrom<[f64; 2]> for TimeInterval {
    type Error = Error;

    fn try_from(value: [f64; 2]) -> Result<Self> {
        TimeInterval::new(value[0], value[1])
    }
}

impl From<TimeInterval> for [f64; 2] {
    fn from(value: TimeInterval) -> Self {
        [value.start, value.end]
    }
}

/// Validates a raw `[start, end]` pair read from a file against the owning
/// video, clamping an end that overshoots the duration by at most
/// [`DURATION_EPSILON`].
pub fn checked_interval(
    video_id: &str,
    index: usize,
    raw: [f64; 2],
    duration: Option<f64>,
) -> Result<TimeInterval> {
    let [start, mut end] = raw;
    if !(start.is_finite() && end.is_finite()) || start >= end {
        return Err(Error::InvertedInterval {
            video_id: video_id.to_string(),
            index,
            start,
            end,
        });
    }
    let raw_end = end;
    let out_of_range = |duration: f64| Error::IntervalOutOfRange {
        video_id: video_id.to_string(),
        index,
        start,
        end: raw_end,
        duration,
    };
    if start < 0.0 {
        return Err(out_of_range(duration.unwrap_or(f64::NAN)));
    }
    if let Some(duration) = duration {
        if end > duration + DURATION_EPSILON {
            return Err(out_of_range(duration));
        }
        end = end.min(duration);
        if start >= end {
            return Err(out_of_range(duration));
        }
    }
    Ok(TimeInterval { start, end })
}

/// Per-video timing information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
    pub fps: f64,
    pub frames_per_segment: u32,
}

impl VideoMeta {
    pub fn new(video_id: impl Into<String>, duration: f64) -> Result<Self> {
        Self::with_rate(video_id, duration, DEFAULT_FPS, DEFAULT_FRAMES_PER_SEGMENT)
    }

    pub fn with_rate(
        video_id: impl Into<String>,
        duration: f64,
        fps: f64,
        frames_per_segment: u32,
    ) -> Result<Self> {
        let video_id = video_id.into();
        let invalid = |reason: &str| Error::InvalidMeta {
            video_id: video_id.clone(),
            reason: reason.to_string(),
        };
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid("fps must be positive"));
        }
        if frames_per_segment == 0 {
            return Err(invalid("frames_per_segment must be >= 1"));
        }
        Ok(Self {
            video_id,
            duration,
            fps,
            frames_per_segment,
        })
    }

    /// Length of one segment in seconds.
    #[inline]
    pub fn segment_duration(&self) -> f64 {
        f64::from(self.frames_per_segment) / self.fps
    }

    /// Number of segments; a trailing partial segment counts as one.
    pub fn segment_count(&self) -> usize {
        let frames = self.duration * self.fps / f64::from(self.frames_per_segment);
        ((frames - GRID_SNAP).ceil() as usize).max(1)
    }

    /// The whole video as an interval.
    pub fn full_interval(&self) -> TimeInterval {
        TimeInterval {
            start: 0.0,
            end: self.duration,
        }
    }
}

/// Half-open segment index range covered by `interval`.
///
/// `start = floor(s / seg)`, `end = max(start + 1, ceil(e / seg))`, both
/// clamped to the grid so that the range is never empty and never exceeds
/// `segment_count`.
pub fn segment_range(interval: &TimeInterval, meta: &VideoMeta) -> Range<usize> {
    let seg = meta.segment_duration();
    let count = meta.segment_count();
    let first = ((interval.start / seg + GRID_SNAP).floor().max(0.0) as usize).min(count - 1);
    let last = ((interval.end / seg - GRID_SNAP).ceil().max(0.0) as usize)
        .max(first + 1)
        .min(count);
    first..last
}

/// Row-major `rows x dim` table of per-segment feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::DimensionMismatch {
                expected: rows.saturating_mul(dim),
                actual: data.len(),
            });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.rows)
    }
}

/// The 64-frame segmentation of a video with optional per-segment features.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    pub meta: VideoMeta,
    features: Option<FeatureMatrix>,
    pub feature_tag: String,
}

impl SegmentGrid {
    pub fn empty(meta: VideoMeta) -> Self {
        Self {
            meta,
            features: None,
            feature_tag: String::new(),
        }
    }

    pub fn with_features(
        meta: VideoMeta,
        features: FeatureMatrix,
        feature_tag: impl Into<String>,
    ) -> Result<Self> {
        let expected = meta.segment_count();
        if features.rows() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: features.rows(),
            });
        }
        Ok(Self {
            meta,
            features: Some(features),
            feature_tag: feature_tag.into(),
        })
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    pub fn require_features(&self) -> Result<&FeatureMatrix> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::MissingFeatures(self.meta.video_id.clone()))
    }

    pub fn segment_count(&self) -> usize {
        self.meta.segment_count()
    }
}

/// One groundtruth segmentation of a video: parallel intervals and sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    intervals: Vec<TimeInterval>,
    sentences: Vec<String>,
}

impl AnnotationSet {
    pub fn new(intervals: Vec<TimeInterval>, sentences: Vec<String>) -> Result<Self> {
        if intervals.len() != sentences.len() {
            return Err(Error::LengthMismatch {
                video_id: String::new(),
                timestamps: intervals.len(),
                sentences: sentences.len(),
            });
        }
        if intervals.is_empty() {
            return Err(Error::Empty("annotation set has no events".into()));
        }
        Ok(Self {
            intervals,
            sentences,
        })
    }

    pub fn intervals(&self) -> &[TimeInterval] {
        &self.intervals
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TimeInterval, &str)> {
        self.intervals
            .iter()
            .zip(self.sentences.iter().map(String::as_str))
    }
}

/// A predicted event, optionally captioned and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    #[serde(rename = "timestamp")]
    pub interval: TimeInterval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_logprob: Option<f64>,
}

impl PredictionEntry {
    pub fn new(interval: TimeInterval) -> Self {
        Self {
            interval,
            sentence: None,
            proposal_score: None,
            caption_logprob: None,
        }
    }

    pub fn with_sentence(mut self, sentence: impl Into<String>) -> Self {
        self.sentence = Some(sentence.into());
        self
    }

    pub fn with_proposal_score(mut self, score: f64) -> Self {
        self.proposal_score = Some(score);
        self
    }

    pub fn with_caption_logprob(mut self, logprob: f64) -> Self {
        self.caption_logprob = Some(logprob);
        self
    }
}

/// Everything known about one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub meta: VideoMeta,
    pub annotations: Vec<AnnotationSet>,
    pub predictions: Vec<PredictionEntry>,
}

impl VideoRecord {
    pub fn new(meta: VideoMeta) -> Self {
        Self {
            meta,
            annotations: Vec::new(),
            predictions: Vec::new(),
        }
    }

    /// Concatenation of the intervals of every annotation set.
    pub fn groundtruth_union(&self) -> Vec<TimeInterval> {
        self.annotations
            .iter()
            .flat_map(|set| set.intervals().iter().copied())
            .collect()
    }

    pub fn prediction_intervals(&self) -> Vec<TimeInterval> {
        self.predictions.iter().map(|p| p.interval).collect()
    }
}

/// Videos keyed (and therefore iterated) by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub videos: BTreeMap<String, VideoRecord>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.videos.get(video_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &VideoRecord)> {
        self.videos.iter()
    }

    /// Largest number of annotation sets attached to any video.
    pub fn annotation_set_count(&self) -> usize {
        self.videos
            .values()
            .map(|v| v.annotations.len())
            .max()
            .unwrap_or(0)
    }

    /// Merges another groundtruth fragment, appending its annotation sets to
    /// videos already present. Durations must agree.
    pub fn merge(&mut self, other: Corpus) -> Result<()> {
        for (id, record) in other.videos {
            match self.videos.get_mut(&id) {
                Some(existing) => {
                    if (existing.meta.duration - record.meta.duration).abs() > DURATION_EPSILON {
                        return Err(Error::InvalidMeta {
                            video_id: id,
                            reason: format!(
                                "conflicting durations {} and {}",
                                existing.meta.duration, record.meta.duration
                            ),
                        });
                    }
                    existing.annotations.extend(record.annotations);
                    existing.predictions.extend(record.predictions);
                }
                None => {
                    self.videos.insert(id, record);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(duration: f64, fps: f64) -> VideoMeta {
        VideoMeta::with_rate("v", duration, fps, 64).unwrap()
    }

    #[test]
    fn interval_rejects_inverted_and_negative() {
        assert!(TimeInterval::new(5.0, 5.0).is_err());
        assert!(TimeInterval::new(10.0, 5.0).is_err());
        assert!(TimeInterval::new(-1.0, 5.0).is_err());
        assert!(TimeInterval::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn checked_interval_clamps_small_overshoot() {
        let iv = checked_interval("v1", 0, [1.0, 30.0 + 5e-7], Some(30.0)).unwrap();
        assert_eq!(iv.end(), 30.0);
        let err = checked_interval("v1", 3, [1.0, 30.1], Some(30.0)).unwrap_err();
        assert!(matches!(err, Error::IntervalOutOfRange { index: 3, .. }));
        let err = checked_interval("v1", 0, [10.0, 5.0], None).unwrap_err();
        assert_eq!(err.to_string(), "inverted interval v1[0]: start 10 >= end 5");
    }

    #[test]
    fn segment_count_rounds_up() {
        assert_eq!(meta(16.0, 16.0).segment_count(), 4);
        assert_eq!(meta(30.0, 25.0).segment_count(), 12);
        assert_eq!(meta(0.01, 25.0).segment_count(), 1);
    }

    #[test]
    fn segment_range_examples() {
        let m = meta(16.0, 16.0);
        let r = |s, e| segment_range(&TimeInterval::new(s, e).unwrap(), &m);
        assert_eq!(r(0.0, 8.0), 0..2);
        assert_eq!(r(0.1, 0.2), 0..1);
        assert_eq!(r(3.9, 8.1), 0..3);
        assert_eq!(r(15.9, 16.0), 3..4);
        assert_eq!(r(0.0, 16.0), 0..4);
    }

    #[test]
    fn segment_range_snaps_exact_boundaries() {
        let m = meta(30.0, 25.0);
        let seg = m.segment_duration();
        let iv = TimeInterval::new(3.0 * seg, 5.0 * seg).unwrap();
        assert_eq!(segment_range(&iv, &m), 3..5);
    }

    #[test]
    fn grid_checks_row_count() {
        let m = meta(16.0, 16.0);
        let feats = FeatureMatrix::from_rows(vec![vec![0.0; 3]; 3]).unwrap();
        assert!(SegmentGrid::with_features(m.clone(), feats, "basic").is_err());
        let feats = FeatureMatrix::from_rows(vec![vec![0.0; 3]; 4]).unwrap();
        let grid = SegmentGrid::with_features(m, feats, "basic").unwrap();
        assert_eq!(grid.require_features().unwrap().dim(), 3);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(FeatureMatrix::from_rows(vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
    }

    #[test]
    fn merge_appends_sets() {
        let mut a = Corpus::new();
        let mut rec = VideoRecord::new(VideoMeta::new("v1", 30.0).unwrap());
        let set = AnnotationSet::new(
            vec![TimeInterval::new(0.0, 10.0).unwrap()],
            vec!["a".into()],
        )
        .unwrap();
        rec.annotations.push(set.clone());
        a.videos.insert("v1".into(), rec.clone());
        a.merge(a.clone()).unwrap();
        assert_eq!(a.videos["v1"].annotations.len(), 2);

        let mut other = Corpus::new();
        let mut bad = rec;
        bad.meta.duration = 31.0;
        other.videos.insert("v1".into(), bad);
        assert!(a.merge(other).is_err());
    }
}
