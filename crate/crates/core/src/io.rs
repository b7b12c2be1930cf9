//! Readers and writers for groundtruth, prediction, metadata and feature
//! files, plus generic JSON report persistence.
//!
//! Groundtruth follows the ActivityNet Captions layout:
//!
//! ```json
//! {"v1": {"duration": 30.0, "timestamps": [[0, 10], [12, 28]], "sentences": ["...", "..."]}}
//! ```
//!
//! Predictions follow the challenge submission layout with optional scores:
//!
//! ```json
//! {"version": "VERSION 1.0", "results": {"v1": [{"sentence": "...", "timestamp": [0, 10]}]}}
//! ```
//!
//! Feature files come in two layouts, sniffed by their first bytes. The
//! binary layout is `DVCF`, a little-endian `u32` header length, a JSON
//! header `{"video_id", "segment_count", "D", "feature_tag"}`, then
//! `segment_count * D` little-endian `f32` values in row-major order. The
//! text layout is a JSON object with the same header keys and a `rows` array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    checked_interval, AnnotationSet, Corpus, FeatureMatrix, PredictionEntry, TimeInterval,
    VideoMeta, VideoRecord, DEFAULT_FPS, DEFAULT_FRAMES_PER_SEGMENT,
};

pub const PREDICTIONS_VERSION: &str = "VERSION 1.0";
pub(crate) const FEATURE_MAGIC: &[u8; 4] = b"DVCF";

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads any JSON document into `T`.
pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `value` as pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Reports are plain serde types; these are thin aliases kept for symmetry
/// with the other loaders.
pub fn save_report<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    save_json(report, path)
}

pub fn load_report<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    load_json(path)
}

// ---------------------------------------------------------------------------
// metadata sidecar

/// Optional per-video overrides. A groundtruth file also parses as a
/// metadata table since unknown keys are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_per_segment: Option<u32>,
}

pub type MetaTable = BTreeMap<String, MetaEntry>;

pub fn load_meta_table(path: impl AsRef<Path>) -> Result<MetaTable> {
    load_json(path)
}

/// Resolves a full [`VideoMeta`] for every entry of a metadata table that
/// carries a duration.
pub fn metas_from_table(table: &MetaTable) -> Result<BTreeMap<String, VideoMeta>> {
    table
        .iter()
        .map(|(id, entry)| {
            let duration = entry.duration.ok_or_else(|| Error::InvalidMeta {
                video_id: id.clone(),
                reason: "missing duration".into(),
            })?;
            let meta = VideoMeta::with_rate(
                id.clone(),
                duration,
                entry.fps.unwrap_or(DEFAULT_FPS),
                entry.frames_per_segment.unwrap_or(DEFAULT_FRAMES_PER_SEGMENT),
            )?;
            Ok((id.clone(), meta))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// groundtruth

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthEntry {
    duration: f64,
    timestamps: Vec<[f64; 2]>,
    sentences: Vec<String>,
}

/// Loads one groundtruth file as a corpus with one annotation set per video.
pub fn load_ground_truth(path: impl AsRef<Path>, meta: Option<&MetaTable>) -> Result<Corpus> {
    let raw: BTreeMap<String, GroundTruthEntry> = load_json(path.as_ref())?;
    let mut corpus = Corpus::new();
    for (video_id, entry) in raw {
        let overrides = meta.and_then(|m| m.get(&video_id));
        let video_meta = VideoMeta::with_rate(
            video_id.clone(),
            entry.duration,
            overrides.and_then(|o| o.fps).unwrap_or(DEFAULT_FPS),
            overrides
                .and_then(|o| o.frames_per_segment)
                .unwrap_or(DEFAULT_FRAMES_PER_SEGMENT),
        )?;
        if entry.timestamps.len() != entry.sentences.len() {
            return Err(Error::LengthMismatch {
                video_id,
                timestamps: entry.timestamps.len(),
                sentences: entry.sentences.len(),
            });
        }
        let intervals = entry
            .timestamps
            .iter()
            .enumerate()
            .map(|(i, raw)| checked_interval(&video_id, i, *raw, Some(entry.duration)))
            .collect::<Result<Vec<_>>>()?;
        let set = AnnotationSet::new(intervals, entry.sentences).map_err(|e| match e {
            Error::Empty(_) => Error::Empty(format!("video {video_id} has no events")),
            other => other,
        })?;
        let mut record = VideoRecord::new(video_meta);
        record.annotations.push(set);
        corpus.videos.insert(video_id, record);
    }
    Ok(corpus)
}

/// Loads and merges several groundtruth files; a video present in two files
/// ends up with two annotation sets.
pub fn load_ground_truth_sets<P: AsRef<Path>>(paths: &[P], meta: Option<&MetaTable>) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for path in paths {
        corpus.merge(load_ground_truth(path, meta)?)?;
    }
    Ok(corpus)
}

/// Writes annotation set `set_index` of every video that has one.
pub fn save_ground_truth(corpus: &Corpus, set_index: usize, path: impl AsRef<Path>) -> Result<()> {
    let raw: BTreeMap<&str, GroundTruthEntry> = corpus
        .iter()
        .filter_map(|(id, record)| {
            record.annotations.get(set_index).map(|set| {
                (
                    id.as_str(),
                    GroundTruthEntry {
                        duration: record.meta.duration,
                        timestamps: set.intervals().iter().map(|&iv| iv.into()).collect(),
                        sentences: set.sentences().to_vec(),
                    },
                )
            })
        })
        .collect();
    save_json(&raw, path)
}

/// Metadata sidecar describing every video of `corpus`.
pub fn meta_table_of(corpus: &Corpus) -> MetaTable {
    corpus
        .iter()
        .map(|(id, record)| {
            (
                id.clone(),
                MetaEntry {
                    duration: Some(record.meta.duration),
                    fps: Some(record.meta.fps),
                    frames_per_segment: Some(record.meta.frames_per_segment),
                },
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// predictions

#[derive(Debug, Deserialize)]
struct RawPrediction {
    timestamp: [f64; 2],
    #[serde(default)]
    sentence: Option<String>,
    #[serde(default)]
    proposal_score: Option<f64>,
    #[serde(default)]
    caption_logprob: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawPredictionFile {
    #[serde(default)]
    version: Option<String>,
    results: BTreeMap<String, Vec<RawPrediction>>,
}

/// A submission file: predictions per video in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub version: String,
    pub results: BTreeMap<String, Vec<PredictionEntry>>,
}

impl Default for PredictionFile {
    fn default() -> Self {
        Self {
            version: PREDICTIONS_VERSION.to_string(),
            results: BTreeMap::new(),
        }
    }
}

impl PredictionFile {
    pub fn entry_count(&self) -> usize {
        self.results.values().map(Vec::len).sum()
    }
}

fn validate_prediction(video_id: &str, index: usize, raw: RawPrediction) -> Result<PredictionEntry> {
    let interval = checked_interval(video_id, index, raw.timestamp, None)?;
    if let Some(score) = raw.proposal_score {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::ScoreOutOfRange {
                video_id: video_id.to_string(),
                index,
                score,
            });
        }
    }
    if let Some(logprob) = raw.caption_logprob {
        if logprob.is_nan() || logprob > 0.0 {
            return Err(Error::InvalidConfig(format!(
                "caption_logprob for {video_id}[{index}] must be <= 0, got {logprob}"
            )));
        }
    }
    Ok(PredictionEntry {
        interval,
        sentence: raw.sentence,
        proposal_score: raw.proposal_score,
        caption_logprob: raw.caption_logprob,
    })
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionFile> {
    let raw: RawPredictionFile = load_json(path.as_ref())?;
    let mut results = BTreeMap::new();
    for (video_id, entries) in raw.results {
        let parsed = entries
            .into_iter()
            .enumerate()
            .map(|(i, entry)| validate_prediction(&video_id, i, entry))
            .collect::<Result<Vec<_>>>()?;
        results.insert(video_id, parsed);
    }
    Ok(PredictionFile {
        version: raw.version.unwrap_or_else(|| PREDICTIONS_VERSION.to_string()),
        results,
    })
}

pub fn save_predictions(predictions: &PredictionFile, path: impl AsRef<Path>) -> Result<()> {
    save_json(predictions, path)
}

/// What to do with predictions for videos missing from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownVideoPolicy {
    #[default]
    Skip,
    Reject,
}

impl Corpus {
    /// Attaches predictions to their videos, checking every interval against
    /// the video duration. Returns the ids that were skipped.
    pub fn attach_predictions(
        &mut self,
        predictions: &PredictionFile,
        policy: UnknownVideoPolicy,
    ) -> Result<Vec<String>> {
        let mut skipped = Vec::new();
        for (video_id, entries) in &predictions.results {
            let Some(record) = self.videos.get_mut(video_id) else {
                match policy {
                    UnknownVideoPolicy::Skip => {
                        log::warn!("skipping predictions for unknown video {video_id}");
                        skipped.push(video_id.clone());
                        continue;
                    }
                    UnknownVideoPolicy::Reject => return Err(Error::UnknownVideo(video_id.clone())),
                }
            };
            let duration = record.meta.duration;
            for (i, entry) in entries.iter().enumerate() {
                let interval = checked_interval(video_id, i, entry.interval.into(), Some(duration))?;
                record.predictions.push(PredictionEntry {
                    interval,
                    ..entry.clone()
                });
            }
        }
        Ok(skipped)
    }

    /// The attached predictions as a submission file.
    pub fn prediction_file(&self) -> PredictionFile {
        PredictionFile {
            version: PREDICTIONS_VERSION.to_string(),
            results: self
                .iter()
                .filter(|(_, r)| !r.predictions.is_empty())
                .map(|(id, r)| (id.clone(), r.predictions.clone()))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// features

/// Per-video segment features as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub video_id: String,
    pub feature_tag: String,
    pub matrix: FeatureMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    video_id: String,
    segment_count: usize,
    #[serde(rename = "D")]
    dim: usize,
    #[serde(default)]
    feature_tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureText {
    video_id: String,
    segment_count: usize,
    #[serde(rename = "D")]
    dim: usize,
    #[serde(default)]
    feature_tag: String,
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayout {
    Binary,
    Text,
}

impl FeatureFile {
    fn header(&self) -> FeatureHeader {
        FeatureHeader {
            video_id: self.video_id.clone(),
            segment_count: self.matrix.rows(),
            dim: self.matrix.dim(),
            feature_tag: self.feature_tag.clone(),
        }
    }
}

/// Loads a feature file in either layout.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_binary_features(path, &bytes)
    } else {
        let text: FeatureText = serde_json::from_slice(&bytes).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if text.rows.len() != text.segment_count {
            return Err(Error::format(
                path,
                format!("header says {} rows, found {}", text.segment_count, text.rows.len()),
            ));
        }
        if let Some(bad) = text.rows.iter().find(|r| r.len() != text.dim) {
            return Err(Error::format(
                path,
                format!("header says D = {}, found a row of {}", text.dim, bad.len()),
            ));
        }
        let data = text.rows.into_iter().flatten().collect();
        Ok(FeatureFile {
            video_id: text.video_id,
            feature_tag: text.feature_tag,
            matrix: FeatureMatrix::new(text.segment_count, text.dim, data)?,
        })
    }
}

pub(crate) fn split_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    let short = || Error::format(path, "truncated header");
    let len_bytes: [u8; 4] = bytes.get(4..8).ok_or_else(short)?.try_into().unwrap();
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header = bytes.get(8..8 + header_len).ok_or_else(short)?;
    Ok((header, &bytes[8 + header_len..]))
}

fn decode_binary_features(path: &Path, bytes: &[u8]) -> Result<FeatureFile> {
    let (header, body) = split_header(path, bytes)?;
    let header: FeatureHeader = serde_json::from_slice(header).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let count = header.segment_count * header.dim;
    if body.len() != count * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", count * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(FeatureFile {
        video_id: header.video_id,
        feature_tag: header.feature_tag,
        matrix: FeatureMatrix::new(header.segment_count, header.dim, data)?,
    })
}

pub(crate) fn encode_with_header(magic: &[u8; 4], header: &[u8], payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + header.len() + payload_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out
}

/// Writes `features` in the requested layout. The binary layout stores
/// `f32`, so values are rounded to single precision.
pub fn save_features(features: &FeatureFile, path: impl AsRef<Path>, layout: FeatureLayout) -> Result<()> {
    let path = path.as_ref();
    match layout {
        FeatureLayout::Binary => {
            let header = serde_json::to_vec(&features.header()).expect("header serializes");
            let values = features.matrix.as_slice();
            let mut out = encode_with_header(FEATURE_MAGIC, &header, values.len() * 4);
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            write_bytes(path, &out)
        }
        FeatureLayout::Text => {
            let text = FeatureText {
                video_id: features.video_id.clone(),
                segment_count: features.matrix.rows(),
                dim: features.matrix.dim(),
                feature_tag: features.feature_tag.clone(),
                rows: features.matrix.iter_rows().map(<[f64]>::to_vec).collect(),
            };
            save_json(&text, path)
        }
    }
}

/// Loads every feature file in `dir` (extensions `.feat` and `.json`),
/// keyed by the video id stored in each header.
pub fn load_feature_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, FeatureFile>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("feat") | Some("json")
        ) {
            paths.push(path);
        }
    }
    paths.sort();
    for path in paths {
        let file = load_features(&path)?;
        out.insert(file.video_id.clone(), file);
    }
    Ok(out)
}

/// Convenience for building a prediction list from bare intervals.
pub fn predictions_from_intervals(intervals: &[TimeInterval]) -> Vec<PredictionEntry> {
    intervals.iter().copied().map(PredictionEntry::new).collect()
}
