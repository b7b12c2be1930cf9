//! Seeded synthetic corpora for end-to-end testing: random video durations,
//! planted non-overlapping events with template captions, an optional
//! jittered and paraphrased second annotation set, and segment features
//! that carry a signal for the words in each event's caption.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{meta_table_of, save_features, save_ground_truth, save_json, FeatureFile, FeatureLayout};
use crate::model::{segment_range, AnnotationSet, Corpus, FeatureMatrix, TimeInterval, VideoMeta, VideoRecord};

const SUBJECTS: &[(&str, &str)] = &[
    ("man", "guy"),
    ("woman", "lady"),
    ("boy", "kid"),
    ("girl", "child"),
    ("dog", "puppy"),
    ("player", "athlete"),
];
const VERBS: &[(&str, &str)] = &[
    ("rides", "pedals"),
    ("throws", "tosses"),
    ("kicks", "boots"),
    ("carries", "holds"),
    ("cleans", "wipes"),
    ("paints", "colors"),
    ("cuts", "slices"),
];
const OBJECTS: &[(&str, &str)] = &[
    ("bike", "bicycle"),
    ("ball", "sphere"),
    ("box", "crate"),
    ("table", "desk"),
    ("wall", "fence"),
    ("cake", "pastry"),
    ("rope", "cord"),
];
const PLACES: &[(&str, &str)] = &[
    ("in the park", "at the park"),
    ("on the street", "along the road"),
    ("in a room", "inside a room"),
    ("near the lake", "by the lake"),
    ("on a field", "across a field"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_videos: usize,
    pub events_min: usize,
    pub events_max: usize,
    pub seed: u64,
    pub second_set: bool,
    /// Feature dimension; 0 disables features.
    pub feature_dim: usize,
    pub fps: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    /// Endpoint jitter of the second set as a fraction of event length.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_videos: 50,
            events_min: 2,
            events_max: 5,
            seed: 0,
            second_set: true,
            feature_dim: 16,
            fps: crate::model::DEFAULT_FPS,
            min_duration: 30.0,
            max_duration: 300.0,
            jitter: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos < 1 {
            return Err(Error::InvalidConfig("videos must be ≥ 1".into()));
        }
        if self.events_min < 1 || self.events_max < self.events_min {
            return Err(Error::InvalidConfig("event range must satisfy 1 ≤ min ≤ max".into()));
        }
        if !(self.min_duration > 0.0 && self.max_duration >= self.min_duration) {
            return Err(Error::InvalidConfig("duration range must be positive and ordered".into()));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::InvalidConfig("jitter must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// The words of one templated caption.
#[derive(Debug, Clone, Copy)]
struct EventWords {
    subject: usize,
    verb: usize,
    object: usize,
    place: usize,
}

impl EventWords {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            subject: rng.random_range(0..SUBJECTS.len()),
            verb: rng.random_range(0..VERBS.len()),
            object: rng.random_range(0..OBJECTS.len()),
            place: rng.random_range(0..PLACES.len()),
        }
    }

    fn sentence(&self, paraphrase: bool) -> String {
        let pick = |pair: (&'static str, &'static str)| if paraphrase { pair.1 } else { pair.0 };
        let s = pick(SUBJECTS[self.subject]);
        let article = if s.starts_with(['a', 'e', 'i', 'o', 'u']) { "An" } else { "A" };
        format!(
            "{article} {s} {} a {} {}.",
            pick(VERBS[self.verb]),
            pick(OBJECTS[self.object]),
            pick(PLACES[self.place])
        )
    }

    fn concepts(&self) -> [&'static str; 3] {
        [SUBJECTS[self.subject].0, VERBS[self.verb].0, OBJECTS[self.object].0]
    }
}

/// Every concept word the generator can plant (subjects, verbs, objects).
pub fn concept_lexicon() -> Vec<String> {
    SUBJECTS
        .iter()
        .chain(VERBS)
        .chain(OBJECTS)
        .map(|p| p.0.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub features: BTreeMap<String, FeatureFile>,
}

fn round_cs(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lexicon = concept_lexicon();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let prototypes: BTreeMap<String, Vec<f64>> = lexicon
        .iter()
        .map(|w| {
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| unit.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (w.clone(), v.into_iter().map(|x| 2.0 * x / norm).collect())
        })
        .collect();

    let mut corpus = Corpus::new();
    let mut features = BTreeMap::new();
    for i in 0..cfg.n_videos {
        let video_id = format!("v_{i:05}");
        let duration = round_cs(rng.random_range(cfg.min_duration..=cfg.max_duration));
        let meta = VideoMeta::with_rate(video_id.clone(), duration, cfg.fps, crate::model::DEFAULT_FRAMES_PER_SEGMENT)?;
        let n_events = rng.random_range(cfg.events_min..=cfg.events_max);
        let slot = duration / n_events as f64;

        let mut intervals = Vec::with_capacity(n_events);
        let mut words = Vec::with_capacity(n_events);
        for k in 0..n_events {
            let length = slot * rng.random_range(0.6..0.95);
            let offset = rng.random_range(0.0..=(slot - length));
            let start = round_cs(k as f64 * slot + offset);
            let end = round_cs((start + length).min(duration));
            intervals.push(TimeInterval::new(start, end)?);
            words.push(EventWords::sample(&mut rng));
        }

        let mut record = VideoRecord::new(meta.clone());
        record.annotations.push(AnnotationSet::new(
            intervals.clone(),
            words.iter().map(|w| w.sentence(false)).collect(),
        )?);
        if cfg.second_set {
            let jittered = intervals
                .iter()
                .map(|iv| {
                    let span = iv.length() * cfg.jitter;
                    let s = (iv.start() + rng.random_range(-span..=span)).max(0.0);
                    let e = (iv.end() + rng.random_range(-span..=span)).min(duration);
                    TimeInterval::new(round_cs(s), round_cs(e).min(duration))
                })
                .collect::<Result<Vec<_>>>()?;
            record.annotations.push(AnnotationSet::new(
                jittered,
                words.iter().map(|w| w.sentence(true)).collect(),
            )?);
        }

        if cfg.feature_dim > 0 {
            let rows = meta.segment_count();
            let noise = Normal::new(0.0, 0.1).expect("noise");
            let mut data: Vec<f64> = (0..rows * cfg.feature_dim).map(|_| noise.sample(&mut rng)).collect();
            for (iv, w) in intervals.iter().zip(&words) {
                for seg in segment_range(iv, &meta) {
                    let row = &mut data[seg * cfg.feature_dim..(seg + 1) * cfg.feature_dim];
                    for concept in w.concepts() {
                        for (x, p) in row.iter_mut().zip(&prototypes[concept]) {
                            *x += p;
                        }
                    }
                }
            }
            // store at single precision so binary files round-trip exactly
            let data = data.into_iter().map(|x| f64::from(x as f32)).collect();
            features.insert(
                video_id.clone(),
                FeatureFile {
                    video_id: video_id.clone(),
                    feature_tag: "synthetic".into(),
                    matrix: FeatureMatrix::new(rows, cfg.feature_dim, data)?,
                },
            );
        }
        corpus.videos.insert(video_id, record);
    }
    Ok(SyntheticCorpus { corpus, features })
}

/// Writes `gt1.json` (and `gt2.json`), `meta.json`, `lexicon.json`,
/// `heuristic_scores.json` (planted events as fusion attractors), and
/// `features/<id>.feat`.
pub fn write_synthetic(data: &SyntheticCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_ground_truth(&data.corpus, 0, dir.join("gt1.json"))?;
    if data.corpus.annotation_set_count() > 1 {
        save_ground_truth(&data.corpus, 1, dir.join("gt2.json"))?;
    }
    save_json(&meta_table_of(&data.corpus), dir.join("meta.json"))?;
    save_json(&concept_lexicon(), dir.join("lexicon.json"))?;
    let attractors: BTreeMap<&str, Vec<TimeInterval>> = data
        .corpus
        .iter()
        .map(|(id, r)| (id.as_str(), r.annotations[0].intervals().to_vec()))
        .collect();
    save_json(
        &serde_json::json!({ "mode": "heuristic", "attractors": attractors }),
        dir.join("heuristic_scores.json"),
    )?;
    if !data.features.is_empty() {
        let fdir = dir.join("features");
        std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
        for (id, f) in &data.features {
            save_features(f, fdir.join(format!("{id}.feat")), FeatureLayout::Binary)?;
        }
    }
    Ok(())
}
