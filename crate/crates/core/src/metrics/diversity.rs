//! Per-video caption diversity: Self-BLEU and n-gram repetition, computed
//! either per caption set (then averaged across sets) or over the pooled
//! captions of all sets.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{bleu4, Smoothing};
use super::{ngram_counts, tokenize};

/// Captions of one video, grouped by proposal/annotation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCaptions {
    pub video_id: String,
    pub sets: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    PerSet,
    Combined,
}

/// Mean over captions of smoothed BLEU-4 against the video's other captions,
/// in `[0, 100]`. `None` with fewer than two captions.
pub fn video_self_bleu(captions: &[Vec<String>]) -> Option<f64> {
    if captions.len() < 2 {
        return None;
    }
    let total: f64 = (0..captions.len())
        .map(|i| {
            let rest: Vec<Vec<String>> = captions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, c)| c.clone())
                .collect();
            bleu4(&captions[i], &rest, Smoothing::AddOne) * 100.0
        })
        .sum();
    Some(total / captions.len() as f64)
}

/// `100 · Σ max(count − 1, 0) / Σ count` over the video's pooled n-grams
/// (n-grams never span two captions). `None` when there are no n-grams.
pub fn video_repetition(captions: &[Vec<String>], n: usize) -> Option<f64> {
    let mut pooled: HashMap<&[String], usize> = HashMap::new();
    for c in captions {
        for (gram, count) in ngram_counts(c, n) {
            *pooled.entry(gram).or_insert(0) += count;
        }
    }
    let total: usize = pooled.values().sum();
    if total == 0 {
        return None;
    }
    let repeated: usize = pooled.values().map(|&c| c - 1).sum();
    Some(100.0 * repeated as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStat {
    pub value: f64,
    /// Videos contributing at least one value.
    pub n_videos: usize,
    /// Videos that were ineligible in every set.
    pub excluded: Vec<String>,
}

fn tokenized(video: &VideoCaptions) -> Vec<Vec<Vec<String>>> {
    video
        .sets
        .iter()
        .map(|set| set.iter().map(|s| tokenize(s)).collect())
        .collect()
}

/// Per-video values per set (`PerSet`) or a single pooled value (`Combined`).
fn per_video_values<F>(videos: &[VideoCaptions], mode: DiversityMode, metric: F) -> Vec<Vec<Option<f64>>>
where
    F: Fn(&[Vec<String>]) -> Option<f64> + Sync,
{
    videos
        .par_iter()
        .map(|video| {
            let sets = tokenized(video);
            match mode {
                DiversityMode::PerSet => sets.iter().map(|s| metric(s)).collect(),
                DiversityMode::Combined => {
                    let pooled: Vec<Vec<String>> = sets.into_iter().flatten().collect();
                    vec![metric(&pooled)]
                }
            }
        })
        .collect()
}

/// Corpus mean per set index, then mean over set indices.
fn aggregate(videos: &[VideoCaptions], values: &[Vec<Option<f64>>]) -> DiversityStat {
    let n_sets = values.iter().map(Vec::len).max().unwrap_or(0);
    let mut set_means = Vec::with_capacity(n_sets);
    for s in 0..n_sets {
        let vals: Vec<f64> = values.iter().filter_map(|v| v.get(s).copied().flatten()).collect();
        if !vals.is_empty() {
            set_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let value = if set_means.is_empty() {
        0.0
    } else {
        set_means.iter().sum::<f64>() / set_means.len() as f64
    };
    let excluded: Vec<String> = videos
        .iter()
        .zip(values)
        .filter(|(_, v)| v.iter().all(Option::is_none))
        .map(|(video, _)| video.video_id.clone())
        .collect();
    DiversityStat {
        value,
        n_videos: videos.len() - excluded.len(),
        excluded,
    }
}

pub fn self_bleu(videos: &[VideoCaptions], mode: DiversityMode) -> DiversityStat {
    aggregate(videos, &per_video_values(videos, mode, video_self_bleu))
}

pub fn repetition(videos: &[VideoCaptions], n: usize, mode: DiversityMode) -> DiversityStat {
    aggregate(videos, &per_video_values(videos, mode, |c| video_repetition(c, n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDiversity {
    pub video_id: String,
    pub self_bleu: Vec<Option<f64>>,
    pub repetition: Vec<Option<f64>>,
    pub self_bleu_combined: Option<f64>,
    pub repetition_combined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    #[serde(rename = "SelfB")]
    pub self_bleu: f64,
    #[serde(rename = "RE")]
    pub repetition: f64,
    #[serde(rename = "SelfB2")]
    pub self_bleu2: f64,
    #[serde(rename = "RE2")]
    pub repetition2: f64,
    pub n: usize,
    pub n_videos: usize,
    /// Videos with fewer than two captions in every set.
    pub self_bleu_excluded: Vec<String>,
    pub per_video: Vec<VideoDiversity>,
}

/// All four diversity numbers plus a per-video breakdown.
pub fn diversity_report(videos: &[VideoCaptions], n: usize) -> DiversityReport {
    let sb = per_video_values(videos, DiversityMode::PerSet, video_self_bleu);
    let re = per_video_values(videos, DiversityMode::PerSet, |c| video_repetition(c, n));
    let sb2 = per_video_values(videos, DiversityMode::Combined, video_self_bleu);
    let re2 = per_video_values(videos, DiversityMode::Combined, |c| video_repetition(c, n));
    let sb_stat = aggregate(videos, &sb);
    let per_video = videos
        .iter()
        .enumerate()
        .map(|(i, v)| VideoDiversity {
            video_id: v.video_id.clone(),
            self_bleu: sb[i].clone(),
            repetition: re[i].clone(),
            self_bleu_combined: sb2[i][0],
            repetition_combined: re2[i][0],
        })
        .collect();
    DiversityReport {
        self_bleu: sb_stat.value,
        repetition: aggregate(videos, &re).value,
        self_bleu2: aggregate(videos, &sb2).value,
        repetition2: aggregate(videos, &re2).value,
        n,
        n_videos: videos.len(),
        self_bleu_excluded: sb_stat.excluded,
        per_video,
    }
}

impl DiversityReport {
    pub fn render(&self) -> String {
        format!(
            "SelfB {:>8.3}  RE {:>8.3}  SelfB2 {:>8.3}  RE2 {:>8.3}  (n = {}, videos = {}, excluded from SelfB = {})\n",
            self.self_bleu,
            self.repetition,
            self.self_bleu2,
            self.repetition2,
            self.n,
            self.n_videos,
            self.self_bleu_excluded.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, sets: &[&[&str]]) -> VideoCaptions {
        VideoCaptions {
            video_id: id.into(),
            sets: sets.iter().map(|s| s.iter().map(|c| c.to_string()).collect()).collect(),
        }
    }

    #[test]
    fn identical_pair_is_100() {
        let v = [video("v", &[&["a man rides a bike", "a man rides a bike"]])];
        assert_eq!(self_bleu(&v, DiversityMode::PerSet).value, 100.0);
    }

    #[test]
    fn disjoint_sentences_score_zero() {
        let v = [video("v", &[&["a b c d e", "f g h i j"]])];
        assert_eq!(self_bleu(&v, DiversityMode::PerSet).value, 0.0);
    }

    #[test]
    fn single_caption_videos_are_excluded() {
        let v = [video("lonely", &[&["just one"]]), video("pair", &[&["x y", "x y"]])];
        let s = self_bleu(&v, DiversityMode::PerSet);
        assert_eq!(s.excluded, vec!["lonely".to_string()]);
        assert_eq!(s.n_videos, 1);
        assert_eq!(s.value, 100.0);
    }

    #[test]
    fn combined_with_duplicate_set_is_not_more_diverse() {
        let set: &[&str] = &["a man rides a bike", "a woman rides a horse", "kids play in the park"];
        let v = [video("v", &[set, set])];
        let per_set = self_bleu(&v, DiversityMode::PerSet).value;
        let combined = self_bleu(&v, DiversityMode::Combined).value;
        assert!(combined >= per_set);
        assert_eq!(combined, 100.0);
    }

    #[test]
    fn repetition_examples() {
        let unique = [video("v", &[&["a b c d e", "f g h i j"]])];
        assert_eq!(repetition(&unique, 4, DiversityMode::PerSet).value, 0.0);

        let twice = [video("v", &[&["a b c d e f", "a b c d e f"]])];
        assert_eq!(repetition(&twice, 4, DiversityMode::PerSet).value, 50.0);

        let overlap = [video("v", &[&["a b c d e", "b c d e f"]])];
        assert_eq!(repetition(&overlap, 4, DiversityMode::PerSet).value, 25.0);

        for m in 1..6usize {
            let caps = vec!["a b c d e"; m];
            let v = [video("v", &[&caps])];
            assert_eq!(repetition(&v, 4, DiversityMode::PerSet).value, 100.0 * (m - 1) as f64 / m as f64);
        }
    }

    #[test]
    fn short_captions_have_no_ngrams() {
        let v = [video("v", &[&["a b", "a b"]])];
        let s = repetition(&v, 4, DiversityMode::PerSet);
        assert_eq!(s.excluded, vec!["v".to_string()]);
    }

    #[test]
    fn per_set_averages_over_sets() {
        let v = [video("v", &[&["a b c d", "a b c d"], &["a b c d", "e f g h"]])];
        let r = diversity_report(&v, 4);
        assert_eq!(r.repetition, 25.0);
        assert_eq!(r.repetition2, 50.0);
        assert!(r.render().contains("SelfB"));
    }
}
