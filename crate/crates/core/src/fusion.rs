//! Sliding-window candidate enumeration and fused proposal selection.
//!
//! Selection combines a pointwise ranking score `f_s(p)` with a sequential
//! pointer-style distribution `f_e(p | prefix)`. At each step the sequential
//! distribution decides whether to stop (its argmax is EOS); otherwise every
//! remaining candidate is scored by `f_s(p) * f_e(p | prefix)`, the best one
//! extends the prefix, and the top `k` by that product are emitted.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::tiou;
use crate::model::{SegmentGrid, TimeInterval, VideoMeta};

/// Candidates closer than this on both endpoints are duplicates.
pub const DEDUP_TOLERANCE: f64 = 1e-6;
/// Maximum deviation of a sequential distribution's mass from one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;
/// Floor applied by [`HeuristicPointwiseScorer`].
pub const POINTWISE_FLOOR: f64 = 1e-3;
/// An attractor counts as covered once a prefix member reaches this tIoU.
pub const COVERAGE_TIOU: f64 = 0.5;

pub const DEFAULT_WINDOW_SCALES: [f64; 11] =
    [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_STRIDE_RATIO: f64 = 0.5;

/// Multi-scale sliding windows over a video.
///
/// For each scale `σ` the window length is `σ · duration` and windows start
/// at multiples of `stride_ratio · σ · duration`; a final window is added
/// flush with the end of the video when the stride does not land there.
/// Output is deduplicated and sorted by `(start, length)`.
pub fn enumerate_sliding_windows(
    meta: &VideoMeta,
    scales: &[f64],
    stride_ratio: f64,
) -> Result<Vec<TimeInterval>> {
    if !(stride_ratio > 0.0 && stride_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "stride ratio must be in (0, 1], got {stride_ratio}"
        )));
    }
    if let Some(bad) = scales.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::InvalidConfig(format!("window scale must be in (0, 1], got {bad}")));
    }
    let duration = meta.duration;
    let mut windows = Vec::new();
    for &scale in scales {
        let length = scale * duration;
        let step = stride_ratio * length;
        let mut k = 0usize;
        loop {
            let start = k as f64 * step;
            let end = start + length;
            if end > duration + DEDUP_TOLERANCE {
                break;
            }
            windows.push((start, end.min(duration)));
            k += 1;
        }
        let last_end = windows.last().map_or(0.0, |w| w.1);
        if (duration - last_end).abs() > DEDUP_TOLERANCE {
            windows.push(((duration - length).max(0.0), duration));
        }
    }
    windows.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 - a.0).total_cmp(&(b.1 - b.0))));
    let mut out: Vec<TimeInterval> = Vec::with_capacity(windows.len());
    for (s, e) in windows {
        let iv = TimeInterval::new(s, e)?;
        if !out.iter().any(|o| o.approx_eq(&iv, DEDUP_TOLERANCE)) {
            out.push(iv);
        }
    }
    Ok(out)
}

/// Ranking model `f_s`: a score in `(0, 1]` for a single candidate.
pub trait PointwiseScorer: Sync {
    fn score(&self, candidate: &TimeInterval, grid: &SegmentGrid) -> f64;
}

/// Probabilities over the remaining candidates (aligned with the
/// `remaining` slice passed to the scorer) plus end-of-sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub candidates: Vec<f64>,
    pub eos: f64,
}

impl StepDistribution {
    /// Mass entirely on EOS.
    pub fn stop(remaining: usize) -> Self {
        Self {
            candidates: vec![0.0; remaining],
            eos: 1.0,
        }
    }

    fn validate(&self, step: usize, remaining: usize) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDistribution { step, reason };
        if self.candidates.len() != remaining {
            return Err(invalid(format!(
                "expected {remaining} candidate probabilities, got {}",
                self.candidates.len()
            )));
        }
        let mut total = self.eos;
        for &p in self.candidates.iter().chain(std::iter::once(&self.eos)) {
            if !(p.is_finite() && p >= 0.0) {
                return Err(invalid(format!("probability {p} is not a finite non-negative value")));
            }
        }
        total += self.candidates.iter().sum::<f64>();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {total}")));
        }
        Ok(())
    }
}

/// Sequential model `f_e(· | prefix)`.
pub trait SequentialScorer: Sync {
    /// `prefix` and `remaining` index into `pool`; `remaining` is in pool
    /// order and excludes the prefix.
    fn distribution(&self, prefix: &[usize], remaining: &[usize], pool: &CandidatePool) -> StepDistribution;
}

/// Ranked candidates with their pointwise scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    candidates: Vec<TimeInterval>,
    scores: Vec<f64>,
}

impl CandidatePool {
    /// Builds a pool from explicit candidates and `f_s` scores, dropping
    /// duplicates (first occurrence wins) and anything past `cap`.
    pub fn new(candidates: Vec<TimeInterval>, scores: Vec<f64>, cap: usize) -> Result<Self> {
        if candidates.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: candidates.len(),
                actual: scores.len(),
            });
        }
        if let Some(bad) = scores.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "pointwise score must be in (0, 1], got {bad}"
            )));
        }
        let mut pool = Self {
            candidates: Vec::new(),
            scores: Vec::new(),
        };
        for (c, s) in candidates.into_iter().zip(scores) {
            if pool.candidates.len() == cap {
                break;
            }
            if !pool.candidates.iter().any(|o| o.approx_eq(&c, DEDUP_TOLERANCE)) {
                pool.candidates.push(c);
                pool.scores.push(s);
            }
        }
        Ok(pool)
    }

    /// Scores every window with `scorer` and keeps the `cap` best, highest
    /// first (stable on ties).
    pub fn rank(
        windows: &[TimeInterval],
        scorer: &dyn PointwiseScorer,
        grid: &SegmentGrid,
        cap: usize,
    ) -> Result<Self> {
        let mut scored: Vec<(TimeInterval, f64)> = windows
            .iter()
            .map(|w| (*w, scorer.score(w, grid)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (candidates, scores) = scored.into_iter().unzip();
        Self::new(candidates, scores, cap)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[TimeInterval] {
        &self.candidates
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn candidate(&self, index: usize) -> &TimeInterval {
        &self.candidates[index]
    }

    /// Same candidates with every pointwise score multiplied by `factor`.
    /// Scores are not re-validated, so this may leave `(0, 1]`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            candidates: self.candidates.clone(),
            scores: self.scores.iter().map(|s| s * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Candidates emitted per step.
    pub k: usize,
    pub max_steps: usize,
    pub candidate_cap: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            k: 1,
            max_steps: 20,
            candidate_cap: 80,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be ≥ 1".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::InvalidConfig("max_steps must be ≥ 1".into()));
        }
        if self.candidate_cap < 1 {
            return Err(Error::InvalidConfig("cap must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedProposal {
    pub pool_index: usize,
    pub interval: TimeInterval,
    /// `f_s · f_e` at the step that emitted this proposal.
    pub fused_score: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionOutcome {
    /// Emitted proposals in selection order.
    pub selected: Vec<SelectedProposal>,
    /// Pool indices appended to the sequential prefix, one per step.
    pub prefix: Vec<usize>,
    pub steps: usize,
    /// True when the loop ended on `max_steps` rather than EOS.
    pub hit_step_limit: bool,
}

impl FusionOutcome {
    pub fn intervals(&self) -> Vec<TimeInterval> {
        self.selected.iter().map(|s| s.interval).collect()
    }
}

/// First index of the maximum; NaN never wins.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Fused selection over `pool`, using the pool's stored pointwise scores.
pub fn fuse_select(
    pool: &CandidatePool,
    sequential: &dyn SequentialScorer,
    cfg: &FusionConfig,
) -> Result<FusionOutcome> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool".into()));
    }
    let mut outcome = FusionOutcome::default();
    let mut in_prefix = vec![false; pool.len()];
    let mut emitted = HashSet::new();

    for step in 0..cfg.max_steps {
        let remaining: Vec<usize> = (0..pool.len()).filter(|&i| !in_prefix[i]).collect();
        if remaining.is_empty() {
            break;
        }
        let dist = sequential.distribution(&outcome.prefix, &remaining, pool);
        dist.validate(step, remaining.len())?;

        // EOS sits after every candidate, so it only wins a strict maximum.
        let eos_slot = remaining.len();
        let top = argmax(dist.candidates.iter().copied().chain(std::iter::once(dist.eos)));
        if top == Some(eos_slot) {
            outcome.steps = step;
            return Ok(outcome);
        }

        let fused: Vec<f64> = remaining
            .iter()
            .zip(&dist.candidates)
            .map(|(&i, &p)| pool.scores[i] * p)
            .collect();
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| fused[b].total_cmp(&fused[a]));

        let chosen = remaining[order[0]];
        in_prefix[chosen] = true;
        outcome.prefix.push(chosen);

        for &slot in order.iter().take(cfg.k) {
            let index = remaining[slot];
            if emitted.insert(index) {
                outcome.selected.push(SelectedProposal {
                    pool_index: index,
                    interval: pool.candidates[index],
                    fused_score: fused[slot],
                    step,
                });
            }
        }
        outcome.steps = step + 1;
    }
    outcome.hit_step_limit = outcome.steps == cfg.max_steps;
    Ok(outcome)
}

/// Full per-video pipeline: default sliding windows, ranked by `pointwise`
/// and capped, then fused selection.
pub fn fuse_video(
    grid: &SegmentGrid,
    pointwise: &dyn PointwiseScorer,
    sequential: &dyn SequentialScorer,
    cfg: &FusionConfig,
) -> Result<(CandidatePool, FusionOutcome)> {
    cfg.validate()?;
    let windows = enumerate_sliding_windows(&grid.meta, &DEFAULT_WINDOW_SCALES, DEFAULT_STRIDE_RATIO)?;
    let pool = CandidatePool::rank(&windows, pointwise, grid, cfg.candidate_cap)?;
    let outcome = fuse_select(&pool, sequential, cfg)?;
    Ok((pool, outcome))
}

/// Test oracle for `f_s`: best tIoU against planted attractors, floored.
#[derive(Debug, Clone)]
pub struct HeuristicPointwiseScorer {
    attractors: Vec<TimeInterval>,
}

impl HeuristicPointwiseScorer {
    pub fn new(attractors: Vec<TimeInterval>) -> Self {
        Self { attractors }
    }
}

impl PointwiseScorer for HeuristicPointwiseScorer {
    fn score(&self, candidate: &TimeInterval, _grid: &SegmentGrid) -> f64 {
        self.attractors
            .iter()
            .map(|a| tiou(candidate, a))
            .fold(POINTWISE_FLOOR, f64::max)
    }
}

/// Test oracle for `f_e`: favours candidates overlapping attractors that no
/// prefix member covers yet, and stops once all are covered.
#[derive(Debug, Clone)]
pub struct HeuristicSequentialScorer {
    attractors: Vec<TimeInterval>,
}

impl HeuristicSequentialScorer {
    pub const EOS_WEIGHT_OPEN: f64 = 0.05;
    pub const EOS_WEIGHT_DONE: f64 = 1.0;

    pub fn new(attractors: Vec<TimeInterval>) -> Self {
        Self { attractors }
    }
}

impl SequentialScorer for HeuristicSequentialScorer {
    fn distribution(&self, prefix: &[usize], remaining: &[usize], pool: &CandidatePool) -> StepDistribution {
        let uncovered: Vec<&TimeInterval> = self
            .attractors
            .iter()
            .filter(|a| {
                !prefix
                    .iter()
                    .any(|&p| tiou(pool.candidate(p), a) >= COVERAGE_TIOU)
            })
            .collect();
        let weights: Vec<f64> = remaining
            .iter()
            .map(|&i| {
                uncovered
                    .iter()
                    .map(|a| tiou(pool.candidate(i), a))
                    .fold(0.0, f64::max)
            })
            .collect();
        let eos = if uncovered.is_empty() {
            Self::EOS_WEIGHT_DONE
        } else {
            Self::EOS_WEIGHT_OPEN
        };
        let total = eos + weights.iter().sum::<f64>();
        StepDistribution {
            candidates: weights.iter().map(|w| w / total).collect(),
            eos: eos / total,
        }
    }
}

/// `f_e` replayed from precomputed per-step tables. Step `t` supplies one
/// probability per remaining candidate followed by EOS; once the tables
/// run out the scorer stops.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableSequentialScorer {
    pub steps: Vec<Vec<f64>>,
}

impl SequentialScorer for TableSequentialScorer {
    fn distribution(&self, prefix: &[usize], remaining: &[usize], _pool: &CandidatePool) -> StepDistribution {
        match self.steps.get(prefix.len()) {
            Some(row) if !row.is_empty() => {
                let (eos, candidates) = row.split_last().unwrap();
                StepDistribution {
                    candidates: candidates.to_vec(),
                    eos: *eos,
                }
            }
            _ => StepDistribution::stop(remaining.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval::new(s, e).unwrap()
    }

    fn meta(duration: f64) -> VideoMeta {
        VideoMeta::new("v", duration).unwrap()
    }

    #[test]
    fn window_examples() {
        let w = enumerate_sliding_windows(&meta(10.0), &[1.0], 0.5).unwrap();
        assert_eq!(w, vec![iv(0.0, 10.0)]);
        let w = enumerate_sliding_windows(&meta(10.0), &[0.5], 0.5).unwrap();
        assert_eq!(w, vec![iv(0.0, 5.0), iv(2.5, 7.5), iv(5.0, 10.0)]);
        let w = enumerate_sliding_windows(&meta(10.0), &[0.5, 1.0], 0.5).unwrap();
        assert_eq!(w, vec![iv(0.0, 5.0), iv(0.0, 10.0), iv(2.5, 7.5), iv(5.0, 10.0)]);
    }

    #[test]
    fn window_tail_is_flush_with_end() {
        let w = enumerate_sliding_windows(&meta(10.0), &[0.3], 1.0).unwrap();
        assert_eq!(w.last().unwrap().end(), 10.0);
        assert_eq!(w.len(), 4);
    }

    #[test]
    fn window_args_validated() {
        assert!(enumerate_sliding_windows(&meta(10.0), &[0.0], 0.5).is_err());
        assert!(enumerate_sliding_windows(&meta(10.0), &[0.5], 0.0).is_err());
        assert!(enumerate_sliding_windows(&meta(10.0), &[1.5], 0.5).is_err());
    }

    #[test]
    fn windows_sorted_and_unique() {
        let w = enumerate_sliding_windows(&meta(97.3), &DEFAULT_WINDOW_SCALES, DEFAULT_STRIDE_RATIO).unwrap();
        for pair in w.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            assert!(a.start() < b.start() || (a.start() == b.start() && a.length() < b.length()));
        }
    }

    fn three_pool() -> CandidatePool {
        CandidatePool::new(
            vec![iv(0.0, 1.0), iv(1.0, 2.0), iv(2.0, 3.0)],
            vec![0.9, 0.5, 0.4],
            80,
        )
        .unwrap()
    }

    fn tables() -> TableSequentialScorer {
        TableSequentialScorer {
            steps: vec![vec![0.2, 0.5, 0.2, 0.1], vec![0.3, 0.1, 0.6]],
        }
    }

    #[test]
    fn immediate_eos() {
        let pool = CandidatePool::new(vec![iv(0.0, 1.0)], vec![1.0], 80).unwrap();
        let f_e = TableSequentialScorer {
            steps: vec![vec![0.1, 0.9]],
        };
        let out = fuse_select(&pool, &f_e, &FusionConfig::default()).unwrap();
        assert!(out.selected.is_empty());
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn hand_trace_k1() {
        let out = fuse_select(&three_pool(), &tables(), &FusionConfig::default()).unwrap();
        let picked: Vec<usize> = out.selected.iter().map(|s| s.pool_index).collect();
        assert_eq!(picked, vec![1]);
        assert!((out.selected[0].fused_score - 0.25).abs() < 1e-12);
        assert_eq!(out.prefix, vec![1]);
    }

    #[test]
    fn hand_trace_k2() {
        let cfg = FusionConfig {
            k: 2,
            ..Default::default()
        };
        let out = fuse_select(&three_pool(), &tables(), &cfg).unwrap();
        let picked: Vec<usize> = out.selected.iter().map(|s| s.pool_index).collect();
        assert_eq!(picked, vec![1, 0]);
        assert_eq!(out.prefix, vec![1]);
    }

    #[test]
    fn bad_distribution_is_hard_error() {
        let f_e = TableSequentialScorer {
            steps: vec![vec![0.5, 0.5, 0.5, 0.1]],
        };
        assert!(matches!(
            fuse_select(&three_pool(), &f_e, &FusionConfig::default()),
            Err(Error::InvalidDistribution { step: 0, .. })
        ));
        let f_e = TableSequentialScorer {
            steps: vec![vec![0.5, 0.5]],
        };
        assert!(fuse_select(&three_pool(), &f_e, &FusionConfig::default()).is_err());
    }

    #[test]
    fn k_zero_rejected() {
        let cfg = FusionConfig {
            k: 0,
            ..Default::default()
        };
        let err = fuse_select(&three_pool(), &tables(), &cfg).unwrap_err();
        assert_eq!(err.to_string(), "k must be ≥ 1");
    }

    #[test]
    fn step_limit_bounds_output() {
        // never emits EOS as argmax
        struct Greedy;
        impl SequentialScorer for Greedy {
            fn distribution(&self, _: &[usize], remaining: &[usize], _: &CandidatePool) -> StepDistribution {
                let n = remaining.len() as f64;
                StepDistribution {
                    candidates: vec![1.0 / (n + 0.5); remaining.len()],
                    eos: 0.5 / (n + 0.5),
                }
            }
        }
        let cands: Vec<_> = (0..30).map(|i| iv(i as f64, i as f64 + 1.0)).collect();
        let pool = CandidatePool::new(cands, vec![0.5; 30], 80).unwrap();
        let cfg = FusionConfig {
            k: 3,
            max_steps: 4,
            candidate_cap: 80,
        };
        let out = fuse_select(&pool, &Greedy, &cfg).unwrap();
        assert!(out.hit_step_limit);
        assert_eq!(out.steps, 4);
        assert!(out.selected.len() <= 12);
    }

    #[test]
    fn pool_dedups_and_caps() {
        let pool = CandidatePool::new(
            vec![iv(0.0, 1.0), iv(0.0, 1.0 + 1e-9), iv(2.0, 3.0), iv(4.0, 5.0)],
            vec![0.9, 0.8, 0.7, 0.6],
            2,
        )
        .unwrap();
        assert_eq!(pool.candidates(), &[iv(0.0, 1.0), iv(2.0, 3.0)]);
        assert!(CandidatePool::new(vec![iv(0.0, 1.0)], vec![0.0], 2).is_err());
    }

    #[test]
    fn heuristic_pointwise_examples() {
        let grid = SegmentGrid::empty(meta(100.0));
        let f_s = HeuristicPointwiseScorer::new(vec![iv(5.0, 15.0), iv(40.0, 50.0)]);
        assert_eq!(f_s.score(&iv(40.0, 50.0), &grid), 1.0);
        assert_eq!(f_s.score(&iv(70.0, 80.0), &grid), POINTWISE_FLOOR);
        assert!((f_s.score(&iv(0.0, 10.0), &grid) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn heuristic_sequential_hand_normalization() {
        // attractors [0,10] and [20,30]; pool [0,10], [5,15], [20,30]
        let pool = CandidatePool::new(
            vec![iv(0.0, 10.0), iv(5.0, 15.0), iv(20.0, 30.0)],
            vec![1.0, 0.5, 1.0],
            80,
        )
        .unwrap();
        let f_e = HeuristicSequentialScorer::new(vec![iv(0.0, 10.0), iv(20.0, 30.0)]);
        let d = f_e.distribution(&[], &[0, 1, 2], &pool);
        // weights (1, 1/3, 1) and EOS 0.05 -> total 2.383333...
        let total = 1.0 + 1.0 / 3.0 + 1.0 + 0.05;
        let expect = [1.0 / total, (1.0 / 3.0) / total, 1.0 / total];
        for (a, b) in d.candidates.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.eos - 0.05 / total).abs() < 1e-12);

        // after covering the first attractor only [20,30] keeps weight
        let d = f_e.distribution(&[0], &[1, 2], &pool);
        assert_eq!(argmax(d.candidates.iter().copied()), Some(1));
        assert_eq!(d.candidates[0], 0.0);

        // everything covered -> EOS wins
        let d = f_e.distribution(&[0, 2], &[1], &pool);
        assert!(d.eos > d.candidates[0]);
    }

    #[test]
    fn heuristic_pipeline_recovers_attractors() {
        let m = meta(120.0);
        let attractors = vec![iv(6.0, 30.0), iv(40.0, 70.0), iv(80.0, 115.0)];
        let grid = SegmentGrid::empty(m.clone());
        let windows = enumerate_sliding_windows(&m, &DEFAULT_WINDOW_SCALES, DEFAULT_STRIDE_RATIO).unwrap();
        let pool = CandidatePool::rank(&windows, &HeuristicPointwiseScorer::new(attractors.clone()), &grid, 80).unwrap();
        let out = fuse_select(&pool, &HeuristicSequentialScorer::new(attractors.clone()), &FusionConfig::default()).unwrap();
        assert_eq!(out.selected.len(), 3);
        for a in &attractors {
            assert!(out.selected.iter().any(|s| tiou(&s.interval, a) >= 0.5));
        }
    }
}
