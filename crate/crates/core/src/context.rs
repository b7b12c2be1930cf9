//! Context windows around a target event over the segment grid: local
//! neighbourhoods, the global complement, neighbouring events, prior
//! sentences, and pooled feature summaries of each.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{segment_range, SegmentGrid, TimeInterval, VideoMeta};

pub const DEFAULT_LOCAL_WINDOW_RATIO: f64 = 0.5;

/// Segment ranges immediately before and after `event`, each spanning
/// `window_ratio · |event|` seconds clipped to the video. Both ranges are
/// trimmed so they never overlap the event's own segments.
pub fn local_context(
    event: &TimeInterval,
    meta: &VideoMeta,
    window_ratio: f64,
) -> Result<(Range<usize>, Range<usize>)> {
    if !(window_ratio.is_finite() && window_ratio > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "window ratio must be positive, got {window_ratio}"
        )));
    }
    let span = window_ratio * event.length();
    let own = segment_range(event, meta);

    let before = match TimeInterval::new((event.start() - span).max(0.0), event.start()) {
        Ok(window) => {
            let r = segment_range(&window, meta);
            r.start..r.end.min(own.start)
        }
        Err(_) => 0..0,
    };
    let after = match TimeInterval::new(event.end(), (event.end() + span).min(meta.duration)) {
        Ok(window) => {
            let r = segment_range(&window, meta);
            r.start.max(own.end)..r.end
        }
        Err(_) => 0..0,
    };
    Ok((normalize(before), normalize(after)))
}

fn normalize(r: Range<usize>) -> Range<usize> {
    if r.start >= r.end {
        0..0
    } else {
        r
    }
}

/// Mask over segments, true everywhere outside the event.
pub fn global_context(event: &TimeInterval, meta: &VideoMeta) -> Vec<bool> {
    let own = segment_range(event, meta);
    (0..meta.segment_count()).map(|i| !own.contains(&i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Only past events (online decoding).
    Uni,
    /// Past and future events (offline decoding).
    Bi,
}

/// Indices of the events that form the target's event context, in
/// temporal order.
pub fn event_neighbors(events: &[TimeInterval], target: usize, direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[a]
            .start()
            .total_cmp(&events[b].start())
            .then(events[a].end().total_cmp(&events[b].end()))
            .then(a.cmp(&b))
    });
    let position = order.iter().position(|&i| i == target);
    match (direction, position) {
        (_, None) => Vec::new(),
        (Direction::Uni, Some(p)) => order[..p].to_vec(),
        (Direction::Bi, Some(p)) => order.into_iter().enumerate().filter(|&(q, _)| q != p).map(|(_, i)| i).collect(),
    }
}

/// Captions of the events before `target`.
pub fn sentence_history(captions: &[String], target: usize) -> &[String] {
    &captions[..target.min(captions.len())]
}

/// Caption log for sequential decoding: history for event `i` is only
/// available once events `0..i` have been captioned.
#[derive(Debug, Clone, Default)]
pub struct SentenceLog {
    captions: Vec<String>,
}

impl SentenceLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the caption of event `index`, which must be the next one.
    pub fn record(&mut self, index: usize, caption: impl Into<String>) -> Result<()> {
        if index != self.captions.len() {
            return Err(Error::InvalidConfig(format!(
                "caption for event {index} recorded out of order; expected event {}",
                self.captions.len()
            )));
        }
        self.captions.push(caption.into());
        Ok(())
    }

    pub fn history(&self, target: usize) -> Result<&[String]> {
        if target > self.captions.len() {
            return Err(Error::InvalidConfig(format!(
                "history for event {target} requested before event {} was captioned",
                self.captions.len()
            )));
        }
        Ok(&self.captions[..target])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Mean,
    Max,
}

/// Element-wise mean or max of the grid rows in `indices`.
pub fn pool_features(grid: &SegmentGrid, indices: &[usize], mode: PoolMode) -> Result<Vec<f64>> {
    let features = grid.require_features()?;
    if indices.is_empty() {
        return Err(Error::EmptyContext);
    }
    let dim = features.dim();
    if let Some(&bad) = indices.iter().find(|&&i| i >= features.rows()) {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            actual: bad,
        });
    }
    let mut acc = match mode {
        PoolMode::Mean => vec![0.0; dim],
        PoolMode::Max => vec![f64::NEG_INFINITY; dim],
    };
    for &i in indices {
        for (a, &x) in acc.iter_mut().zip(features.row(i)) {
            match mode {
                PoolMode::Mean => *a += x,
                PoolMode::Max => *a = a.max(x),
            }
        }
    }
    if mode == PoolMode::Mean {
        let n = indices.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

/// [`pool_features`] over the true entries of a mask.
pub fn pool_masked(grid: &SegmentGrid, mask: &[bool], mode: PoolMode) -> Result<Vec<f64>> {
    let indices: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    pool_features(grid, &indices, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledContext {
    pub event: Vec<f64>,
    pub local_before: Vec<f64>,
    pub local_after: Vec<f64>,
    pub global: Vec<f64>,
    /// Context names that had no segments and were replaced by zeros.
    pub empty: Vec<String>,
}

/// Everything a captioner may condition on for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventContextBundle {
    pub event_index: usize,
    pub event_range: Range<usize>,
    pub local_before: Range<usize>,
    pub local_after: Range<usize>,
    pub global_mask: Vec<bool>,
    pub neighbor_events: Vec<usize>,
    pub sentence_history: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled: Option<PooledContext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub window_ratio: f64,
    pub direction: Direction,
    pub pool: PoolMode,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            window_ratio: DEFAULT_LOCAL_WINDOW_RATIO,
            direction: Direction::Bi,
            pool: PoolMode::Mean,
        }
    }
}

fn pool_or_zero(
    grid: &SegmentGrid,
    indices: &[usize],
    mode: PoolMode,
    name: &str,
    empty: &mut Vec<String>,
) -> Result<Vec<f64>> {
    match pool_features(grid, indices, mode) {
        Err(Error::EmptyContext) => {
            empty.push(name.to_string());
            Ok(vec![0.0; grid.require_features()?.dim()])
        }
        other => other,
    }
}

/// One bundle per event. `captions`, when given, supplies sentence history
/// (event `i` sees captions `0..i` in the given order). Pooled vectors are
/// attached when the grid carries features.
pub fn build_bundles(
    grid: &SegmentGrid,
    events: &[TimeInterval],
    captions: Option<&[String]>,
    cfg: &ContextConfig,
) -> Result<Vec<EventContextBundle>> {
    let meta = &grid.meta;
    events
        .iter()
        .enumerate()
        .map(|(i, event)| {
            let event_range = segment_range(event, meta);
            let (local_before, local_after) = local_context(event, meta, cfg.window_ratio)?;
            let global_mask = global_context(event, meta);
            let pooled = if grid.features().is_some() {
                let mut empty = Vec::new();
                let own: Vec<usize> = event_range.clone().collect();
                let before: Vec<usize> = local_before.clone().collect();
                let after: Vec<usize> = local_after.clone().collect();
                let global: Vec<usize> =
                    global_mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect();
                Some(PooledContext {
                    event: pool_features(grid, &own, cfg.pool)?,
                    local_before: pool_or_zero(grid, &before, cfg.pool, "local_before", &mut empty)?,
                    local_after: pool_or_zero(grid, &after, cfg.pool, "local_after", &mut empty)?,
                    global: pool_or_zero(grid, &global, cfg.pool, "global", &mut empty)?,
                    empty,
                })
            } else {
                None
            };
            Ok(EventContextBundle {
                event_index: i,
                event_range,
                local_before,
                local_after,
                global_mask,
                neighbor_events: event_neighbors(events, i, cfg.direction),
                sentence_history: captions.map(|c| sentence_history(c, i).to_vec()).unwrap_or_default(),
                pooled,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureMatrix;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval::new(s, e).unwrap()
    }

    /// 16 s at 16 fps: four 4-second segments.
    fn meta16() -> VideoMeta {
        VideoMeta::with_rate("v", 16.0, 16.0, 64).unwrap()
    }

    #[test]
    fn local_context_examples() {
        let m = meta16();
        assert_eq!(local_context(&iv(0.0, 16.0), &m, 1.0).unwrap(), (0..0, 0..0));
        assert_eq!(local_context(&iv(4.0, 8.0), &m, 1.0).unwrap(), (0..1, 2..3));
        assert_eq!(local_context(&iv(4.0, 8.0), &m, 2.0).unwrap(), (0..1, 2..4));
        let (before, after) = local_context(&iv(0.0, 4.0), &m, 1.0).unwrap();
        assert_eq!(before, 0..0);
        assert_eq!(after, 1..2);
        assert!(local_context(&iv(0.0, 4.0), &m, 0.0).is_err());
    }

    #[test]
    fn local_context_never_overlaps_event() {
        let m = meta16();
        let event = iv(5.0, 9.0);
        let own = segment_range(&event, &m);
        let (b, a) = local_context(&event, &m, 0.5).unwrap();
        assert!(b.end <= own.start || b.is_empty());
        assert!(a.start >= own.end || a.is_empty());
    }

    #[test]
    fn global_context_examples() {
        let m = meta16();
        assert_eq!(global_context(&iv(0.0, 16.0), &m), vec![false; 4]);
        assert_eq!(global_context(&iv(4.0, 12.0), &m), vec![true, false, false, true]);
    }

    #[test]
    fn disjoint_events_have_complementary_masks_on_their_union() {
        // six 4-second segments; events cover [0,3) and [3,6)
        let m = VideoMeta::with_rate("v", 24.0, 16.0, 64).unwrap();
        let a = global_context(&iv(0.0, 12.0), &m);
        let b = global_context(&iv(12.0, 24.0), &m);
        for i in 0..6 {
            assert_ne!(a[i], b[i]);
        }
    }

    #[test]
    fn neighbor_examples() {
        let events: Vec<_> = (0..4).map(|i| iv(i as f64, i as f64 + 1.0)).collect();
        assert!(event_neighbors(&events, 0, Direction::Uni).is_empty());
        assert_eq!(event_neighbors(&events, 2, Direction::Uni), vec![0, 1]);
        assert_eq!(event_neighbors(&events, 2, Direction::Bi), vec![0, 1, 3]);
    }

    #[test]
    fn history_examples() {
        let caps: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!(sentence_history(&caps, 0).is_empty());
        assert_eq!(sentence_history(&caps, 2), &caps[..2]);
    }

    #[test]
    fn sentence_log_enforces_order() {
        let mut log = SentenceLog::new();
        assert!(log.record(1, "x").is_err());
        log.record(0, "first").unwrap();
        assert_eq!(log.history(1).unwrap(), &["first".to_string()]);
        assert!(log.history(2).is_err());
    }

    #[test]
    fn history_follows_temporal_order_after_sorting() {
        // captions attached to events, shuffled, then sorted by start time
        let mut events = [(iv(20.0, 30.0), "c"), (iv(0.0, 5.0), "a"), (iv(6.0, 9.0), "b")];
        events.sort_by(|x, y| x.0.start().total_cmp(&y.0.start()));
        let caps: Vec<String> = events.iter().map(|e| e.1.to_string()).collect();
        assert_eq!(sentence_history(&caps, 2), &["a".to_string(), "b".to_string()]);
    }

    fn grid2() -> SegmentGrid {
        let m = VideoMeta::with_rate("v", 8.0, 16.0, 64).unwrap();
        let f = FeatureMatrix::from_rows(vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        SegmentGrid::with_features(m, f, "basic").unwrap()
    }

    #[test]
    fn pool_examples() {
        let g = grid2();
        assert_eq!(pool_features(&g, &[1], PoolMode::Mean).unwrap(), vec![2.0, 0.0]);
        assert_eq!(pool_features(&g, &[0, 1], PoolMode::Mean).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pool_features(&g, &[0, 1], PoolMode::Max).unwrap(), vec![2.0, 2.0]);
        assert!(matches!(pool_features(&g, &[], PoolMode::Mean), Err(Error::EmptyContext)));
        assert!(pool_features(&SegmentGrid::empty(g.meta.clone()), &[0], PoolMode::Mean).is_err());
    }

    #[test]
    fn bundles_substitute_zero_vectors() {
        let g = grid2();
        let bundles = build_bundles(&g, &[iv(0.0, 8.0)], None, &ContextConfig::default()).unwrap();
        let pooled = bundles[0].pooled.as_ref().unwrap();
        assert_eq!(pooled.global, vec![0.0, 0.0]);
        assert_eq!(pooled.empty, vec!["local_before", "local_after", "global"]);
        assert_eq!(pooled.event, vec![1.0, 1.0]);
    }

    fn arb_event() -> impl Strategy<Value = TimeInterval> {
        (0.0f64..99.0, 0.01f64..1.0).prop_map(|(s, f)| iv(s, s + f * (100.0 - s)))
    }

    proptest! {
        #[test]
        fn event_and_global_partition_the_grid(event in arb_event()) {
            let m = VideoMeta::new("v", 100.0).unwrap();
            let own = segment_range(&event, &m);
            let mask = global_context(&event, &m);
            for (i, &g) in mask.iter().enumerate() {
                prop_assert!(g != own.contains(&i));
            }
        }

        #[test]
        fn bi_is_uni_plus_future(n in 1usize..8, target_seed in 0usize..100) {
            let events: Vec<_> = (0..n).map(|i| iv(i as f64 * 2.0, i as f64 * 2.0 + 1.5)).collect();
            let target = target_seed % n;
            let uni = event_neighbors(&events, target, Direction::Uni);
            let bi = event_neighbors(&events, target, Direction::Bi);
            let future: Vec<usize> = (target + 1..n).collect();
            let mut joined = uni.clone();
            joined.extend(&future);
            prop_assert_eq!(bi, joined);
        }

        #[test]
        fn mean_pool_is_permutation_invariant_and_bounded(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4),
            picks in prop::collection::vec(0usize..4, 1..6),
        ) {
            let m = VideoMeta::with_rate("v", 16.0, 16.0, 64).unwrap();
            let g = SegmentGrid::with_features(m, FeatureMatrix::from_rows(rows.clone()).unwrap(), "t").unwrap();
            let a = pool_features(&g, &picks, PoolMode::Mean).unwrap();
            let mut rev = picks.clone();
            rev.reverse();
            let b = pool_features(&g, &rev, PoolMode::Mean).unwrap();
            for d in 0..3 {
                prop_assert!((a[d] - b[d]).abs() < 1e-12);
                let lo = picks.iter().map(|&i| rows[i][d]).fold(f64::INFINITY, f64::min);
                let hi = picks.iter().map(|&i| rows[i][d]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a[d] >= lo - 1e-12 && a[d] <= hi + 1e-12);
            }
        }
    }
}
