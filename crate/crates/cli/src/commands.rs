use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dvc_core::concepts::{
    build_vocabulary, load_model, predict_proposal, save_model, train, MimlExample, ModelLayout, TrainConfig,
};
use dvc_core::context::{build_bundles, ContextConfig, Direction, EventContextBundle, PoolMode};
use dvc_core::fusion::{
    fuse_select, fuse_video, CandidatePool, FusionConfig, FusionOutcome, HeuristicPointwiseScorer,
    HeuristicSequentialScorer, TableSequentialScorer,
};
use dvc_core::interval::{precision_recall, VideoProposals};
use dvc_core::io::{
    load_feature_dir, load_ground_truth, load_ground_truth_sets, load_json, load_meta_table, load_predictions,
    metas_from_table, save_json, save_predictions, FeatureFile, PredictionFile, UnknownVideoPolicy,
    PREDICTIONS_VERSION,
};
use dvc_core::metrics::{dense_eval, diversity_report, tokenize, DenseVideo, VideoCaptions};
use dvc_core::model::checked_interval;
use dvc_core::rerank::{augment, caption_rerank, proposal_rerank, AugmentedPair, CaptionRerankParams, RerankWeights};
use dvc_core::synthetic::{generate, write_synthetic, SyntheticConfig};
use dvc_core::{Corpus, Error, PredictionEntry, SegmentGrid, TimeInterval, VideoMeta};

use crate::{
    AugmentArgs, Cli, Command, ConceptsCommand, ConceptsPredictArgs, ConceptsTrainArgs, ContextsArgs, DirectionArg,
    EvalCaptionsArgs, EvalDiversityArgs, EvalProposalsArgs, FuseArgs, GenSyntheticArgs, PoolArg,
    RerankCaptionsArgs, RerankProposalsArgs,
};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(invalid("tiou thresholds must be in [0, 1]"));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.jobs < 1 {
        return Err(invalid("jobs must be ≥ 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("configuring worker threads")?;
    let seed = cli.seed;
    match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::EvalProposals(a) => eval_proposals(a),
        Command::EvalCaptions(a) => eval_captions(a),
        Command::EvalDiversity(a) => eval_diversity(a),
        Command::RerankProposals(a) => rerank_proposals(a),
        Command::RerankCaptions(a) => rerank_captions(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Concepts { action } => match action {
            ConceptsCommand::Train(a) => concepts_train(a, seed),
            ConceptsCommand::Predict(a) => concepts_predict(a),
        },
        Command::Contexts(a) => contexts(a),
        Command::GenSynthetic(a) => gen_synthetic(a, seed),
    }
}

fn load_metas(path: &Path) -> Result<BTreeMap<String, VideoMeta>> {
    Ok(metas_from_table(&load_meta_table(path)?)?)
}

fn meta_of<'a>(metas: &'a BTreeMap<String, VideoMeta>, video_id: &str) -> Result<&'a VideoMeta> {
    metas
        .get(video_id)
        .ok_or_else(|| Error::UnknownVideo(video_id.to_string()).into())
}

fn grid_for(meta: &VideoMeta, features: &BTreeMap<String, FeatureFile>) -> Result<SegmentGrid> {
    let f = features
        .get(&meta.video_id)
        .ok_or_else(|| Error::MissingFeatures(meta.video_id.clone()))?;
    Ok(SegmentGrid::with_features(meta.clone(), f.matrix.clone(), f.feature_tag.clone())?)
}

fn print_written(what: &str, path: &Path) {
    println!("wrote {what} to {}", path.display());
}

// ---------------------------------------------------------------------------
// fuse

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum ScoreSpec {
    /// Explicit candidates, `f_s` values and per-step `f_e` tables.
    Tables { videos: BTreeMap<String, TableVideo> },
    /// Oracle scorers driven by planted attractor intervals.
    Heuristic {
        attractors: BTreeMap<String, Vec<TimeInterval>>,
    },
}

#[derive(Debug, Deserialize)]
struct TableVideo {
    candidates: Vec<[f64; 2]>,
    scores: Vec<f64>,
    steps: Vec<Vec<f64>>,
}

fn fuse(a: FuseArgs) -> Result<()> {
    let cfg = FusionConfig {
        k: a.k,
        max_steps: a.max_steps,
        candidate_cap: a.cap,
    };
    cfg.validate()?;
    let metas = load_metas(&a.meta)?;
    let spec: ScoreSpec = load_json(&a.scores)?;

    let outcomes: Vec<(String, FusionOutcome)> = match &spec {
        ScoreSpec::Tables { videos } => videos
            .par_iter()
            .map(|(id, t)| {
                let meta = meta_of(&metas, id)?;
                let candidates = t
                    .candidates
                    .iter()
                    .enumerate()
                    .map(|(i, raw)| checked_interval(id, i, *raw, Some(meta.duration)))
                    .collect::<dvc_core::Result<Vec<_>>>()?;
                let pool = CandidatePool::new(candidates, t.scores.clone(), cfg.candidate_cap)?;
                let scorer = TableSequentialScorer { steps: t.steps.clone() };
                let outcome = fuse_select(&pool, &scorer, &cfg).with_context(|| format!("video {id}"))?;
                Ok((id.clone(), outcome))
            })
            .collect::<Result<_>>()?,
        ScoreSpec::Heuristic { attractors } => metas
            .par_iter()
            .map(|(id, meta)| {
                let planted = attractors.get(id).cloned().unwrap_or_default();
                let grid = SegmentGrid::empty(meta.clone());
                let (_, outcome) = fuse_video(
                    &grid,
                    &HeuristicPointwiseScorer::new(planted.clone()),
                    &HeuristicSequentialScorer::new(planted),
                    &cfg,
                )?;
                Ok((id.clone(), outcome))
            })
            .collect::<Result<_>>()?,
    };

    let mut results = BTreeMap::new();
    let mut limited = 0usize;
    for (id, outcome) in outcomes {
        limited += usize::from(outcome.hit_step_limit);
        let entries = outcome
            .selected
            .iter()
            .map(|s| PredictionEntry::new(s.interval).with_proposal_score(s.fused_score))
            .collect();
        results.insert(id, entries);
    }
    if limited > 0 {
        log::warn!("{limited} video(s) stopped at max_steps before EOS");
    }
    let file = PredictionFile {
        version: PREDICTIONS_VERSION.into(),
        results,
    };
    save_predictions(&file, &a.out)?;
    println!(
        "videos: {}  proposals: {}  proposals/video: {:.2}",
        file.results.len(),
        file.entry_count(),
        file.entry_count() as f64 / file.results.len().max(1) as f64
    );
    print_written("predictions", &a.out);
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation

fn corpus_with_predictions(gt: &[impl AsRef<Path>], pred: &Path) -> Result<Corpus> {
    let mut corpus = load_ground_truth_sets(gt, None)?;
    let predictions = load_predictions(pred)?;
    let skipped = corpus.attach_predictions(&predictions, UnknownVideoPolicy::Skip)?;
    if !skipped.is_empty() {
        log::warn!("{} predicted video(s) not in the groundtruth were skipped", skipped.len());
    }
    Ok(corpus)
}

fn eval_proposals(a: EvalProposalsArgs) -> Result<()> {
    check_thresholds(&a.thresholds)?;
    let corpus = corpus_with_predictions(&a.gt, &a.pred)?;
    let intervals: Vec<(&String, Vec<TimeInterval>, Vec<TimeInterval>)> = corpus
        .iter()
        .map(|(id, r)| (id, r.prediction_intervals(), r.groundtruth_union()))
        .collect();
    let videos: Vec<VideoProposals> = intervals
        .iter()
        .map(|(id, p, g)| VideoProposals {
            video_id: id,
            predictions: p,
            groundtruth: g,
        })
        .collect();
    let table = precision_recall(&videos, &a.thresholds);
    print!("{}", table.render());
    for (i, t) in table.thresholds.iter().enumerate() {
        println!("tIoU {t:.2}: P={:.4} R={:.4}", table.precision[i], table.recall[i]);
    }
    if let Some(out) = &a.out {
        save_json(&table, out)?;
        print_written("report", out);
    }
    Ok(())
}

fn eval_captions(a: EvalCaptionsArgs) -> Result<()> {
    check_thresholds(&a.thresholds)?;
    let corpus = corpus_with_predictions(&a.gt, &a.pred)?;
    let videos: Vec<DenseVideo> = corpus
        .iter()
        .map(|(id, r)| DenseVideo {
            video_id: id,
            predictions: &r.predictions,
            annotations: &r.annotations,
        })
        .collect();
    let report = dense_eval(&videos, &a.thresholds, &[])?;
    print!("{}", report.render());
    if let Some(out) = &a.out {
        save_json(&report, out)?;
        print_written("report", out);
    }
    Ok(())
}

fn eval_diversity(a: EvalDiversityArgs) -> Result<()> {
    if a.n < 1 {
        return Err(invalid("n must be ≥ 1"));
    }
    let files = a
        .pred
        .iter()
        .map(load_predictions)
        .collect::<dvc_core::Result<Vec<_>>>()?;
    let mut ids: Vec<&String> = files.iter().flat_map(|f| f.results.keys()).collect();
    ids.sort();
    ids.dedup();
    let mut missing = 0usize;
    let videos: Vec<VideoCaptions> = ids
        .into_iter()
        .map(|id| VideoCaptions {
            video_id: id.clone(),
            sets: files
                .iter()
                .map(|f| {
                    f.results
                        .get(id)
                        .map(|entries| {
                            entries
                                .iter()
                                .filter_map(|e| {
                                    missing += usize::from(e.sentence.is_none());
                                    e.sentence.clone()
                                })
                                .collect()
                        })
                        .unwrap_or_default()
                })
                .collect(),
        })
        .collect();
    if missing > 0 {
        log::warn!("{missing} prediction(s) without a sentence were ignored");
    }
    let report = diversity_report(&videos, a.n);
    print!("{}", report.render());
    if let Some(out) = &a.out {
        save_json(&report, out)?;
        print_written("report", out);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// re-ranking and augmentation

fn rerank_proposals(a: RerankProposalsArgs) -> Result<()> {
    let weights = RerankWeights {
        quality: a.w_quality,
        describability: a.w_describability,
        position: a.w_position,
        length: a.w_length,
        top_n: a.top,
    };
    weights.validate()?;
    let metas = load_metas(&a.meta)?;
    let preds = load_predictions(&a.pred)?;
    let ranked: Vec<(String, Vec<PredictionEntry>, bool)> = preds
        .results
        .par_iter()
        .map(|(id, entries)| {
            let outcome = proposal_rerank(entries, meta_of(&metas, id)?, &weights)?;
            if !outcome.missing_describability.is_empty() {
                log::info!(
                    "{id}: {} candidate(s) without caption_logprob",
                    outcome.missing_describability.len()
                );
            }
            Ok((
                id.clone(),
                outcome.ranked.into_iter().map(|r| r.entry).collect(),
                outcome.short,
            ))
        })
        .collect::<Result<_>>()?;
    let short = ranked.iter().filter(|r| r.2).count();
    let file = PredictionFile {
        version: PREDICTIONS_VERSION.into(),
        results: ranked.into_iter().map(|(id, e, _)| (id, e)).collect(),
    };
    save_predictions(&file, &a.out)?;
    println!(
        "videos: {}  kept: {}  videos with fewer than {} candidates: {short}",
        file.results.len(),
        file.entry_count(),
        a.top
    );
    print_written("predictions", &a.out);
    Ok(())
}

#[derive(Debug, Deserialize)]
struct HypothesisFile {
    results: BTreeMap<String, Vec<ProposalHypotheses>>,
}

#[derive(Debug, Deserialize)]
struct ProposalHypotheses {
    timestamp: [f64; 2],
    hypotheses: Vec<String>,
}

fn rerank_captions(a: RerankCaptionsArgs) -> Result<()> {
    let params = CaptionRerankParams {
        alpha: a.alpha,
        beta: a.beta,
        top_concepts: a.top_concepts,
    };
    if !(params.alpha.is_finite() && params.beta.is_finite()) {
        return Err(invalid("alpha and beta must be finite"));
    }
    if a.segments < 1 {
        return Err(invalid("segments must be ≥ 1"));
    }
    let model = load_model(&a.model)?;
    let features = load_feature_dir(&a.features)?;
    let metas = load_metas(&a.meta)?;
    let hyps: HypothesisFile = load_json(&a.hyps)?;
    let results: BTreeMap<String, Vec<PredictionEntry>> = hyps
        .results
        .par_iter()
        .map(|(id, proposals)| {
            let meta = meta_of(&metas, id)?;
            let grid = grid_for(meta, &features)?;
            let entries = proposals
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let interval = checked_interval(id, i, p.timestamp, Some(meta.duration))?;
                    let probs = predict_proposal(&model, &grid, &interval, a.segments)?;
                    let (best, _) = caption_rerank(&p.hypotheses, &probs, model.vocabulary(), &params)?;
                    Ok(PredictionEntry::new(interval).with_sentence(p.hypotheses[best].clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id.clone(), entries))
        })
        .collect::<Result<_>>()?;
    let file = PredictionFile {
        version: PREDICTIONS_VERSION.into(),
        results,
    };
    save_predictions(&file, &a.out)?;
    println!("captions chosen: {}", file.entry_count());
    print_written("predictions", &a.out);
    Ok(())
}

fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let corpus = corpus_with_predictions(&[&a.gt], &a.pred)?;
    let pairs: BTreeMap<String, Vec<AugmentedPair>> = corpus
        .iter()
        .filter(|(_, r)| !r.predictions.is_empty())
        .map(|(id, r)| Ok((id.clone(), augment(&r.prediction_intervals(), &r.annotations[0])?)))
        .collect::<Result<_>>()?;
    let kept: usize = pairs.values().map(Vec::len).sum();
    let offered: usize = corpus.iter().map(|(_, r)| r.predictions.len()).sum();
    save_json(&pairs, &a.out)?;
    println!("kept {kept} of {offered} predicted proposals");
    print_written("training pairs", &a.out);
    Ok(())
}

// ---------------------------------------------------------------------------
// concepts

fn concepts_train(a: ConceptsTrainArgs, seed: u64) -> Result<()> {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        k_segments: a.segments,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let corpus = load_ground_truth(&a.gt, None)?;
    let features = load_feature_dir(&a.features)?;
    let lexicon: HashSet<String> = load_json::<Vec<String>>(&a.lexicon)?.into_iter().collect();

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut tokenized = Vec::new();
    for (_, record) in corpus.iter() {
        for (interval, sentence) in record.annotations[0].iter() {
            let tokens = tokenize(sentence);
            for t in &tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
            tokenized.push((record.meta.video_id.clone(), *interval, tokens));
        }
    }
    let vocabulary = build_vocabulary(&counts, &lexicon, a.min_count)?;
    let grids: BTreeMap<&String, SegmentGrid> = corpus
        .iter()
        .map(|(id, r)| Ok((id, grid_for(&r.meta, &features)?)))
        .collect::<Result<_>>()?;
    let examples: Vec<MimlExample> = tokenized
        .iter()
        .map(|(id, interval, tokens)| MimlExample {
            proposal: *interval,
            grid: &grids[id],
            labels: vocabulary.labels_for(tokens),
        })
        .collect();
    let outcome = train(&examples, vocabulary, &cfg)?;
    let layout = if a.text { ModelLayout::Text } else { ModelLayout::Binary };
    save_model(&outcome.model, &a.out, layout)?;
    println!(
        "concepts: {}  examples: {}  final loss: {:.6}",
        outcome.model.concept_count(),
        examples.len(),
        outcome.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    print_written("model", &a.out);
    if let Some(path) = &a.loss_trace {
        save_json(&outcome.loss_trace, path)?;
        print_written("loss trace", path);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProposalConcepts {
    timestamp: TimeInterval,
    concepts: Vec<(String, f64)>,
}

fn concepts_predict(a: ConceptsPredictArgs) -> Result<()> {
    if a.segments < 1 {
        return Err(invalid("segments must be ≥ 1"));
    }
    if a.top < 1 {
        return Err(invalid("top must be ≥ 1"));
    }
    let model = load_model(&a.model)?;
    let features = load_feature_dir(&a.features)?;
    let metas = load_metas(&a.meta)?;
    let preds = load_predictions(&a.pred)?;
    let results: BTreeMap<String, Vec<ProposalConcepts>> = preds
        .results
        .par_iter()
        .map(|(id, entries)| {
            let grid = grid_for(meta_of(&metas, id)?, &features)?;
            let out = entries
                .iter()
                .map(|e| {
                    let probs = predict_proposal(&model, &grid, &e.interval, a.segments)?;
                    let mut order: Vec<usize> = (0..probs.len()).collect();
                    order.sort_by(|&x, &y| probs[y].total_cmp(&probs[x]).then(x.cmp(&y)));
                    Ok(ProposalConcepts {
                        timestamp: e.interval,
                        concepts: order
                            .into_iter()
                            .take(a.top)
                            .map(|i| (model.vocabulary().concept(i).to_string(), probs[i]))
                            .collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id.clone(), out))
        })
        .collect::<Result<_>>()?;
    save_json(&serde_json::json!({ "results": results }), &a.out)?;
    println!("proposals: {}", results.values().map(Vec::len).sum::<usize>());
    print_written("concept predictions", &a.out);
    Ok(())
}

// ---------------------------------------------------------------------------
// contexts and synthetic data

fn contexts(a: ContextsArgs) -> Result<()> {
    if !(a.ratio.is_finite() && a.ratio >= 0.0) {
        return Err(invalid("ratio must be a non-negative number"));
    }
    let cfg = ContextConfig {
        window_ratio: a.ratio,
        direction: match a.direction {
            DirectionArg::Uni => Direction::Uni,
            DirectionArg::Bi => Direction::Bi,
        },
        pool: match a.pool {
            PoolArg::Mean => PoolMode::Mean,
            PoolArg::Max => PoolMode::Max,
        },
    };
    let meta_table = a.meta.as_deref().map(load_meta_table).transpose()?;

    // (meta, events, captions when every event has one)
    let videos: Vec<(VideoMeta, Vec<TimeInterval>, Option<Vec<String>>)> = match (&a.gt, &a.pred) {
        (Some(gt), _) => load_ground_truth(gt, meta_table.as_ref())?
            .videos
            .into_values()
            .map(|r| {
                let set = &r.annotations[0];
                (r.meta.clone(), set.intervals().to_vec(), Some(set.sentences().to_vec()))
            })
            .collect(),
        (None, Some(pred)) => {
            let table = meta_table.ok_or_else(|| invalid("meta is required with --pred"))?;
            let metas = metas_from_table(&table)?;
            let preds = load_predictions(pred)?;
            preds
                .results
                .into_iter()
                .map(|(id, entries)| {
                    let meta = meta_of(&metas, &id)?.clone();
                    let captions: Option<Vec<String>> = entries.iter().map(|e| e.sentence.clone()).collect();
                    Ok((meta, entries.iter().map(|e| e.interval).collect(), captions))
                })
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(invalid("one of --gt or --pred is required")),
    };
    let features = a.features.as_deref().map(load_feature_dir).transpose()?;

    let bundles: BTreeMap<String, Vec<EventContextBundle>> = videos
        .par_iter()
        .map(|(meta, events, captions)| {
            let grid = match &features {
                Some(f) => grid_for(meta, f)?,
                None => SegmentGrid::empty(meta.clone()),
            };
            Ok((meta.video_id.clone(), build_bundles(&grid, events, captions.as_deref(), &cfg)?))
        })
        .collect::<Result<_>>()?;
    save_json(&bundles, &a.out)?;
    println!(
        "videos: {}  events: {}",
        bundles.len(),
        bundles.values().map(Vec::len).sum::<usize>()
    );
    print_written("context bundles", &a.out);
    Ok(())
}

fn gen_synthetic(a: GenSyntheticArgs, seed: u64) -> Result<()> {
    let cfg = SyntheticConfig {
        n_videos: a.videos,
        events_min: a.events_min,
        events_max: a.events_max,
        seed,
        second_set: !a.single_set,
        feature_dim: a.feature_dim,
        ..Default::default()
    };
    let data = generate(&cfg)?;
    write_synthetic(&data, &a.out)?;
    let events: usize = data.corpus.iter().map(|(_, r)| r.annotations[0].len()).sum();
    println!(
        "videos: {}  events: {}  events/video: {:.2}",
        data.corpus.len(),
        events,
        events as f64 / data.corpus.len() as f64
    );
    print_written("synthetic corpus", &a.out);
    Ok(())
}
