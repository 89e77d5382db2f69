//! Statistical and brute-force oracles for the evaluator and the generator.

use std::collections::BTreeSet;

use cwh::data::{ingest_content, ingest_interactions, IngestOptions};
use cwh::encoders::AnalyzerConfig;
use cwh::eval::{self, EvalConfig, Metric, Ranker, SetLabel};
use cwh::optim::AdamConfig;
use cwh::split::build_fold;
use cwh::synth::{generate, SynthConfig};
use cwh::trainer::{train, TrainConfig};
use cwh::{Dataset, ItemId, Model, ModelKind, SplitBundle};

fn synth(seed: u64, users: usize, items: usize, beta: f64) -> Dataset {
    generate(&SynthConfig {
        users,
        items,
        tags: 20,
        beta,
        interactions_per_user: 10,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset()
    .unwrap()
}

fn small_config(kind: ModelKind, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        kind,
        dim: 8,
        hidden: 8,
        max_epochs: epochs,
        patience: epochs,
        analyzers: AnalyzerConfig::tags_only(8),
        adam: AdamConfig {
            learning_rate: 0.005,
            ..AdamConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

fn value(results: &[eval::EvalResult], set: SetLabel, metric: Metric) -> f64 {
    results
        .iter()
        .find(|r| r.set == set && r.metric == metric && r.k == 20)
        .unwrap()
        .value
}

/// A model whose every parameter is zero scores all items identically.
fn constant_model(dataset: &Dataset, split: &SplitBundle) -> Model<f64> {
    let mut cfg = small_config(ModelKind::Cwh, 1, 0);
    cfg.adam.learning_rate = 0.0;
    let (model, _) = train::<f64>(&cfg, dataset, split).unwrap();
    Model {
        kind: model.kind,
        featurizer: model.featurizer.clone(),
        params: model.params.zeros_like(),
    }
}

#[test]
fn constant_scores_hit_at_the_uniform_rate() {
    let (mut observed, mut expected) = (0.0, 0.0);
    for seed in 0..20 {
        let dataset = synth(seed, 300, 100, 0.9);
        let split = build_fold(&dataset.log, 8, seed, 0, 1).unwrap();
        let model = constant_model(&dataset, &split);
        let features = model.featurizer.featurize_all(&dataset.content).unwrap();
        let ranker = Ranker::new(&model, &features, &split.cold_items(), &split.train).unwrap();
        let ranks = ranker.rank_pairs(&split.test_warm).unwrap();
        observed += eval::hit_rate_at_k(&ranks, 20).unwrap();
        let per_pair: f64 = split
            .test_warm
            .iter()
            .map(|&(u, _)| {
                let n = ranker.candidates(u).len() as f64;
                n.min(20.0) / n
            })
            .sum();
        expected += per_pair / split.test_warm.len() as f64;
    }
    let ratio = observed / expected;
    assert!((0.9..=1.1).contains(&ratio), "observed {observed} expected {expected}");
}

#[test]
fn content_without_signal_leaves_content_model_at_random() {
    let (mut observed, mut expected) = (0.0, 0.0);
    for seed in 0..20 {
        let dataset = synth(seed, 1000, 100, 0.0);
        let split = build_fold(&dataset.log, 8, seed, 0, 1).unwrap();
        let (model, _) = train::<f32>(&small_config(ModelKind::CbOnly, 2, seed), &dataset, &split).unwrap();
        let features = model.featurizer.featurize_all(&dataset.content).unwrap();
        let results = eval::evaluate_split(&model, &features, &split, &EvalConfig::default()).unwrap();
        observed += value(&results, SetLabel::Cold, Metric::Mrr);

        // uniform rank over n candidates: E[MRR@20] = H(min(n, 20)) / n
        let ranker = Ranker::new(&model, &features, &split.cold_items(), &split.train).unwrap();
        let per_pair: f64 = split
            .test_cold
            .iter()
            .map(|&(u, _)| {
                let n = ranker.candidates(u).len();
                (1..=n.min(20)).map(|r| 1.0 / r as f64).sum::<f64>() / n as f64
            })
            .sum();
        expected += per_pair / split.test_cold.len() as f64;
    }
    let ratio = observed / expected;
    assert!((0.8..=1.2).contains(&ratio), "observed {observed} expected {expected}");
}

#[test]
fn regime_matches_filter_then_sort() {
    let dataset = synth(7, 200, 80, 0.9);
    let split = build_fold(&dataset.log, 8, 7, 0, 1).unwrap();
    let (model, _) = train::<f64>(&small_config(ModelKind::Cwh, 2, 7), &dataset, &split).unwrap();
    let features = model.featurizer.featurize_all(&dataset.content).unwrap();
    let rows = eval::popularity_regime_eval(&model, &features, &split, &[0, 40, 80], 20).unwrap();

    let counts = split.train.item_counts();
    let mut by_pop: Vec<usize> = (0..counts.len()).collect();
    by_pop.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let ranker = Ranker::new(&model, &features, &split.cold_items(), &split.train).unwrap();
    let train_items = split.train.user_items();
    let oracle = |r: usize| -> Option<f64> {
        let head: BTreeSet<usize> = by_pop[..r].iter().copied().collect();
        let kept: Vec<_> = split.test_warm.iter().filter(|p| !head.contains(&p.1.index())).collect();
        if kept.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for &&(u, target) in &kept {
            let scores = ranker.scores(u);
            let mut list: Vec<(f64, usize)> = scores
                .iter()
                .enumerate()
                .filter(|(j, s)| s.is_some() && !train_items[u.index()].contains(&ItemId(*j as u32)))
                .map(|(j, s)| (s.unwrap(), j))
                .collect();
            list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let rank = 1 + list.iter().position(|&(_, j)| j == target.index()).unwrap();
            if rank <= 20 {
                sum += 1.0 / rank as f64;
            }
        }
        Some(sum / kept.len() as f64)
    };
    let warm = eval::evaluate_split(&model, &features, &split, &EvalConfig::default()).unwrap();
    assert_eq!(rows[0].value, value(&warm, SetLabel::Warm, Metric::Mrr));
    // r = 80 removes the whole catalog
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let want = oracle(row.r.unwrap()).unwrap();
        assert!((row.value - want).abs() < 1e-12, "r={:?}: {} vs {want}", row.r, row.value);
    }
    assert_eq!(oracle(80), None);
}

#[test]
fn cold_results_ignore_cold_item_rows() {
    let dataset = synth(2, 200, 80, 0.9);
    let split = build_fold(&dataset.log, 8, 2, 0, 1).unwrap();
    let (model, _) = train::<f64>(&small_config(ModelKind::Cwh, 2, 2), &dataset, &split).unwrap();
    let features = model.featurizer.featurize_all(&dataset.content).unwrap();
    let before = eval::evaluate_split(&model, &features, &split, &EvalConfig::default()).unwrap();
    let mut changed = model.clone();
    for item in split.cold_items() {
        changed.params.items.row_mut(item.index()).fill(1e3);
    }
    let after = eval::evaluate_split(&changed, &features, &split, &EvalConfig::default()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn unified_sits_between_warm_and_cold() {
    let dataset = synth(4, 300, 100, 0.9);
    let split = build_fold(&dataset.log, 8, 4, 0, 1).unwrap();
    let (model, _) = train::<f32>(&small_config(ModelKind::Cwh, 2, 4), &dataset, &split).unwrap();
    let features = model.featurizer.featurize_all(&dataset.content).unwrap();
    let ranker = Ranker::new(&model, &features, &split.cold_items(), &split.train).unwrap();
    let config = EvalConfig::default();
    let ranks = eval::rank_sets(&ranker, true, &split.test_warm, &split.test_cold, &config).unwrap();
    let (wi, ci) = eval::unified_selection(ranks.warm.len(), ranks.cold.len(), 0.9, config.seed);
    let w: Vec<usize> = wi.iter().map(|&k| ranks.warm[k]).collect();
    let c: Vec<usize> = ci.iter().map(|&k| ranks.cold[k]).collect();
    let (hw, hc) = (eval::hit_rate_at_k(&w, 20).unwrap(), eval::hit_rate_at_k(&c, 20).unwrap());
    let hu = eval::hit_rate_at_k(&ranks.unified, 20).unwrap();
    let share = w.len() as f64 / (w.len() + c.len()) as f64;
    assert!((hu - (share * hw + (1.0 - share) * hc)).abs() < 1e-12);
    assert!(hu >= hw.min(hc) && hu <= hw.max(hc));
}

#[test]
fn popularity_skew_concentrates_interactions() {
    for seed in 0..5 {
        let data = generate(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut counts = data.log.item_counts();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let decile = counts.len() / 10;
        let top: u64 = counts[..decile].iter().sum();
        let bottom: u64 = counts[counts.len() - decile..].iter().sum();
        assert!(top > bottom, "seed {seed}: top {top} bottom {bottom}");
    }
}

#[test]
fn synth_files_reingest_to_the_same_dataset() {
    let data = generate(&SynthConfig {
        users: 50,
        items: 30,
        interactions_per_user: 6,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let log = ingest_interactions(dir.path().join("interactions.csv"), &IngestOptions::default()).unwrap();
    let catalog = ingest_content(dir.path().join("content.csv")).unwrap();
    let direct = data.dataset().unwrap();
    let read = Dataset::assemble(log, &catalog).unwrap();
    assert_eq!(read.log, direct.log);
    assert_eq!(read.content, direct.content);
}
