//! Ranking metrics over warm, cold and unified test sets.
//!
//! Every target is ranked against the full catalog minus the user's train
//! items. Warm items are scored through their CF vector, cold items through
//! the content compensation. Score ties go to the smaller item id.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ItemId, PopularityMode, PopularityTable, UserId};
use crate::encoders::ContentFeatures;
use crate::error::{CwhError, Result};
use crate::network::{Model, ModelParams};
use crate::scalar::Scalar;
use crate::split::{Pair, SplitBundle};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SetLabel {
    Warm,
    Cold,
    Unified,
    /// warm test pairs without the `r` most popular items
    Tail,
}

impl SetLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SetLabel::Warm => "warm",
            SetLabel::Cold => "cold",
            SetLabel::Unified => "unified",
            SetLabel::Tail => "T_r",
        }
    }
}

impl std::str::FromStr for SetLabel {
    type Err = CwhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warm" => Ok(SetLabel::Warm),
            "cold" => Ok(SetLabel::Cold),
            "unified" => Ok(SetLabel::Unified),
            "T_r" => Ok(SetLabel::Tail),
            other => Err(CwhError::Data(format!("unknown set label {other:?}"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    HitRate,
    Mrr,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::HitRate => "HR",
            Metric::Mrr => "MRR",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = CwhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HR" => Ok(Metric::HitRate),
            "MRR" => Ok(Metric::Mrr),
            other => Err(CwhError::Data(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub set: SetLabel,
    pub metric: Metric,
    pub k: usize,
    pub r: Option<usize>,
    pub value: f64,
    pub pairs: usize,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}@{}", self.set.as_str(), self.metric.as_str(), self.k)?;
        if let Some(r) = self.r {
            write!(f, " r={r}")?;
        }
        write!(f, " = {:.5} ({} pairs)", self.value, self.pairs)
    }
}

/// Fraction of ranks within the top `k`.
pub fn hit_rate_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean of `1/rank` for ranks within the top `k`, 0 otherwise.
pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    let sum = ranks.iter().filter(|&&r| r <= k).fold(0.0, |acc, &r| acc + 1.0 / r as f64);
    Ok(sum / ranks.len() as f64)
}

fn check_ranks(ranks: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(CwhError::Precondition("K must be at least 1".into()));
    }
    if ranks.is_empty() {
        return Err(CwhError::Precondition("no ranks to average".into()));
    }
    if ranks.contains(&0) {
        return Err(CwhError::Precondition("ranks are 1-based".into()));
    }
    Ok(())
}

/// 1-based rank of `target` among `candidates` by descending score, ties to
/// the smaller id.
pub fn rank_target<T: Scalar>(
    target: ItemId,
    candidates: &[ItemId],
    score: impl Fn(ItemId) -> T,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(CwhError::Precondition("empty candidate set".into()));
    }
    if !candidates.contains(&target) {
        return Err(CwhError::Precondition(format!(
            "target {} is not a candidate",
            target.0
        )));
    }
    let t = score(target);
    Ok(1 + candidates
        .iter()
        .filter(|&&c| c != target && beats(score(c), c, t, target))
        .count())
}

#[inline]
fn beats<T: Scalar>(s: T, item: ItemId, target_score: T, target: ItemId) -> bool {
    s > target_score || (s == target_score && item < target)
}

/// Precomputed item-side scorer halves for one model on one catalog.
pub struct Ranker<'a, T> {
    params: &'a ModelParams<T>,
    /// per item; `None` for items excluded from the candidate set
    item_half: Vec<Option<Array1<T>>>,
    train_items: Vec<Vec<ItemId>>,
}

impl<'a, T: Scalar> Ranker<'a, T> {
    /// `cold` lists items served through the cold path. A model without cold
    /// support drops them from the candidate set.
    pub fn new(
        model: &'a Model<T>,
        features: &[ContentFeatures],
        cold: &BTreeSet<ItemId>,
        train: &crate::data::InteractionLog,
    ) -> Result<Self> {
        let params = &model.params;
        if features.len() != params.items.nrows() {
            return Err(CwhError::Data(format!(
                "{} content rows for {} items",
                features.len(),
                params.items.nrows()
            )));
        }
        let supports_cold = model.kind.supports_cold();
        let item_half = features
            .par_iter()
            .enumerate()
            .map(|(j, feat)| {
                let item = ItemId(j as u32);
                let is_cold = cold.contains(&item);
                if is_cold && !supports_cold {
                    return None;
                }
                let f = params.multiview_input(feat);
                let phi = params.multiview.forward(f.view()).out;
                let v_eff = if is_cold {
                    params.cold_vector(f.view())
                } else {
                    params.items.row(j).to_owned()
                };
                Some(params.scorer.item_side(v_eff.view(), phi.view()).half)
            })
            .collect();
        Ok(Ranker {
            params,
            item_half,
            train_items: train.user_items(),
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_half.len()
    }

    /// Scores of every item for `user`; excluded items get `None`.
    pub fn scores(&self, user: UserId) -> Vec<Option<T>> {
        let uh = self.params.scorer.user_side(self.params.users.row(user.index()));
        self.item_half
            .iter()
            .map(|h| h.as_ref().map(|h| self.params.scorer.combine(uh.view(), h.view())))
            .collect()
    }

    /// Candidate set of `user`: every servable item not in their train set.
    pub fn candidates(&self, user: UserId) -> Vec<ItemId> {
        let train = &self.train_items[user.index()];
        (0..self.n_items() as u32)
            .map(ItemId)
            .filter(|i| self.item_half[i.index()].is_some() && train.binary_search(i).is_err())
            .collect()
    }

    /// Rank of every pair's item; pairs whose item is not a candidate (e.g. a
    /// cold item for a CF-only model) are an error.
    pub fn rank_pairs(&self, pairs: &[Pair]) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&k| pairs[k]);
        let mut groups: Vec<(UserId, Vec<usize>)> = Vec::new();
        for k in order {
            let u = pairs[k].0;
            match groups.last_mut() {
                Some((gu, ks)) if *gu == u => ks.push(k),
                _ => groups.push((u, vec![k])),
            }
        }
        let ranked: Vec<Result<Vec<(usize, usize)>>> = groups
            .par_iter()
            .map(|(u, ks)| {
                let scores = self.scores(*u);
                let train = &self.train_items[u.index()];
                ks.iter()
                    .map(|&k| {
                        let target = pairs[k].1;
                        let t = scores[target.index()].ok_or_else(|| {
                            CwhError::Unsupported(format!("item {} cannot be scored by this model", target.0))
                        })?;
                        if train.binary_search(&target).is_ok() {
                            return Err(CwhError::Precondition(format!(
                                "target {} is a train item of user {}",
                                target.0, u.0
                            )));
                        }
                        let mut rank = 1;
                        for (j, s) in scores.iter().enumerate() {
                            let item = ItemId(j as u32);
                            if let Some(s) = *s {
                                if item != target && beats(s, item, t, target) && train.binary_search(&item).is_err() {
                                    rank += 1;
                                }
                            }
                        }
                        Ok((k, rank))
                    })
                    .collect()
            })
            .collect();
        let mut ranks = vec![0usize; pairs.len()];
        for group in ranked {
            for (k, r) in group? {
                ranks[k] = r;
            }
        }
        Ok(ranks)
    }
}

/// Picks warm and cold indices so that warm makes up `warm_ratio` of the
/// unified set exactly (as far as integer counts allow).
pub fn unified_selection(n_warm: usize, n_cold: usize, warm_ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n_cold == 0 || warm_ratio >= 1.0 {
        return ((0..n_warm).collect(), Vec::new());
    }
    if n_warm == 0 || warm_ratio <= 0.0 {
        return (Vec::new(), (0..n_cold).collect());
    }
    let cold_per_warm = (1.0 - warm_ratio) / warm_ratio;
    let mut take_cold = ((n_warm as f64 * cold_per_warm) + 1e-9).floor() as usize;
    take_cold = take_cold.min(n_cold);
    let mut take_warm = ((take_cold as f64 / cold_per_warm) + 1e-9).round() as usize;
    take_warm = take_warm.min(n_warm);
    let mut warm: Vec<usize> = (0..n_warm).collect();
    let mut cold: Vec<usize> = (0..n_cold).collect();
    warm.shuffle(&mut rng);
    cold.shuffle(&mut rng);
    warm.truncate(take_warm);
    cold.truncate(take_cold);
    warm.sort_unstable();
    cold.sort_unstable();
    (warm, cold)
}

/// Settings shared by every evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub unified_warm_ratio: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![20],
            unified_warm_ratio: 0.9,
            seed: 0,
        }
    }
}

/// Ranks of the warm, cold and unified sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SetRanks {
    pub warm: Vec<usize>,
    pub cold: Vec<usize>,
    pub unified: Vec<usize>,
}

pub fn rank_sets<T: Scalar>(
    ranker: &Ranker<'_, T>,
    supports_cold: bool,
    warm: &[Pair],
    cold: &[Pair],
    config: &EvalConfig,
) -> Result<SetRanks> {
    let warm_ranks = ranker.rank_pairs(warm)?;
    let cold_ranks = if supports_cold { ranker.rank_pairs(cold)? } else { Vec::new() };
    let (wi, ci) = unified_selection(warm_ranks.len(), cold_ranks.len(), config.unified_warm_ratio, config.seed);
    let unified = wi
        .iter()
        .map(|&k| warm_ranks[k])
        .chain(ci.iter().map(|&k| cold_ranks[k]))
        .collect();
    Ok(SetRanks {
        warm: warm_ranks,
        cold: cold_ranks,
        unified,
    })
}

/// HR@K and MRR@K rows for every non-empty set.
pub fn metrics_for(ranks: &SetRanks, ks: &[usize]) -> Result<Vec<EvalResult>> {
    let mut out = Vec::new();
    for (set, r) in [
        (SetLabel::Warm, &ranks.warm),
        (SetLabel::Cold, &ranks.cold),
        (SetLabel::Unified, &ranks.unified),
    ] {
        if r.is_empty() {
            log::warn!("{} set is empty; its rows are omitted", set.as_str());
            continue;
        }
        for &k in ks {
            out.push(EvalResult {
                set,
                metric: Metric::HitRate,
                k,
                r: None,
                value: hit_rate_at_k(r, k)?,
                pairs: r.len(),
            });
            out.push(EvalResult {
                set,
                metric: Metric::Mrr,
                k,
                r: None,
                value: mrr_at_k(r, k)?,
                pairs: r.len(),
            });
        }
    }
    Ok(out)
}

/// Test-set evaluation of a trained model.
pub fn evaluate_split<T: Scalar>(
    model: &Model<T>,
    features: &[ContentFeatures],
    split: &SplitBundle,
    config: &EvalConfig,
) -> Result<Vec<EvalResult>> {
    let ranker = Ranker::new(model, features, &split.cold_items(), &split.train)?;
    let ranks = rank_sets(&ranker, model.kind.supports_cold(), &split.test_warm, &split.test_cold, config)?;
    metrics_for(&ranks, &config.ks)
}

/// Validation-set evaluation (used for early stopping and gamma selection).
pub fn evaluate_validation<T: Scalar>(
    model: &Model<T>,
    features: &[ContentFeatures],
    split: &SplitBundle,
    config: &EvalConfig,
) -> Result<Vec<EvalResult>> {
    let ranker = Ranker::new(model, features, &split.cold_items(), &split.train)?;
    let ranks = rank_sets(
        &ranker,
        model.kind.supports_cold(),
        &split.validation_warm,
        &split.validation_cold,
        config,
    )?;
    metrics_for(&ranks, &config.ks)
}

/// MRR@k on the warm test pairs whose item is not among the `r` most popular
/// train items, for each `r`. Empty subsets are omitted.
pub fn popularity_regime_eval<T: Scalar>(
    model: &Model<T>,
    features: &[ContentFeatures],
    split: &SplitBundle,
    r_values: &[usize],
    k: usize,
) -> Result<Vec<EvalResult>> {
    let ranker = Ranker::new(model, features, &split.cold_items(), &split.train)?;
    let ranks = ranker.rank_pairs(&split.test_warm)?;
    let popularity = PopularityTable::from_counts(split.train.item_counts(), PopularityMode::MinmaxCount);
    regime_from_ranks(&split.test_warm, &ranks, &popularity, r_values, k)
}

pub fn regime_from_ranks(
    pairs: &[Pair],
    ranks: &[usize],
    popularity: &PopularityTable,
    r_values: &[usize],
    k: usize,
) -> Result<Vec<EvalResult>> {
    let mut out = Vec::new();
    for &r in r_values {
        if r > popularity.len() {
            return Err(CwhError::Precondition(format!(
                "r = {r} exceeds the catalog size {}",
                popularity.len()
            )));
        }
        let head: BTreeSet<ItemId> = popularity.top(r).into_iter().collect();
        let kept: Vec<usize> = pairs
            .iter()
            .zip(ranks)
            .filter(|((_, i), _)| !head.contains(i))
            .map(|(_, &rank)| rank)
            .collect();
        if kept.is_empty() {
            log::warn!("T_r for r = {r} is empty; row omitted");
            continue;
        }
        out.push(EvalResult {
            set: SetLabel::Tail,
            metric: Metric::Mrr,
            k,
            r: Some(r),
            value: mrr_at_k(&kept, k)?,
            pairs: kept.len(),
        });
    }
    Ok(out)
}

pub const RESULTS_HEADER: &str = "set,metric,K,r,value,pairs";

/// Writes `set,metric,K,r,value,pairs` rows.
pub fn write_results<W: Write>(results: &[EvalResult], mut w: W) -> Result<()> {
    let io = |e| CwhError::io("results", e);
    writeln!(w, "{RESULTS_HEADER}").map_err(io)?;
    for r in results {
        let rr = r.r.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.set.as_str(),
            r.metric.as_str(),
            r.k,
            rr,
            r.value,
            r.pairs
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn read_results(text: &str) -> Result<Vec<EvalResult>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let err = |m: String| CwhError::Parse {
            file: "results".into(),
            line: n as u64 + 1,
            message: m,
        };
        if n == 0 {
            if line.trim() != RESULTS_HEADER {
                return Err(err(format!("expected header {RESULTS_HEADER}")));
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(err(format!("expected 6 cells, got {}", cells.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad integer {s:?}")));
        out.push(EvalResult {
            set: cells[0].parse().map_err(|e: CwhError| err(e.to_string()))?,
            metric: cells[1].parse().map_err(|e: CwhError| err(e.to_string()))?,
            k: num(cells[2])?,
            r: if cells[3].is_empty() { None } else { Some(num(cells[3])?) },
            value: cells[4].parse().map_err(|_| err(format!("bad value {:?}", cells[4])))?,
            pairs: num(cells[5])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_rate_examples() {
        assert_eq!(hit_rate_at_k(&[1, 25], 20).unwrap(), 0.5);
        assert_eq!(hit_rate_at_k(&[1, 2, 20], 20).unwrap(), 1.0);
        assert_eq!(hit_rate_at_k(&[3, 7, 21, 40], 20).unwrap(), 0.5);
        assert!(hit_rate_at_k(&[], 20).is_err());
        assert!(hit_rate_at_k(&[1], 0).is_err());
    }

    #[test]
    fn mrr_examples() {
        assert!((mrr_at_k(&[3], 20).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr_at_k(&[21], 20).unwrap(), 0.0);
        assert_eq!(mrr_at_k(&[1, 2, 4], 3).unwrap(), 0.5);
        assert!(mrr_at_k(&[], 5).is_err());
    }

    #[test]
    fn rank_target_ties_and_errors() {
        let cands: Vec<ItemId> = (0..5).map(ItemId).collect();
        let scores = [0.1, 0.9, 0.5, 0.5, 0.2];
        let s = |i: ItemId| scores[i.index()];
        assert_eq!(rank_target(ItemId(1), &cands, s).unwrap(), 1);
        assert_eq!(rank_target(ItemId(2), &cands, s).unwrap(), 2);
        // equal score, larger id ranks after
        assert_eq!(rank_target(ItemId(3), &cands, s).unwrap(), 3);
        assert!(rank_target(ItemId(1), &[], s).is_err());
        assert!(rank_target(ItemId(9), &cands, s).is_err());
    }

    #[test]
    fn unified_selection_hits_ratio() {
        let (w, c) = unified_selection(100, 50, 0.9, 1);
        assert_eq!((w.len(), c.len()), (99, 11));
        let (w, c) = unified_selection(90, 5, 0.9, 1);
        assert_eq!((w.len(), c.len()), (45, 5));
        let (w, c) = unified_selection(90, 0, 0.9, 1);
        assert_eq!((w.len(), c.len()), (90, 0));
        assert_eq!(unified_selection(90, 30, 0.9, 4), unified_selection(90, 30, 0.9, 4));
    }

    #[test]
    fn results_csv_round_trip() {
        let rows = vec![
            EvalResult {
                set: SetLabel::Warm,
                metric: Metric::HitRate,
                k: 20,
                r: None,
                value: 0.125,
                pairs: 8,
            },
            EvalResult {
                set: SetLabel::Tail,
                metric: Metric::Mrr,
                k: 20,
                r: Some(40),
                value: 1.0 / 3.0,
                pairs: 3,
            },
        ];
        let mut buf = Vec::new();
        write_results(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("set,metric,K,r,value,pairs\nwarm,HR,20,,0.125,8\n"));
        assert_eq!(read_results(&text).unwrap(), rows);
    }

    #[test]
    fn regime_filters_head_items() {
        let pop = PopularityTable::from_counts(vec![50, 40, 1, 2], PopularityMode::MinmaxCount);
        let pairs = vec![
            (UserId(0), ItemId(0)),
            (UserId(0), ItemId(2)),
            (UserId(1), ItemId(3)),
        ];
        let ranks = vec![1, 4, 2];
        let out = regime_from_ranks(&pairs, &ranks, &pop, &[0, 1, 4], 20).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out[0].value - (1.0 + 0.25 + 0.5) / 3.0).abs() < 1e-15);
        assert_eq!(out[1].pairs, 2);
        assert!((out[1].value - (0.25 + 0.5) / 2.0).abs() < 1e-15);
        assert!(regime_from_ranks(&pairs, &ranks, &pop, &[5], 20).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mrr_bounded_by_hr_and_monotone_in_k(ranks in prop::collection::vec(1usize..200, 1..60), k in 1usize..100) {
                let hr = hit_rate_at_k(&ranks, k).unwrap();
                let mrr = mrr_at_k(&ranks, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&hr));
                prop_assert!(mrr <= hr);
                prop_assert!(hit_rate_at_k(&ranks, k + 1).unwrap() >= hr);
                prop_assert!(mrr_at_k(&ranks, k + 1).unwrap() >= mrr);
            }

            #[test]
            fn metrics_ignore_pair_order(mut ranks in prop::collection::vec(1usize..50, 1..40), k in 1usize..30) {
                let hr = hit_rate_at_k(&ranks, k).unwrap();
                let mrr = mrr_at_k(&ranks, k).unwrap();
                ranks.reverse();
                prop_assert_eq!(hit_rate_at_k(&ranks, k).unwrap(), hr);
                prop_assert!((mrr_at_k(&ranks, k).unwrap() - mrr).abs() < 1e-12);
            }

            #[test]
            fn rank_invariant_under_monotone_transform(scores in prop::collection::vec(-5.0f64..5.0, 2..50), t in 0usize..50) {
                let n = scores.len();
                let target = ItemId((t % n) as u32);
                let cands: Vec<ItemId> = (0..n as u32).map(ItemId).collect();
                let r = rank_target(target, &cands, |i| scores[i.index()]).unwrap();
                let r2 = rank_target(target, &cands, |i| (scores[i.index()] * 0.5).exp() + 3.0).unwrap();
                prop_assert_eq!(r, r2);
            }
        }
    }
}
