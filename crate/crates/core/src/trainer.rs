//! MAP training with per-example gate draws, popularity-smoothed negative
//! sampling, Adam updates and early stopping on validation MRR@20.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, PopularityMode, PopularityTable};
use crate::encoders::{AnalyzerConfig, ContentFeatures, Featurizer, TagVocab};
use crate::error::{CwhError, Result};
use crate::eval::{self, EvalConfig, Metric, SetLabel};
use crate::network::{
    gate_probability, Example, Gate, GateConfig, GateMode, Gradients, Label, Model, ModelDims, ModelKind, ModelParams,
    PriorScope, Trainable,
};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::split::SplitBundle;

/// Exponent applied to train counts for the negative sampling distribution.
pub const NEGATIVE_ALPHA: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub kind: ModelKind,
    pub gate_mode: GateMode,
    pub popularity: PopularityMode,
    pub dim: usize,
    pub hidden: usize,
    pub analyzers: AnalyzerConfig,
    /// seed of the unified validation subsample
    pub eval_seed: u64,
    pub unified_warm_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.5,
            tau: 1e-5,
            batch_size: 32,
            negatives: 4,
            adam: AdamConfig::default(),
            max_epochs: 50,
            patience: 5,
            seed: 0,
            kind: ModelKind::Cwh,
            gate_mode: GateMode::Sampled,
            popularity: PopularityMode::default(),
            dim: 100,
            hidden: 200,
            analyzers: AnalyzerConfig::default(),
            eval_seed: 0,
            unified_warm_ratio: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CwhError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be a non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.dim == 0 || self.hidden == 0 {
            return bad("dim and hidden must be positive");
        }
        if !(self.adam.learning_rate >= 0.0 && self.adam.epsilon > 0.0) {
            return bad("learning_rate must be non-negative and epsilon positive");
        }
        if !((0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2)) {
            return bad("Adam decays must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.unified_warm_ratio) {
            return bad("unified_warm_ratio must lie in [0, 1]");
        }
        self.analyzers.validate()
    }

    /// Gate draw as the model variant requires: ablations never simulate
    /// cold items.
    pub fn gate(&self) -> Result<GateConfig> {
        let mode = match self.kind {
            ModelKind::Cwh => self.gate_mode,
            ModelKind::CfOnly | ModelKind::CbOnly => GateMode::ForceWarm,
        };
        GateConfig::new(self.gamma, mode)
    }

    fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ks: vec![20],
            unified_warm_ratio: self.unified_warm_ratio,
            seed: self.eval_seed,
        }
    }
}

/// Draws negatives from train counts raised to [`NEGATIVE_ALPHA`], rejecting
/// the user's own train items.
pub struct NegativeSampler {
    dist: WeightedAliasIndex<f64>,
    support: usize,
}

impl NegativeSampler {
    pub fn new(counts: &[u64], alpha: f64) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(alpha)).collect();
        let support = counts.iter().filter(|&&c| c > 0).count();
        if support == 0 {
            return Err(CwhError::Precondition("no item has train interactions".into()));
        }
        let dist = WeightedAliasIndex::new(weights)
            .map_err(|e| CwhError::Precondition(format!("negative sampling weights: {e}")))?;
        Ok(NegativeSampler { dist, support })
    }

    /// `k` negatives for a user whose sorted train items are `consumed`.
    pub fn sample<R: Rng + ?Sized>(&self, consumed: &[ItemId], k: usize, rng: &mut R) -> Result<Vec<ItemId>> {
        if k == 0 {
            return Err(CwhError::Precondition("k must be at least 1".into()));
        }
        if consumed.len() >= self.support {
            return Err(CwhError::Precondition(
                "user consumed every item with nonzero sampling weight".into(),
            ));
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let item = ItemId(self.dist.sample(rng) as u32);
            if consumed.binary_search(&item).is_err() {
                out.push(item);
            }
        }
        Ok(out)
    }
}

/// Bernoulli gate draw with success probability `gamma^(2 c_j)`.
pub fn sample_gate<R: Rng + ?Sized>(item: ItemId, gate: &GateConfig, popularity: &PopularityTable, rng: &mut R) -> Result<Gate> {
    match gate.mode {
        GateMode::ForceWarm => Ok(Gate::Warm),
        GateMode::ForceCold => Ok(Gate::Cold),
        GateMode::Sampled => {
            let p = gate_probability(gate.gamma, popularity.score(item))?;
            Ok(Gate::from_bit(p > 0.0 && rng.random::<f64>() < p))
        }
    }
}

/// Parameters plus optimizer and early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub adam: Adam<T>,
    pub epoch: usize,
    pub best_metric: f64,
    pub best_epoch: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ModelParams<T>, adam: AdamConfig) -> Self {
        let adam = Adam::new(&params, adam);
        TrainState {
            params,
            adam,
            epoch: 0,
            best_metric: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// objective (likelihood term plus prior) divided by the example count
    pub loss: f64,
    pub nll: f64,
    pub penalty: f64,
    pub examples: usize,
    pub cold_examples: usize,
}

/// One row of the training report; epoch 0 is the initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_warm: f64,
    pub val_cold: Option<f64>,
    pub val_unified: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| CwhError::io("training report", e);
        writeln!(w, "epoch,train_loss,val_mrr20_warm,val_mrr20_cold,val_mrr20_unified").map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                opt(r.train_loss),
                r.val_warm,
                opt(r.val_cold),
                r.val_unified
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Everything fixed for the duration of a training run.
pub struct Trainer<'a, T> {
    pub config: TrainConfig,
    pub split: &'a SplitBundle,
    pub features: &'a [ContentFeatures],
    pub popularity: PopularityTable,
    pub featurizer: Featurizer,
    sampler: NegativeSampler,
    train_items: Vec<Vec<ItemId>>,
    gate: GateConfig,
    trainable: Trainable,
    rng: ChaCha8Rng,
    grads: Option<Gradients<T>>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(config: TrainConfig, featurizer: Featurizer, split: &'a SplitBundle, features: &'a [ContentFeatures]) -> Result<Self> {
        config.validate()?;
        if features.len() != split.train.n_items() {
            return Err(CwhError::Data(format!(
                "{} content rows for {} items",
                features.len(),
                split.train.n_items()
            )));
        }
        let counts = split.train.item_counts();
        let sampler = NegativeSampler::new(&counts, NEGATIVE_ALPHA)?;
        let popularity = PopularityTable::from_counts(counts, config.popularity);
        let gate = config.gate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            trainable: Trainable::for_kind(config.kind),
            train_items: split.train.user_items(),
            config,
            split,
            features,
            popularity,
            featurizer,
            sampler,
            gate,
            rng,
            grads: None,
        })
    }

    /// Fresh parameters for this run, with the variant's frozen groups zeroed.
    pub fn init_state(&self) -> TrainState<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let dims = ModelDims {
            users: self.split.train.n_users(),
            items: self.split.train.n_items(),
            dim: self.config.dim,
            hidden: self.config.hidden,
        };
        let mut params = ModelParams::init(&dims, &self.config.analyzers, self.featurizer.vocab.len(), &mut rng);
        params.apply_kind(self.config.kind);
        TrainState::new(params, self.config.adam.clone())
    }

    pub fn model(&self, params: ModelParams<T>) -> Model<T> {
        Model {
            kind: self.config.kind,
            featurizer: self.featurizer.clone(),
            params,
        }
    }

    /// One pass over the shuffled train positives.
    pub fn train_epoch(&mut self, state: &mut TrainState<T>) -> Result<EpochStats> {
        let mut positives = self.split.train.pairs().to_vec();
        positives.shuffle(&mut self.rng);
        let tau = T::of(self.config.tau);
        let mut grads = self.grads.take().unwrap_or_else(|| Gradients::for_params(&state.params));
        let mut nll = 0.0;
        let mut examples = 0;
        let mut cold_examples = 0;
        for (batch_no, batch) in positives.chunks(self.config.batch_size).enumerate() {
            grads.clear();
            for &(user, item) in batch {
                let negatives = self
                    .sampler
                    .sample(&self.train_items[user.index()], self.config.negatives, &mut self.rng)?;
                let labelled = std::iter::once((item, Label::Positive)).chain(negatives.into_iter().map(|j| (j, Label::Negative)));
                for (item, label) in labelled {
                    let gate = sample_gate(item, &self.gate, &self.popularity, &mut self.rng)?;
                    if gate == Gate::Cold {
                        cold_examples += 1;
                    }
                    let ex = Example { user, item, label, gate };
                    let l = state
                        .params
                        .accumulate(&ex, &self.features[item.index()], T::one(), &mut grads)
                        .map_err(|e| diagnose(e, state.epoch + 1, batch_no))?;
                    if !l.is_finite() {
                        return Err(diagnose(CwhError::NonFinite("loss".into()), state.epoch + 1, batch_no));
                    }
                    nll += l.as_f64();
                    examples += 1;
                }
            }
            state.params.add_prior(tau, &mut grads, PriorScope::Touched);
            if !grads.all_finite() {
                return Err(diagnose(CwhError::NonFinite("gradient".into()), state.epoch + 1, batch_no));
            }
            state.adam.step(&mut state.params, &grads, &self.trainable);
        }
        self.grads = Some(grads);
        state.epoch += 1;
        if !state.params.all_finite() {
            return Err(diagnose(CwhError::NonFinite("parameters".into()), state.epoch, 0));
        }
        let penalty = self.config.tau / 2.0 * state.params.sq_norm().as_f64();
        let n = examples.max(1) as f64;
        Ok(EpochStats {
            loss: (nll + penalty) / n,
            nll,
            penalty,
            examples,
            cold_examples,
        })
    }

    /// Validation MRR@20 on the warm, cold and unified sets.
    pub fn validate(&self, params: &ModelParams<T>) -> Result<(f64, Option<f64>, f64)> {
        let model = Model {
            kind: self.config.kind,
            featurizer: self.featurizer.clone(),
            params: params.clone(),
        };
        let results = eval::evaluate_validation(&model, self.features, self.split, &self.config.eval_config())?;
        let get = |set| {
            results
                .iter()
                .find(|r| r.set == set && r.metric == Metric::Mrr && r.k == 20)
                .map(|r| r.value)
        };
        let unified = get(SetLabel::Unified)
            .ok_or_else(|| CwhError::Precondition("validation set is empty".into()))?;
        Ok((get(SetLabel::Warm).unwrap_or(0.0), get(SetLabel::Cold), unified))
    }

    /// Trains until `patience` epochs pass without a better unified
    /// validation MRR@20 and returns the best parameters seen.
    pub fn run(&mut self) -> Result<(ModelParams<T>, TrainReport)> {
        if self.split.validation_warm.is_empty() && self.split.validation_cold.is_empty() {
            return Err(CwhError::Precondition("training needs validation pairs".into()));
        }
        let mut state = self.init_state();
        let (w, c, u) = self.validate(&state.params)?;
        let mut report = TrainReport::default();
        report.rows.push(EpochRow {
            epoch: 0,
            train_loss: None,
            val_warm: w,
            val_cold: c,
            val_unified: u,
        });
        state.best_metric = u;
        let mut best = state.params.clone();
        let mut stale = 0;
        while state.epoch < self.config.max_epochs {
            let stats = self.train_epoch(&mut state)?;
            let (w, c, u) = self.validate(&state.params)?;
            log::info!(
                "epoch {}: loss {:.5}, val MRR@20 warm {:.4} unified {:.4}",
                state.epoch,
                stats.loss,
                w,
                u
            );
            report.rows.push(EpochRow {
                epoch: state.epoch,
                train_loss: Some(stats.loss),
                val_warm: w,
                val_cold: c,
                val_unified: u,
            });
            if u > state.best_metric {
                state.best_metric = u;
                state.best_epoch = state.epoch;
                best = state.params.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.patience.max(1) {
                    break;
                }
            }
        }
        if state.best_epoch == 0 {
            log::warn!("validation MRR@20 never improved on the initialization; returning initial parameters");
        }
        report.best_epoch = state.best_epoch;
        report.best_metric = state.best_metric;
        Ok((best, report))
    }
}

fn diagnose(e: CwhError, epoch: usize, batch: usize) -> CwhError {
    match e {
        CwhError::NonFinite(what) => CwhError::NonFinite(format!("{what} in epoch {epoch}, batch {batch}")),
        other => other,
    }
}

/// Builds the featurizer for a dataset; content-based variants need content.
pub fn featurizer_for(dataset: &Dataset, config: &TrainConfig) -> Result<Featurizer> {
    let analyzers = if config.kind == ModelKind::CfOnly {
        config.analyzers.clone()
    } else {
        if !config.analyzers.is_active() {
            return Err(CwhError::Config(format!(
                "{} needs at least one content analyzer",
                config.kind.name()
            )));
        }
        if !dataset.has_content() {
            return Err(CwhError::Config(format!(
                "{} needs item content but the dataset has none",
                config.kind.name()
            )));
        }
        config.analyzers.clone()
    };
    Ok(Featurizer::new(analyzers, TagVocab::from_content(&dataset.content)))
}

/// Full training run on one split.
pub fn train<T: Scalar>(config: &TrainConfig, dataset: &Dataset, split: &SplitBundle) -> Result<(Model<T>, TrainReport)> {
    let featurizer = featurizer_for(dataset, config)?;
    let features = featurizer.featurize_all(&dataset.content)?;
    let mut trainer = Trainer::<T>::new(config.clone(), featurizer, split, &features)?;
    let (params, report) = trainer.run()?;
    Ok((trainer.model(params), report))
}

/// Objective at fixed parameters over explicit examples: summed negative
/// log-likelihood and the prior `tau/2 * sum ||theta||^2`.
pub fn objective<T: Scalar>(
    params: &ModelParams<T>,
    examples: &[Example],
    features: &[ContentFeatures],
    tau: f64,
) -> Result<(f64, f64)> {
    let mut nll = 0.0;
    for ex in examples {
        let item = match ex.gate {
            Gate::Warm => crate::network::ItemRef::Warm(ex.item),
            Gate::Cold => crate::network::ItemRef::Cold,
        };
        let s = params.predict(ex.user, item, &features[ex.item.index()])?;
        nll += crate::scalar::softplus(-ex.label.sign::<T>() * s).as_f64();
    }
    Ok((nll, tau / 2.0 * params.sq_norm().as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InteractionLog, UserId};

    fn log(pairs: &[(u32, u32)], users: usize, items: usize) -> InteractionLog {
        InteractionLog::from_pairs(
            users,
            items,
            pairs.iter().map(|&(u, i)| (UserId(u), ItemId(i))),
        )
        .unwrap()
    }

    #[test]
    fn rejection_forces_remaining_item() {
        let sampler = NegativeSampler::new(&[3, 5], NEGATIVE_ALPHA).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = sampler.sample(&[ItemId(0)], 50, &mut rng).unwrap();
        assert!(got.iter().all(|&i| i == ItemId(1)));
    }

    #[test]
    fn sampler_errors() {
        let sampler = NegativeSampler::new(&[3, 5, 0], NEGATIVE_ALPHA).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sampler.sample(&[ItemId(0)], 0, &mut rng).is_err());
        assert!(sampler.sample(&[ItemId(0), ItemId(1)], 1, &mut rng).is_err());
        assert!(NegativeSampler::new(&[0, 0], NEGATIVE_ALPHA).is_err());
    }

    #[test]
    fn sampler_follows_smoothed_unigram() {
        let sampler = NegativeSampler::new(&[81, 16], NEGATIVE_ALPHA).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = sampler.sample(&[], 1_000_000, &mut rng).unwrap();
        let a = draws.iter().filter(|&&i| i == ItemId(0)).count() as f64;
        let b = draws.len() as f64 - a;
        // 81^0.75 = 27 and 16^0.75 = 8
        let ratio = a / b;
        assert!((ratio / (27.0 / 8.0) - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn gate_draw_boundaries_and_rate() {
        let pop = PopularityTable::from_counts(vec![1, 1], PopularityMode::ConstantHalf);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g0 = GateConfig::new(0.0, GateMode::Sampled).unwrap();
        let g1 = GateConfig::new(1.0, GateMode::Sampled).unwrap();
        for _ in 0..1000 {
            assert_eq!(sample_gate(ItemId(0), &g0, &pop, &mut rng).unwrap(), Gate::Warm);
            assert_eq!(sample_gate(ItemId(0), &g1, &pop, &mut rng).unwrap(), Gate::Cold);
        }
        let g = GateConfig::new(0.6, GateMode::Sampled).unwrap();
        let n = 100_000;
        let cold = (0..n)
            .filter(|_| sample_gate(ItemId(1), &g, &pop, &mut rng).unwrap() == Gate::Cold)
            .count();
        assert!((cold as f64 / n as f64 - 0.6).abs() < 0.005);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for f in [
            |c: &mut TrainConfig| c.negatives = 0,
            |c: &mut TrainConfig| c.batch_size = 0,
            |c: &mut TrainConfig| c.tau = -1.0,
            |c: &mut TrainConfig| c.gamma = 1.5,
        ] {
            let mut c = TrainConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(CwhError::Config(_))));
        }
    }

    fn tiny_setup(kind: ModelKind, gamma: f64) -> (TrainConfig, Featurizer, SplitBundle, Vec<ContentFeatures>) {
        let train = log(&[(0, 0), (0, 1), (1, 1), (1, 2)], 2, 4);
        let split = SplitBundle::from_train(train);
        let mut config = TrainConfig {
            kind,
            gamma,
            dim: 4,
            hidden: 3,
            analyzers: AnalyzerConfig::tags_only(3),
            negatives: 1,
            ..TrainConfig::default()
        };
        config.seed = 11;
        let vocab = TagVocab::new(["a".to_string(), "b".to_string()]);
        let featurizer = Featurizer::new(config.analyzers.clone(), vocab);
        let features = (0..4)
            .map(|j| ContentFeatures {
                tags: vec![j % 2],
                text: Vec::new(),
                numeric: Vec::new(),
            })
            .collect();
        (config, featurizer, split, features)
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (mut config, fz, split, features) = tiny_setup(ModelKind::Cwh, 0.5);
        config.adam.learning_rate = 0.0;
        let mut t = Trainer::<f64>::new(config, fz, &split, &features).unwrap();
        let mut state = t.init_state();
        let before = state.params.clone();
        let stats = t.train_epoch(&mut state).unwrap();
        assert_eq!(state.params, before);
        assert!(stats.loss.is_finite() && stats.loss > 0.0);
        assert_eq!(stats.examples, 8);
    }

    #[test]
    fn each_positive_brings_k_negatives() {
        let split = SplitBundle::from_train(log(&[(0, 0), (1, 1)], 2, 2));
        let (config, fz, _, features) = tiny_setup(ModelKind::Cwh, 0.0);
        let mut t = Trainer::<f64>::new(TrainConfig { negatives: 1, ..config }, fz, &split, &features[..2]).unwrap();
        let mut state = t.init_state();
        let stats = t.train_epoch(&mut state).unwrap();
        assert_eq!(stats.examples, 4);
    }

    #[test]
    fn user_owning_every_sampled_item_is_an_error() {
        let split = SplitBundle::from_train(log(&[(0, 0), (0, 1)], 1, 2));
        let (config, fz, _, features) = tiny_setup(ModelKind::Cwh, 0.0);
        let mut t = Trainer::<f64>::new(config, fz, &split, &features[..2]).unwrap();
        let mut state = t.init_state();
        assert!(matches!(t.train_epoch(&mut state), Err(CwhError::Precondition(_))));
    }

    #[test]
    fn gamma_zero_leaves_cold_path_untouched() {
        let (config, fz, split, features) = tiny_setup(ModelKind::Cwh, 0.0);
        let mut t = Trainer::<f64>::new(config, fz, &split, &features).unwrap();
        let mut state = t.init_state();
        let before = state.params.clone();
        for _ in 0..5 {
            let stats = t.train_epoch(&mut state).unwrap();
            assert_eq!(stats.cold_examples, 0);
        }
        assert_eq!(state.params.cold, before.cold);
        assert_eq!(state.params.cold_bias, before.cold_bias);
        assert_ne!(state.params.users, before.users);
    }

    #[test]
    fn ablations_keep_frozen_groups_at_zero() {
        for kind in [ModelKind::CfOnly, ModelKind::CbOnly] {
            let (config, fz, split, features) = tiny_setup(kind, 0.5);
            let mut t = Trainer::<f64>::new(config, fz, &split, &features).unwrap();
            let mut state = t.init_state();
            for _ in 0..3 {
                t.train_epoch(&mut state).unwrap();
            }
            let trainable = Trainable::for_kind(kind);
            for g in state.params.groups() {
                if !trainable.allows(g.name) {
                    assert!(g.data.iter().all(|&v| v == 0.0), "{kind:?} {}", g.name);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_params() {
        let run = || {
            let (config, fz, split, features) = tiny_setup(ModelKind::Cwh, 0.7);
            let mut t = Trainer::<f64>::new(config, fz, &split, &features).unwrap();
            let mut state = t.init_state();
            for _ in 0..3 {
                t.train_epoch(&mut state).unwrap();
            }
            state.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn objective_splits_into_likelihood_and_prior() {
        let (config, fz, split, features) = tiny_setup(ModelKind::Cwh, 0.5);
        let t = Trainer::<f64>::new(config, fz, &split, &features).unwrap();
        let params = t.init_state().params;
        let examples = [
            Example {
                user: UserId(0),
                item: ItemId(1),
                label: Label::Positive,
                gate: Gate::Warm,
            },
            Example {
                user: UserId(1),
                item: ItemId(3),
                label: Label::Negative,
                gate: Gate::Cold,
            },
        ];
        let (nll0, p0) = objective(&params, &examples, &features, 0.0).unwrap();
        let (nll1, p1) = objective(&params, &examples, &features, 0.3).unwrap();
        assert_eq!(p0, 0.0);
        assert_eq!(nll0, nll1);
        assert!((p1 - 0.15 * params.sq_norm()).abs() < 1e-12);
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            rows: vec![
                EpochRow {
                    epoch: 0,
                    train_loss: None,
                    val_warm: 0.25,
                    val_cold: Some(0.5),
                    val_unified: 0.275,
                },
                EpochRow {
                    epoch: 1,
                    train_loss: Some(0.6),
                    val_warm: 0.3,
                    val_cold: None,
                    val_unified: 0.3,
                },
            ],
            best_epoch: 1,
            best_metric: 0.3,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_mrr20_warm,val_mrr20_cold,val_mrr20_unified\n0,,0.25,0.5,0.275\n1,0.6,0.3,,0.3\n"
        );
    }
}
