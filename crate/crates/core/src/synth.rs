//! Synthetic interaction data whose item factors are partly explained by
//! item tags, so cold items are learnable from content to a tunable degree.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ContentBundle, ContentCatalog, Dataset, IdMap, InteractionLog, ItemId, UserId};
use crate::error::{CwhError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    pub tags: usize,
    pub tags_per_item: usize,
    /// share of an item factor explained by its tags
    pub beta: f64,
    pub interactions_per_user: usize,
    /// Zipf exponent of the item popularity prior
    pub popularity_skew: f64,
    /// multiplier on `u . v` inside the softmax
    pub affinity_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            items: 1000,
            latent_dim: 8,
            tags: 50,
            tags_per_item: 3,
            beta: 0.9,
            interactions_per_user: 20,
            popularity_skew: 0.5,
            affinity_scale: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CwhError::Config(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} not in [0, 1]", self.beta));
        }
        if self.users == 0 || self.items == 0 || self.latent_dim == 0 || self.tags == 0 || self.tags_per_item == 0 {
            return bad("synth counts must be positive".into());
        }
        if self.interactions_per_user == 0 {
            return bad("interactions_per_user must be positive".into());
        }
        if self.interactions_per_user > self.items {
            return bad(format!(
                "{} interactions per user exceed the {} items",
                self.interactions_per_user, self.items
            ));
        }
        if self.tags_per_item > self.tags {
            return bad(format!("{} tags per item exceed the {} tags", self.tags_per_item, self.tags));
        }
        if !(self.popularity_skew >= 0.0 && self.affinity_scale.is_finite()) {
            return bad("popularity_skew must be non-negative and affinity_scale finite".into());
        }
        Ok(())
    }
}

/// Latent factors behind a generated dataset. Rows follow generation order:
/// row `j` belongs to item `i{j}`, not to dense id `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub user_factors: Array2<f64>,
    pub item_factors: Array2<f64>,
    pub tag_factors: Array2<f64>,
    /// per item, sorted tag indices
    pub item_tags: Vec<Vec<usize>>,
    /// popularity prior weight of each item
    pub popularity: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub log: InteractionLog,
    pub catalog: ContentCatalog,
    pub truth: GroundTruth,
}

impl SynthData {
    /// Dataset with every item's content, with the ids ingestion of the
    /// written files would assign.
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::assemble(self.log.clone(), &self.catalog)
    }

    /// Writes `interactions.csv` and `content.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CwhError::io(dir, e))?;
        let p = dir.join("interactions.csv");
        self.log.write_csv(std::fs::File::create(&p).map_err(|e| CwhError::io(&p, e))?)?;
        let p = dir.join("content.csv");
        self.catalog.write_csv(std::fs::File::create(&p).map_err(|e| CwhError::io(&p, e))?)?;
        Ok(())
    }
}

pub fn user_name(i: usize) -> String {
    format!("u{i}")
}

pub fn item_name(j: usize) -> String {
    format!("i{j}")
}

pub fn tag_name(k: usize) -> String {
    format!("t{k}")
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.latent_dim;
    let normal = |rows: usize, rng: &mut ChaCha8Rng| {
        Array2::from_shape_simple_fn((rows, d), || StandardNormal.sample(&mut *rng))
    };
    let tag_factors = normal(config.tags, &mut rng);
    let item_tags: Vec<Vec<usize>> = (0..config.items)
        .map(|_| {
            let mut t = sample(&mut rng, config.tags, config.tags_per_item).into_vec();
            t.sort_unstable();
            t
        })
        .collect();
    let noise = normal(config.items, &mut rng);
    let mut item_factors = Array2::zeros((config.items, d));
    for (j, tags) in item_tags.iter().enumerate() {
        let mut mean = Array1::<f64>::zeros(d);
        for &t in tags {
            mean += &tag_factors.row(t);
        }
        mean /= tags.len() as f64;
        let v = mean * config.beta + &noise.row(j) * (1.0 - config.beta);
        item_factors.row_mut(j).assign(&v);
    }
    let user_factors = normal(config.users, &mut rng);

    // Zipf prior over a random item order
    let order = sample(&mut rng, config.items, config.items).into_vec();
    let mut popularity = vec![0.0; config.items];
    for (rank, &j) in order.iter().enumerate() {
        popularity[j] = ((rank + 1) as f64).powf(-config.popularity_skew);
    }
    let log_pop: Array1<f64> = popularity.iter().map(|p| p.ln()).collect();

    let logits_all = user_factors.dot(&item_factors.t()) * config.affinity_scale;
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
    let mut pairs = Vec::with_capacity(config.users * config.interactions_per_user);
    for (i, logits) in logits_all.axis_iter(Axis(0)).enumerate() {
        // Gumbel top-k draws k distinct items from the softmax without replacement
        let mut keyed: Vec<(f64, usize)> = logits
            .iter()
            .zip(log_pop.iter())
            .enumerate()
            .map(|(j, (&l, &p))| (l + p + gumbel.sample(&mut rng), j))
            .collect();
        keyed.select_nth_unstable_by(config.interactions_per_user - 1, |a, b| b.0.total_cmp(&a.0));
        for &(_, j) in &keyed[..config.interactions_per_user] {
            pairs.push((i, j));
        }
    }
    // dense ids come from the external names exactly as ingestion assigns them
    let users = IdMap::from_ids(pairs.iter().map(|&(i, _)| user_name(i)));
    let items = IdMap::from_ids(pairs.iter().map(|&(_, j)| item_name(j)));
    let rows = pairs
        .iter()
        .map(|&(i, j)| {
            let u = users.get(&user_name(i)).expect("user named");
            let v = items.get(&item_name(j)).expect("item named");
            (UserId(u), ItemId(v), 1)
        })
        .collect();
    let log = InteractionLog::new(users, items, rows)?;

    let mut catalog = ContentCatalog::default();
    for (j, tags) in item_tags.iter().enumerate() {
        let names: Vec<String> = tags.iter().map(|&t| tag_name(t)).collect();
        catalog.insert(
            item_name(j),
            ContentBundle {
                text: names.join(" "),
                tags: names.into_iter().collect::<BTreeSet<_>>(),
                numeric: Vec::new(),
            },
        );
    }
    Ok(SynthData {
        log,
        catalog,
        truth: GroundTruth {
            user_factors,
            item_factors,
            tag_factors,
            item_tags,
            popularity,
        },
    })
}
