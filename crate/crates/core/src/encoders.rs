//! Content analyzers: per-field encoders whose outputs are concatenated into
//! the multiview content vector.
//!
//! Three analyzers exist, always applied in this order when active:
//!
//! * **tags**: a learned embedding per tag, aggregated by mean (or sum);
//! * **text**: lowercase alphanumeric tokens hashed into a fixed number of
//!   buckets, L2-normalized, then linearly projected;
//! * **numeric**: an affine map of a fixed-width numeric field.
//!
//! Raw content is first turned into [`ContentFeatures`], which depend only on
//! the content and the analyzer config, never on learned parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ContentBundle;
use crate::error::{CwhError, Result};
use crate::scalar::Scalar;
use crate::tensor::{add_outer, all_finite, uniform_matrix, RowGrads};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TagAggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextAnalyzerConfig {
    pub dim: usize,
    #[serde(default = "default_hash_dim")]
    pub hash_dim: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_hash_dim() -> usize {
    4096
}

fn default_max_tokens() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericAnalyzerConfig {
    pub dim: usize,
    /// Width of the numeric content field.
    pub inputs: usize,
}

/// Which analyzers are active and their output sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerConfig {
    pub tags: Option<usize>,
    pub text: Option<TextAnalyzerConfig>,
    pub numeric: Option<NumericAnalyzerConfig>,
    #[serde(default)]
    pub tag_aggregation: TagAggregation,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            tags: Some(100),
            text: Some(TextAnalyzerConfig {
                dim: 100,
                hash_dim: default_hash_dim(),
                max_tokens: default_max_tokens(),
            }),
            numeric: None,
            tag_aggregation: TagAggregation::Mean,
        }
    }
}

impl AnalyzerConfig {
    /// No content analyzers at all.
    pub fn none() -> Self {
        AnalyzerConfig {
            tags: None,
            text: None,
            numeric: None,
            tag_aggregation: TagAggregation::Mean,
        }
    }

    pub fn tags_only(dim: usize) -> Self {
        AnalyzerConfig {
            tags: Some(dim),
            ..Self::none()
        }
    }

    /// Output dims of the active analyzers in concatenation order.
    pub fn part_dims(&self) -> Vec<usize> {
        let mut dims = Vec::new();
        dims.extend(self.tags);
        dims.extend(self.text.as_ref().map(|t| t.dim));
        dims.extend(self.numeric.as_ref().map(|n| n.dim));
        dims
    }

    /// Length of the multiview vector.
    pub fn multiview_dim(&self) -> usize {
        self.part_dims().iter().sum()
    }

    pub fn is_active(&self) -> bool {
        self.multiview_dim() > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.part_dims().iter().any(|&d| d == 0) {
            return Err(CwhError::Config("analyzer output dims must be positive".into()));
        }
        if let Some(t) = &self.text {
            if t.hash_dim == 0 || t.max_tokens == 0 {
                return Err(CwhError::Config("text hash_dim and max_tokens must be positive".into()));
            }
        }
        if let Some(n) = &self.numeric {
            if n.inputs == 0 {
                return Err(CwhError::Config("numeric inputs must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Sorted tag vocabulary; row `k` of the tag table embeds `tags[k]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagVocab {
    tags: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl TagVocab {
    pub fn new<I: IntoIterator<Item = String>>(tags: I) -> Self {
        let tags: Vec<String> = tags.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        TagVocab { tags, index }
    }

    pub fn from_content<'a>(content: impl IntoIterator<Item = &'a ContentBundle>) -> Self {
        Self::new(content.into_iter().flat_map(|c| c.tags.iter().cloned()))
    }

    pub fn get(&self, tag: &str) -> Option<u32> {
        self.index.get(tag).copied()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Parameter-independent preprocessing of one item's content.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContentFeatures {
    /// Known tag rows, ascending.
    pub tags: Vec<u32>,
    /// L2-normalized hashed token counts as (bucket, weight), ascending bucket.
    pub text: Vec<(u32, f64)>,
    pub numeric: Vec<f64>,
}

/// Lowercased alphanumeric tokens, at most `max_tokens`.
pub fn tokenize(text: &str, max_tokens: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_tokens)
        .map(str::to_lowercase)
        .collect()
}

fn bucket_of(token: &str, hash_dim: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % hash_dim as u64) as u32
}

/// Hashed, L2-normalized bag of tokens.
pub fn hash_text(text: &str, config: &TextAnalyzerConfig) -> Vec<(u32, f64)> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for token in tokenize(text, config.max_tokens) {
        *counts.entry(bucket_of(&token, config.hash_dim)).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|(b, c)| (b, c / norm)).collect()
}

/// Turns raw content into [`ContentFeatures`] under a fixed config and vocab.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurizer {
    pub config: AnalyzerConfig,
    pub vocab: TagVocab,
}

impl Featurizer {
    pub fn new(config: AnalyzerConfig, vocab: TagVocab) -> Self {
        Featurizer { config, vocab }
    }

    pub fn featurize(&self, content: &ContentBundle) -> Result<ContentFeatures> {
        let tags = if self.config.tags.is_some() {
            content.tags.iter().filter_map(|t| self.vocab.get(t)).collect()
        } else {
            Vec::new()
        };
        let text = match &self.config.text {
            Some(cfg) => hash_text(&content.text, cfg),
            None => Vec::new(),
        };
        let numeric = match &self.config.numeric {
            Some(cfg) if content.numeric.is_empty() => vec![0.0; cfg.inputs],
            Some(cfg) if content.numeric.len() != cfg.inputs => {
                return Err(CwhError::Data(format!(
                    "numeric field has {} values, analyzer expects {}",
                    content.numeric.len(),
                    cfg.inputs
                )))
            }
            Some(_) => content.numeric.clone(),
            None => Vec::new(),
        };
        Ok(ContentFeatures { tags, text, numeric })
    }

    pub fn featurize_all(&self, content: &[ContentBundle]) -> Result<Vec<ContentFeatures>> {
        content.iter().map(|c| self.featurize(c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericAffine<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Learned parameters of the active content analyzers.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentAnalyzerParams<T> {
    pub aggregation: TagAggregation,
    /// vocab x d_tags
    pub tags: Option<Array2<T>>,
    /// hash_dim x d_text
    pub text: Option<Array2<T>>,
    pub numeric: Option<NumericAffine<T>>,
}

impl<T: Scalar> ContentAnalyzerParams<T> {
    /// Uniform init in `[-1/sqrt(d_k), 1/sqrt(d_k)]`; numeric bias zero.
    pub fn init<R: Rng + ?Sized>(config: &AnalyzerConfig, vocab_len: usize, rng: &mut R) -> Self {
        let bound = |d: usize| 1.0 / (d as f64).sqrt();
        ContentAnalyzerParams {
            aggregation: config.tag_aggregation,
            tags: config.tags.map(|d| uniform_matrix(vocab_len, d, bound(d), rng)),
            text: config
                .text
                .as_ref()
                .map(|t| uniform_matrix(t.hash_dim, t.dim, bound(t.dim), rng)),
            numeric: config.numeric.as_ref().map(|n| NumericAffine {
                weight: uniform_matrix(n.dim, n.inputs, bound(n.dim), rng),
                bias: Array1::zeros(n.dim),
            }),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ContentAnalyzerParams {
            aggregation: self.aggregation,
            tags: self.tags.as_ref().map(|t| Array2::zeros(t.raw_dim())),
            text: self.text.as_ref().map(|t| Array2::zeros(t.raw_dim())),
            numeric: self.numeric.as_ref().map(|n| NumericAffine {
                weight: Array2::zeros(n.weight.raw_dim()),
                bias: Array1::zeros(n.bias.raw_dim()),
            }),
        }
    }

    pub fn part_dims(&self) -> Vec<usize> {
        let mut dims = Vec::new();
        dims.extend(self.tags.as_ref().map(|t| t.ncols()));
        dims.extend(self.text.as_ref().map(|t| t.ncols()));
        dims.extend(self.numeric.as_ref().map(|n| n.bias.len()));
        dims
    }

    pub fn multiview_dim(&self) -> usize {
        self.part_dims().iter().sum()
    }

    /// Full multiview vector `[tags, text, numeric]` for active analyzers.
    pub fn encode(&self, features: &ContentFeatures) -> Array1<T> {
        let mut parts: Vec<Array1<T>> = Vec::with_capacity(3);
        if let Some(table) = &self.tags {
            parts.push(encode_tags(&features.tags, table, self.aggregation));
        }
        if let Some(table) = &self.text {
            parts.push(encode_text(&features.text, table));
        }
        if let Some(affine) = &self.numeric {
            parts.push(encode_numeric(&features.numeric, affine));
        }
        let views: Vec<ArrayView1<T>> = parts.iter().map(|p| p.view()).collect();
        concat_multiview(&views, &self.part_dims()).expect("parts follow the param shapes")
    }

    /// Backpropagates `grad` (w.r.t. the multiview vector) into `out`.
    pub fn backward(&self, features: &ContentFeatures, grad: ArrayView1<T>, out: &mut ContentGrads<T>) {
        let mut at = 0;
        if let Some(table) = &self.tags {
            let d = table.ncols();
            let g = grad.slice(ndarray::s![at..at + d]);
            if !features.tags.is_empty() {
                let scale = match self.aggregation {
                    TagAggregation::Mean => T::one() / T::of(features.tags.len() as f64),
                    TagAggregation::Sum => T::one(),
                };
                for &t in &features.tags {
                    out.tags.add(t as usize, scale, g);
                }
            }
            at += d;
        }
        if let Some(table) = &self.text {
            let d = table.ncols();
            let g = grad.slice(ndarray::s![at..at + d]);
            for &(b, w) in &features.text {
                out.text.add(b as usize, T::of(w), g);
            }
            at += d;
        }
        if let (Some(affine), Some(g_aff)) = (&self.numeric, out.numeric.as_mut()) {
            let d = affine.bias.len();
            let g = grad.slice(ndarray::s![at..at + d]);
            let x: Array1<T> = features.numeric.iter().map(|&v| T::of(v)).collect();
            add_outer(&mut g_aff.weight, T::one(), g, x.view());
            g_aff.bias += &g;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tags.as_ref().is_none_or(|t| all_finite(t.iter()))
            && self.text.as_ref().is_none_or(|t| all_finite(t.iter()))
            && self
                .numeric
                .as_ref()
                .is_none_or(|n| all_finite(n.weight.iter()) && all_finite(n.bias.iter()))
    }
}

/// Mean (or sum) of the embeddings of known tags; zero when none is known.
pub fn encode_tags<T: Scalar>(tags: &[u32], table: &Array2<T>, aggregation: TagAggregation) -> Array1<T> {
    let mut out = Array1::zeros(table.ncols());
    for &t in tags {
        out += &table.row(t as usize);
    }
    if aggregation == TagAggregation::Mean && !tags.is_empty() {
        out /= T::of(tags.len() as f64);
    }
    out
}

/// Projects a hashed bag of tokens through `table` (hash_dim x d).
pub fn encode_text<T: Scalar>(hashed: &[(u32, f64)], table: &Array2<T>) -> Array1<T> {
    let mut out = Array1::zeros(table.ncols());
    for &(b, w) in hashed {
        out.scaled_add(T::of(w), &table.row(b as usize));
    }
    out
}

/// Convenience wrapper: tokenize, hash and project raw text.
pub fn encode_text_str<T: Scalar>(text: &str, config: &TextAnalyzerConfig, table: &Array2<T>) -> Array1<T> {
    encode_text(&hash_text(text, config), table)
}

pub fn encode_numeric<T: Scalar>(values: &[f64], affine: &NumericAffine<T>) -> Array1<T> {
    let x: Array1<T> = values.iter().map(|&v| T::of(v)).collect();
    affine.weight.dot(&x) + &affine.bias
}

/// Concatenates analyzer outputs in order, checking each against `dims`.
pub fn concat_multiview<T: Scalar>(parts: &[ArrayView1<T>], dims: &[usize]) -> Result<Array1<T>> {
    if parts.len() != dims.len() {
        return Err(CwhError::Data(format!(
            "expected {} analyzer outputs, got {}",
            dims.len(),
            parts.len()
        )));
    }
    let mut out = Vec::with_capacity(dims.iter().sum());
    for (k, (p, &d)) in parts.iter().zip(dims).enumerate() {
        if p.len() != d {
            return Err(CwhError::Data(format!(
                "analyzer {k} produced {} values, expected {d}",
                p.len()
            )));
        }
        out.extend(p.iter().copied());
    }
    Ok(Array1::from(out))
}

/// Gradients for the content analyzers; tables are sparse by row.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentGrads<T> {
    pub tags: RowGrads<T>,
    pub text: RowGrads<T>,
    pub numeric: Option<NumericAffine<T>>,
}

impl<T: Scalar> ContentGrads<T> {
    pub fn for_params(params: &ContentAnalyzerParams<T>) -> Self {
        ContentGrads {
            tags: RowGrads::new(params.tags.as_ref().map_or(0, |t| t.ncols())),
            text: RowGrads::new(params.text.as_ref().map_or(0, |t| t.ncols())),
            numeric: params.numeric.as_ref().map(|n| NumericAffine {
                weight: Array2::zeros(n.weight.raw_dim()),
                bias: Array1::zeros(n.bias.raw_dim()),
            }),
        }
    }

    pub fn clear(&mut self) {
        self.tags.clear();
        self.text.clear();
        if let Some(n) = &mut self.numeric {
            n.weight.fill(T::zero());
            n.bias.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tags.all_finite()
            && self.text.all_finite()
            && self
                .numeric
                .as_ref()
                .is_none_or(|n| all_finite(n.weight.iter()) && all_finite(n.bias.iter()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn text_cfg() -> TextAnalyzerConfig {
        TextAnalyzerConfig {
            dim: 6,
            hash_dim: 64,
            max_tokens: 512,
        }
    }

    #[test]
    fn tags_mean_and_edge_cases() {
        let table = array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.5]];
        assert_eq!(encode_tags(&[], &table, TagAggregation::Mean), array![0.0, 0.0]);
        assert_eq!(encode_tags(&[1], &table, TagAggregation::Mean), array![3.0, -4.0]);
        assert_eq!(encode_tags(&[0, 1], &table, TagAggregation::Mean), array![2.0, -1.0]);
        assert_eq!(encode_tags(&[0, 1], &table, TagAggregation::Sum), array![4.0, -2.0]);
    }

    #[test]
    fn unknown_tags_are_ignored() {
        let vocab = TagVocab::new(["a".to_string(), "b".to_string()]);
        let f = Featurizer::new(AnalyzerConfig::tags_only(2), vocab);
        let content = ContentBundle {
            tags: ["b".to_string(), "zzz".to_string()].into(),
            ..Default::default()
        };
        assert_eq!(f.featurize(&content).unwrap().tags, vec![1]);
    }

    #[test]
    fn text_encoding_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table: Array2<f64> = uniform_matrix(64, 6, 0.5, &mut rng);
        let cfg = text_cfg();
        assert_eq!(encode_text_str("", &cfg, &table), Array1::zeros(6));
        assert_eq!(encode_text_str("  ,,; ", &cfg, &table), Array1::zeros(6));
        let a = encode_text_str("Deep hybrid models", &cfg, &table);
        assert_eq!(a, encode_text_str("Deep hybrid models", &cfg, &table));
        assert_eq!(encode_text_str("a b", &cfg, &table), encode_text_str("b a", &cfg, &table));
        assert_eq!(encode_text_str("A-b", &cfg, &table), encode_text_str("b a", &cfg, &table));
    }

    #[test]
    fn hashed_text_is_unit_norm_and_truncated() {
        let cfg = TextAnalyzerConfig {
            max_tokens: 3,
            ..text_cfg()
        };
        let h = hash_text("one two three four five", &cfg);
        let norm: f64 = h.iter().map(|(_, w)| w * w).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let total_tokens = tokenize("one two three four five", 3);
        assert_eq!(total_tokens, vec!["one", "two", "three"]);
    }

    #[test]
    fn concat_order_and_dims() {
        let x = array![1.0, 2.0];
        let y = array![3.0, 4.0];
        let xy = concat_multiview(&[x.view(), y.view()], &[2, 2]).unwrap();
        let yx = concat_multiview(&[y.view(), x.view()], &[2, 2]).unwrap();
        assert_eq!(xy, array![1.0, 2.0, 3.0, 4.0]);
        assert_ne!(xy, yx);
        assert_eq!(concat_multiview(&[x.view()], &[2]).unwrap(), x);
        assert!(concat_multiview(&[x.view()], &[3]).is_err());
        assert!(concat_multiview(&[x.view()], &[2, 2]).is_err());
        let parts: Vec<Array1<f64>> = (0..3).map(|_| Array1::zeros(100)).collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        assert_eq!(concat_multiview(&views, &[100, 100, 100]).unwrap().len(), 300);
    }

    #[test]
    fn output_dims_depend_on_config_only() {
        let config = AnalyzerConfig {
            tags: Some(4),
            text: Some(text_cfg()),
            numeric: Some(NumericAnalyzerConfig { dim: 3, inputs: 2 }),
            tag_aggregation: TagAggregation::Mean,
        };
        let vocab = TagVocab::new(["x".to_string()]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params: ContentAnalyzerParams<f64> = ContentAnalyzerParams::init(&config, vocab.len(), &mut rng);
        let f = Featurizer::new(config.clone(), vocab);
        let empty_text = ContentBundle {
            tags: ["x".to_string()].into(),
            ..Default::default()
        };
        let full = ContentBundle {
            tags: ["x".into(), "y".into()].into(),
            text: "some words here".into(),
            numeric: vec![1.0, 2.0],
        };
        for c in [empty_text, full] {
            assert_eq!(params.encode(&f.featurize(&c).unwrap()).len(), config.multiview_dim());
        }
        let bad = ContentBundle {
            numeric: vec![1.0],
            ..Default::default()
        };
        assert!(f.featurize(&bad).is_err());
    }
}
