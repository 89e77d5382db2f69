//! The gated hybrid scoring model and its hand-written backward pass.
//!
//! An item is represented by its CF vector `v` (warm) or by the content
//! compensation `v_cold = m + phi_cold(f)` (cold). The gate picks one of the
//! two; the chosen vector is concatenated with the content encoding
//! `phi(f)` and fed with the user vector through a two-layer ReLU scorer.
//!
//! The scorer's second layer is evaluated as `W1[:, ..d] u + (W1[:, d..] q1 + r1)`
//! so that item-side and user-side halves can be cached independently by the
//! evaluator while producing bit-identical scores.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, UserId};
use crate::encoders::{AnalyzerConfig, ContentAnalyzerParams, ContentFeatures, ContentGrads, Featurizer};
use crate::error::{CwhError, Result};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::tensor::{
    add_outer, all_finite, matvec, matvec_t, normal_matrix, normal_vector, relu_inplace, sq_norm, uniform_matrix, RowGrads,
};

/// Observed label of a (user, item) pair.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    /// consumed, y = +1
    Positive,
    /// not consumed, y = -1
    Negative,
}

impl Label {
    #[inline]
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Positive => T::one(),
            Label::Negative => -T::one(),
        }
    }
}

/// Value of the stochastic gate `b`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    /// b = 0: the item's CF vector is used
    Warm,
    /// b = 1: the content compensation replaces the CF vector
    Cold,
}

impl Gate {
    pub fn from_bit(b: bool) -> Self {
        if b {
            Gate::Cold
        } else {
            Gate::Warm
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Gate::Warm => 0,
            Gate::Cold => 1,
        }
    }
}

/// How training draws the gate.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    Sampled,
    ForceWarm,
    ForceCold,
}

/// Gate parameters; popularity scores are supplied alongside.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub gamma: f64,
    pub mode: GateMode,
}

impl GateConfig {
    pub fn new(gamma: f64, mode: GateMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(CwhError::Precondition(format!("gamma {gamma} not in [0, 1]")));
        }
        Ok(GateConfig { gamma, mode })
    }
}

/// `p_b(gamma, c) = gamma^(2c)`, with `p_b(0, c) = 0` for every `c`
/// (including `c = 0`), so gamma = 0 never simulates a cold item.
pub fn gate_probability(gamma: f64, c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&c) {
        return Err(CwhError::Precondition(format!(
            "gate probability arguments out of [0, 1]: gamma={gamma}, c={c}"
        )));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma.powf(2.0 * c))
}

/// Model variant; the ablations freeze parts of the model at zero.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[default]
    #[serde(rename = "cwh", alias = "CWH")]
    Cwh,
    /// CF component only: no content, gate always warm, no cold items.
    #[serde(rename = "cf_only", alias = "CF_only")]
    CfOnly,
    /// Item CF vectors and the cold compensation fixed at zero.
    #[serde(rename = "cb_only", alias = "CB_only")]
    CbOnly,
}

impl ModelKind {
    pub fn supports_cold(self) -> bool {
        self != ModelKind::CfOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cwh => "cwh",
            ModelKind::CfOnly => "cf_only",
            ModelKind::CbOnly => "cb_only",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = CwhError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cwh" => Ok(ModelKind::Cwh),
            "cf_only" | "cf-only" => Ok(ModelKind::CfOnly),
            "cb_only" | "cb-only" => Ok(ModelKind::CbOnly),
            other => Err(CwhError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// One-hidden-layer ReLU network with a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    /// hidden x input
    pub w_in: Array2<T>,
    pub b_in: Array1<T>,
    /// output x hidden
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

/// Intermediates of an [`Mlp`] forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace<T> {
    pub pre: Array1<T>,
    pub hidden: Array1<T>,
    pub out: Array1<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let bound = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();
        Mlp {
            w_in: uniform_matrix(hidden, input, bound(input), rng),
            b_in: Array1::zeros(hidden),
            w_out: uniform_matrix(output, hidden, bound(hidden), rng),
            b_out: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            w_in: Array2::zeros((hidden, input)),
            b_in: Array1::zeros(hidden),
            w_out: Array2::zeros((output, hidden)),
            b_out: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn forward(&self, x: ArrayView1<T>) -> MlpTrace<T> {
        let pre = matvec(self.w_in.view(), x) + &self.b_in;
        let mut hidden = pre.clone();
        relu_inplace(&mut hidden);
        let out = matvec(self.w_out.view(), hidden.view()) + &self.b_out;
        MlpTrace { pre, hidden, out }
    }

    /// Accumulates parameter gradients into `grads`; returns d/dx.
    pub fn backward(&self, x: ArrayView1<T>, trace: &MlpTrace<T>, g_out: ArrayView1<T>, grads: &mut Mlp<T>) -> Array1<T> {
        add_outer(&mut grads.w_out, T::one(), g_out, trace.hidden.view());
        grads.b_out += &g_out;
        let mut g_pre = matvec_t(self.w_out.view(), g_out);
        g_pre.zip_mut_with(&trace.pre, |g, &z| {
            if z <= T::zero() {
                *g = T::zero();
            }
        });
        add_outer(&mut grads.w_in, T::one(), g_pre.view(), x);
        grads.b_in += &g_pre;
        matvec_t(self.w_in.view(), g_pre.view())
    }

    fn fill(&mut self, value: T) {
        self.w_in.fill(value);
        self.b_in.fill(value);
        self.w_out.fill(value);
        self.b_out.fill(value);
    }
}

/// `s = w2 . ReLU(W1 [u, ReLU(W0 [v, phi] + r0)] + r1) + r2`
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer<T> {
    /// d x 2d
    pub w0: Array2<T>,
    pub r0: Array1<T>,
    /// d x 2d
    pub w1: Array2<T>,
    pub r1: Array1<T>,
    pub w2: Array1<T>,
    pub r2: T,
}

/// Item-dependent part of a scorer pass.
#[derive(Clone, Debug)]
pub struct ItemSide<T> {
    pub q0: Array1<T>,
    pub a0: Array1<T>,
    pub q1: Array1<T>,
    /// `W1[:, d..] q1 + r1`
    pub half: Array1<T>,
}

impl<T: Scalar> Scorer<T> {
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let b2 = 1.0 / ((2 * d) as f64).sqrt();
        let b1 = 1.0 / (d as f64).sqrt();
        Scorer {
            w0: uniform_matrix(d, 2 * d, b2, rng),
            r0: Array1::zeros(d),
            w1: uniform_matrix(d, 2 * d, b2, rng),
            r1: Array1::zeros(d),
            w2: uniform_matrix::<T, R>(1, d, b1, rng).row(0).to_owned(),
            r2: T::zero(),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Scorer {
            w0: Array2::zeros((d, 2 * d)),
            r0: Array1::zeros(d),
            w1: Array2::zeros((d, 2 * d)),
            r1: Array1::zeros(d),
            w2: Array1::zeros(d),
            r2: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.r0.len()
    }

    pub fn item_side(&self, v_eff: ArrayView1<T>, phi: ArrayView1<T>) -> ItemSide<T> {
        let d = self.dim();
        let mut q0 = Array1::zeros(2 * d);
        q0.slice_mut(s![..d]).assign(&v_eff);
        q0.slice_mut(s![d..]).assign(&phi);
        let a0 = matvec(self.w0.view(), q0.view()) + &self.r0;
        let mut q1 = a0.clone();
        relu_inplace(&mut q1);
        let half = matvec(self.w1.slice(s![.., d..]), q1.view()) + &self.r1;
        ItemSide { q0, a0, q1, half }
    }

    /// `W1[:, ..d] u`
    pub fn user_side(&self, u: ArrayView1<T>) -> Array1<T> {
        let d = self.dim();
        matvec(self.w1.slice(s![.., ..d]), u)
    }

    /// Final layers from the two cached halves.
    #[inline]
    pub fn combine(&self, user_half: ArrayView1<T>, item_half: ArrayView1<T>) -> T {
        let mut s = T::zero();
        match (user_half.as_slice(), item_half.as_slice(), self.w2.as_slice()) {
            (Some(u), Some(it), Some(w)) => {
                for ((&a, &b), &wk) in u.iter().zip(it).zip(w) {
                    let z = a + b;
                    s += wk * if z > T::zero() { z } else { T::zero() };
                }
            }
            _ => {
                for k in 0..self.w2.len() {
                    let z = user_half[k] + item_half[k];
                    s += self.w2[k] * if z > T::zero() { z } else { T::zero() };
                }
            }
        }
        s + self.r2
    }

    fn fill(&mut self, value: T) {
        self.w0.fill(value);
        self.r0.fill(value);
        self.w1.fill(value);
        self.r1.fill(value);
        self.w2.fill(value);
        self.r2 = value;
    }
}

/// Sizes of every parameter group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub users: usize,
    pub items: usize,
    /// CF / output dimension `d`
    pub dim: usize,
    /// hidden width of the two content networks
    pub hidden: usize,
}

/// All learned variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// N_u x d
    pub users: Array2<T>,
    /// N_v x d
    pub items: Array2<T>,
    /// global bias `m` of the cold compensation
    pub cold_bias: Array1<T>,
    /// content network producing `phi`
    pub multiview: Mlp<T>,
    /// content network producing the cold compensation
    pub cold: Mlp<T>,
    pub scorer: Scorer<T>,
    pub content: ContentAnalyzerParams<T>,
}

/// Borrowed view of one parameter group, row-major.
pub struct Group<'a, T> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a [T],
}

pub struct GroupMut<'a, T> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a mut [T],
}

fn shape2<T>(a: &Array2<T>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

/// Which parameter groups training may change.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub users: bool,
    pub items: bool,
    pub cold_bias: bool,
    pub multiview: bool,
    pub cold: bool,
    pub scorer: bool,
    pub content: bool,
}

impl Trainable {
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Cwh => Trainable {
                users: true,
                items: true,
                cold_bias: true,
                multiview: true,
                cold: true,
                scorer: true,
                content: true,
            },
            ModelKind::CfOnly => Trainable {
                users: true,
                items: true,
                cold_bias: false,
                multiview: false,
                cold: false,
                scorer: true,
                content: false,
            },
            ModelKind::CbOnly => Trainable {
                users: true,
                items: false,
                cold_bias: false,
                multiview: true,
                cold: false,
                scorer: true,
                content: true,
            },
        }
    }

    /// Whether the group named as in [`ModelParams::groups`] is trainable.
    pub fn allows(&self, group: &str) -> bool {
        match group.split('.').next().unwrap_or(group) {
            "users" => self.users,
            "items" => self.items,
            "cold_bias" => self.cold_bias,
            "multiview" => self.multiview,
            "cold" => self.cold,
            "scorer" => self.scorer,
            "content" => self.content,
            _ => false,
        }
    }
}

/// One training or scoring example.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub user: UserId,
    pub item: ItemId,
    pub label: Label,
    pub gate: Gate,
}

/// Everything a forward pass produced, kept for the backward pass.
pub struct ForwardTrace<T> {
    pub multiview_input: Array1<T>,
    pub phi: MlpTrace<T>,
    pub cold: Option<MlpTrace<T>>,
    pub item: ItemSide<T>,
    pub user_half: Array1<T>,
    pub a1: Array1<T>,
    pub score: T,
}

/// Gradients of the loss; embedding tables are sparse by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub users: RowGrads<T>,
    pub items: RowGrads<T>,
    pub cold_bias: Array1<T>,
    pub multiview: Mlp<T>,
    pub cold: Mlp<T>,
    pub scorer: Scorer<T>,
    pub content: ContentGrads<T>,
    /// set once any example went through the cold gate
    pub cold_touched: bool,
}

impl<T: Scalar> Gradients<T> {
    pub fn for_params(params: &ModelParams<T>) -> Self {
        let d = params.dim();
        Gradients {
            users: RowGrads::new(d),
            items: RowGrads::new(d),
            cold_bias: Array1::zeros(d),
            multiview: params.multiview.zeros_like(),
            cold: params.cold.zeros_like(),
            scorer: Scorer::zeros(d),
            content: ContentGrads::for_params(&params.content),
            cold_touched: false,
        }
    }

    pub fn clear(&mut self) {
        self.cold_touched = false;
        self.users.clear();
        self.items.clear();
        self.cold_bias.fill(T::zero());
        self.multiview.fill(T::zero());
        self.cold.fill(T::zero());
        self.scorer.fill(T::zero());
        self.content.clear();
    }

    pub fn all_finite(&self) -> bool {
        self.users.all_finite()
            && self.items.all_finite()
            && all_finite(self.cold_bias.iter())
            && mlp_finite(&self.multiview)
            && mlp_finite(&self.cold)
            && scorer_finite(&self.scorer)
            && self.content.all_finite()
    }

    /// Dense copy shaped like `params` (untouched rows are zero).
    pub fn to_dense(&self, params: &ModelParams<T>) -> ModelParams<T> {
        let mut dense = params.zeros_like();
        for (k, g) in self.users.iter() {
            dense.users.row_mut(k).assign(g);
        }
        for (k, g) in self.items.iter() {
            dense.items.row_mut(k).assign(g);
        }
        dense.cold_bias.assign(&self.cold_bias);
        dense.multiview = self.multiview.clone();
        dense.cold = self.cold.clone();
        dense.scorer = self.scorer.clone();
        if let Some(t) = &mut dense.content.tags {
            for (k, g) in self.content.tags.iter() {
                t.row_mut(k).assign(g);
            }
        }
        if let Some(t) = &mut dense.content.text {
            for (k, g) in self.content.text.iter() {
                t.row_mut(k).assign(g);
            }
        }
        if let (Some(n), Some(g)) = (&mut dense.content.numeric, &self.content.numeric) {
            n.weight.assign(&g.weight);
            n.bias.assign(&g.bias);
        }
        dense
    }
}

fn mlp_finite<T: Scalar>(m: &Mlp<T>) -> bool {
    all_finite(m.w_in.iter()) && all_finite(m.b_in.iter()) && all_finite(m.w_out.iter()) && all_finite(m.b_out.iter())
}

fn scorer_finite<T: Scalar>(s: &Scorer<T>) -> bool {
    all_finite(s.w0.iter())
        && all_finite(s.r0.iter())
        && all_finite(s.w1.iter())
        && all_finite(s.r1.iter())
        && all_finite(s.w2.iter())
        && s.r2.is_finite()
}

/// Which embedding rows the prior touches.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PriorScope {
    /// every row of every table
    All,
    /// only table rows already present in the gradient; dense groups always,
    /// except the cold path when no example used it
    Touched,
}

impl<T: Scalar> ModelParams<T> {
    /// Random init: U, V, m ~ N(0, 0.1^2); network weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; biases zero; content analyzers
    /// uniform in `[-1/sqrt(d_k), 1/sqrt(d_k)]`.
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, analyzers: &AnalyzerConfig, vocab_len: usize, rng: &mut R) -> Self {
        let d_phi = analyzers.multiview_dim();
        ModelParams {
            users: normal_matrix(dims.users, dims.dim, 0.1, rng),
            items: normal_matrix(dims.items, dims.dim, 0.1, rng),
            cold_bias: normal_vector(dims.dim, 0.1, rng),
            multiview: Mlp::init(d_phi, dims.hidden, dims.dim, rng),
            cold: Mlp::init(d_phi, dims.hidden, dims.dim, rng),
            scorer: Scorer::init(dims.dim, rng),
            content: ContentAnalyzerParams::init(analyzers, vocab_len, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            users: Array2::zeros(self.users.raw_dim()),
            items: Array2::zeros(self.items.raw_dim()),
            cold_bias: Array1::zeros(self.cold_bias.raw_dim()),
            multiview: self.multiview.zeros_like(),
            cold: self.cold.zeros_like(),
            scorer: Scorer::zeros(self.dim()),
            content: self.content.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            users: self.users.nrows(),
            items: self.items.nrows(),
            dim: self.dim(),
            hidden: self.multiview.hidden_dim(),
        }
    }

    /// Zeroes the groups a model variant keeps fixed.
    pub fn apply_kind(&mut self, kind: ModelKind) {
        let t = Trainable::for_kind(kind);
        for g in self.groups_mut() {
            if !t.allows(g.name) {
                g.data.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Every parameter group in a fixed order, row-major.
    pub fn groups(&self) -> Vec<Group<'_, T>> {
        param_groups_ref(self)
    }

    pub fn groups_mut(&mut self) -> Vec<GroupMut<'_, T>> {
        param_groups_mut(self)
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|g| all_finite(g.data.iter()))
    }

    /// Sum of squared norms over all groups.
    pub fn sq_norm(&self) -> T {
        self.groups().iter().map(|g| sq_norm(g.data.iter())).sum()
    }

    /// Adds `tau * theta` to `grads` over `scope` and returns the matching
    /// penalty `tau/2 * sum ||theta||^2`.
    pub fn add_prior(&self, tau: T, grads: &mut Gradients<T>, scope: PriorScope) -> T {
        if tau == T::zero() {
            return T::zero();
        }
        let half = tau / T::of(2.0);
        let mut penalty = T::zero();
        let mut rows = |table: &Array2<T>, g: &mut RowGrads<T>| {
            let idx: Vec<usize> = match scope {
                PriorScope::All => (0..table.nrows()).collect(),
                PriorScope::Touched => g.indices().collect(),
            };
            for k in idx {
                let row = table.row(k);
                penalty += half * sq_norm(row.iter());
                g.add(k, tau, row);
            }
        };
        rows(&self.users, &mut grads.users);
        rows(&self.items, &mut grads.items);
        if let Some(t) = &self.content.tags {
            rows(t, &mut grads.content.tags);
        }
        if let Some(t) = &self.content.text {
            rows(t, &mut grads.content.text);
        }
        let mut dense = |p: ArrayView1<T>, mut g: ArrayViewMut1<T>| {
            penalty += half * sq_norm(p.iter());
            g.scaled_add(tau, &p);
        };
        let cold = scope == PriorScope::All || grads.cold_touched;
        if cold {
            dense(self.cold_bias.view(), grads.cold_bias.view_mut());
        }
        for (p, g, on) in [(&self.multiview, &mut grads.multiview, true), (&self.cold, &mut grads.cold, cold)] {
            if !on {
                continue;
            }
            dense(flat(&p.w_in), flat_mut(&mut g.w_in));
            dense(p.b_in.view(), g.b_in.view_mut());
            dense(flat(&p.w_out), flat_mut(&mut g.w_out));
            dense(p.b_out.view(), g.b_out.view_mut());
        }
        let (p, g) = (&self.scorer, &mut grads.scorer);
        dense(ArrayView1::from(std::slice::from_ref(&p.r2)), ArrayViewMut1::from(&mut [T::zero()][..]));
        dense(flat(&p.w0), flat_mut(&mut g.w0));
        dense(p.r0.view(), g.r0.view_mut());
        dense(flat(&p.w1), flat_mut(&mut g.w1));
        dense(p.r1.view(), g.r1.view_mut());
        dense(p.w2.view(), g.w2.view_mut());
        g.r2 += tau * p.r2;
        if let (Some(p), Some(g)) = (&self.content.numeric, &mut grads.content.numeric) {
            dense(flat(&p.weight), flat_mut(&mut g.weight));
            dense(p.bias.view(), g.bias.view_mut());
        }
        penalty
    }

    /// Multiview content vector `f` for an item.
    pub fn multiview_input(&self, features: &ContentFeatures) -> Array1<T> {
        self.content.encode(features)
    }

    /// Cold compensation `m + phi_cold(f)`.
    pub fn cold_vector(&self, f: ArrayView1<T>) -> Array1<T> {
        self.cold.forward(f).out + &self.cold_bias
    }

    /// Scorer pass for `user` against `item` through the given gate.
    pub fn forward(&self, user: UserId, item: ItemRef, features: &ContentFeatures) -> Result<ForwardTrace<T>> {
        if user.index() >= self.users.nrows() {
            return Err(CwhError::Data(format!("user {} has no vector", user.0)));
        }
        let f = self.multiview_input(features);
        let phi = self.multiview.forward(f.view());
        let (v_eff, cold) = match item {
            ItemRef::Warm(j) => {
                if j.index() >= self.items.nrows() {
                    return Err(CwhError::Data(format!("warm item {} has no CF vector", j.0)));
                }
                (self.items.row(j.index()).to_owned(), None)
            }
            ItemRef::Cold => {
                let tr = self.cold.forward(f.view());
                (&tr.out + &self.cold_bias, Some(tr))
            }
        };
        let item_side = self.scorer.item_side(v_eff.view(), phi.out.view());
        if !all_finite(item_side.a0.iter()) {
            return Err(CwhError::NonFinite("scorer item layer".into()));
        }
        let user_half = self.scorer.user_side(self.users.row(user.index()));
        let a1 = &user_half + &item_side.half;
        if !all_finite(a1.iter()) {
            return Err(CwhError::NonFinite("scorer user layer".into()));
        }
        let score = self.scorer.combine(user_half.view(), item_side.half.view());
        if !score.is_finite() {
            return Err(CwhError::NonFinite("scorer output".into()));
        }
        Ok(ForwardTrace {
            multiview_input: f,
            phi,
            cold,
            item: item_side,
            user_half,
            a1,
            score,
        })
    }

    /// Inference score; a cold reference never reads the item's CF row.
    pub fn predict(&self, user: UserId, item: ItemRef, features: &ContentFeatures) -> Result<T> {
        Ok(self.forward(user, item, features)?.score)
    }

    /// Adds `scale` times the gradient of `-log sigma(y s)` to `grads` and
    /// returns the unscaled negative log-likelihood.
    pub fn accumulate(&self, example: &Example, features: &ContentFeatures, scale: T, grads: &mut Gradients<T>) -> Result<T> {
        let item = match example.gate {
            Gate::Warm => ItemRef::Warm(example.item),
            Gate::Cold => ItemRef::Cold,
        };
        let tr = self.forward(example.user, item, features)?;
        let y: T = example.label.sign();
        let loss = softplus(-y * tr.score);
        let g_s = -y * sigmoid(-y * tr.score) * scale;
        if g_s == T::zero() {
            return Ok(loss);
        }
        let d = self.dim();
        let sc = &self.scorer;
        let gsc = &mut grads.scorer;

        let mut h1 = tr.a1.clone();
        relu_inplace(&mut h1);
        gsc.w2.scaled_add(g_s, &h1);
        gsc.r2 += g_s;

        let mut g_a1 = &sc.w2 * g_s;
        g_a1.zip_mut_with(&tr.a1, |g, &a| {
            if a <= T::zero() {
                *g = T::zero();
            }
        });
        let u = self.users.row(example.user.index());
        {
            let mut w1_u = gsc.w1.slice_mut(s![.., ..d]);
            for (mut row, &g) in w1_u.rows_mut().into_iter().zip(g_a1.iter()) {
                row.scaled_add(g, &u);
            }
            let mut w1_q = gsc.w1.slice_mut(s![.., d..]);
            for (mut row, &g) in w1_q.rows_mut().into_iter().zip(g_a1.iter()) {
                row.scaled_add(g, &tr.item.q1);
            }
        }
        gsc.r1 += &g_a1;
        let g_u = matvec_t(sc.w1.slice(s![.., ..d]), g_a1.view());
        let mut g_a0 = matvec_t(sc.w1.slice(s![.., d..]), g_a1.view());
        g_a0.zip_mut_with(&tr.item.a0, |g, &a| {
            if a <= T::zero() {
                *g = T::zero();
            }
        });
        add_outer(&mut gsc.w0, T::one(), g_a0.view(), tr.item.q0.view());
        gsc.r0 += &g_a0;
        let g_q0 = matvec_t(sc.w0.view(), g_a0.view());
        let g_v = g_q0.slice(s![..d]);
        let g_phi = g_q0.slice(s![d..]);

        grads.users.add(example.user.index(), T::one(), g_u.view());
        let f = tr.multiview_input.view();
        let mut g_f = self.multiview.backward(f, &tr.phi, g_phi, &mut grads.multiview);
        match (example.gate, &tr.cold) {
            (Gate::Warm, _) => grads.items.add(example.item.index(), T::one(), g_v),
            (Gate::Cold, Some(cold)) => {
                grads.cold_touched = true;
                grads.cold_bias += &g_v;
                g_f += &self.cold.backward(f, cold, g_v, &mut grads.cold);
            }
            (Gate::Cold, None) => unreachable!("cold pass always traces the cold network"),
        }
        self.content.backward(features, g_f.view(), &mut grads.content);

        if !(all_finite(g_u.iter()) && all_finite(g_q0.iter()) && all_finite(g_f.iter())) {
            return Err(CwhError::NonFinite("gradient".into()));
        }
        Ok(loss)
    }

    /// Loss `-log sigma(y s) + tau/2 * sum ||theta||^2` over all groups and its
    /// full gradient (the prior term touches every row).
    pub fn forward_backward(&self, example: &Example, features: &ContentFeatures, tau: T) -> Result<(T, Gradients<T>)> {
        if tau < T::zero() {
            return Err(CwhError::Precondition("tau must be non-negative".into()));
        }
        let mut grads = Gradients::for_params(self);
        let nll = self.accumulate(example, features, T::one(), &mut grads)?;
        let penalty = self.add_prior(tau, &mut grads, PriorScope::All);
        if !grads.all_finite() {
            return Err(CwhError::NonFinite("gradient".into()));
        }
        Ok((nll + penalty, grads))
    }
}

fn param_groups_ref<T: Scalar>(p: &ModelParams<T>) -> Vec<Group<'_, T>> {
    fn m<'a, T>(name: &'static str, a: &'a Array2<T>) -> Group<'a, T> {
        Group {
            name,
            shape: shape2(a),
            data: a.as_slice().expect("standard layout"),
        }
    }
    fn v<'a, T>(name: &'static str, a: &'a Array1<T>) -> Group<'a, T> {
        Group {
            name,
            shape: (1, a.len()),
            data: a.as_slice().expect("standard layout"),
        }
    }
    let mut out = vec![
        m("users", &p.users),
        m("items", &p.items),
        v("cold_bias", &p.cold_bias),
        m("multiview.w_in", &p.multiview.w_in),
        v("multiview.b_in", &p.multiview.b_in),
        m("multiview.w_out", &p.multiview.w_out),
        v("multiview.b_out", &p.multiview.b_out),
        m("cold.w_in", &p.cold.w_in),
        v("cold.b_in", &p.cold.b_in),
        m("cold.w_out", &p.cold.w_out),
        v("cold.b_out", &p.cold.b_out),
        m("scorer.w0", &p.scorer.w0),
        v("scorer.r0", &p.scorer.r0),
        m("scorer.w1", &p.scorer.w1),
        v("scorer.r1", &p.scorer.r1),
        v("scorer.w2", &p.scorer.w2),
        Group {
            name: "scorer.r2",
            shape: (1, 1),
            data: std::slice::from_ref(&p.scorer.r2),
        },
    ];
    if let Some(t) = &p.content.tags {
        out.push(m("content.tags", t));
    }
    if let Some(t) = &p.content.text {
        out.push(m("content.text", t));
    }
    if let Some(n) = &p.content.numeric {
        out.push(m("content.numeric.weight", &n.weight));
        out.push(v("content.numeric.bias", &n.bias));
    }
    out
}

fn param_groups_mut<T: Scalar>(p: &mut ModelParams<T>) -> Vec<GroupMut<'_, T>> {
    fn m<'a, T>(name: &'static str, a: &'a mut Array2<T>) -> GroupMut<'a, T> {
        let shape = shape2(a);
        GroupMut {
            name,
            shape,
            data: a.as_slice_mut().expect("standard layout"),
        }
    }
    fn v<'a, T>(name: &'static str, a: &'a mut Array1<T>) -> GroupMut<'a, T> {
        let shape = (1, a.len());
        GroupMut {
            name,
            shape,
            data: a.as_slice_mut().expect("standard layout"),
        }
    }
    let mut out = vec![
        m("users", &mut p.users),
        m("items", &mut p.items),
        v("cold_bias", &mut p.cold_bias),
        m("multiview.w_in", &mut p.multiview.w_in),
        v("multiview.b_in", &mut p.multiview.b_in),
        m("multiview.w_out", &mut p.multiview.w_out),
        v("multiview.b_out", &mut p.multiview.b_out),
        m("cold.w_in", &mut p.cold.w_in),
        v("cold.b_in", &mut p.cold.b_in),
        m("cold.w_out", &mut p.cold.w_out),
        v("cold.b_out", &mut p.cold.b_out),
        m("scorer.w0", &mut p.scorer.w0),
        v("scorer.r0", &mut p.scorer.r0),
        m("scorer.w1", &mut p.scorer.w1),
        v("scorer.r1", &mut p.scorer.r1),
        v("scorer.w2", &mut p.scorer.w2),
        GroupMut {
            name: "scorer.r2",
            shape: (1, 1),
            data: std::slice::from_mut(&mut p.scorer.r2),
        },
    ];
    if let Some(t) = &mut p.content.tags {
        out.push(m("content.tags", t));
    }
    if let Some(t) = &mut p.content.text {
        out.push(m("content.text", t));
    }
    if let Some(n) = &mut p.content.numeric {
        out.push(m("content.numeric.weight", &mut n.weight));
        out.push(v("content.numeric.bias", &mut n.bias));
    }
    out
}

fn flat<T>(a: &Array2<T>) -> ArrayView1<'_, T> {
    ArrayView1::from(a.as_slice().expect("standard layout"))
}

fn flat_mut<T>(a: &mut Array2<T>) -> ArrayViewMut1<'_, T> {
    ArrayViewMut1::from(a.as_slice_mut().expect("standard layout"))
}

/// How an item enters the scorer at inference.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ItemRef {
    /// gate b = 0 with the item's CF row
    Warm(ItemId),
    /// gate b = 1; only content is used
    Cold,
}

/// `phi(f)` for a multiview vector.
pub fn multiview_encode<T: Scalar>(f: ArrayView1<T>, net: &Mlp<T>) -> Result<Array1<T>> {
    check_input(f, net)?;
    Ok(net.forward(f).out)
}

/// `v_cold = m + phi_cold(f)`.
pub fn cold_compensate<T: Scalar>(f: ArrayView1<T>, net: &Mlp<T>, m: ArrayView1<T>) -> Result<Array1<T>> {
    check_input(f, net)?;
    Ok(net.forward(f).out + &m)
}

fn check_input<T: Scalar>(f: ArrayView1<T>, net: &Mlp<T>) -> Result<()> {
    if f.len() != net.input_dim() {
        return Err(CwhError::Data(format!(
            "multiview vector has {} entries, network expects {}",
            f.len(),
            net.input_dim()
        )));
    }
    if !all_finite(f.iter()) {
        return Err(CwhError::NonFinite("multiview vector".into()));
    }
    Ok(())
}

/// `(1 - b) v + b v_cold` for binary `b`.
pub fn effective_item_vector<'a, T>(gate: Gate, v: ArrayView1<'a, T>, v_cold: ArrayView1<'a, T>) -> ArrayView1<'a, T> {
    match gate {
        Gate::Warm => v,
        Gate::Cold => v_cold,
    }
}

/// Scorer output for explicit vectors.
pub fn score<T: Scalar>(u: ArrayView1<T>, v_eff: ArrayView1<T>, phi: ArrayView1<T>, scorer: &Scorer<T>) -> Result<T> {
    let d = scorer.dim();
    if u.len() != d || v_eff.len() != d || phi.len() != d {
        return Err(CwhError::Data(format!("scorer expects {d}-dim inputs")));
    }
    let item = scorer.item_side(v_eff, phi);
    if !all_finite(item.a0.iter()) {
        return Err(CwhError::NonFinite("scorer item layer".into()));
    }
    let user_half = scorer.user_side(u);
    if !all_finite(user_half.iter()) || !all_finite(item.half.iter()) {
        return Err(CwhError::NonFinite("scorer user layer".into()));
    }
    let s = scorer.combine(user_half.view(), item.half.view());
    if !s.is_finite() {
        return Err(CwhError::NonFinite("scorer output".into()));
    }
    Ok(s)
}

/// `sigma(y s)`.
pub fn likelihood<T: Scalar>(label: Label, s: T) -> T {
    sigmoid(label.sign::<T>() * s)
}

/// A trained model plus the content preprocessing it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub kind: ModelKind,
    pub featurizer: Featurizer,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn predict(&self, user: UserId, item: ItemRef, features: &ContentFeatures) -> Result<T> {
        if item == ItemRef::Cold && !self.kind.supports_cold() {
            return Err(CwhError::Unsupported(
                "a CF-only model cannot score cold items".into(),
            ));
        }
        self.params.predict(user, item, features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{NumericAnalyzerConfig, TextAnalyzerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn analyzers() -> AnalyzerConfig {
        AnalyzerConfig {
            tags: Some(3),
            text: Some(TextAnalyzerConfig {
                dim: 2,
                hash_dim: 16,
                max_tokens: 8,
            }),
            numeric: Some(NumericAnalyzerConfig { dim: 2, inputs: 2 }),
            tag_aggregation: Default::default(),
        }
    }

    fn random_model(seed: u64) -> (ModelParams<f64>, ContentFeatures) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ModelDims {
            users: 3,
            items: 4,
            dim: 4,
            hidden: 5,
        };
        let mut p = ModelParams::init(&dims, &analyzers(), 6, &mut rng);
        // lift everything off zero so no ReLU sits on its kink
        for g in p.groups_mut() {
            for v in g.data.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let features = ContentFeatures {
            tags: vec![1, 4],
            text: vec![(3, 0.6), (11, 0.8)],
            numeric: vec![0.3, -1.2],
        };
        (p, features)
    }

    fn objective(p: &ModelParams<f64>, ex: &Example, f: &ContentFeatures, tau: f64) -> f64 {
        let item = match ex.gate {
            Gate::Warm => ItemRef::Warm(ex.item),
            Gate::Cold => ItemRef::Cold,
        };
        let s = p.predict(ex.user, item, f).unwrap();
        softplus(-ex.label.sign::<f64>() * s) + tau / 2.0 * p.sq_norm()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..6 {
            for gate in [Gate::Warm, Gate::Cold] {
                let (p, f) = random_model(seed);
                let label = if seed % 2 == 0 { Label::Positive } else { Label::Negative };
                let ex = Example {
                    user: UserId(1),
                    item: ItemId(2),
                    label,
                    gate,
                };
                let tau = 0.1;
                let (loss, grads) = p.forward_backward(&ex, &f, tau).unwrap();
                assert!((loss - objective(&p, &ex, &f, tau)).abs() < 1e-12);
                let dense = grads.to_dense(&p);
                let n_groups = p.groups().len();
                for gi in 0..n_groups {
                    let len = p.groups()[gi].data.len();
                    for k in 0..len {
                        let mut plus = p.clone();
                        plus.groups_mut()[gi].data[k] += h;
                        let mut minus = p.clone();
                        minus.groups_mut()[gi].data[k] -= h;
                        let fd = (objective(&plus, &ex, &f, tau) - objective(&minus, &ex, &f, tau)) / (2.0 * h);
                        let an = dense.groups()[gi].data[k];
                        let name = p.groups()[gi].name;
                        assert!(
                            (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                            "{gate:?} {name}[{k}]: analytic {an} vs numeric {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_network_outputs_zero_and_relu_kills_negatives() {
        let net = Mlp::<f64>::zeros(4, 3, 3);
        let f = Array1::from(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(multiview_encode(f.view(), &net).unwrap(), Array1::<f64>::zeros(3));
        let mut one = Mlp::<f64>::zeros(1, 1, 1);
        one.w_in[[0, 0]] = 1.0;
        one.w_out[[0, 0]] = 1.0;
        assert_eq!(multiview_encode(Array1::from(vec![-2.0]).view(), &one).unwrap()[0], 0.0);
        assert!(multiview_encode(Array1::from(vec![f64::NAN]).view(), &one).is_err());
        assert!(multiview_encode(Array1::from(vec![1.0, 2.0]).view(), &one).is_err());
    }

    #[test]
    fn mlp_matches_hand_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::<f64>::init(4, 3, 3, &mut rng);
        net.b_in = Array1::from(vec![0.1, -0.2, 0.3]);
        net.b_out = Array1::from(vec![-0.05, 0.0, 0.4]);
        let x = [0.7, -1.1, 0.25, 2.0];
        let mut hidden = [0.0; 3];
        for (h, slot) in hidden.iter_mut().enumerate() {
            let mut z = net.b_in[h];
            for (i, xi) in x.iter().enumerate() {
                z += net.w_in[[h, i]] * xi;
            }
            *slot = if z > 0.0 { z } else { 0.0 };
        }
        let got = multiview_encode(Array1::from(x.to_vec()).view(), &net).unwrap();
        for o in 0..3 {
            let mut z = net.b_out[o];
            for (h, hv) in hidden.iter().enumerate() {
                z += net.w_out[[o, h]] * hv;
            }
            assert!((got[o] - z).abs() < 1e-14);
        }
    }

    #[test]
    fn cold_compensation_is_bias_plus_cold_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Array1::from(vec![0.3, -0.4, 1.5]);
        let m = Array1::from(vec![0.5, -1.0]);
        let zero = Mlp::<f64>::zeros(3, 4, 2);
        assert_eq!(cold_compensate(f.view(), &zero, m.view()).unwrap(), m);
        let net = Mlp::<f64>::init(3, 4, 2, &mut rng);
        let no_bias = cold_compensate(f.view(), &net, Array1::zeros(2).view()).unwrap();
        assert_eq!(no_bias, net.forward(f.view()).out);

        // perturbing the multiview network leaves v_cold alone
        let (mut p, feats) = random_model(4);
        let f = p.multiview_input(&feats);
        let before = p.cold_vector(f.view());
        p.multiview.w_in.mapv_inplace(|w| w + 0.3);
        p.multiview.b_out.fill(7.0);
        assert_eq!(p.cold_vector(f.view()), before);
    }

    #[test]
    fn gate_probability_examples() {
        assert_eq!(gate_probability(0.6, 0.5).unwrap(), 0.6);
        assert_eq!(gate_probability(0.5, 1.0).unwrap(), 0.25);
        for c in [0.0, 0.3, 1.0] {
            assert_eq!(gate_probability(1.0, c).unwrap(), 1.0);
            assert_eq!(gate_probability(0.0, c).unwrap(), 0.0);
        }
        assert!(gate_probability(1.2, 0.5).is_err());
        assert!(gate_probability(0.5, -0.1).is_err());
        assert!(GateConfig::new(-0.5, GateMode::Sampled).is_err());
    }

    #[test]
    fn effective_vector_follows_gate() {
        let v = Array1::from(vec![1.0, 2.0]);
        let c = Array1::from(vec![-3.0, 4.0]);
        assert_eq!(effective_item_vector(Gate::Warm, v.view(), c.view()), v.view());
        assert_eq!(effective_item_vector(Gate::Cold, v.view(), c.view()), c.view());
        for g in [Gate::Warm, Gate::Cold] {
            assert_eq!(effective_item_vector(g, v.view(), v.view()), v.view());
        }
    }

    #[test]
    fn zero_scorer_gives_zero() {
        let sc = Scorer::<f64>::zeros(3);
        let x = Array1::from(vec![1.0, -2.0, 3.0]);
        assert_eq!(score(x.view(), x.view(), x.view(), &sc).unwrap(), 0.0);
    }

    #[test]
    fn two_dim_scorer_by_hand() {
        let mut sc = Scorer::<f64>::zeros(2);
        sc.w0 = Array2::from_shape_vec((2, 4), vec![1.0, 0.0, 0.5, -1.0, -1.0, 2.0, 0.0, 1.0]).unwrap();
        sc.r0 = Array1::from(vec![0.1, -0.2]);
        sc.w1 = Array2::from_shape_vec((2, 4), vec![0.5, -0.5, 1.0, 0.0, 1.0, 1.0, -1.0, 2.0]).unwrap();
        sc.r1 = Array1::from(vec![0.0, 0.3]);
        sc.w2 = Array1::from(vec![2.0, -1.0]);
        sc.r2 = 0.25;
        let u = Array1::from(vec![1.0, 2.0]);
        let v = Array1::from(vec![0.5, -0.5]);
        let phi = Array1::from(vec![1.0, 0.2]);
        // q0 = [0.5, -0.5, 1.0, 0.2]
        // W0 q0 + r0 = [0.5 + 0.5 - 0.2 + 0.1, -0.5 - 1.0 + 0.2 - 0.2] = [0.9, -1.5] -> q1 = [0.9, 0]
        // h0 = [1, 2, 0.9, 0]
        // W1 h0 + r1 = [0.5 - 1.0 + 0.9, 1 + 2 - 0.9 + 0.3] = [0.4, 2.4] -> h1 = [0.4, 2.4]
        // s = 2 * 0.4 - 2.4 + 0.25 = -1.35
        let s = score(u.view(), v.view(), phi.view(), &sc).unwrap();
        assert!((s - -1.35).abs() < 1e-12, "{s}");
        sc.w2 *= 2.0;
        let s2 = score(u.view(), v.view(), phi.view(), &sc).unwrap();
        assert!(((s2 - 0.25) - 2.0 * (s - 0.25)).abs() < 1e-12);
        assert!(score(u.view(), Array1::from(vec![1.0]).view(), phi.view(), &sc).is_err());
    }

    #[test]
    fn likelihood_examples() {
        assert_eq!(likelihood(Label::Positive, 0.0f64), 0.5);
        assert!((likelihood(Label::Positive, 3f64.ln()) - 0.75).abs() < 1e-15);
        for s in [-40.0, -3.0, 0.0, 0.7, 35.0] {
            let total = likelihood(Label::Positive, s) + likelihood(Label::Negative, s);
            assert!((total - 1.0f64).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let (p, f) = random_model(0);
        let zero = p.zeros_like();
        let ex = Example {
            user: UserId(0),
            item: ItemId(1),
            label: Label::Positive,
            gate: Gate::Warm,
        };
        let (loss, _) = zero.forward_backward(&ex, &f, 0.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        // a huge output bias drives the positive loss to zero
        let mut confident = p.clone();
        confident.scorer.r2 = 80.0;
        let (loss, _) = confident.forward_backward(&ex, &f, 0.0).unwrap();
        assert!(loss < 1e-30);
    }

    #[test]
    fn warm_gate_reduces_to_plain_score() {
        let (p, f) = random_model(3);
        let x = p.multiview_input(&f);
        let phi = p.multiview.forward(x.view()).out;
        for j in 0..4 {
            let direct = score(p.users.row(2), p.items.row(j), phi.view(), &p.scorer).unwrap();
            let routed = p.predict(UserId(2), ItemRef::Warm(ItemId(j as u32)), &f).unwrap();
            assert_eq!(direct.to_bits(), routed.to_bits());
        }
    }

    #[test]
    fn cold_prediction_ignores_item_rows() {
        let (mut p, f) = random_model(5);
        let before = p.predict(UserId(0), ItemRef::Cold, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            p.items.mapv_inplace(|_| rng.random_range(-5.0..5.0));
            assert_eq!(p.predict(UserId(0), ItemRef::Cold, &f).unwrap(), before);
        }
        let ex = Example {
            user: UserId(0),
            item: ItemId(3),
            label: Label::Negative,
            gate: Gate::Cold,
        };
        let (_, g) = p.forward_backward(&ex, &f, 0.0).unwrap();
        assert!(g.items.is_empty());
        let warm = Example { gate: Gate::Warm, ..ex };
        let (_, g) = p.forward_backward(&warm, &f, 0.0).unwrap();
        assert!(g.cold_bias.iter().all(|&x| x == 0.0));
        assert!(g.cold.w_in.iter().chain(g.cold.w_out.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn cf_only_model_refuses_cold_items() {
        let (p, f) = random_model(1);
        let model = Model {
            kind: ModelKind::CfOnly,
            featurizer: Featurizer::new(analyzers(), crate::encoders::TagVocab::new(Vec::new())),
            params: p,
        };
        assert!(matches!(model.predict(UserId(0), ItemRef::Cold, &f), Err(CwhError::Unsupported(_))));
        assert!(model.predict(UserId(0), ItemRef::Warm(ItemId(0)), &f).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gate_probability_in_unit_interval_and_monotone(g in 0.0f64..=1.0, dg in 0.0f64..=1.0, c in 0.0f64..=1.0, dc in 0.0f64..=1.0) {
                let p = gate_probability(g, c).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                let g2 = (g + dg).min(1.0);
                prop_assert!(gate_probability(g2, c).unwrap() >= p);
                let c2 = (c + dc).min(1.0);
                prop_assert!(gate_probability(g, c2).unwrap() <= p);
            }

            #[test]
            fn likelihood_monotone_in_score(s in -20.0f64..20.0, ds in 1e-3f64..10.0) {
                prop_assert!(likelihood(Label::Positive, s + ds) > likelihood(Label::Positive, s));
                prop_assert!(likelihood(Label::Negative, s + ds) < likelihood(Label::Negative, s));
            }

            #[test]
            fn cold_score_independent_of_item_row(seed in 0u64..1000, item in 0u32..4, noise in -3.0f64..3.0) {
                let (mut p, f) = random_model(seed);
                let before = p.predict(UserId(1), ItemRef::Cold, &f).unwrap();
                p.items.row_mut(item as usize).mapv_inplace(|x| x * noise + noise);
                prop_assert_eq!(p.predict(UserId(1), ItemRef::Cold, &f).unwrap(), before);
            }
        }
    }
}
