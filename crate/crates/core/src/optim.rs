//! Adaptive-moment (Adam) updates.
//!
//! Dense groups are updated every step. Embedding tables (user and item
//! vectors, tag and text tables) are updated lazily: only rows present in the
//! gradient have their moments and values touched, with bias correction from
//! the global step count.

use serde::{Deserialize, Serialize};

use crate::network::{Gradients, ModelParams, Trainable};
use crate::scalar::Scalar;
use crate::tensor::RowGrads;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state; moment buffers are shaped exactly like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub first: ModelParams<T>,
    pub second: ModelParams<T>,
    pub steps: u64,
}

struct Coeffs<T> {
    lr_t: T,
    b1: T,
    b2: T,
    eps: T,
}

#[inline]
fn update<T: Scalar>(p: &mut [T], m: &mut [T], v: &mut [T], g: &[T], c: &Coeffs<T>) {
    let one = T::one();
    for k in 0..p.len() {
        let gk = g[k];
        m[k] = c.b1 * m[k] + (one - c.b1) * gk;
        v[k] = c.b2 * v[k] + (one - c.b2) * gk * gk;
        p[k] -= c.lr_t * m[k] / (v[k].sqrt() + c.eps);
    }
}

fn update_rows<T: Scalar>(p: &mut [T], m: &mut [T], v: &mut [T], width: usize, g: &RowGrads<T>, c: &Coeffs<T>) {
    for (row, grad) in g.iter() {
        let span = row * width..(row + 1) * width;
        update(
            &mut p[span.clone()],
            &mut m[span.clone()],
            &mut v[span],
            grad.as_slice().expect("contiguous row"),
            c,
        );
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Adam {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    /// Applies one update from `grads` to every trainable group.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>, trainable: &Trainable) {
        self.steps += 1;
        let t = self.steps as f64;
        let cfg = &self.config;
        let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powf(t)).sqrt() / (1.0 - cfg.beta1.powf(t));
        let c = Coeffs {
            lr_t: T::of(lr_t),
            b1: T::of(cfg.beta1),
            b2: T::of(cfg.beta2),
            eps: T::of(cfg.epsilon),
        };
        let dense = dense_grads(grads);
        let groups = params.groups_mut();
        let firsts = self.first.groups_mut();
        let seconds = self.second.groups_mut();
        for ((p, m), v) in groups.into_iter().zip(firsts).zip(seconds) {
            if !trainable.allows(p.name) {
                continue;
            }
            let width = p.shape.1;
            match p.name {
                "users" => update_rows(p.data, m.data, v.data, width, &grads.users, &c),
                "items" => update_rows(p.data, m.data, v.data, width, &grads.items, &c),
                "content.tags" => update_rows(p.data, m.data, v.data, width, &grads.content.tags, &c),
                "content.text" => update_rows(p.data, m.data, v.data, width, &grads.content.text, &c),
                name => {
                    let g = dense
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, g)| *g)
                        .expect("every dense group has a gradient");
                    update(p.data, m.data, v.data, g, &c);
                }
            }
        }
    }
}

fn dense_grads<T: Scalar>(g: &Gradients<T>) -> Vec<(&'static str, &[T])> {
    let mut out: Vec<(&'static str, &[T])> = vec![
        ("cold_bias", g.cold_bias.as_slice().unwrap()),
        ("multiview.w_in", g.multiview.w_in.as_slice().unwrap()),
        ("multiview.b_in", g.multiview.b_in.as_slice().unwrap()),
        ("multiview.w_out", g.multiview.w_out.as_slice().unwrap()),
        ("multiview.b_out", g.multiview.b_out.as_slice().unwrap()),
        ("cold.w_in", g.cold.w_in.as_slice().unwrap()),
        ("cold.b_in", g.cold.b_in.as_slice().unwrap()),
        ("cold.w_out", g.cold.w_out.as_slice().unwrap()),
        ("cold.b_out", g.cold.b_out.as_slice().unwrap()),
        ("scorer.w0", g.scorer.w0.as_slice().unwrap()),
        ("scorer.r0", g.scorer.r0.as_slice().unwrap()),
        ("scorer.w1", g.scorer.w1.as_slice().unwrap()),
        ("scorer.r1", g.scorer.r1.as_slice().unwrap()),
        ("scorer.w2", g.scorer.w2.as_slice().unwrap()),
        ("scorer.r2", std::slice::from_ref(&g.scorer.r2)),
    ];
    if let Some(n) = &g.content.numeric {
        out.push(("content.numeric.weight", n.weight.as_slice().unwrap()));
        out.push(("content.numeric.bias", n.bias.as_slice().unwrap()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::AnalyzerConfig;
    use crate::network::{ModelDims, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams<f64> {
        let dims = ModelDims {
            users: 3,
            items: 4,
            dim: 2,
            hidden: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ModelParams::init(&dims, &AnalyzerConfig::tags_only(2), 3, &mut rng)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let mut g = Gradients::for_params(&p);
        g.scorer.r2 = 0.5;
        g.users.add(1, 1.0, ndarray::array![1.0, -2.0].view());
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &g, &Trainable::for_kind(ModelKind::Cwh));
        // with bias correction the first step is lr * sign(g) up to epsilon
        assert!((before.scorer.r2 - p.scorer.r2 - 1e-3).abs() < 1e-9);
        assert!((before.users[[1, 0]] - p.users[[1, 0]] - 1e-3).abs() < 1e-9);
        assert!((p.users[[1, 1]] - before.users[[1, 1]] - 1e-3).abs() < 1e-9);
        // untouched rows and zero-gradient dense entries stay put
        assert_eq!(p.users.row(0), before.users.row(0));
        assert_eq!(p.items, before.items);
        assert_eq!(p.scorer.w0, before.scorer.w0);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = params();
        let before = p.clone();
        let mut g = Gradients::for_params(&p);
        g.scorer.w0.fill(1.0);
        g.items.add(2, 1.0, ndarray::array![3.0, 3.0].view());
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(&p, cfg);
        adam.step(&mut p, &g, &Trainable::for_kind(ModelKind::Cwh));
        assert_eq!(p, before);
    }

    #[test]
    fn frozen_groups_are_skipped() {
        let mut p = params();
        let before = p.clone();
        let mut g = Gradients::for_params(&p);
        g.items.add(0, 1.0, ndarray::array![1.0, 1.0].view());
        g.cold.b_out.fill(1.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &g, &Trainable::for_kind(ModelKind::CbOnly));
        assert_eq!(p.items, before.items);
        assert_eq!(p.cold, before.cold);
    }
}
