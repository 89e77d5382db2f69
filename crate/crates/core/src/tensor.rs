//! Small dense helpers shared by the encoders, network and optimizer.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

pub(crate) fn uniform_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    bound: f64,
    rng: &mut R,
) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..=bound)))
}

pub(crate) fn normal_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(normal.sample(rng)))
}

pub(crate) fn normal_vector<T: Scalar, R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Array1<T> {
    let normal = Normal::new(0.0, std).expect("valid std");
    Array1::from_shape_simple_fn(len, || T::of(normal.sample(rng)))
}

#[inline]
pub(crate) fn relu_inplace<T: Scalar>(x: &mut Array1<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// `acc += scale * a ⊗ b`
pub(crate) fn add_outer<T: Scalar>(acc: &mut Array2<T>, scale: T, a: ArrayView1<T>, b: ArrayView1<T>) {
    for (mut row, &ai) in acc.rows_mut().into_iter().zip(a.iter()) {
        let s = scale * ai;
        if s == T::zero() {
            continue;
        }
        match (row.as_slice_mut(), b.as_slice()) {
            (Some(r), Some(bs)) => {
                for (x, &bj) in r.iter_mut().zip(bs) {
                    *x += s * bj;
                }
            }
            (_, _) => row.zip_mut_with(&b, |r, &bj| *r += s * bj),
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // four partial sums keep the dependency chain short
    let mut acc = [T::zero(); 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `w x`; rows of `w` must be contiguous, as they are for any column range
/// of a row-major matrix.
pub(crate) fn matvec<T: Scalar>(w: ArrayView2<T>, x: ArrayView1<T>) -> Array1<T> {
    let xs = x.to_vec();
    w.rows()
        .into_iter()
        .map(|row| match row.as_slice() {
            Some(r) => dot(r, &xs),
            None => row.dot(&x),
        })
        .collect()
}

/// `wᵀ g`, skipping rows whose coefficient is zero.
pub(crate) fn matvec_t<T: Scalar>(w: ArrayView2<T>, g: ArrayView1<T>) -> Array1<T> {
    let mut out = Array1::zeros(w.ncols());
    let o = out.as_slice_mut().expect("fresh array");
    for (row, &gr) in w.rows().into_iter().zip(g.iter()) {
        if gr == T::zero() {
            continue;
        }
        match row.as_slice() {
            Some(r) => {
                for (a, &v) in o.iter_mut().zip(r) {
                    *a += gr * v;
                }
            }
            None => {
                for (a, &v) in o.iter_mut().zip(row.iter()) {
                    *a += gr * v;
                }
            }
        }
    }
    out
}

#[inline]
pub(crate) fn axpy<T: Scalar>(mut acc: ArrayViewMut1<T>, scale: T, x: ArrayView1<T>) {
    acc.zip_mut_with(&x, |a, &v| *a += scale * v);
}

pub(crate) fn all_finite<'a, T: Scalar>(mut it: impl Iterator<Item = &'a T>) -> bool {
    it.all(|v| v.is_finite())
}

pub(crate) fn sq_norm<'a, T: Scalar>(it: impl Iterator<Item = &'a T>) -> T {
    it.fold(T::zero(), |acc, &v| acc + v * v)
}

/// Sparse gradient for an embedding-like table: only touched rows are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGrads<T> {
    width: usize,
    rows: BTreeMap<usize, Array1<T>>,
}

impl<T: Scalar> RowGrads<T> {
    pub fn new(width: usize) -> Self {
        RowGrads {
            width,
            rows: BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, index: usize) -> &mut Array1<T> {
        let width = self.width;
        self.rows.entry(index).or_insert_with(|| Array1::zeros(width))
    }

    /// `row[index] += scale * g`
    pub fn add(&mut self, index: usize, scale: T, g: ArrayView1<T>) {
        axpy(self.row_mut(index).view_mut(), scale, g);
    }

    pub fn get(&self, index: usize) -> Option<&Array1<T>> {
        self.rows.get(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Array1<T>)> {
        self.rows.iter().map(|(&k, v)| (k, v))
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    pub fn merge(&mut self, other: &RowGrads<T>) {
        for (k, g) in other.iter() {
            self.add(k, T::one(), g.view());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.rows.values().all(|r| all_finite(r.iter()))
    }
}
