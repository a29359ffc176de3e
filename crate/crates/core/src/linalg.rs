//! Normalization, pairwise distances and distance rankings.
//!
//! All reductions run in a fixed left-to-right order so results do not depend
//! on how callers split work across threads.

use std::cmp::Ordering;

use crate::error::{DalError, Result};
use crate::scalar::Scalar;

/// Vectors whose Euclidean norm falls below this are rejected by [`l2_normalize`].
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Dense row-major matrix: one vector per row, all of the same dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rows<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Rows<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * rows) }
    }

    /// Wraps flat row-major storage. `data.len()` must be a multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(DalError::DimensionMismatch { expected: dim, found: data.len() });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(DalError::EmptyAnchorSet)?;
        let mut out = Self::with_capacity(dim, rows.len());
        for r in rows {
            out.push(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn push(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.dim {
            return Err(DalError::DimensionMismatch { expected: self.dim, found: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    /// Row-wise [`l2_normalize`]; fails on the first degenerate row.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.iter() {
            data.extend(l2_normalize(row)?);
        }
        Ok(Self { dim: self.dim, data })
    }

    pub fn cast<U: Scalar>(&self) -> Rows<U> {
        Rows { dim: self.dim, data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect() }
    }
}

pub fn check_finite<T: Scalar>(v: &[T]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(DalError::NonFiniteValue { index }),
        None => Ok(()),
    }
}

pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Plain Euclidean distance, no normalization.
pub fn euclidean<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter()
        .zip(v)
        .fold(T::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + d * d
        })
        .sqrt()
}

/// Scales `v` to unit Euclidean norm.
///
/// Degenerate (near-zero) vectors are an error rather than being mapped to an
/// arbitrary direction.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); v.len()];
    normalize_into(v, &mut out)?;
    Ok(out)
}

fn normalize_into<T: Scalar>(v: &[T], out: &mut [T]) -> Result<()> {
    check_finite(v)?;
    let n = norm(v);
    if n.is_nan() || n.as_f64() < ZERO_NORM_THRESHOLD {
        return Err(DalError::ZeroVector { norm: n.as_f64() });
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = x / n;
    }
    Ok(())
}

/// Distance between the unit-normalized versions of `u` and `v`; lies in `[0, 2]`.
pub fn pair_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(DalError::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    Ok(euclidean(&l2_normalize(u)?, &l2_normalize(v)?))
}

/// Distances from one query to every anchor, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRanking<T> {
    /// One distance per anchor, in anchor order.
    pub distances: Vec<T>,
    /// Anchor indices sorted by ascending distance, ties by lower index.
    pub order: Vec<usize>,
    pub rank1_index: usize,
    pub rank1_distance: T,
}

impl<T: Scalar> DistanceRanking<T> {
    pub fn from_distances(distances: Vec<T>) -> Result<Self> {
        if distances.is_empty() {
            return Err(DalError::EmptyAnchorSet);
        }
        let mut keyed: Vec<(T, usize)> = distances.iter().copied().zip(0..).collect();
        keyed.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        let order: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
        let rank1_index = order[0];
        let rank1_distance = distances[rank1_index];
        Ok(Self { distances, order, rank1_index, rank1_distance })
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// Ranks `f` against every anchor by [`pair_distance`].
pub fn distance_row<T: Scalar>(f: &[T], anchors: &Rows<T>) -> Result<DistanceRanking<T>> {
    if anchors.is_empty() {
        return Err(DalError::EmptyAnchorSet);
    }
    if f.len() != anchors.dim() {
        return Err(DalError::DimensionMismatch { expected: anchors.dim(), found: f.len() });
    }
    let f_hat = l2_normalize(f)?;
    let mut a_hat = vec![T::zero(); f.len()];
    let mut distances = Vec::with_capacity(anchors.len());
    for a in anchors.iter() {
        normalize_into(a, &mut a_hat)?;
        distances.push(euclidean(&f_hat, &a_hat));
    }
    DistanceRanking::from_distances(distances)
}

/// [`distance_row`] for inputs that are already unit-normalized.
pub fn rank_normalized<T: Scalar>(f_hat: &[T], anchors_hat: &Rows<T>) -> Result<DistanceRanking<T>> {
    if anchors_hat.is_empty() {
        return Err(DalError::EmptyAnchorSet);
    }
    if f_hat.len() != anchors_hat.dim() {
        return Err(DalError::DimensionMismatch { expected: anchors_hat.dim(), found: f_hat.len() });
    }
    DistanceRanking::from_distances(anchors_hat.iter().map(|a| euclidean(f_hat, a)).collect())
}

/// Gradient of `‖ℓ2(f) − target‖` with respect to the raw vector `f`.
///
/// `target` must be unit-norm and constant. Returns the zero subgradient when
/// the distance vanishes.
pub fn normalized_distance_grad<T: Scalar>(f: &[T], target_hat: &[T]) -> Result<(T, Vec<T>)> {
    let f_hat = l2_normalize(f)?;
    let f_norm = norm(f);
    let diff: Vec<T> = f_hat.iter().zip(target_hat).map(|(&a, &b)| a - b).collect();
    let dist = norm(&diff);
    if dist == T::zero() {
        return Ok((dist, vec![T::zero(); f.len()]));
    }
    // d/df ‖f̂ − t‖ = (I − f̂ f̂ᵀ) (f̂ − t) / (‖f‖ ‖f̂ − t‖)
    let g: Vec<T> = diff.iter().map(|&d| d / dist).collect();
    let proj = dot(&f_hat, &g);
    let grad = g.iter().zip(&f_hat).map(|(&gi, &fi)| (gi - fi * proj) / f_norm).collect();
    Ok((dist, grad))
}
