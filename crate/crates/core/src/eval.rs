//! Tracklet pooling, CMC / mAP retrieval metrics and association metrics.
//!
//! All metrics run in `f64`. Ranking ties resolve to the lower gallery index.

use crate::anchors::{AnchorBank, AnchorRef, MergeState};
use crate::data::{FrameSet, IdentityLabels};
use crate::error::{DalError, Result};
use crate::linalg::{distance_row, l2_normalize, Rows};
use crate::model::EmbeddingHead;
use crate::scalar::Scalar;

/// Element-wise max over a tracklet's frame embeddings, then ℓ2-normalized.
pub fn tracklet_representation(frames: &Rows<f64>) -> Result<Vec<f64>> {
    let mut it = frames.iter();
    let first = it.next().ok_or(DalError::EmptyAnchorSet)?;
    let mut pooled = first.to_vec();
    for f in it {
        for (p, &v) in pooled.iter_mut().zip(f) {
            *p = p.max(v);
        }
    }
    l2_normalize(&pooled)
}

/// 1-based ranks at which gallery items with `query_id` appear, ascending.
fn relevant_ranks(query: &[f64], query_id: u64, gallery: &Rows<f64>, gallery_ids: &[u64]) -> Result<Vec<usize>> {
    let ranking = distance_row(query, gallery)?;
    Ok(ranking.order.iter().enumerate().filter(|(_, &g)| gallery_ids[g] == query_id).map(|(pos, _)| pos + 1).collect())
}

fn average_precision(ranks: &[usize]) -> f64 {
    ranks.iter().enumerate().map(|(hit, &rank)| (hit + 1) as f64 / rank as f64).sum::<f64>() / ranks.len() as f64
}

fn cmc_from_first_hits(first_hits: &[usize], len: usize) -> Vec<f64> {
    let mut counts = vec![0usize; len];
    for &r in first_hits {
        counts[r - 1] += 1;
    }
    let n = first_hits.len() as f64;
    let mut acc = 0usize;
    counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect()
}

fn per_query_ranks(
    query: &Rows<f64>,
    query_ids: &[u64],
    gallery: &Rows<f64>,
    gallery_ids: &[u64],
) -> Result<Vec<Vec<usize>>> {
    if query.len() != query_ids.len() {
        return Err(DalError::DimensionMismatch { expected: query.len(), found: query_ids.len() });
    }
    if gallery.len() != gallery_ids.len() {
        return Err(DalError::DimensionMismatch { expected: gallery.len(), found: gallery_ids.len() });
    }
    query
        .iter()
        .zip(query_ids)
        .enumerate()
        .map(|(q, (v, &id))| {
            let ranks = relevant_ranks(v, id, gallery, gallery_ids)?;
            if ranks.is_empty() {
                return Err(DalError::QueryWithoutGalleryMatch { query: q });
            }
            Ok(ranks)
        })
        .collect()
}

/// `cmc[r]` is the fraction of queries whose first correct match sits at rank `≤ r + 1`.
pub fn cmc_curve(query: &Rows<f64>, query_ids: &[u64], gallery: &Rows<f64>, gallery_ids: &[u64]) -> Result<Vec<f64>> {
    let ranks = per_query_ranks(query, query_ids, gallery, gallery_ids)?;
    let firsts: Vec<usize> = ranks.iter().map(|r| r[0]).collect();
    Ok(cmc_from_first_hits(&firsts, gallery.len()))
}

pub fn mean_average_precision(
    query: &Rows<f64>,
    query_ids: &[u64],
    gallery: &Rows<f64>,
    gallery_ids: &[u64],
) -> Result<f64> {
    let ranks = per_query_ranks(query, query_ids, gallery, gallery_ids)?;
    Ok(ranks.iter().map(|r| average_precision(r)).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of all anchors currently merged with a cross-camera peer.
pub fn association_rate<T: Scalar>(bank: &AnchorBank<T>) -> f64 {
    bank.merged_count() as f64 / bank.total_anchors().max(1) as f64
}

/// Among merged anchors, the fraction whose peer shares the anchor's identity.
pub fn true_match_rate<T: Scalar>(bank: &AnchorBank<T>, labels: &IdentityLabels) -> Result<f64> {
    let mut merged = 0usize;
    let mut correct = 0usize;
    for (k, cam) in bank.cameras().iter().enumerate() {
        for (i, m) in cam.merge_states().iter().enumerate() {
            if let MergeState::Merged { peer } = m {
                merged += 1;
                if labels.identity(AnchorRef::new(k, i)) == labels.identity(*peer) {
                    correct += 1;
                }
            }
        }
    }
    if merged == 0 {
        return Err(DalError::NoMergedAnchors);
    }
    Ok(correct as f64 / merged as f64)
}

/// Pooled representation of every tracklet: `out[k]` holds camera `k`'s
/// tracklets in index order.
pub fn pool_tracklets(head: &EmbeddingHead<f64>, frames: &FrameSet) -> Result<Vec<Rows<f64>>> {
    let d_out = head.spec().d_out;
    frames
        .tracklet_counts()
        .iter()
        .enumerate()
        .map(|(camera, &n)| {
            let mut reps = Rows::with_capacity(d_out, n);
            for i in 0..n {
                let mut embedded = Rows::new(d_out);
                for &row in frames.tracklet_frames(AnchorRef::new(camera, i)) {
                    let x: Vec<f64> = frames.feature(row).iter().map(|&v| f64::from(v)).collect();
                    embedded.push(&head.forward(&x)?)?;
                }
                reps.push(&tracklet_representation(&embedded)?)?;
            }
            Ok(reps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub queries: usize,
    /// Queries dropped because their identity is absent from their gallery.
    pub skipped: usize,
}

/// Cross-camera retrieval over pooled tracklets.
///
/// With two cameras, camera 0 queries camera 1. With more, every tracklet
/// queries the union of all other cameras.
pub fn retrieval_metrics(reps: &[Rows<f64>], labels: &IdentityLabels) -> Result<RetrievalMetrics> {
    if reps.len() < 2 {
        return Err(DalError::SingleCamera { cameras: reps.len() });
    }
    let query_cameras: Vec<usize> = if reps.len() == 2 { vec![0] } else { (0..reps.len()).collect() };
    let mut firsts = Vec::new();
    let mut ap_sum = 0.0;
    let mut skipped = 0;
    let mut longest = 0;
    for &k in &query_cameras {
        let dim = reps[k].dim();
        let mut gallery = Rows::new(dim);
        let mut gallery_ids = Vec::new();
        for (l, cam) in reps.iter().enumerate().filter(|&(l, _)| l != k) {
            for (i, v) in cam.iter().enumerate() {
                gallery.push(v)?;
                gallery_ids.push(labels.identity(AnchorRef::new(l, i)));
            }
        }
        longest = longest.max(gallery.len());
        for (i, q) in reps[k].iter().enumerate() {
            let ranks = relevant_ranks(q, labels.identity(AnchorRef::new(k, i)), &gallery, &gallery_ids)?;
            if ranks.is_empty() {
                skipped += 1;
                continue;
            }
            firsts.push(ranks[0]);
            ap_sum += average_precision(&ranks);
        }
    }
    if firsts.is_empty() {
        return Err(DalError::QueryWithoutGalleryMatch { query: 0 });
    }
    Ok(RetrievalMetrics {
        cmc: cmc_from_first_hits(&firsts, longest),
        map: ap_sum / firsts.len() as f64,
        queries: firsts.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iteration: u64,
    pub cmc: Vec<f64>,
    pub map: f64,
    pub association_rate: f64,
    /// `None` while no anchor is merged.
    pub true_match_rate: Option<f64>,
    pub queries: usize,
}

impl EvalReport {
    /// CMC at 1-based `rank`, saturating at the end of the curve.
    pub fn rank(&self, rank: usize) -> f64 {
        self.cmc.get(rank.saturating_sub(1)).or(self.cmc.last()).copied().unwrap_or(0.0)
    }
}

/// Full evaluation of a trained head and anchor bank.
pub fn evaluate(
    head: &EmbeddingHead<f64>,
    bank: &AnchorBank<f64>,
    frames: &FrameSet,
    labels: &IdentityLabels,
    iteration: u64,
) -> Result<EvalReport> {
    if head.spec().d_in != frames.dim() {
        return Err(DalError::DimensionMismatch { expected: head.spec().d_in, found: frames.dim() });
    }
    let reps = pool_tracklets(head, frames)?;
    let m = retrieval_metrics(&reps, labels)?;
    let tmr = match true_match_rate(bank, labels) {
        Ok(v) => Some(v),
        Err(DalError::NoMergedAnchors) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        iteration,
        cmc: m.cmc,
        map: m.map,
        association_rate: association_rate(bank),
        true_match_rate: tmr,
        queries: m.queries,
    })
}
