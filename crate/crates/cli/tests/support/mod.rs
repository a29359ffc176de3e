//! Independent oracles and random instance generators for the acceptance
//! suite. Nothing here calls the ranking or loss code under test.

#![allow(dead_code)]

use std::cmp::Ordering;

use dal_core::anchors::{AnchorBank, AnchorRef, CameraAnchors, MergeState};
use dal_core::data::SyntheticData;
use dal_core::model::{finite_diff_check, FdReport};
use dal_core::objective::FrozenBatch;
use dal_core::{EmbeddingHead, HeadKind, HeadSpec, ObjectiveConfig, Rows};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Rows<f64> {
    Rows::from_flat(dim, gaussian(rng, n * dim)).unwrap()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distances from the normalized query to every normalized row.
pub fn brute_distances(query: &[f64], rows: &Rows<f64>) -> Vec<f64> {
    let q = unit(query);
    rows.iter().map(|r| dist(&q, &unit(r))).collect()
}

/// `(distance, index)` lexicographic comparison.
fn before(d: &[f64], a: usize, b: usize) -> bool {
    match d[a].partial_cmp(&d[b]).unwrap() {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a < b,
    }
}

/// Ascending order by repeated minimum selection.
pub fn brute_order(d: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..d.len()).collect();
    let mut out = Vec::with_capacity(d.len());
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if before(d, left[j], left[best]) {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// 0-based position of `g` in the ranking, counted directly.
fn position(d: &[f64], g: usize) -> usize {
    (0..d.len()).filter(|&h| h != g && before(d, h, g)).count()
}

pub fn brute_rank1(query: &[f64], rows: &Rows<f64>) -> usize {
    let d = brute_distances(query, rows);
    (0..d.len()).find(|&g| position(&d, g) == 0).unwrap()
}

/// `(forward peer, backward index, consistent)` for two cameras of raw anchors.
pub fn brute_cyclic(own: &Rows<f64>, peers: &Rows<f64>, query: usize) -> (usize, usize, bool) {
    let p = brute_rank1(own.row(query), peers);
    let b = brute_rank1(peers.row(p), own);
    (p, b, b == query)
}

/// First-hit 0-based positions and average precisions per query.
fn brute_query_stats(query: &Rows<f64>, qids: &[u64], gallery: &Rows<f64>, gids: &[u64]) -> Vec<(usize, f64)> {
    query
        .iter()
        .zip(qids)
        .map(|(q, &id)| {
            let d = brute_distances(q, gallery);
            let rel: Vec<usize> = (0..gids.len()).filter(|&g| gids[g] == id).collect();
            let first = rel.iter().map(|&g| position(&d, g)).min().unwrap();
            let ap = rel
                .iter()
                .map(|&g| {
                    let pos = position(&d, g);
                    let hits = rel.iter().filter(|&&h| position(&d, h) <= pos).count();
                    hits as f64 / (pos + 1) as f64
                })
                .sum::<f64>()
                / rel.len() as f64;
            (first, ap)
        })
        .collect()
}

pub fn brute_cmc(query: &Rows<f64>, qids: &[u64], gallery: &Rows<f64>, gids: &[u64]) -> Vec<f64> {
    let stats = brute_query_stats(query, qids, gallery, gids);
    (0..gallery.len())
        .map(|r| stats.iter().filter(|(first, _)| *first <= r).count() as f64 / stats.len() as f64)
        .collect()
}

pub fn brute_map(query: &Rows<f64>, qids: &[u64], gallery: &Rows<f64>, gids: &[u64]) -> f64 {
    let stats = brute_query_stats(query, qids, gallery, gids);
    stats.iter().map(|(_, ap)| ap).sum::<f64>() / stats.len() as f64
}

/// Rows with occasional exact duplicates so tie-breaking is exercised.
pub fn rows_with_ties(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Rows<f64> {
    let mut rows = Rows::with_capacity(dim, n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.2) {
            let j = rng.random_range(0..i);
            let copy = rows.row(j).to_vec();
            rows.push(&copy).unwrap();
        } else {
            rows.push(&gaussian(rng, dim)).unwrap();
        }
    }
    rows
}

/// A random bank; each anchor is merged with a random peer (and an unrelated
/// counterpart vector) with probability `p_merged`.
pub fn random_bank(rng: &mut ChaCha8Rng, counts: &[usize], dim: usize, p_merged: f64) -> AnchorBank<f64> {
    let cams = counts
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let intra = gaussian_rows(rng, n, dim);
            let mut cross = intra.clone();
            let mut merge = vec![MergeState::Unmerged; n];
            for (i, state) in merge.iter_mut().enumerate() {
                if rng.random_bool(p_merged) {
                    let mut l = rng.random_range(0..counts.len() - 1);
                    if l >= k {
                        l += 1;
                    }
                    *state = MergeState::Merged { peer: AnchorRef::new(l, rng.random_range(0..counts[l])) };
                    cross.row_mut(i).copy_from_slice(&gaussian(rng, dim));
                }
            }
            CameraAnchors::from_parts(intra, cross, merge).unwrap()
        })
        .collect();
    AnchorBank::from_parts(cams, 0.5).unwrap()
}

pub struct GradCase {
    pub head: EmbeddingHead<f64>,
    pub raws: Rows<f64>,
    pub sources: Vec<AnchorRef>,
    pub bank: AnchorBank<f64>,
}

pub fn random_grad_case(rng: &mut ChaCha8Rng, kind: usize) -> GradCase {
    let d_in = rng.random_range(2..=8);
    let (kind, d_out) = match kind % 3 {
        0 => (HeadKind::Identity, d_in),
        1 => (HeadKind::Linear, rng.random_range(2..=8)),
        _ => (HeadKind::OneHidden { hidden: rng.random_range(2..=6) }, rng.random_range(2..=8)),
    };
    let spec = HeadSpec { kind, d_in, d_out };
    let params: Vec<f64> = gaussian(rng, spec.param_count()).into_iter().map(|v| 0.7 * v).collect();
    let head = EmbeddingHead::from_params(spec, params).unwrap();
    let cameras = rng.random_range(2..=3);
    let counts: Vec<usize> = (0..cameras).map(|_| rng.random_range(2..=6)).collect();
    let bank = random_bank(rng, &counts, d_out, 0.5);
    let batch = rng.random_range(1..=6);
    let raws = gaussian_rows(rng, batch, d_in);
    let sources = (0..batch)
        .map(|_| {
            let k = rng.random_range(0..cameras);
            AnchorRef::new(k, rng.random_range(0..counts[k]))
        })
        .collect();
    GradCase { head, raws, sources, bank }
}

fn embed(head: &EmbeddingHead<f64>, raws: &Rows<f64>) -> Rows<f64> {
    let mut out = Rows::new(head.spec().d_out);
    for r in raws.iter() {
        out.push(&head.forward(r).unwrap()).unwrap();
    }
    out
}

/// Hidden pre-activations computed from the documented parameter layout.
fn hidden_pre(head: &EmbeddingHead<f64>, raw: &[f64]) -> Vec<f64> {
    let HeadSpec { kind, d_in, .. } = head.spec();
    let HeadKind::OneHidden { hidden } = kind else { return Vec::new() };
    let p = head.params();
    (0..hidden).map(|h| p[hidden * d_in + h] + (0..d_in).map(|c| p[h * d_in + c] * raw[c]).sum::<f64>()).collect()
}

pub struct GradOutcome {
    pub report: FdReport,
    pub active: bool,
    pub other_branch: bool,
    pub source_branch: bool,
}

/// Checks the analytic gradient of the joint objective against central
/// differences, with rank-1 selections and batch means frozen. Returns `None`
/// for cases within `boundary` of a hinge or rectifier kink.
pub fn check_grad_case(case: &GradCase, cfg: &ObjectiveConfig<f64>, boundary: f64) -> Option<GradOutcome> {
    let emb = embed(&case.head, &case.raws);
    let frozen = FrozenBatch::prepare(&case.bank, &emb, &case.sources).unwrap();
    let (loss, emb_grads) = frozen.gradient(&emb, cfg).unwrap();
    if loss.frames.iter().any(|t| t.intra_pre.abs() < boundary || t.cross_pre.abs() < boundary) {
        return None;
    }
    if case.raws.iter().any(|r| hidden_pre(&case.head, r).iter().any(|v| v.abs() < boundary)) {
        return None;
    }
    let active = loss.loss_total > 0.0;
    let other_branch = frozen.rankings().iter().zip(&case.sources).any(|(r, s)| r.rank1_index != s.index);
    let source_branch = frozen.rankings().iter().zip(&case.sources).any(|(r, s)| r.rank1_index == s.index);

    let spec = case.head.spec();
    let mut param_grad = vec![0.0; case.head.params().len()];
    let mut input_grad = Vec::new();
    for (x, g) in case.raws.iter().zip(emb_grads.iter()) {
        input_grad.extend(case.head.accumulate_backward(x, g, &mut param_grad).unwrap());
    }

    let inputs =
        finite_diff_check(case.raws.as_flat(), &input_grad, &(0..input_grad.len()).collect::<Vec<_>>(), |flat| {
            let raws = Rows::from_flat(spec.d_in, flat.to_vec()).unwrap();
            frozen.evaluate(&embed(&case.head, &raws), cfg).unwrap().loss_total
        });
    let mut report = inputs;
    if !param_grad.is_empty() {
        let coords: Vec<usize> = (0..param_grad.len()).collect();
        let params = finite_diff_check(case.head.params(), &param_grad, &coords, |p| {
            let head = EmbeddingHead::from_params(spec, p.to_vec()).unwrap();
            frozen.evaluate(&embed(&head, &case.raws), cfg).unwrap().loss_total
        });
        if params.max_rel_error > report.max_rel_error {
            report = FdReport { checked: report.checked + params.checked, ..params };
        } else {
            report.checked += params.checked;
        }
    }
    Some(GradOutcome { report, active, other_branch, source_branch })
}

/// Fraction of tracklets whose mean observed feature is nearest to its own
/// identity's prototype as seen through its camera's distortion.
pub fn prototype_ceiling(s: &SyntheticData) -> f64 {
    let frames = &s.dataset.frames;
    let labels = s.dataset.labels.as_ref().unwrap();
    let d = frames.dim();
    let seen: Vec<Vec<Vec<f64>>> = s
        .camera_transforms
        .iter()
        .map(|a| {
            s.prototypes.iter().map(|p| (0..d).map(|i| (0..d).map(|c| a[i * d + c] * p[c]).sum()).collect()).collect()
        })
        .collect();
    let mut correct = 0;
    let mut total = 0;
    for r in frames.tracklet_refs() {
        let rows = frames.tracklet_frames(r);
        let mut mean = vec![0.0; d];
        for &row in rows {
            for (m, &v) in mean.iter_mut().zip(frames.feature(row)) {
                *m += f64::from(v) / rows.len() as f64;
            }
        }
        let best = (0..seen[r.camera].len())
            .min_by(|&a, &b| dist(&mean, &seen[r.camera][a]).total_cmp(&dist(&mean, &seen[r.camera][b])))
            .unwrap();
        total += 1;
        if best as u64 == labels.identity(r) {
            correct += 1;
        }
    }
    correct as f64 / total as f64
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
