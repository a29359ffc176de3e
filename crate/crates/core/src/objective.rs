//! Top-push margin losses over intra-camera and cross-camera anchors.
//!
//! For an in-batch frame `f` from source tracklet `p` of camera `k`, let `t` be
//! the rank-1 intra anchor of `f` within camera `k`, `D(f, ·)` the distance
//! between normalized vectors and `D̄` the mean rank-1 distance of camera `k`'s
//! frames in the batch. The per-frame terms are
//!
//! ```text
//! intra = [D(f, x_p) − D(f, x_t) + m]₊   if t ≠ p
//!         [D(f, x_p) − D̄        + m]₊   if t = p
//! cross = same, with D(f, a_p) in place of D(f, x_p)
//! ```
//!
//! Batch losses are means over the batch. Gradients treat the anchors, the
//! rank-1 selection and `D̄` as constants.

use crate::anchors::{AnchorBank, AnchorRef, NormalizedView};
use crate::error::{DalError, Result};
use crate::linalg::{self, l2_normalize, normalized_distance_grad, rank_normalized, DistanceRanking, Rows};
use crate::scalar::Scalar;

/// Which loss terms enter the optimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Joint,
    IntraOnly,
    CrossOnly,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Joint => "joint",
            Ablation::IntraOnly => "I_only",
            Ablation::CrossOnly => "C_only",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = DalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Ablation::Joint),
            "I_only" | "intra" => Ok(Ablation::IntraOnly),
            "C_only" | "cross" => Ok(Ablation::CrossOnly),
            other => Err(DalError::InvalidConfig(format!("unknown ablation {other:?} (joint, I_only, C_only)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig<T> {
    pub margin: T,
    pub lambda: T,
    pub ablation: Ablation,
}

impl<T: Scalar> Default for ObjectiveConfig<T> {
    fn default() -> Self {
        Self { margin: T::from_f64(0.2), lambda: T::one(), ablation: Ablation::Joint }
    }
}

impl<T: Scalar> ObjectiveConfig<T> {
    /// Weights `(w_intra, w_cross)` applied to the two batch losses.
    pub fn weights(&self) -> (T, T) {
        match self.ablation {
            Ablation::Joint => (T::one(), self.lambda),
            Ablation::IntraOnly => (T::one(), T::zero()),
            Ablation::CrossOnly => (T::zero(), T::one()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= T::zero() {
            return Err(DalError::InvalidConfig(format!("margin must be positive, got {}", self.margin)));
        }
        if self.lambda.is_nan() || self.lambda < T::zero() {
            return Err(DalError::InvalidConfig(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchCameraStats<T> {
    pub camera: usize,
    /// In-batch frames from this camera.
    pub count: usize,
    pub mean_rank1: T,
}

/// Mean rank-1 distance per camera over the batch. Cameras without frames in
/// the batch are omitted; the result is ordered by camera.
pub fn batch_mean_rank1<T: Scalar>(cameras: &[usize], rankings: &[DistanceRanking<T>]) -> Vec<BatchCameraStats<T>> {
    let num = cameras.iter().max().map_or(0, |&c| c + 1);
    let mut sums = vec![T::zero(); num];
    let mut counts = vec![0usize; num];
    for (&c, r) in cameras.iter().zip(rankings) {
        sums[c] = sums[c] + r.rank1_distance;
        counts[c] += 1;
    }
    (0..num)
        .filter(|&c| counts[c] > 0)
        .map(|c| BatchCameraStats { camera: c, count: counts[c], mean_rank1: sums[c] / T::from_f64(counts[c] as f64) })
        .collect()
}

/// Which hinge branch a frame falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The rank-1 anchor is the source tracklet; compete against the batch mean.
    SourceIsRank1,
    /// Another tracklet outranks the source.
    OtherIsRank1 { rank1: usize },
}

impl Branch {
    pub fn of(source: usize, rank1: usize) -> Self {
        if source == rank1 {
            Branch::SourceIsRank1
        } else {
            Branch::OtherIsRank1 { rank1 }
        }
    }
}

fn hinge_pre<T: Scalar>(d_anchor: T, branch: Branch, d_rank1: T, mean_rank1: T, margin: T) -> T {
    match branch {
        Branch::OtherIsRank1 { .. } => d_anchor - d_rank1 + margin,
        Branch::SourceIsRank1 => d_anchor - mean_rank1 + margin,
    }
}

/// Per-frame intra-camera hinge. `d_source` is the distance to the source
/// tracklet's intra anchor, whether or not it is rank-1.
pub fn intra_loss<T: Scalar>(d_source: T, source: usize, ranking: &DistanceRanking<T>, mean_rank1: T, margin: T) -> T {
    let branch = Branch::of(source, ranking.rank1_index);
    hinge_pre(d_source, branch, ranking.rank1_distance, mean_rank1, margin).max(T::zero())
}

/// Per-frame cross-camera hinge. `d_cross` is the distance to the source
/// tracklet's cross anchor; rank-1 distance and batch mean come from the intra
/// ranking.
pub fn cross_loss<T: Scalar>(d_cross: T, source: usize, ranking: &DistanceRanking<T>, mean_rank1: T, margin: T) -> T {
    intra_loss(d_cross, source, ranking, mean_rank1, margin)
}

pub fn total_loss<T: Scalar>(loss_intra: T, loss_cross: T, lambda: T) -> T {
    loss_intra + lambda * loss_cross
}

/// Audit record for one in-batch frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTerms<T> {
    pub source: AnchorRef,
    pub branch: Branch,
    /// Distance to the source intra anchor.
    pub d_source: T,
    /// Distance to the rank-1 intra anchor.
    pub d_rank1: T,
    /// Distance to the source cross anchor.
    pub d_cross: T,
    pub mean_rank1: T,
    /// Hinge arguments before clamping at zero.
    pub intra_pre: T,
    pub cross_pre: T,
}

impl<T: Scalar> FrameTerms<T> {
    pub fn intra(&self) -> T {
        self.intra_pre.max(T::zero())
    }

    pub fn cross(&self) -> T {
        self.cross_pre.max(T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub loss_intra: T,
    pub loss_cross: T,
    /// `w_I·loss_intra + w_C·loss_cross`; equals `loss_intra + λ·loss_cross`
    /// for the joint objective.
    pub loss_total: T,
    pub margin: T,
    pub lambda: T,
    pub frames: Vec<FrameTerms<T>>,
}

/// One batch's rankings against a frozen anchor state.
///
/// Holds the rank-1 selections and per-camera batch means computed at
/// [`FrozenBatch::prepare`]; later evaluations recompute only the distances
/// that depend on the embeddings.
#[derive(Debug, Clone)]
pub struct FrozenBatch<T> {
    sources: Vec<AnchorRef>,
    rankings: Vec<DistanceRanking<T>>,
    stats: Vec<BatchCameraStats<T>>,
    frame_mean: Vec<T>,
    intra_hat: NormalizedView<T>,
    cross_hat: Vec<Rows<T>>,
}

impl<T: Scalar> FrozenBatch<T> {
    pub fn prepare(bank: &AnchorBank<T>, embeddings: &Rows<T>, sources: &[AnchorRef]) -> Result<Self> {
        if embeddings.len() != sources.len() {
            return Err(DalError::DimensionMismatch { expected: sources.len(), found: embeddings.len() });
        }
        if embeddings.dim() != bank.dim() {
            return Err(DalError::DimensionMismatch { expected: bank.dim(), found: embeddings.dim() });
        }
        let intra_hat = bank.normalized_view()?;
        let num_cameras = bank.num_cameras();
        let cross_hat = bank.normalized_cross()?;
        let mut rankings = Vec::with_capacity(sources.len());
        for (f, s) in embeddings.iter().zip(sources) {
            if s.camera >= num_cameras {
                return Err(DalError::UnknownCamera { camera: s.camera, cameras: num_cameras });
            }
            let anchors = intra_hat.camera(s.camera);
            if s.index >= anchors.len() {
                return Err(DalError::UnknownAnchor { camera: s.camera, index: s.index, len: anchors.len() });
            }
            rankings.push(rank_normalized(&l2_normalize(f)?, anchors)?);
        }
        let cameras: Vec<usize> = sources.iter().map(|s| s.camera).collect();
        let stats = batch_mean_rank1(&cameras, &rankings);
        let mut by_camera = vec![T::zero(); num_cameras];
        for s in &stats {
            by_camera[s.camera] = s.mean_rank1;
        }
        let frame_mean = cameras.iter().map(|&c| by_camera[c]).collect();
        Ok(Self { sources: sources.to_vec(), rankings, stats, frame_mean, intra_hat, cross_hat })
    }

    pub fn sources(&self) -> &[AnchorRef] {
        &self.sources
    }

    pub fn rankings(&self) -> &[DistanceRanking<T>] {
        &self.rankings
    }

    pub fn stats(&self) -> &[BatchCameraStats<T>] {
        &self.stats
    }

    /// Normalized intra anchors the batch was ranked against.
    pub fn view(&self) -> &NormalizedView<T> {
        &self.intra_hat
    }

    fn terms(&self, b: usize, f_hat: &[T], margin: T) -> FrameTerms<T> {
        let s = self.sources[b];
        let rank1 = self.rankings[b].rank1_index;
        let branch = Branch::of(s.index, rank1);
        let anchors = self.intra_hat.camera(s.camera);
        let d_source = linalg::euclidean(f_hat, anchors.row(s.index));
        let d_rank1 = linalg::euclidean(f_hat, anchors.row(rank1));
        let d_cross = linalg::euclidean(f_hat, self.cross_hat[s.camera].row(s.index));
        let mean = self.frame_mean[b];
        FrameTerms {
            source: s,
            branch,
            d_source,
            d_rank1,
            d_cross,
            mean_rank1: mean,
            intra_pre: hinge_pre(d_source, branch, d_rank1, mean, margin),
            cross_pre: hinge_pre(d_cross, branch, d_rank1, mean, margin),
        }
    }

    /// Loss values at `embeddings` with the frozen selections.
    pub fn evaluate(&self, embeddings: &Rows<T>, cfg: &ObjectiveConfig<T>) -> Result<LossBreakdown<T>> {
        self.check(embeddings)?;
        let mut frames = Vec::with_capacity(self.sources.len());
        for (b, f) in embeddings.iter().enumerate() {
            frames.push(self.terms(b, &l2_normalize(f)?, cfg.margin));
        }
        Ok(self.summarize(frames, cfg))
    }

    /// Loss values and the gradient of the optimized objective with respect to
    /// each raw embedding row.
    pub fn gradient(&self, embeddings: &Rows<T>, cfg: &ObjectiveConfig<T>) -> Result<(LossBreakdown<T>, Rows<T>)> {
        self.check(embeddings)?;
        let (w_intra, w_cross) = cfg.weights();
        let scale = T::one() / T::from_f64(self.sources.len() as f64);
        let mut grads = Rows::with_capacity(embeddings.dim(), embeddings.len());
        let mut frames = Vec::with_capacity(self.sources.len());
        for (b, f) in embeddings.iter().enumerate() {
            let t = self.terms(b, &l2_normalize(f)?, cfg.margin);
            let anchors = self.intra_hat.camera(t.source.camera);
            let mut g = vec![T::zero(); f.len()];
            let mut accumulate = |target: &[T], weight: T| -> Result<()> {
                if weight == T::zero() {
                    return Ok(());
                }
                let (_, dg) = normalized_distance_grad(f, target)?;
                for (gi, di) in g.iter_mut().zip(dg) {
                    *gi = *gi + weight * di;
                }
                Ok(())
            };
            let intra_w = if t.intra_pre > T::zero() { w_intra * scale } else { T::zero() };
            let cross_w = if t.cross_pre > T::zero() { w_cross * scale } else { T::zero() };
            accumulate(anchors.row(t.source.index), intra_w)?;
            accumulate(self.cross_hat[t.source.camera].row(t.source.index), cross_w)?;
            if let Branch::OtherIsRank1 { rank1 } = t.branch {
                accumulate(anchors.row(rank1), -(intra_w + cross_w))?;
            }
            grads.push(&g)?;
            frames.push(t);
        }
        Ok((self.summarize(frames, cfg), grads))
    }

    fn check(&self, embeddings: &Rows<T>) -> Result<()> {
        if embeddings.len() != self.sources.len() {
            return Err(DalError::DimensionMismatch { expected: self.sources.len(), found: embeddings.len() });
        }
        Ok(())
    }

    fn summarize(&self, frames: Vec<FrameTerms<T>>, cfg: &ObjectiveConfig<T>) -> LossBreakdown<T> {
        let n = T::from_f64(frames.len().max(1) as f64);
        let loss_intra = frames.iter().fold(T::zero(), |acc, f| acc + f.intra()) / n;
        let loss_cross = frames.iter().fold(T::zero(), |acc, f| acc + f.cross()) / n;
        let (w_intra, w_cross) = cfg.weights();
        LossBreakdown {
            loss_intra,
            loss_cross,
            loss_total: w_intra * loss_intra + w_cross * loss_cross,
            margin: cfg.margin,
            lambda: cfg.lambda,
            frames,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::init_anchor_bank;

    fn ranking(d: &[f64]) -> DistanceRanking<f64> {
        DistanceRanking::from_distances(d.to_vec()).unwrap()
    }

    #[test]
    fn batch_mean_examples() {
        let s = batch_mean_rank1(&[0], &[ranking(&[0.4, 0.9])]);
        assert_eq!(s, vec![BatchCameraStats { camera: 0, count: 1, mean_rank1: 0.4 }]);
        let s = batch_mean_rank1(&[1, 1], &[ranking(&[0.2, 0.7]), ranking(&[0.9, 0.6])]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].camera, 1);
        assert!((s[0].mean_rank1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn intra_loss_examples() {
        // rank-1 is anchor 1 at 0.5; source 0 at 0.8
        let r = ranking(&[0.8, 0.5]);
        assert!((intra_loss(0.8, 0, &r, 0.3, 0.2) - 0.5).abs() < 1e-15);
        let r = ranking(&[0.1, 0.7]);
        assert_eq!(intra_loss(0.1, 0, &r, 0.5, 0.2), 0.0);
        let r = ranking(&[0.5, 0.5, 0.9]);
        // tie resolves to index 0; source 1 sits at the same distance
        assert_eq!(intra_loss(0.5, 1, &r, 0.1, 0.2), 0.2);
    }

    #[test]
    fn cross_loss_examples() {
        let r = ranking(&[0.8, 0.5]);
        assert!((cross_loss(0.9, 0, &r, 0.3, 0.2) - 0.6).abs() < 1e-15);
        let r = ranking(&[0.0, 0.5]);
        assert_eq!(cross_loss(0.0, 0, &r, 0.2, 0.2), 0.0);
        assert_eq!(
            cross_loss(0.8, 0, &ranking(&[0.8, 0.5]), 0.3, 0.2),
            intra_loss(0.8, 0, &ranking(&[0.8, 0.5]), 0.3, 0.2)
        );
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(0.3f64, 0.5, 1.0) - 0.8).abs() < 1e-15);
        assert_eq!(total_loss(0.3, 0.5, 0.0), 0.3);
        assert_eq!(total_loss(0.0, 0.0, 1.0), 0.0);
        let cfg = ObjectiveConfig::<f64> { ablation: Ablation::IntraOnly, ..Default::default() };
        assert_eq!(cfg.weights(), (1.0, 0.0));
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let tr = vec![vec![
            Rows::from_rows(&[[1.0f64, 0.0, 0.0]]).unwrap(),
            Rows::from_rows(&[[0.0f64, 1.0, 0.0]]).unwrap(),
        ]];
        let bank = init_anchor_bank(&tr, 0.5).unwrap();
        let src = [AnchorRef::new(0, 0), AnchorRef::new(0, 1)];
        // frame 0 sits on its own anchor and the batch mean exceeds the margin
        let emb = Rows::from_rows(&[[1.0f64, 0.0, 0.0], [0.0, 0.3, 1.0]]).unwrap();
        let fb = FrozenBatch::prepare(&bank, &emb, &src).unwrap();
        let (loss, g) = fb.gradient(&emb, &ObjectiveConfig::default()).unwrap();
        assert!(loss.frames[0].intra_pre < 0.0);
        assert!(g.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prepare_rejects_bad_sources() {
        let tr = vec![vec![Rows::from_rows(&[[1.0f64, 0.0]]).unwrap()]];
        let bank = init_anchor_bank(&tr, 0.5).unwrap();
        let emb = Rows::from_rows(&[[1.0f64, 0.0]]).unwrap();
        assert!(FrozenBatch::prepare(&bank, &emb, &[AnchorRef::new(0, 3)]).is_err());
        assert!(FrozenBatch::prepare(&bank, &emb, &[AnchorRef::new(2, 0)]).is_err());
        assert!(FrozenBatch::prepare(&bank, &emb, &[]).is_err());
    }
}
