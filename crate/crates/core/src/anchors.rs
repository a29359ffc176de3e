//! Per-camera anchor banks.
//!
//! Every tracklet `i` of camera `k` owns an intra-camera anchor `x[k][i]`,
//! refreshed by an exponential moving average of its own frame embeddings, and
//! a cross-camera counterpart `a[k][i]`. The counterpart equals the intra
//! anchor until cyclic ranking finds a tracklet in another camera that is the
//! mutual nearest neighbour, at which point it becomes the midpoint of the two
//! normalized intra anchors.
//!
//! Anchors are stored raw and normalized where they are used.

use crate::error::{DalError, Result};
use crate::linalg::{self, l2_normalize, rank_normalized, Rows};
use crate::scalar::Scalar;

/// Position of one anchor: tracklet `index` of camera `camera`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnchorRef {
    pub camera: usize,
    pub index: usize,
}

impl AnchorRef {
    pub fn new(camera: usize, index: usize) -> Self {
        Self { camera, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeState {
    #[default]
    Unmerged,
    /// Merged with tracklet `peer` of another camera.
    Merged { peer: AnchorRef },
}

impl MergeState {
    pub fn is_merged(&self) -> bool {
        matches!(self, MergeState::Merged { .. })
    }
}

/// Outcome of ranking one anchor into a peer camera and back.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicMatch<T> {
    pub query: AnchorRef,
    /// Rank-1 anchor of the query within the peer camera.
    pub peer: AnchorRef,
    pub forward_distance: T,
    /// Rank-1 anchor of `peer` when ranked back in the query camera.
    pub backward: AnchorRef,
    pub backward_distance: T,
    /// True when the query and its peer are mutual rank-1 matches.
    pub consistent: bool,
}

/// Anchors of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraAnchors<T> {
    intra: Rows<T>,
    cross: Rows<T>,
    merge: Vec<MergeState>,
}

impl<T: Scalar> CameraAnchors<T> {
    pub fn from_parts(intra: Rows<T>, cross: Rows<T>, merge: Vec<MergeState>) -> Result<Self> {
        if intra.dim() != cross.dim() {
            return Err(DalError::DimensionMismatch { expected: intra.dim(), found: cross.dim() });
        }
        if intra.len() != cross.len() || intra.len() != merge.len() {
            return Err(DalError::DimensionMismatch { expected: intra.len(), found: cross.len().min(merge.len()) });
        }
        Ok(Self { intra, cross, merge })
    }

    pub fn len(&self) -> usize {
        self.intra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intra.is_empty()
    }

    pub fn intra(&self) -> &Rows<T> {
        &self.intra
    }

    pub fn cross(&self) -> &Rows<T> {
        &self.cross
    }

    pub fn merge_states(&self) -> &[MergeState] {
        &self.merge
    }
}

/// Unit-normalized copies of every camera's intra anchors, taken at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedView<T> {
    cameras: Vec<Rows<T>>,
}

impl<T: Scalar> NormalizedView<T> {
    pub fn camera(&self, camera: usize) -> &Rows<T> {
        &self.cameras[camera]
    }

    pub fn anchor(&self, r: AnchorRef) -> &[T] {
        self.cameras[r.camera].row(r.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorBank<T> {
    cameras: Vec<CameraAnchors<T>>,
    dim: usize,
    eta: T,
}

/// Mean of each tracklet's frame embeddings; counterparts start equal to them.
///
/// `tracklets[k][i]` holds the frame embeddings of tracklet `i` in camera `k`.
pub fn init_anchor_bank<T: Scalar>(tracklets: &[Vec<Rows<T>>], eta: T) -> Result<AnchorBank<T>> {
    check_rate(eta)?;
    let dim = tracklets.iter().flatten().map(Rows::dim).next().ok_or(DalError::EmptyAnchorSet)?;
    let mut cameras = Vec::with_capacity(tracklets.len());
    for (camera, frames_by_tracklet) in tracklets.iter().enumerate() {
        let mut intra = Rows::with_capacity(dim, frames_by_tracklet.len());
        for (tracklet, frames) in frames_by_tracklet.iter().enumerate() {
            if frames.is_empty() {
                return Err(DalError::EmptyTracklet { camera, tracklet });
            }
            if frames.dim() != dim {
                return Err(DalError::DimensionMismatch { expected: dim, found: frames.dim() });
            }
            let mut sum = vec![T::zero(); dim];
            for f in frames.iter() {
                for (s, &v) in sum.iter_mut().zip(f) {
                    *s = *s + v;
                }
            }
            let count = T::from_f64(frames.len() as f64);
            let mean: Vec<T> = sum.into_iter().map(|s| s / count).collect();
            l2_normalize(&mean)?;
            intra.push(&mean)?;
        }
        let merge = vec![MergeState::Unmerged; intra.len()];
        cameras.push(CameraAnchors { cross: intra.clone(), intra, merge });
    }
    Ok(AnchorBank { cameras, dim, eta })
}

/// One exponential-moving-average step of an anchor towards a frame embedding:
/// `x − η (ℓ2(x) − ℓ2(f))`.
pub fn ema_update<T: Scalar>(x: &[T], f: &[T], eta: T) -> Result<Vec<T>> {
    if x.len() != f.len() {
        return Err(DalError::DimensionMismatch { expected: x.len(), found: f.len() });
    }
    let x_hat = l2_normalize(x)?;
    let f_hat = l2_normalize(f)?;
    Ok(x.iter().zip(x_hat.iter().zip(&f_hat)).map(|(&xi, (&xh, &fh))| xi - eta * (xh - fh)).collect())
}

fn check_rate<T: Scalar>(eta: T) -> Result<()> {
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(DalError::InvalidConfig(format!("update rate must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

/// Ranks `query` (normalized, from `query_view`) into `peer_camera` of
/// `peer_view`, then ranks the rank-1 peer back into the query camera of
/// `query_view`.
pub fn cyclic_rank_between<T: Scalar>(
    query_view: &NormalizedView<T>,
    peer_view: &NormalizedView<T>,
    query: AnchorRef,
    peer_camera: usize,
) -> Result<CyclicMatch<T>> {
    if query.camera == peer_camera {
        return Err(DalError::InvalidConfig(format!(
            "cyclic ranking needs two distinct cameras, got {peer_camera} twice"
        )));
    }
    let own = query_view
        .cameras
        .get(query.camera)
        .ok_or(DalError::UnknownCamera { camera: query.camera, cameras: query_view.cameras.len() })?;
    let peers = peer_view
        .cameras
        .get(peer_camera)
        .ok_or(DalError::UnknownCamera { camera: peer_camera, cameras: peer_view.cameras.len() })?;
    if query.index >= own.len() {
        return Err(DalError::UnknownAnchor { camera: query.camera, index: query.index, len: own.len() });
    }
    let forward = rank_normalized(own.row(query.index), peers)?;
    let peer = AnchorRef::new(peer_camera, forward.rank1_index);
    let backward = rank_normalized(peers.row(peer.index), own)?;
    let back = AnchorRef::new(query.camera, backward.rank1_index);
    Ok(CyclicMatch {
        query,
        peer,
        forward_distance: forward.rank1_distance,
        backward: back,
        backward_distance: backward.rank1_distance,
        consistent: back.index == query.index,
    })
}

impl<T: Scalar> AnchorBank<T> {
    pub fn from_parts(cameras: Vec<CameraAnchors<T>>, eta: T) -> Result<Self> {
        check_rate(eta)?;
        let dim = cameras.first().map(|c| c.intra.dim()).ok_or(DalError::EmptyAnchorSet)?;
        for c in &cameras {
            if c.intra.dim() != dim {
                return Err(DalError::DimensionMismatch { expected: dim, found: c.intra.dim() });
            }
        }
        Ok(Self { cameras, dim, eta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn cameras(&self) -> &[CameraAnchors<T>] {
        &self.cameras
    }

    pub fn camera(&self, camera: usize) -> &CameraAnchors<T> {
        &self.cameras[camera]
    }

    pub fn total_anchors(&self) -> usize {
        self.cameras.iter().map(CameraAnchors::len).sum()
    }

    pub fn merged_count(&self) -> usize {
        self.cameras.iter().flat_map(|c| &c.merge).filter(|m| m.is_merged()).count()
    }

    pub fn intra(&self, r: AnchorRef) -> &[T] {
        self.cameras[r.camera].intra.row(r.index)
    }

    pub fn cross(&self, r: AnchorRef) -> &[T] {
        self.cameras[r.camera].cross.row(r.index)
    }

    pub fn merge_state(&self, r: AnchorRef) -> MergeState {
        self.cameras[r.camera].merge[r.index]
    }

    fn check_ref(&self, r: AnchorRef) -> Result<()> {
        let cam = self
            .cameras
            .get(r.camera)
            .ok_or(DalError::UnknownCamera { camera: r.camera, cameras: self.cameras.len() })?;
        if r.index >= cam.len() {
            return Err(DalError::UnknownAnchor { camera: r.camera, index: r.index, len: cam.len() });
        }
        Ok(())
    }

    pub fn normalized_view(&self) -> Result<NormalizedView<T>> {
        let cameras = self.cameras.iter().map(|c| c.intra.normalized()).collect::<Result<_>>()?;
        Ok(NormalizedView { cameras })
    }

    /// Normalized cross anchors of every camera.
    pub fn normalized_cross(&self) -> Result<Vec<Rows<T>>> {
        self.cameras.iter().map(|c| c.cross.normalized()).collect()
    }

    /// EMA-updates the intra anchor `r` with frame embedding `f` from its own
    /// source tracklet. Unmerged counterparts follow the intra anchor.
    pub fn apply_ema(&mut self, r: AnchorRef, f: &[T]) -> Result<()> {
        self.check_ref(r)?;
        let next = ema_update(self.intra(r), f, self.eta)?;
        l2_normalize(&next)?;
        let cam = &mut self.cameras[r.camera];
        cam.intra.row_mut(r.index).copy_from_slice(&next);
        if !cam.merge[r.index].is_merged() {
            cam.cross.row_mut(r.index).copy_from_slice(&next);
        }
        Ok(())
    }

    /// Cyclic ranking of `query` against `peer_camera` on the current anchors.
    pub fn cyclic_rank(&self, query: AnchorRef, peer_camera: usize) -> Result<CyclicMatch<T>> {
        let view = self.normalized_view()?;
        cyclic_rank_between(&view, &view, query, peer_camera)
    }

    /// Sets the cross anchor of `query` from a cyclic match.
    ///
    /// A consistent match merges the normalized intra anchor of `query` with
    /// `peer_hat`, the normalized intra anchor of the matched peer; otherwise
    /// the counterpart reverts to the intra anchor.
    pub fn update_cross_anchor(&mut self, query: AnchorRef, m: &CyclicMatch<T>, peer_hat: &[T]) -> Result<()> {
        self.check_ref(query)?;
        if m.query != query {
            return Err(DalError::InvalidConfig(format!("match is for {:?}, not {:?}", m.query, query)));
        }
        if peer_hat.len() != self.dim {
            return Err(DalError::DimensionMismatch { expected: self.dim, found: peer_hat.len() });
        }
        let half = T::from_f64(0.5);
        let x = self.intra(query).to_vec();
        let cam = &mut self.cameras[query.camera];
        if m.consistent {
            let x_hat = l2_normalize(&x)?;
            let merged: Vec<T> = x_hat.iter().zip(peer_hat).map(|(&a, &b)| half * (a + b)).collect();
            cam.cross.row_mut(query.index).copy_from_slice(&merged);
            cam.merge[query.index] = MergeState::Merged { peer: m.peer };
        } else {
            cam.cross.row_mut(query.index).copy_from_slice(&x);
            cam.merge[query.index] = MergeState::Unmerged;
        }
        Ok(())
    }

    /// Cross-anchor refresh for every anchor in `updated`.
    ///
    /// Each query is ranked (with its current intra anchor) against every other
    /// camera as it stood in `before`. Among the cameras giving a consistent
    /// match, the one with the smallest forward distance wins (lowest camera on
    /// ties). Returns the winning match per query, `None` when none was
    /// consistent and the counterpart reverted.
    pub fn associate(
        &mut self,
        updated: &[AnchorRef],
        before: &NormalizedView<T>,
    ) -> Result<Vec<Option<CyclicMatch<T>>>> {
        let now = self.normalized_view()?;
        let mut out = Vec::with_capacity(updated.len());
        for &query in updated {
            self.check_ref(query)?;
            let mut best: Option<CyclicMatch<T>> = None;
            let mut last = None;
            for peer_camera in (0..self.cameras.len()).filter(|&l| l != query.camera) {
                if before.camera(peer_camera).is_empty() {
                    continue;
                }
                let m = cyclic_rank_between(&now, before, query, peer_camera)?;
                if m.consistent && best.as_ref().is_none_or(|b| m.forward_distance < b.forward_distance) {
                    best = Some(m.clone());
                }
                last = Some(m);
            }
            match (&best, last) {
                (Some(m), _) => self.update_cross_anchor(query, m, before.anchor(m.peer))?,
                (None, Some(m)) => self.update_cross_anchor(query, &m, before.anchor(m.peer))?,
                (None, None) => {}
            }
            out.push(best);
        }
        Ok(out)
    }

    /// Verifies that every unmerged counterpart equals its intra anchor exactly.
    pub fn counterparts_consistent(&self) -> bool {
        self.cameras
            .iter()
            .all(|c| c.merge.iter().enumerate().all(|(i, m)| m.is_merged() || c.intra.row(i) == c.cross.row(i)))
    }

    pub fn cast<U: Scalar>(&self) -> AnchorBank<U> {
        AnchorBank {
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraAnchors { intra: c.intra.cast(), cross: c.cross.cast(), merge: c.merge.clone() })
                .collect(),
            dim: self.dim,
            eta: U::from_f64(self.eta.as_f64()),
        }
    }
}

/// Gap between the directions of two vectors, used to track EMA convergence.
pub fn direction_gap<T: Scalar>(x: &[T], f: &[T]) -> Result<T> {
    Ok(linalg::euclidean(&l2_normalize(x)?, &l2_normalize(f)?))
}
