//! Frame datasets, file formats, synthetic generation and batch sampling.
//!
//! Identity labels never live alongside the training view: [`FrameSet`] is
//! what training consumes, [`IdentityLabels`] is only handed to evaluation.

mod features;
mod manifest;
mod sampler;
mod synthetic;

pub use features::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use sampler::{sample_batch, SamplingMode};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

use std::path::Path;

use crate::anchors::AnchorRef;
use crate::error::{DalError, Result};

/// One frame's feature vector and tracklet membership.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub tracklet_index: usize,
    pub camera_id: usize,
    pub feature: Vec<f32>,
    pub identity_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameMeta {
    pub frame_id: u64,
    pub source: AnchorRef,
}

/// Unlabelled frames grouped into per-camera tracklets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    dim: usize,
    features: Vec<f32>,
    meta: Vec<FrameMeta>,
    /// camera → tracklet → frame rows
    tracklets: Vec<Vec<Vec<usize>>>,
}

impl FrameSet {
    /// Validates that camera ids are dense from zero and tracklet indices are
    /// dense within each camera.
    pub fn new(dim: usize, features: Vec<f32>, meta: Vec<FrameMeta>) -> Result<Self> {
        if meta.is_empty() {
            return Err(DalError::EmptyDataset);
        }
        if dim == 0 || features.len() != dim * meta.len() {
            return Err(DalError::RowCountMismatch {
                declared: meta.len() as u64,
                found: (features.len() / dim.max(1)) as u64,
                what: "feature rows",
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DalError::NonFiniteFeature { row: pos / dim, column: pos % dim, offset: 0 });
        }
        let cameras = meta.iter().map(|m| m.source.camera).max().unwrap_or(0) + 1;
        let mut tracklets: Vec<Vec<Vec<usize>>> = vec![Vec::new(); cameras];
        for (row, m) in meta.iter().enumerate() {
            let cam = &mut tracklets[m.source.camera];
            if cam.len() <= m.source.index {
                cam.resize(m.source.index + 1, Vec::new());
            }
            cam[m.source.index].push(row);
        }
        for (camera, cam) in tracklets.iter().enumerate() {
            if cam.is_empty() {
                return Err(DalError::BadManifest {
                    row: 0,
                    message: format!("camera ids are not dense: camera {camera} has no frames"),
                });
            }
            if let Some(tracklet) = cam.iter().position(Vec::is_empty) {
                return Err(DalError::EmptyTracklet { camera, tracklet });
            }
        }
        Ok(Self { dim, features, meta, tracklets })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn features_flat(&self) -> &[f32] {
        &self.features
    }

    pub fn meta(&self, row: usize) -> FrameMeta {
        self.meta[row]
    }

    pub fn source(&self, row: usize) -> AnchorRef {
        self.meta[row].source
    }

    pub fn num_cameras(&self) -> usize {
        self.tracklets.len()
    }

    /// `N_k` for each camera.
    pub fn tracklet_counts(&self) -> Vec<usize> {
        self.tracklets.iter().map(Vec::len).collect()
    }

    pub fn total_tracklets(&self) -> usize {
        self.tracklets.iter().map(Vec::len).sum()
    }

    pub fn tracklet_frames(&self, r: AnchorRef) -> &[usize] {
        &self.tracklets[r.camera][r.index]
    }

    pub fn tracklet_refs(&self) -> impl Iterator<Item = AnchorRef> + '_ {
        self.tracklets.iter().enumerate().flat_map(|(c, t)| (0..t.len()).map(move |i| AnchorRef::new(c, i)))
    }

    /// Cross-camera training needs at least two cameras.
    pub fn require_cross_camera(&self) -> Result<()> {
        if self.num_cameras() < 2 {
            return Err(DalError::SingleCamera { cameras: self.num_cameras() });
        }
        Ok(())
    }
}

/// Ground-truth identity of every tracklet, for evaluation only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityLabels {
    per_tracklet: Vec<Vec<u64>>,
}

impl IdentityLabels {
    pub fn new(per_tracklet: Vec<Vec<u64>>) -> Self {
        Self { per_tracklet }
    }

    pub fn identity(&self, r: AnchorRef) -> u64 {
        self.per_tracklet[r.camera][r.index]
    }

    pub fn camera(&self, camera: usize) -> &[u64] {
        &self.per_tracklet[camera]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: FrameSet,
    pub labels: Option<IdentityLabels>,
}

impl Dataset {
    pub fn from_records(dim: usize, records: &[FrameRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(DalError::EmptyDataset);
        }
        let labelled = records[0].identity_id.is_some();
        let mut features = Vec::with_capacity(dim * records.len());
        let mut meta = Vec::with_capacity(records.len());
        for (row, r) in records.iter().enumerate() {
            if r.feature.len() != dim {
                return Err(DalError::DimensionMismatch { expected: dim, found: r.feature.len() });
            }
            if r.identity_id.is_some() != labelled {
                return Err(DalError::BadManifest {
                    row,
                    message: "identity_id must be present on every row or none".into(),
                });
            }
            features.extend_from_slice(&r.feature);
            meta.push(FrameMeta { frame_id: r.frame_id, source: AnchorRef::new(r.camera_id, r.tracklet_index) });
        }
        let frames = FrameSet::new(dim, features, meta)?;
        let labels = if labelled {
            let mut per_tracklet: Vec<Vec<Option<u64>>> =
                frames.tracklet_counts().into_iter().map(|n| vec![None; n]).collect();
            for (row, r) in records.iter().enumerate() {
                let id = r.identity_id.expect("checked above");
                let slot = &mut per_tracklet[r.camera_id][r.tracklet_index];
                match slot {
                    Some(prev) if *prev != id => {
                        return Err(DalError::BadManifest {
                            row,
                            message: format!(
                                "tracklet ({}, {}) carries identities {prev} and {id}",
                                r.camera_id, r.tracklet_index
                            ),
                        })
                    }
                    _ => *slot = Some(id),
                }
            }
            let per_tracklet =
                per_tracklet.into_iter().map(|c| c.into_iter().map(|v| v.expect("dense")).collect()).collect();
            Some(IdentityLabels::new(per_tracklet))
        } else {
            None
        };
        Ok(Self { frames, labels })
    }

    pub fn records(&self) -> Vec<FrameRecord> {
        (0..self.frames.len())
            .map(|row| {
                let m = self.frames.meta(row);
                FrameRecord {
                    frame_id: m.frame_id,
                    tracklet_index: m.source.index,
                    camera_id: m.source.camera,
                    feature: self.frames.feature(row).to_vec(),
                    identity_id: self.labels.as_ref().map(|l| l.identity(m.source)),
                }
            })
            .collect()
    }
}

/// Loads a DALF feature file and its manifest.
pub fn load_features(feature_path: &Path, manifest_path: &Path) -> Result<Dataset> {
    let (dim, values) = read_features(feature_path)?;
    let rows = read_manifest(manifest_path)?;
    if rows.is_empty() {
        return Err(DalError::EmptyDataset);
    }
    let n_features = values.len() / dim;
    if rows.len() > n_features {
        return Err(DalError::DanglingManifestRow { row: n_features, features: n_features });
    }
    if rows.len() < n_features {
        return Err(DalError::RowCountMismatch {
            declared: n_features as u64,
            found: rows.len() as u64,
            what: "manifest",
        });
    }
    let records: Vec<FrameRecord> = rows
        .into_iter()
        .enumerate()
        .map(|(row, m)| FrameRecord {
            frame_id: m.frame_id,
            tracklet_index: m.tracklet_index,
            camera_id: m.camera_id,
            feature: values[row * dim..(row + 1) * dim].to_vec(),
            identity_id: m.identity_id,
        })
        .collect();
    Dataset::from_records(dim, &records)
}

/// Writes the DALF feature file and manifest for `dataset`.
pub fn save_dataset(dataset: &Dataset, feature_path: &Path, manifest_path: &Path) -> Result<()> {
    write_features(feature_path, dataset.frames.dim(), dataset.frames.features_flat())?;
    let rows: Vec<ManifestRow> = dataset
        .records()
        .into_iter()
        .map(|r| ManifestRow {
            frame_id: r.frame_id,
            tracklet_index: r.tracklet_index,
            camera_id: r.camera_id,
            identity_id: r.identity_id,
        })
        .collect();
    write_manifest(manifest_path, &rows)
}
