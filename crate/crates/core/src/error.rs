use thiserror::Error;

/// Errors raised anywhere in the association-learning pipeline.
#[derive(Debug, Error)]
pub enum DalError {
    #[error("vector norm {norm:e} is below the normalization threshold")]
    ZeroVector { norm: f64 },

    #[error("non-finite value at position {index}")]
    NonFiniteValue { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("anchor set is empty")]
    EmptyAnchorSet,

    #[error("tracklet {tracklet} of camera {camera} has no frames")]
    EmptyTracklet { camera: usize, tracklet: usize },

    #[error("camera index {camera} out of range ({cameras} cameras)")]
    UnknownCamera { camera: usize, cameras: usize },

    #[error("anchor index {index} out of range for camera {camera} ({len} anchors)")]
    UnknownAnchor { camera: usize, index: usize, len: usize },

    #[error("non-finite gradient at iteration {iteration}, parameter {index}")]
    NonFiniteGradient { iteration: u64, index: usize },

    #[error("dataset contains no frames")]
    EmptyDataset,

    #[error("training needs at least two cameras, dataset has {cameras}")]
    SingleCamera { cameras: usize },

    #[error(
        "bad magic at byte offset {offset}: expected {:?}, found {:?}",
        String::from_utf8_lossy(expected),
        String::from_utf8_lossy(found)
    )]
    BadMagic { offset: u64, expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} at byte offset {offset} (expected {expected})")]
    VersionMismatch { offset: u64, expected: u32, found: u32 },

    #[error("row count mismatch: {declared} rows declared, {found} found in {what}")]
    RowCountMismatch { declared: u64, found: u64, what: &'static str },

    #[error("non-finite feature value in row {row}, column {column} (byte offset {offset})")]
    NonFiniteFeature { row: usize, column: usize, offset: u64 },

    #[error("manifest row {row} has no matching feature row ({features} feature rows)")]
    DanglingManifestRow { row: usize, features: usize },

    #[error("manifest row {row}: {message}")]
    BadManifest { row: usize, message: String },

    #[error("metrics row {row}: {message}")]
    BadMetrics { row: usize, message: String },

    #[error("file truncated at byte offset {offset} while reading {what}")]
    TruncatedFile { offset: u64, what: &'static str },

    #[error("malformed {what} at byte offset {offset}")]
    Malformed { offset: u64, what: String },

    #[error("query {query} has no matching identity in the gallery")]
    QueryWithoutGalleryMatch { query: usize },

    #[error("no merged anchors: true-match rate is undefined")]
    NoMergedAnchors,

    #[error("identity labels are required but the manifest has none")]
    MissingLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl DalError {
    /// Stable, machine-parseable name of the error category.
    pub fn category(&self) -> &'static str {
        match self {
            DalError::ZeroVector { .. } => "ZeroVector",
            DalError::NonFiniteValue { .. } => "NonFiniteValue",
            DalError::DimensionMismatch { .. } => "DimensionMismatch",
            DalError::EmptyAnchorSet => "EmptyAnchorSet",
            DalError::EmptyTracklet { .. } => "EmptyTracklet",
            DalError::UnknownCamera { .. } => "UnknownCamera",
            DalError::UnknownAnchor { .. } => "UnknownAnchor",
            DalError::NonFiniteGradient { .. } => "NonFiniteGradient",
            DalError::EmptyDataset => "EmptyDataset",
            DalError::SingleCamera { .. } => "SingleCamera",
            DalError::BadMagic { .. } => "BadMagic",
            DalError::VersionMismatch { .. } => "VersionMismatch",
            DalError::RowCountMismatch { .. } => "RowCountMismatch",
            DalError::NonFiniteFeature { .. } => "NonFiniteFeature",
            DalError::DanglingManifestRow { .. } => "DanglingManifestRow",
            DalError::BadManifest { .. } => "BadManifest",
            DalError::BadMetrics { .. } => "BadMetrics",
            DalError::TruncatedFile { .. } => "TruncatedFile",
            DalError::Malformed { .. } => "Malformed",
            DalError::QueryWithoutGalleryMatch { .. } => "QueryWithoutGalleryMatch",
            DalError::NoMergedAnchors => "NoMergedAnchors",
            DalError::MissingLabels => "MissingLabels",
            DalError::InvalidConfig(_) => "InvalidConfig",
            DalError::Io(_) => "Io",
            DalError::Csv(_) => "Csv",
        }
    }
}

pub type Result<T, E = DalError> = std::result::Result<T, E>;
