use rand::seq::index;
use rand::Rng;

use super::FrameSet;
use crate::error::{DalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Frames drawn uniformly without replacement (with replacement once the
    /// batch exceeds the dataset).
    #[default]
    Uniform,
    /// Tracklet drawn uniformly, then one of its frames; with replacement.
    Balanced,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Balanced => "balanced",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = DalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "balanced" => Ok(Self::Balanced),
            other => Err(DalError::InvalidConfig(format!("unknown sampling mode {other:?}"))),
        }
    }
}

/// Frame rows forming one mini-batch.
pub fn sample_batch<R: Rng + ?Sized>(
    rng: &mut R,
    frames: &FrameSet,
    batch_size: usize,
    mode: SamplingMode,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(DalError::InvalidConfig("batch size must be at least 1".into()));
    }
    let n = frames.len();
    if n == 0 {
        return Err(DalError::EmptyDataset);
    }
    Ok(match mode {
        SamplingMode::Uniform if batch_size <= n => index::sample(rng, n, batch_size).into_vec(),
        SamplingMode::Uniform => (0..batch_size).map(|_| rng.random_range(0..n)).collect(),
        SamplingMode::Balanced => {
            let refs: Vec<_> = frames.tracklet_refs().collect();
            (0..batch_size)
                .map(|_| {
                    let rows = frames.tracklet_frames(refs[rng.random_range(0..refs.len())]);
                    rows[rng.random_range(0..rows.len())]
                })
                .collect()
        }
    })
}
