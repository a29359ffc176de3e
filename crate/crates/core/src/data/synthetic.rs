//! Synthetic multi-camera tracklets with known identities.
//!
//! Each identity gets a unit prototype. Camera `c` sees identity `i` through
//! a fixed linear distortion `A_c = I + s·G_c/√d` (`G_c` standard normal), and
//! every frame adds isotropic Gaussian noise. Tracklet indices are shuffled
//! per camera so that matching indices carry no information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, FrameRecord};
use crate::error::{DalError, Result};
use crate::linalg::Rows;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub identities: usize,
    pub cameras: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub dim: usize,
    /// Strength `s` of the per-camera linear distortion; 0 gives identity maps.
    pub distortion: f64,
    /// Per-coordinate standard deviation of frame noise.
    pub noise: f64,
    /// Minimum angle between identity prototypes, in radians.
    pub identity_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            identities: 50,
            cameras: 2,
            frames_min: 8,
            frames_max: 16,
            dim: 32,
            distortion: 0.3,
            noise: 0.1,
            identity_separation: 0.9,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DalError::InvalidConfig(m.into()));
        if self.identities < 2 {
            return fail("synthetic data needs at least 2 identities");
        }
        if self.cameras < 2 {
            return fail("synthetic data needs at least 2 cameras");
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return fail("frames per tracklet must satisfy 1 <= frames_min <= frames_max");
        }
        if self.dim == 0 {
            return fail("feature dimension must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.distortion >= 0.0 && self.distortion.is_finite()) {
            return fail("noise and distortion must be finite and non-negative");
        }
        if !(0.0..std::f64::consts::PI).contains(&self.identity_separation) {
            return fail("identity separation must lie in [0, π)");
        }
        Ok(())
    }
}

/// Generated dataset plus the ground truth used to build it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Unit prototype per identity.
    pub prototypes: Rows<f64>,
    /// Row-major `dim × dim` distortion per camera.
    pub camera_transforms: Vec<Vec<f64>>,
}

const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

fn unit_gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;

    let min_cos = cfg.identity_separation.cos();
    let mut prototypes = Rows::with_capacity(d, cfg.identities);
    for _ in 0..cfg.identities {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = unit_gaussian(&mut rng, d);
            let ok = prototypes.iter().all(|q| q.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() <= min_cos);
            if ok {
                prototypes.push(&p)?;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DalError::InvalidConfig(format!(
                "cannot place {} prototypes {:.3} rad apart in {} dimensions",
                cfg.identities, cfg.identity_separation, d
            )));
        }
    }

    let scale = cfg.distortion / (d as f64).sqrt();
    let camera_transforms: Vec<Vec<f64>> = (0..cfg.cameras)
        .map(|_| {
            let mut a: Vec<f64> =
                (0..d * d).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            if cfg.distortion == 0.0 {
                a.iter_mut().for_each(|v| *v = 0.0);
            }
            for i in 0..d {
                a[i * d + i] += 1.0;
            }
            a
        })
        .collect();

    let mut records = Vec::new();
    let mut frame_id = 0u64;
    for (camera, transform) in camera_transforms.iter().enumerate() {
        let mut order: Vec<usize> = (0..cfg.identities).collect();
        order.shuffle(&mut rng);
        for (tracklet, &identity) in order.iter().enumerate() {
            let proto = prototypes.row(identity);
            let seen: Vec<f64> =
                (0..d).map(|r| transform[r * d..(r + 1) * d].iter().zip(proto).map(|(a, b)| a * b).sum()).collect();
            let frames = rng.random_range(cfg.frames_min..=cfg.frames_max);
            for _ in 0..frames {
                let feature = seen
                    .iter()
                    .map(|&v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (v + cfg.noise * z) as f32
                    })
                    .collect();
                records.push(FrameRecord {
                    frame_id,
                    tracklet_index: tracklet,
                    camera_id: camera,
                    feature,
                    identity_id: Some(identity as u64),
                });
                frame_id += 1;
            }
        }
    }
    let dataset = Dataset::from_records(d, &records)?;
    Ok(SyntheticData { dataset, prototypes, camera_transforms })
}
