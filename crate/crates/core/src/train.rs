//! The training loop.
//!
//! One iteration: sample a batch, embed it, rank every frame against its
//! camera's intra anchors, compute both association losses, EMA-update the
//! anchors of the sampled tracklets, refresh their cross anchors by cyclic
//! ranking, then backpropagate and take an SGD step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::{init_anchor_bank, AnchorBank, AnchorRef};
use crate::checkpoint::{Checkpoint, RngState};
use crate::data::{sample_batch, FrameSet, SamplingMode};
use crate::error::{DalError, Result};
use crate::linalg::Rows;
use crate::model::{EmbeddingHead, HeadKind, HeadSpec, LrSchedule, OptimizerState};
use crate::objective::{FrozenBatch, LossBreakdown, ObjectiveConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig<f64>,
    /// Anchor EMA update rate.
    pub eta: f64,
    pub batch_size: usize,
    pub head: HeadKind,
    /// Embedding dimension; `None` keeps the input dimension.
    pub embed_dim: Option<usize>,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    pub sampling: SamplingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            eta: 0.5,
            batch_size: 64,
            head: HeadKind::Linear,
            embed_dim: None,
            schedule: LrSchedule::default(),
            momentum: 0.9,
            seed: 0,
            sampling: SamplingMode::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn head_spec(&self, d_in: usize) -> HeadSpec {
        HeadSpec { kind: self.head, d_in, d_out: self.embed_dim.unwrap_or(d_in) }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(DalError::InvalidConfig(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(DalError::InvalidConfig("batch size must be at least 1".into()));
        }
        self.schedule.validate()
    }
}

/// What one iteration did.
#[derive(Debug, Clone)]
pub struct StepReport<T> {
    /// Completed iterations after this step.
    pub iteration: u64,
    pub loss: LossBreakdown<T>,
    /// Distinct anchors touched by the batch.
    pub updated: usize,
    pub merged: usize,
}

pub struct Trainer<T: Scalar> {
    head: EmbeddingHead<T>,
    optimizer: OptimizerState<T>,
    bank: AnchorBank<T>,
    rng: ChaCha8Rng,
    objective: ObjectiveConfig<T>,
    batch_size: usize,
    sampling: SamplingMode,
}

fn embed_rows<T: Scalar>(head: &EmbeddingHead<T>, frames: &FrameSet, rows: &[usize]) -> Result<(Rows<T>, Rows<T>)> {
    let mut raw = Rows::with_capacity(frames.dim(), rows.len());
    let mut out = Rows::with_capacity(head.spec().d_out, rows.len());
    for &r in rows {
        let x: Vec<T> = frames.feature(r).iter().map(|&v| T::from_f32(v)).collect();
        out.push(&head.forward(&x)?)?;
        raw.push(&x)?;
    }
    Ok((raw, out))
}

impl<T: Scalar> Trainer<T> {
    /// Seeds the head and sampler, then initializes every anchor as the mean
    /// of its tracklet's embeddings under the initial head.
    pub fn new(frames: &FrameSet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        frames.require_cross_camera()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spec = cfg.head_spec(frames.dim());
        let head = EmbeddingHead::<T>::init(spec, &mut rng)?;
        let optimizer = OptimizerState::new(cfg.schedule, cfg.momentum, spec.param_count())?;
        let mut tracklets = Vec::with_capacity(frames.num_cameras());
        for (camera, &count) in frames.tracklet_counts().iter().enumerate() {
            let per_camera = (0..count)
                .map(|i| embed_rows(&head, frames, frames.tracklet_frames(AnchorRef::new(camera, i))).map(|(_, e)| e))
                .collect::<Result<Vec<_>>>()?;
            tracklets.push(per_camera);
        }
        let bank = init_anchor_bank(&tracklets, T::from_f64(cfg.eta))?;
        Ok(Self {
            head,
            optimizer,
            bank,
            rng,
            objective: cast_objective(&cfg.objective),
            batch_size: cfg.batch_size,
            sampling: cfg.sampling,
        })
    }

    /// Resumes from a checkpoint. Hyperparameters other than the saved state
    /// come from `cfg`.
    pub fn from_checkpoint(ckpt: &Checkpoint, frames: &FrameSet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        frames.require_cross_camera()?;
        if ckpt.head.spec().d_in != frames.dim() {
            return Err(DalError::DimensionMismatch { expected: ckpt.head.spec().d_in, found: frames.dim() });
        }
        let counts: Vec<usize> = ckpt.bank.cameras().iter().map(|c| c.len()).collect();
        if counts != frames.tracklet_counts() {
            return Err(DalError::InvalidConfig(format!(
                "checkpoint anchors {counts:?} do not match dataset tracklets {:?}",
                frames.tracklet_counts()
            )));
        }
        Ok(Self {
            head: ckpt.head.cast(),
            optimizer: ckpt.optimizer.cast(),
            bank: ckpt.bank.cast(),
            rng: ckpt.rng.restore(),
            objective: cast_objective(&cfg.objective),
            batch_size: cfg.batch_size,
            sampling: cfg.sampling,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.optimizer.iteration,
            precision: T::NAME.to_string(),
            head: self.head.cast(),
            optimizer: self.optimizer.cast(),
            bank: self.bank.cast(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn iteration(&self) -> u64 {
        self.optimizer.iteration
    }

    pub fn head(&self) -> &EmbeddingHead<T> {
        &self.head
    }

    pub fn bank(&self) -> &AnchorBank<T> {
        &self.bank
    }

    pub fn step(&mut self, frames: &FrameSet) -> Result<StepReport<T>> {
        let batch = sample_batch(&mut self.rng, frames, self.batch_size, self.sampling)?;
        self.step_with_batch(frames, &batch)
    }

    /// One iteration on an explicit batch of frame rows.
    pub fn step_with_batch(&mut self, frames: &FrameSet, batch: &[usize]) -> Result<StepReport<T>> {
        if batch.is_empty() {
            return Err(DalError::InvalidConfig("empty batch".into()));
        }
        let (raw, emb) = embed_rows(&self.head, frames, batch)?;
        let sources: Vec<AnchorRef> = batch.iter().map(|&r| frames.source(r)).collect();

        let frozen = FrozenBatch::prepare(&self.bank, &emb, &sources)?;
        let (loss, emb_grads) = frozen.gradient(&emb, &self.objective)?;

        let mut updated: Vec<AnchorRef> = Vec::new();
        for (f, &s) in emb.iter().zip(&sources) {
            self.bank.apply_ema(s, f)?;
            if !updated.contains(&s) {
                updated.push(s);
            }
        }
        self.bank.associate(&updated, frozen.view())?;

        let mut param_grads = vec![T::zero(); self.head.params().len()];
        if !param_grads.is_empty() {
            for (x, g) in raw.iter().zip(emb_grads.iter()) {
                self.head.accumulate_backward(x, g, &mut param_grads)?;
            }
        }
        let (head, optimizer) = (&mut self.head, &mut self.optimizer);
        optimizer.step(head.params_mut(), &param_grads)?;

        Ok(StepReport {
            iteration: self.optimizer.iteration,
            loss,
            updated: updated.len(),
            merged: self.bank.merged_count(),
        })
    }
}

fn cast_objective<T: Scalar>(o: &ObjectiveConfig<f64>) -> ObjectiveConfig<T> {
    ObjectiveConfig { margin: T::from_f64(o.margin), lambda: T::from_f64(o.lambda), ablation: o.ablation }
}
