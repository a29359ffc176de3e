//! Binary checkpoints.
//!
//! ```text
//! "DALC" | version u32 | iteration u64 | section*
//! section = tag u32 | length u64 | payload
//! ```
//!
//! Sections: precision tag, head parameters, optimizer state, anchor bank and
//! sampler RNG position. Reals are stored as `f64`, integers little-endian.
//! Loading parses the whole file before returning anything.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::anchors::{AnchorBank, AnchorRef, CameraAnchors, MergeState};
use crate::error::{DalError, Result};
use crate::linalg::Rows;
use crate::model::{DecayKind, EmbeddingHead, HeadKind, HeadSpec, LrSchedule, OptimizerState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DALC";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_META: u32 = 0;
const TAG_HEAD: u32 = 1;
const TAG_OPTIMIZER: u32 = 2;
const TAG_ANCHORS: u32 = 3;
const TAG_RNG: u32 = 4;

/// Position of the sampler's ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full training state, in 64-bit form regardless of training precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Name of the training precision (`"f32"` or `"f64"`).
    pub precision: String,
    pub head: EmbeddingHead<f64>,
    pub optimizer: OptimizerState<f64>,
    pub bank: AnchorBank<f64>,
    pub rng: RngState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn section(&mut self, tag: u32, body: Writer) {
        self.u32(tag);
        self.u64(body.0.len() as u64);
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Offset of `bytes[0]` within the file.
    base: u64,
}

impl<'a> Reader<'a> {
    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DalError::TruncatedFile { offset: self.base + self.bytes.len() as u64, what });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn u128(&mut self, what: &'static str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64s(&mut self, what: &'static str) -> Result<Vec<f64>> {
        let n = self.u64(what)? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(DalError::TruncatedFile { offset: self.base + self.bytes.len() as u64, what });
        }
        (0..n).map(|_| self.f64(what)).collect()
    }
    fn malformed(&self, what: impl Into<String>) -> DalError {
        DalError::Malformed { offset: self.offset(), what: what.into() }
    }
}

fn encode_head(head: &EmbeddingHead<f64>) -> Writer {
    let mut w = Writer(Vec::new());
    let spec = head.spec();
    let (kind, hidden) = match spec.kind {
        HeadKind::Identity => (0, 0),
        HeadKind::Linear => (1, 0),
        HeadKind::OneHidden { hidden } => (2, hidden),
    };
    w.u8(kind);
    w.u32(spec.d_in as u32);
    w.u32(spec.d_out as u32);
    w.u32(hidden as u32);
    w.f64s(head.params());
    w
}

fn decode_head(r: &mut Reader) -> Result<EmbeddingHead<f64>> {
    let kind = r.u8("head kind")?;
    let d_in = r.u32("head d_in")? as usize;
    let d_out = r.u32("head d_out")? as usize;
    let hidden = r.u32("head hidden")? as usize;
    let kind = match kind {
        0 => HeadKind::Identity,
        1 => HeadKind::Linear,
        2 => HeadKind::OneHidden { hidden },
        other => return Err(r.malformed(format!("head kind {other}"))),
    };
    let params = r.f64s("head parameters")?;
    EmbeddingHead::from_params(HeadSpec { kind, d_in, d_out }, params)
}

fn encode_optimizer(opt: &OptimizerState<f64>) -> Writer {
    let mut w = Writer(Vec::new());
    let s = &opt.schedule;
    w.f64(s.initial);
    w.u8(match s.kind {
        DecayKind::Constant => 0,
        DecayKind::Step => 1,
        DecayKind::Exponential => 2,
    });
    w.f64(s.factor);
    w.u64(s.interval);
    w.f64(s.floor);
    w.f64(opt.momentum);
    w.u64(opt.iteration);
    w.f64s(&opt.velocity);
    w
}

fn decode_optimizer(r: &mut Reader) -> Result<OptimizerState<f64>> {
    let initial = r.f64("learning rate")?;
    let kind = match r.u8("decay kind")? {
        0 => DecayKind::Constant,
        1 => DecayKind::Step,
        2 => DecayKind::Exponential,
        other => return Err(r.malformed(format!("decay kind {other}"))),
    };
    let schedule = LrSchedule {
        initial,
        kind,
        factor: r.f64("decay factor")?,
        interval: r.u64("decay interval")?,
        floor: r.f64("rate floor")?,
    };
    let momentum = r.f64("momentum")?;
    let iteration = r.u64("optimizer iteration")?;
    let velocity = r.f64s("velocity")?;
    let mut opt = OptimizerState::new(schedule, momentum, velocity.len())?;
    opt.velocity = velocity;
    opt.iteration = iteration;
    Ok(opt)
}

fn encode_bank(bank: &AnchorBank<f64>) -> Writer {
    let mut w = Writer(Vec::new());
    w.f64(bank.eta());
    w.u32(bank.num_cameras() as u32);
    w.u32(bank.dim() as u32);
    for cam in bank.cameras() {
        w.u32(cam.len() as u32);
        w.f64s(cam.intra().as_flat());
        w.f64s(cam.cross().as_flat());
        for m in cam.merge_states() {
            match m {
                MergeState::Unmerged => {
                    w.u8(0);
                    w.u32(0);
                    w.u32(0);
                }
                MergeState::Merged { peer } => {
                    w.u8(1);
                    w.u32(peer.camera as u32);
                    w.u32(peer.index as u32);
                }
            }
        }
    }
    w
}

fn decode_bank(r: &mut Reader) -> Result<AnchorBank<f64>> {
    let eta = r.f64("update rate")?;
    let cameras = r.u32("camera count")? as usize;
    let dim = r.u32("anchor dimension")? as usize;
    if dim == 0 {
        return Err(r.malformed("anchor dimension 0"));
    }
    let mut out = Vec::with_capacity(cameras.min(1 << 16));
    for _ in 0..cameras {
        let n = r.u32("anchor count")? as usize;
        let intra = Rows::from_flat(dim, r.f64s("intra anchors")?)?;
        let cross = Rows::from_flat(dim, r.f64s("cross anchors")?)?;
        if intra.len() != n || cross.len() != n {
            return Err(r.malformed(format!("camera declares {n} anchors")));
        }
        let mut merge = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.u8("merge state")?;
            let camera = r.u32("merge peer camera")? as usize;
            let index = r.u32("merge peer index")? as usize;
            merge.push(match tag {
                0 => MergeState::Unmerged,
                1 => MergeState::Merged { peer: AnchorRef::new(camera, index) },
                other => return Err(r.malformed(format!("merge tag {other}"))),
            });
        }
        out.push(CameraAnchors::from_parts(intra, cross, merge)?);
    }
    AnchorBank::from_parts(out, eta)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.iteration);

        let mut meta = Writer(Vec::new());
        meta.u32(self.precision.len() as u32);
        meta.0.extend_from_slice(self.precision.as_bytes());
        w.section(TAG_META, meta);
        w.section(TAG_HEAD, encode_head(&self.head));
        w.section(TAG_OPTIMIZER, encode_optimizer(&self.optimizer));
        w.section(TAG_ANCHORS, encode_bank(&self.bank));
        let mut rng = Writer(Vec::new());
        rng.0.extend_from_slice(&self.rng.seed);
        rng.u64(self.rng.stream);
        rng.u128(self.rng.word_pos);
        w.section(TAG_RNG, rng);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, base: 0 };
        let magic: [u8; 4] = match bytes.get(..4) {
            Some(m) => m.try_into().unwrap(),
            None => return Err(DalError::TruncatedFile { offset: bytes.len() as u64, what: "magic" }),
        };
        if magic != CHECKPOINT_MAGIC {
            return Err(DalError::BadMagic { offset: 0, expected: CHECKPOINT_MAGIC, found: magic });
        }
        r.pos = 4;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(DalError::VersionMismatch { offset: 4, expected: CHECKPOINT_VERSION, found: version });
        }
        let iteration = r.u64("iteration")?;

        let (mut precision, mut head, mut optimizer, mut bank, mut rng) = (None, None, None, None, None);
        while r.pos < bytes.len() {
            let tag = r.u32("section tag")?;
            let len = r.u64("section length")? as usize;
            let start = r.offset();
            let body = r.take(len, "section body")?;
            let mut s = Reader { bytes: body, pos: 0, base: start };
            match tag {
                TAG_META => {
                    let n = s.u32("precision")? as usize;
                    let raw = s.take(n, "precision")?;
                    precision = Some(String::from_utf8(raw.to_vec()).map_err(|_| s.malformed("precision tag"))?);
                }
                TAG_HEAD => head = Some(decode_head(&mut s)?),
                TAG_OPTIMIZER => optimizer = Some(decode_optimizer(&mut s)?),
                TAG_ANCHORS => bank = Some(decode_bank(&mut s)?),
                TAG_RNG => {
                    let seed: [u8; 32] = s.take(32, "rng seed")?.try_into().unwrap();
                    rng = Some(RngState { seed, stream: s.u64("rng stream")?, word_pos: s.u128("rng position")? });
                }
                other => {
                    return Err(DalError::Malformed { offset: start, what: format!("unknown section tag {other}") })
                }
            }
            if s.pos != body.len() {
                return Err(s.malformed("trailing bytes in section"));
            }
        }
        // sections are always written in full, so a missing one means the file was cut short
        let missing = |what: &'static str| DalError::TruncatedFile { offset: bytes.len() as u64, what };
        let ckpt = Checkpoint {
            iteration,
            precision: precision.ok_or_else(|| missing("precision section"))?,
            head: head.ok_or_else(|| missing("head section"))?,
            optimizer: optimizer.ok_or_else(|| missing("optimizer section"))?,
            bank: bank.ok_or_else(|| missing("anchor section"))?,
            rng: rng.ok_or_else(|| missing("rng section"))?,
        };
        if ckpt.optimizer.velocity.len() != ckpt.head.params().len() {
            return Err(DalError::DimensionMismatch {
                expected: ckpt.head.params().len(),
                found: ckpt.optimizer.velocity.len(),
            });
        }
        if ckpt.bank.dim() != ckpt.head.spec().d_out {
            return Err(DalError::DimensionMismatch { expected: ckpt.head.spec().d_out, found: ckpt.bank.dim() });
        }
        Ok(ckpt)
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
