//! Frozen per-frame feature encoder.
//!
//! A small patch transformer with weights materialized deterministically from
//! a seed: patchify, linear patch embedding, a prepended class token, `layers`
//! pre-norm blocks (multi-head self-attention and a 4x GELU MLP, both with
//! residual connections), then a linear projection of the class token down to
//! the feature width. The encoder is never trained; it provides the fixed
//! feature space that restoration and the recognition heads operate in, and a
//! frozen reference signal for restoration supervision.

use crate::error::{CoreError, Result};
use crate::numerics::{gelu, layer_norm, softmax_rows, FeatureVec, Matrix};
use crate::par::par_map;
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

/// Encoder hyperparameters. `hidden` is the transformer width, `out` the
/// emitted feature width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub out: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale default: 32x32 frames, 8x8 patches, width 64, 2 blocks,
    /// 4 heads, 32-dim features.
    pub fn desk() -> Self {
        EncoderConfig {
            patch: 8,
            hidden: 64,
            layers: 2,
            heads: 4,
            out: 32,
            seed: 41,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0
            || self.hidden == 0
            || self.layers == 0
            || self.heads == 0
            || self.out == 0
        {
            return Err(CoreError::Config(
                "encoder dimensions must all be nonzero".into(),
            ));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "hidden width {} not divisible by head count {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Token count for a frame of the given size: one per patch plus the
    /// class token.
    pub fn token_count(&self, height: usize, width: usize) -> Result<usize> {
        if height == 0
            || width == 0
            || !height.is_multiple_of(self.patch)
            || !width.is_multiple_of(self.patch)
        {
            return Err(CoreError::Config(format!(
                "frame {height}x{width} is not a multiple of patch size {}",
                self.patch
            )));
        }
        Ok((height / self.patch) * (width / self.patch) + 1)
    }
}

/// One grayscale frame, pixels row-major in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::Config("frame dimensions must be nonzero".into()));
        }
        if pixels.len() != height * width {
            return Err(CoreError::shape("frame", height * width, pixels.len()));
        }
        Ok(Frame {
            height,
            width,
            pixels,
        })
    }
}

struct BlockWeights {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w1: Matrix,
    w2: Matrix,
}

/// Fully materialized encoder weights. Construction is the only way to obtain
/// one, and nothing in the crate mutates it afterwards.
pub struct FrozenWeights {
    pub cfg: EncoderConfig,
    embed: Matrix,
    cls: FeatureVec,
    blocks: Vec<BlockWeights>,
    out: Matrix,
}

const INIT_STD: f64 = 0.02;

// Stream tags for weight materialization; layer index is folded in below.
const STREAM_EMBED: u64 = 1;
const STREAM_CLS: u64 = 2;
const STREAM_OUT: u64 = 3;
const STREAM_BLOCK_BASE: u64 = 16;

fn gaussian_matrix(seed: u64, stream: u64, rows: usize, cols: usize) -> Matrix {
    let rng = CounterRng::new(seed, stream);
    Matrix::from_fn(rows, cols, |r, c| {
        rng.normal((r * cols + c) as u64) * INIT_STD
    })
}

/// Materialize encoder weights for a config. Same config, same bits.
pub fn build_encoder(cfg: &EncoderConfig) -> Result<FrozenWeights> {
    cfg.validate()?;
    let p2 = cfg.patch * cfg.patch;
    let hidden = cfg.hidden;
    let embed = gaussian_matrix(cfg.seed, STREAM_EMBED, p2, hidden);
    let cls_rng = CounterRng::new(cfg.seed, STREAM_CLS);
    let cls: FeatureVec = (0..hidden)
        .map(|i| cls_rng.normal(i as u64) * INIT_STD)
        .collect();
    let mut blocks = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers as u64 {
        let tag = |role: u64| STREAM_BLOCK_BASE + layer * 8 + role;
        blocks.push(BlockWeights {
            wq: gaussian_matrix(cfg.seed, tag(0), hidden, hidden),
            wk: gaussian_matrix(cfg.seed, tag(1), hidden, hidden),
            wv: gaussian_matrix(cfg.seed, tag(2), hidden, hidden),
            wo: gaussian_matrix(cfg.seed, tag(3), hidden, hidden),
            w1: gaussian_matrix(cfg.seed, tag(4), hidden, 4 * hidden),
            w2: gaussian_matrix(cfg.seed, tag(5), 4 * hidden, hidden),
        });
    }
    let out = gaussian_matrix(cfg.seed, STREAM_OUT, hidden, cfg.out);
    Ok(FrozenWeights {
        cfg: cfg.clone(),
        embed,
        cls,
        blocks,
        out,
    })
}

impl FrozenWeights {
    /// Order-stable digest of every weight bit; used to verify the frozen
    /// contract across a training run.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |vals: &[f64]| {
            for v in vals {
                h = fnv_step(h, v.to_bits());
            }
        };
        eat(self.embed.data());
        eat(&self.cls);
        for b in &self.blocks {
            eat(b.wq.data());
            eat(b.wk.data());
            eat(b.wv.data());
            eat(b.wo.data());
            eat(b.w1.data());
            eat(b.w2.data());
        }
        eat(self.out.data());
        h
    }

    fn weight_count(&self) -> u64 {
        let mut n = self.embed.len() + self.cls.len() + self.out.len();
        for b in &self.blocks {
            n += b.wq.len() + b.wk.len() + b.wv.len() + b.wo.len() + b.w1.len() + b.w2.len();
        }
        n as u64
    }
}

fn fnv_step(mut h: u64, word: u64) -> u64 {
    for shift in [0u32, 8, 16, 24, 32, 40, 48, 56] {
        h ^= (word >> shift) & 0xFF;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn patchify(frame: &Frame, patch: usize) -> Matrix {
    let ph = frame.height / patch;
    let pw = frame.width / patch;
    let mut out = Matrix::zeros(ph * pw, patch * patch);
    for py in 0..ph {
        for px in 0..pw {
            let row = out.row_mut(py * pw + px);
            for dy in 0..patch {
                for dx in 0..patch {
                    let y = py * patch + dy;
                    let x = px * patch + dx;
                    row[dy * patch + dx] = f64::from(frame.pixels[y * frame.width + x]);
                }
            }
        }
    }
    out
}

fn layer_norm_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&layer_norm(x.row(r)));
    }
    out
}

fn slice_cols(x: &Matrix, from: usize, to: usize) -> Matrix {
    Matrix::from_fn(x.rows(), to - from, |r, c| x.at(r, from + c))
}

fn attention(x: &Matrix, b: &BlockWeights, heads: usize) -> Result<Matrix> {
    let y = layer_norm_rows(x);
    let q = y.matmul(&b.wq)?;
    let k = y.matmul(&b.wk)?;
    let v = y.matmul(&b.wv)?;
    let head_dim = q.cols() / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut concat = Matrix::zeros(x.rows(), x.cols());
    for h in 0..heads {
        let (from, to) = (h * head_dim, (h + 1) * head_dim);
        let qh = slice_cols(&q, from, to);
        let kh = slice_cols(&k, from, to);
        let vh = slice_cols(&v, from, to);
        let mut scores = qh.matmul_transpose_b(&kh)?;
        scores.scale_in_place(scale);
        let attn = softmax_rows(&scores);
        let oh = attn.matmul(&vh)?;
        for r in 0..concat.rows() {
            concat.row_mut(r)[from..to].copy_from_slice(oh.row(r));
        }
    }
    concat.matmul(&b.wo)
}

fn mlp(x: &Matrix, b: &BlockWeights) -> Result<Matrix> {
    let y = layer_norm_rows(x);
    let mut h1 = y.matmul(&b.w1)?;
    for v in h1.data_mut() {
        *v = gelu(*v);
    }
    h1.matmul(&b.w2)
}

/// Encode one frame to a feature vector of width `cfg.out`.
pub fn encode(w: &FrozenWeights, frame: &Frame) -> Result<FeatureVec> {
    let _tokens = w.cfg.token_count(frame.height, frame.width)?;
    let patches = patchify(frame, w.cfg.patch);
    let embedded = patches.matmul(&w.embed)?;
    let mut x = Matrix::zeros(embedded.rows() + 1, w.cfg.hidden);
    x.row_mut(0).copy_from_slice(&w.cls);
    for r in 0..embedded.rows() {
        x.row_mut(r + 1).copy_from_slice(embedded.row(r));
    }
    for b in &w.blocks {
        let a = attention(&x, b, w.cfg.heads)?;
        x.add_assign(&a)?;
        let m = mlp(&x, b)?;
        x.add_assign(&m)?;
    }
    w.out.matvec_transpose(x.row(0))
}

/// Encode a batch of frames. Fans out on the thread pool when the `parallel`
/// feature is on; output order and bits match the one-at-a-time path either way.
pub fn encode_batch(w: &FrozenWeights, frames: &[Frame]) -> Result<Vec<FeatureVec>> {
    par_map(frames, |f| encode(w, f)).into_iter().collect()
}

// ---------------------------------------------------------------------------
// Optional weight dump. Weights regenerate from the seed, so this exists for
// external inspection, not persistence: a 16-byte header (magic "SLEW",
// format version, weight count), the config fields, then every weight as
// little-endian f64 in materialization order.
// ---------------------------------------------------------------------------

const DUMP_MAGIC: &[u8; 4] = b"SLEW";
const DUMP_VERSION: u32 = 1;

pub fn dump_weights_bytes(w: &FrozenWeights) -> Vec<u8> {
    let count = w.weight_count();
    let mut buf = Vec::with_capacity(44 + count as usize * 8);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(w.cfg.patch as u32).to_le_bytes());
    buf.extend_from_slice(&(w.cfg.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&(w.cfg.layers as u32).to_le_bytes());
    buf.extend_from_slice(&(w.cfg.heads as u32).to_le_bytes());
    buf.extend_from_slice(&(w.cfg.out as u32).to_le_bytes());
    buf.extend_from_slice(&w.cfg.seed.to_le_bytes());
    let mut put = |vals: &[f64]| {
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(w.embed.data());
    put(&w.cls);
    for b in &w.blocks {
        put(b.wq.data());
        put(b.wk.data());
        put(b.wv.data());
        put(b.wo.data());
        put(b.w1.data());
        put(b.w2.data());
    }
    put(w.out.data());
    buf
}

pub fn dump_weights(w: &FrozenWeights, path: &Path) -> Result<()> {
    std::fs::write(path, dump_weights_bytes(w))?;
    Ok(())
}

pub fn load_weights_bytes(bytes: &[u8]) -> Result<FrozenWeights> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != DUMP_MAGIC {
        return Err(CoreError::Format("bad weight dump magic".into()));
    }
    let version = r.u32()?;
    if version != DUMP_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported weight dump version {version}"
        )));
    }
    let count = r.u64()?;
    let cfg = EncoderConfig {
        patch: r.u32()? as usize,
        hidden: r.u32()? as usize,
        layers: r.u32()? as usize,
        heads: r.u32()? as usize,
        out: r.u32()? as usize,
        seed: r.u64()?,
    };
    cfg.validate()?;
    let p2 = cfg.patch * cfg.patch;
    let hidden = cfg.hidden;
    let mut take_matrix = |rows: usize, cols: usize| -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        Matrix::from_vec(rows, cols, data)
    };
    let embed = take_matrix(p2, hidden)?;
    let cls: FeatureVec = {
        let m = take_matrix(1, hidden)?;
        m.row(0).to_vec()
    };
    let mut blocks = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        blocks.push(BlockWeights {
            wq: take_matrix(hidden, hidden)?,
            wk: take_matrix(hidden, hidden)?,
            wv: take_matrix(hidden, hidden)?,
            wo: take_matrix(hidden, hidden)?,
            w1: take_matrix(hidden, 4 * hidden)?,
            w2: take_matrix(4 * hidden, hidden)?,
        });
    }
    let out = take_matrix(hidden, cfg.out)?;
    let w = FrozenWeights {
        cfg,
        embed,
        cls,
        blocks,
        out,
    };
    if w.weight_count() != count {
        return Err(CoreError::Format(format!(
            "weight count mismatch: header {count}, body {}",
            w.weight_count()
        )));
    }
    Ok(w)
}

pub fn load_weights(path: &Path) -> Result<FrozenWeights> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_weights_bytes(&bytes)
}

/// Bounds-checked little-endian cursor shared by the binary readers in this
/// crate.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Format(format!(
                "truncated input: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
