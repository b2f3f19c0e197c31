//! ViT-style per-frame encoder: patch embedding with a prepended class token
//! and learned spatial positions, pre-norm transformer blocks, and temporal
//! average pooling of the per-frame class features.

use crate::autograd::{Tape, Var};
use crate::data::Frame;
use crate::error::{config_err, Result, VldError};
use crate::nn::{transformer_block, BlockWeights};
use crate::params::{Bound, ParamStore};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub channels: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub init_std: f64,
}

impl EncoderConfig {
    /// 32x16 frames, 8px patches, width 64, 4 blocks of 4 heads.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 16,
            patch: 8,
            channels: 3,
            depth: 4,
            dim: 64,
            heads: 4,
            mlp_ratio: 4,
            init_std: 0.02,
        }
    }

    /// ViT-B/16 at 288x144.
    pub fn profile() -> Self {
        Self {
            height: 288,
            width: 144,
            patch: 16,
            channels: 3,
            depth: 12,
            dim: 768,
            heads: 12,
            mlp_ratio: 4,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(config_err(format!(
                "frame {}x{} does not tile into {}px patches",
                self.height, self.width, self.patch
            )));
        }
        if self.channels != 3 {
            return Err(config_err("frames must have 3 channels"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(config_err(format!("width {} not divisible by {} heads", self.dim, self.heads)));
        }
        if self.depth == 0 || self.dim < 2 || self.mlp_ratio == 0 {
            return Err(config_err("depth, width and MLP ratio must be positive"));
        }
        Ok(())
    }

    /// `N = H * W / P^2`.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// Tokens one attention layer sees per frame: `N + 1`, plus `T` hub rows
/// when the hub is attached.
pub fn count_layer_tokens(cfg: &EncoderConfig, hub_active: bool, frames: usize) -> usize {
    cfg.num_patches() + 1 + if hub_active { frames } else { 0 }
}

/// Flattens a frame into `[N, 3P^2]` patch rows in raster order; each row is
/// the `P x P x 3` block read row by row, channel fastest.
pub fn patchify(frame: &Frame, cfg: &EncoderConfig) -> Result<Tensor> {
    if frame.height != cfg.height || frame.width != cfg.width {
        return Err(config_err(format!(
            "frame is {}x{}, encoder expects {}x{}",
            frame.height, frame.width, cfg.height, cfg.width
        )));
    }
    let p = cfg.patch;
    let (gh, gw) = (cfg.height / p, cfg.width / p);
    let mut out = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..p {
                let row = (py * p + y) * cfg.width;
                let start = (row + px * p) * 3;
                out.extend_from_slice(&frame.data[start..start + p * 3]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![cfg.num_patches(), cfg.patch_dim()], out))
}

/// Patch rows for a batch of tracklets, `[B * T * N, 3P^2]`, tracklet-major.
pub fn patchify_tracklets<'a, I>(tracklets: I, cfg: &EncoderConfig) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a [Frame]>,
{
    let mut data = Vec::new();
    let mut frames = 0;
    for frs in tracklets {
        for f in frs {
            data.extend(patchify(f, cfg)?.into_data());
            frames += 1;
        }
    }
    Ok(Tensor::from_parts(vec![frames * cfg.num_patches(), cfg.patch_dim()], data))
}

pub fn init(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut CounterRng) {
    let d = cfg.dim;
    let std = cfg.init_std;
    store.insert_normal("vit/patch/w", &[cfg.patch_dim(), d], std, rng);
    store.insert_const("vit/patch/b", &[d], 0.0);
    store.insert_normal("vit/cls", &[d], std, rng);
    store.insert_normal("vit/pos", &[cfg.num_patches() + 1, d], std, rng);
    for i in 0..cfg.depth {
        BlockWeights::init(store, &format!("vit/blocks/{i}"), d, cfg.mlp_ratio, std, rng);
    }
    store.insert_const("vit/ln_post/g", &[d], 1.0);
    store.insert_const("vit/ln_post/b", &[d], 0.0);
}

/// `[F * N, 3P^2]` patches to `[F * (N+1), D]` tokens: class token first,
/// projected patches after it, spatial positions added to all `N + 1`.
pub fn embed(tape: &mut Tape, p: &Bound, cfg: &EncoderConfig, patches: Var, frames: usize) -> Result<Var> {
    let n = cfg.num_patches();
    let proj = tape.matmul(patches, p.get("vit/patch/w")?)?;
    let proj = tape.add_bias(proj, p.get("vit/patch/b")?)?;
    if tape.shape(proj)[0] != frames * n {
        return Err(VldError::Dimension(format!(
            "{} patch rows for {} frames of {} patches",
            tape.shape(proj)[0],
            frames,
            n
        )));
    }
    let cls = p.get("vit/cls")?;
    let both = tape.concat_rows(&[proj, cls])?;
    let cls_row = frames * n;
    let mut order = Vec::with_capacity(frames * (n + 1));
    let mut pos_idx = Vec::with_capacity(frames * (n + 1));
    for f in 0..frames {
        order.push(cls_row);
        order.extend((0..n).map(|i| f * n + i));
        pos_idx.extend(0..=n);
    }
    let tokens = tape.gather_rows(both, &order)?;
    let pos = tape.gather_rows(p.get("vit/pos")?, &pos_idx)?;
    tape.add(tokens, pos)
}

pub fn block(tape: &mut Tape, p: &Bound, cfg: &EncoderConfig, layer: usize, x: Var, frames: usize, len: usize) -> Result<Var> {
    let w = BlockWeights::bind(p, &format!("vit/blocks/{layer}"))?;
    transformer_block(tape, x, &w, frames, len, cfg.heads, false)
}

/// Per-frame class features after the final norm: rows `f * len` of `x`.
pub fn class_features(tape: &mut Tape, p: &Bound, x: Var, frames: usize, len: usize) -> Result<Var> {
    let idx: Vec<usize> = (0..frames).map(|f| f * len).collect();
    let cls = tape.gather_rows(x, &idx)?;
    tape.layer_norm(cls, p.get("vit/ln_post/g")?, p.get("vit/ln_post/b")?)
}

/// Encoder outputs for `B` tracklets of `T` frames.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[B * T, D]`
    pub frame_cls: Var,
    /// `[B, D]`, mean over each tracklet's frames
    pub pooled: Var,
    /// Final-layer hub rows `[B * T * T, D]` when the hub was attached.
    pub hub_rows: Option<Var>,
}

/// Every frame through every block independently, then temporal average pooling.
pub fn encode_baseline(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    patches: Var,
    tracklets: usize,
    frames_per: usize,
) -> Result<EncoderOutput> {
    if frames_per == 0 || tracklets == 0 {
        return Err(VldError::EmptyInput("tracklet batch has no frames".into()));
    }
    let frames = tracklets * frames_per;
    let len = cfg.num_patches() + 1;
    let mut x = embed(tape, p, cfg, patches, frames)?;
    for layer in 0..cfg.depth {
        x = block(tape, p, cfg, layer, x, frames, len)?;
    }
    let frame_cls = class_features(tape, p, x, frames, len)?;
    let pooled = tape.mean_groups(frame_cls, frames_per)?;
    Ok(EncoderOutput { frame_cls, pooled, hub_rows: None })
}
