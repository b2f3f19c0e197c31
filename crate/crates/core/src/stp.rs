//! Spatial-temporal prompting.
//!
//! A learnable hub `H` of shape `[T, T, D]` is appended to every frame's token
//! sequence from the insertion layer onward: frame `t` carries `T` extra rows,
//! initially `H[t, 0..T]`. Between consecutive hub layers the hub rows are
//! transposed across frames (row `j` of frame `t` swaps with row `t` of frame
//! `j`), which is the only path by which frames exchange information. After the
//! last layer an aggregation attention lets each frame's class feature query
//! all `T^2` hub rows of its tracklet.

use crate::autograd::{Tape, Var};
use crate::encoder::{self, EncoderConfig, EncoderOutput};
use crate::error::{config_err, Result, VldError};
use crate::nn::{multi_head_attention, AttentionShape, AttentionWeights};
use crate::params::{Bound, ParamStore};
use crate::rng::CounterRng;

pub const HUB_INIT_STD: f64 = 0.02;

/// Which layout of the hub a frame's rows currently follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// frame `t` holds `H[t, j]`
    Direct,
    /// frame `t` holds `H[j, t]`
    Transposed,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::Direct => Orientation::Transposed,
            Orientation::Transposed => Orientation::Direct,
        }
    }
}

/// Hub insertion settings. The hub tensor itself lives in the parameter store
/// under `stp/hub`, shared by every tracklet and both modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HubState {
    pub frames: usize,
    /// 0-based first layer that sees the hub; equal to the depth disables it.
    pub insertion_layer: usize,
    pub orientation: Orientation,
}

impl HubState {
    pub fn new(frames: usize, insertion_layer: usize) -> Self {
        Self { frames, insertion_layer, orientation: Orientation::Direct }
    }

    pub fn is_active(&self, depth: usize) -> bool {
        self.insertion_layer < depth
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.insertion_layer > depth {
            return Err(config_err(format!(
                "hub insertion layer {} outside 0..{} (use {} to disable)",
                self.insertion_layer, depth, depth
            )));
        }
        if self.frames == 0 {
            return Err(config_err("hub needs at least one frame"));
        }
        Ok(())
    }
}

/// Per-layer hub orientation, `None` for layers that run without the hub.
pub fn hub_schedule(depth: usize, insertion_layer: usize) -> Vec<Option<Orientation>> {
    let mut o = Orientation::Direct;
    (0..depth)
        .map(|l| {
            if l < insertion_layer {
                None
            } else {
                let cur = o;
                o = o.flipped();
                Some(cur)
            }
        })
        .collect()
}

pub fn init(store: &mut ParamStore, dim: usize, frames: usize, rng: &mut CounterRng) {
    store.insert_normal("stp/hub", &[frames, frames, dim], HUB_INIT_STD, rng);
    AttentionWeights::init(store, "stp/sta/attn", dim, 0.02, rng);
    store.insert_const("stp/sta/ln/g", &[dim], 1.0);
    store.insert_const("stp/sta/ln/b", &[dim], 0.0);
}

/// Appends hub rows to each frame: `[B*T*(N+1), D] -> [B*T*(N+1+T), D]`.
///
/// `hub` is `[T, T, D]`; frame `t` of every tracklet receives `H[t, j]` for
/// `j = 0..T`, or `H[j, t]` when `orientation` is transposed.
pub fn attach_hub(
    tape: &mut Tape,
    tokens: Var,
    hub: Var,
    tracklets: usize,
    state: &HubState,
    frame_len: usize,
) -> Result<Var> {
    let t = state.frames;
    let hs = tape.shape(hub).to_vec();
    if hs.len() != 3 || hs[0] != t || hs[1] != t {
        return Err(config_err(format!("hub of shape {:?} does not match {} frames per tracklet", hs, t)));
    }
    let rows = tape.shape(tokens)[0];
    if rows != tracklets * t * frame_len {
        return Err(VldError::Dimension(format!(
            "{} token rows for {} tracklets x {} frames x {} tokens",
            rows, tracklets, t, frame_len
        )));
    }
    let flat = tape.reshape(hub, &[t * t, hs[2]])?;
    let both = tape.concat_rows(&[tokens, flat])?;
    let mut idx = Vec::with_capacity(tracklets * t * (frame_len + t));
    for b in 0..tracklets {
        for f in 0..t {
            let base = (b * t + f) * frame_len;
            idx.extend(base..base + frame_len);
            for j in 0..t {
                let (a, c) = match state.orientation {
                    Orientation::Direct => (f, j),
                    Orientation::Transposed => (j, f),
                };
                idx.push(rows + a * t + c);
            }
        }
    }
    tape.gather_rows(both, &idx)
}

/// Transposes the hub rows inside an augmented sequence; frame tokens stay put.
pub fn hub_transpose(tape: &mut Tape, vh: Var, tracklets: usize, state: &mut HubState, frame_len: usize) -> Result<Var> {
    let t = state.frames;
    let len = frame_len + t;
    let mut idx = Vec::with_capacity(tracklets * t * len);
    for b in 0..tracklets {
        for f in 0..t {
            let base = (b * t + f) * len;
            idx.extend(base..base + frame_len);
            for j in 0..t {
                idx.push((b * t + j) * len + frame_len + f);
            }
        }
    }
    state.orientation = state.orientation.flipped();
    tape.gather_rows(vh, &idx)
}

/// Removes the hub rows, returning `[B*T*(N+1), D]` frame tokens.
pub fn detach_hub(tape: &mut Tape, vh: Var, tracklets: usize, frames: usize, frame_len: usize) -> Result<Var> {
    let len = frame_len + frames;
    let idx: Vec<usize> = (0..tracklets * frames)
        .flat_map(|f| (f * len)..(f * len + frame_len))
        .collect();
    tape.gather_rows(vh, &idx)
}

/// Hub rows `[B*T*T, D]`, flattened raster over (frame, hub row).
pub fn hub_rows(tape: &mut Tape, vh: Var, tracklets: usize, frames: usize, frame_len: usize) -> Result<Var> {
    let len = frame_len + frames;
    let idx: Vec<usize> = (0..tracklets * frames)
        .flat_map(|f| (f * len + frame_len)..((f + 1) * len))
        .collect();
    tape.gather_rows(vh, &idx)
}

/// Encoder forward with the hub attached from `state.insertion_layer` on.
///
/// With the insertion layer equal to the depth this is exactly
/// [`encoder::encode_baseline`].
pub fn encode_with_hub(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    state: &HubState,
    patches: Var,
    tracklets: usize,
) -> Result<EncoderOutput> {
    state.validate(cfg.depth)?;
    if !state.is_active(cfg.depth) {
        return encoder::encode_baseline(tape, p, cfg, patches, tracklets, state.frames);
    }
    if tracklets == 0 {
        return Err(VldError::EmptyInput("tracklet batch is empty".into()));
    }
    let t = state.frames;
    let frames = tracklets * t;
    let frame_len = cfg.num_patches() + 1;
    let mut st = HubState { orientation: Orientation::Direct, ..*state };
    let mut x = encoder::embed(tape, p, cfg, patches, frames)?;
    for layer in 0..state.insertion_layer {
        x = encoder::block(tape, p, cfg, layer, x, frames, frame_len)?;
    }
    x = attach_hub(tape, x, p.get("stp/hub")?, tracklets, &st, frame_len)?;
    let len = frame_len + t;
    for layer in state.insertion_layer..cfg.depth {
        if layer > state.insertion_layer {
            x = hub_transpose(tape, x, tracklets, &mut st, frame_len)?;
        }
        x = encoder::block(tape, p, cfg, layer, x, frames, len)?;
    }
    let frame_cls = encoder::class_features(tape, p, x, frames, len)?;
    let pooled = tape.mean_groups(frame_cls, t)?;
    let hub = hub_rows(tape, x, tracklets, t, frame_len)?;
    Ok(EncoderOutput { frame_cls, pooled, hub_rows: Some(hub) })
}

#[derive(Debug, Clone, Copy)]
pub struct StaOutput {
    /// `[B*T, D]`
    pub per_frame: Var,
    /// `[B, D]`
    pub pooled: Var,
    /// `[B*heads, T, T^2]`
    pub probs: Var,
}

/// Each frame's class feature attends over its tracklet's `T^2` hub rows;
/// the result is layer-normalised and averaged over frames.
pub fn sta_aggregate(
    tape: &mut Tape,
    p: &Bound,
    frame_cls: Var,
    hub_rows: Var,
    tracklets: usize,
    frames: usize,
    heads: usize,
) -> Result<StaOutput> {
    let w = AttentionWeights::bind(p, "stp/sta/attn")?;
    let shape = AttentionShape { batch: tracklets, q_len: frames, kv_len: frames * frames, heads, causal: false };
    let a = multi_head_attention(tape, frame_cls, hub_rows, hub_rows, &w, shape)?;
    let per_frame = tape.layer_norm(a.out, p.get("stp/sta/ln/g")?, p.get("stp/sta/ln/b")?)?;
    let pooled = tape.mean_groups(per_frame, frames)?;
    Ok(StaOutput { per_frame, pooled, probs: a.probs })
}
