//! Small encoder fixtures for the mechanism checks.

use vld::data::Frame;
use vld::encoder::{self, EncoderConfig};
use vld::params::ParamStore;
use vld::rng::CounterRng;
use vld::stp::{self, HubState};
use vld::{Tape, Tensor};

pub fn random_frame(h: usize, w: usize, seed: u64) -> Frame {
    let mut r = CounterRng::from_seed(seed);
    Frame { height: h, width: w, data: (0..h * w * 3).map(|_| r.uniform()).collect() }
}

pub fn tracklet(cfg: &EncoderConfig, frames: usize, seed: u64) -> Vec<Frame> {
    (0..frames).map(|i| random_frame(cfg.height, cfg.width, seed * 100 + i as u64)).collect()
}

pub fn store(cfg: &EncoderConfig, frames: usize, seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    let mut r = CounterRng::from_seed(seed);
    encoder::init(&mut s, cfg, &mut r);
    stp::init(&mut s, cfg.dim, frames, &mut r);
    s
}

pub fn patches(cfg: &EncoderConfig, tracks: &[Vec<Frame>]) -> Tensor {
    encoder::patchify_tracklets(tracks.iter().map(|t| t.as_slice()), cfg).unwrap()
}

pub fn encode_bits(cfg: &EncoderConfig, s: &ParamStore, state: &HubState, tracks: &[Vec<Frame>]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let p = s.bind(&mut tape);
    let x = tape.leaf(&patches(cfg, tracks));
    let out = stp::encode_with_hub(&mut tape, &p, cfg, state, x, tracks.len()).unwrap();
    (tape.value(out.frame_cls).to_vec(), tape.value(out.pooled).to_vec())
}

/// Gradient of frame 0's class feature with respect to frame 1's pixels.
pub fn cross_frame_grad(insertion: usize) -> f64 {
    let cfg = EncoderConfig::desk();
    let s = store(&cfg, 4, 7);
    let tracks = vec![tracklet(&cfg, 4, 3)];
    let mut tape = Tape::new();
    let p = s.bind(&mut tape);
    let x = tape.leaf(&patches(&cfg, &tracks).with_grad());
    let out = stp::encode_with_hub(&mut tape, &p, &cfg, &HubState::new(4, insertion), x, 1).unwrap();
    let first = tape.gather_rows(out.frame_cls, &[0]).unwrap();
    // a plain sum of a normalised row is constant, so weight it
    let w = tape.constant(vec![1, cfg.dim], CounterRng::from_seed(99).normal_vec(cfg.dim, 1.0));
    let weighted = tape.mul(first, w).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();
    let g = tape.grad(x).unwrap();
    let n = cfg.num_patches() * cfg.patch_dim();
    g[n..2 * n].iter().map(|v| v.abs()).sum()
}

