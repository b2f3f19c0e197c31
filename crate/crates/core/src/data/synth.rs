//! Seeded two-modality tracklet generator.
//!
//! Every identity owns a latent RGB image: a handful of low-frequency cosine
//! modes plus a horizontal stripe that moves down the frame at an
//! identity-specific speed. Visible frames mix the latent channels through a
//! per-camera matrix; infrared frames collapse them to one band with an
//! offset and heavier noise, replicated over three channels.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{write_split, Split};
use super::{Frame, Modality, Tracklet};
use crate::error::{config_err, Result};
use crate::rng::{hash_str, CounterRng};

/// `(vertical, horizontal)` cosine frequencies.
const MODES: [(usize, usize); 6] = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (3, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Identities `0..train_identities` go to train, the rest to test.
    pub identities: usize,
    pub train_identities: usize,
    pub tracklets_per_modality: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub visible_cameras: usize,
    pub infrared_cameras: usize,
    pub pattern_std: f64,
    pub stripe_std: f64,
    /// Stripe speed range in pixels per frame, sign drawn at random.
    pub max_speed: f64,
    pub mixing_std: f64,
    pub visible_noise: f64,
    pub infrared_noise: f64,
    pub infrared_offset: f64,
    /// Per-tracklet multiplicative brightness jitter.
    pub gain_std: f64,
}

impl SyntheticSpec {
    /// 20 train and 10 test identities, 4 tracklets per modality, T=4, 32x16.
    pub fn desk() -> Self {
        Self {
            identities: 30,
            train_identities: 20,
            tracklets_per_modality: 4,
            frames: 4,
            height: 32,
            width: 16,
            visible_cameras: 2,
            infrared_cameras: 2,
            pattern_std: 0.15,
            stripe_std: 0.35,
            max_speed: 3.0,
            mixing_std: 0.1,
            visible_noise: 0.04,
            infrared_noise: 0.07,
            infrared_offset: 0.12,
            gain_std: 0.08,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(config_err(format!("need at least 2 identities, got {}", self.identities)));
        }
        if self.train_identities > self.identities {
            return Err(config_err("more train identities than identities"));
        }
        if self.tracklets_per_modality == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(config_err("tracklet count, frame count and image size must be positive"));
        }
        if self.visible_cameras == 0 || self.infrared_cameras == 0 {
            return Err(config_err("each modality needs at least one camera"));
        }
        Ok(())
    }

    pub fn test_identities(&self) -> usize {
        self.identities - self.train_identities
    }
}

struct Latent {
    coef: [[f64; MODES.len()]; 3],
    stripe: [f64; 3],
    speed: f64,
}

fn latent(spec: &SyntheticSpec, rng: &CounterRng, identity: usize) -> Latent {
    let mut r = rng.derive_str("identity").derive(identity as u64);
    let mut coef = [[0.0; MODES.len()]; 3];
    for c in coef.iter_mut() {
        for v in c.iter_mut() {
            *v = spec.pattern_std * r.normal();
        }
    }
    let stripe = [0, 1, 2].map(|_| spec.stripe_std * r.normal());
    let mag = spec.max_speed * (0.25 + 0.75 * r.uniform());
    let speed = if r.bernoulli(0.5) { mag } else { -mag };
    Latent { coef, stripe, speed }
}

fn camera_mixing(spec: &SyntheticSpec, rng: &CounterRng, camera: usize) -> [[f64; 3]; 3] {
    let mut r = rng.derive_str("camera").derive(camera as u64);
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { 0.0 } + spec.mixing_std * r.normal();
        }
    }
    m
}

/// Latent value at `(y, x, c)` for time `t` given the tracklet's stripe phase
/// and horizontal shift.
fn latent_pixel(spec: &SyntheticSpec, l: &Latent, y: usize, x: f64, c: usize, t: usize, phase: f64) -> f64 {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let yy = y as f64 + 0.5;
    let mut v = 0.5;
    for (k, &(ky, kx)) in MODES.iter().enumerate() {
        v += l.coef[c][k] * (PI * ky as f64 * yy / h).cos() * (PI * kx as f64 * (x + 0.5) / w).cos();
    }
    let centre = (phase + l.speed * t as f64).rem_euclid(h);
    let mut d = (yy - centre).abs();
    d = d.min(h - d);
    v + l.stripe[c] * (-d * d / (2.0 * 1.5 * 1.5)).exp()
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

#[allow(clippy::too_many_arguments)]
fn render(
    spec: &SyntheticSpec,
    l: &Latent,
    modality: Modality,
    mix: &[[f64; 3]; 3],
    r: &mut CounterRng,
) -> Vec<Frame> {
    let phase = r.uniform() * spec.height as f64;
    let shift = r.below(3) as f64 - 1.0;
    let gain = 1.0 + spec.gain_std * r.normal();
    (0..spec.frames)
        .map(|t| {
            let mut f = Frame::zeros(spec.height, spec.width);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let xs = x as f64 + shift;
                    let lat = [0, 1, 2].map(|c| latent_pixel(spec, l, y, xs, c, t, phase));
                    match modality {
                        Modality::Visible => {
                            for c in 0..3 {
                                let v: f64 = (0..3).map(|k| mix[c][k] * lat[k]).sum();
                                let v = gain * v + spec.visible_noise * r.normal();
                                f.set(y, x, c, quantize(v));
                            }
                        }
                        Modality::Infrared => {
                            let lum = 0.2 * lat[0] + 0.3 * lat[1] + 0.5 * lat[2];
                            let v = gain * lum + spec.infrared_offset + spec.infrared_noise * r.normal();
                            let v = quantize(v);
                            for c in 0..3 {
                                f.set(y, x, c, v);
                            }
                        }
                    }
                }
            }
            f
        })
        .collect()
}

/// Train and test tracklets, generated in memory.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<Tracklet>, Vec<Tracklet>)> {
    spec.validate()?;
    let root = CounterRng::new(seed, hash_str("synth"));
    let vis_mix: Vec<_> = (0..spec.visible_cameras).map(|c| camera_mixing(spec, &root, c)).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut id = 0u64;
    for identity in 0..spec.identities {
        let l = latent(spec, &root, identity);
        for modality in [Modality::Visible, Modality::Infrared] {
            for k in 0..spec.tracklets_per_modality {
                let mut r = root.derive_str("tracklet").derive(id);
                let (camera, mix) = match modality {
                    Modality::Visible => {
                        let c = k % spec.visible_cameras;
                        (c, vis_mix[c])
                    }
                    Modality::Infrared => (spec.visible_cameras + k % spec.infrared_cameras, [[0.0; 3]; 3]),
                };
                let frames = render(spec, &l, modality, &mix, &mut r);
                let tr = Tracklet { id, identity, modality, camera, frames };
                if identity < spec.train_identities {
                    train.push(tr);
                } else {
                    test.push(tr);
                }
                id += 1;
            }
        }
    }
    Ok((train, test))
}

/// Writes `root/train` and `root/test` plus `root/spec.json`.
pub fn generate(spec: &SyntheticSpec, seed: u64, root: &Path) -> Result<()> {
    let (train, test) = synthesize(spec, seed)?;
    std::fs::create_dir_all(root)?;
    let text = serde_json::to_string_pretty(&(seed, spec)).expect("spec serializes");
    std::fs::write(root.join("spec.json"), text + "\n")?;
    write_split(root, Split::Train, &train)?;
    write_split(root, Split::Test, &test)?;
    Ok(())
}
