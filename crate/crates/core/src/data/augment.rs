//! Training-time frame augmentation. Parameters are drawn once per tracklet so
//! all its frames receive the same transform.

use super::{Frame, Modality};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub pad: usize,
    pub erase_p: f64,
    pub swap_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_p: 0.5, pad: 10, erase_p: 0.5, swap_p: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentParams {
    pub flip: bool,
    pub pad: usize,
    /// Crop origin inside the padded frame, each in `0..=2*pad`.
    pub crop_y: usize,
    pub crop_x: usize,
    pub erase: Option<usize>,
    pub swap: Option<[usize; 3]>,
}

impl AugmentParams {
    pub fn identity(pad: usize) -> Self {
        Self { flip: false, pad, crop_y: pad, crop_x: pad, erase: None, swap: None }
    }

    pub fn sample(cfg: &AugmentConfig, modality: Modality, rng: &mut CounterRng) -> Self {
        let flip = rng.bernoulli(cfg.flip_p);
        let crop_y = rng.below(2 * cfg.pad + 1);
        let crop_x = rng.below(2 * cfg.pad + 1);
        let visible = modality == Modality::Visible;
        let erase = rng.bernoulli(cfg.erase_p).then(|| rng.below(3));
        let swap = rng.bernoulli(cfg.swap_p).then(|| {
            let mut p = [0, 1, 2];
            rng.shuffle(&mut p);
            p
        });
        Self {
            flip,
            pad: cfg.pad,
            crop_y,
            crop_x,
            erase: erase.filter(|_| visible),
            swap: swap.filter(|_| visible),
        }
    }

    pub fn apply(&self, f: &Frame) -> Frame {
        let (h, w) = (f.height, f.width);
        let mut out = Frame::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let sy = (y + self.crop_y) as isize - self.pad as isize;
                let sx = (x + self.crop_x) as isize - self.pad as isize;
                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    continue;
                }
                let (sy, mut sx) = (sy as usize, sx as usize);
                if self.flip {
                    sx = w - 1 - sx;
                }
                for c in 0..3 {
                    let src = self.swap.map_or(c, |p| p[c]);
                    out.set(y, x, c, f.at(sy, sx, src));
                }
            }
        }
        if let Some(c) = self.erase {
            for px in out.data.chunks_mut(3) {
                px[c] = 0.0;
            }
        }
        out
    }
}

/// Draws parameters and applies them to one frame.
pub fn augment(frame: &Frame, modality: Modality, cfg: &AugmentConfig, rng: &mut CounterRng) -> Frame {
    AugmentParams::sample(cfg, modality, rng).apply(frame)
}
