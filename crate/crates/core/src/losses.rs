//! Identity cross-entropy, weighted regularized triplet and the weighted total.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Result, VldError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub v2t: f64,
    pub id_hub: f64,
    pub wrt_hub: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { v2t: 0.08, id_hub: 0.4, wrt_hub: 1.0 }
    }
}

/// Softmax cross-entropy of a linear identity head.
pub fn id_ce(tape: &mut Tape, features: Var, labels: &[usize], w: Var, b: Var) -> Result<Var> {
    let logits = crate::nn::linear(tape, features, w, b)?;
    tape.cross_entropy(logits, labels)
}

/// Weighted regularized triplet loss on Euclidean distances between rows.
pub fn wrt_loss(tape: &mut Tape, features: Var, labels: &[usize]) -> Result<Var> {
    let d = tape.pairwise_dist(features)?;
    tape.wrt_loss(d, labels)
}

/// The five loss terms; absent terms belong to disabled components.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub id_cls: Var,
    pub wrt_cls: Var,
    pub v2t: Option<Var>,
    pub id_hub: Option<Var>,
    pub wrt_hub: Option<Var>,
}

impl LossParts {
    pub fn named(&self) -> Vec<(&'static str, Option<Var>)> {
        vec![
            ("id_cls", Some(self.id_cls)),
            ("wrt_cls", Some(self.wrt_cls)),
            ("v2t", self.v2t),
            ("id_hub", self.id_hub),
            ("wrt_hub", self.wrt_hub),
        ]
    }
}

/// `id_cls + wrt_cls + w.v2t * v2t + w.id_hub * id_hub + w.wrt_hub * wrt_hub`.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    for (name, v) in parts.named() {
        if let Some(v) = v {
            if !tape.scalar(v).is_finite() {
                return Err(VldError::Divergence { part: name.to_string() });
            }
        }
    }
    let mut total = tape.add(parts.id_cls, parts.wrt_cls)?;
    for (part, lambda) in [(parts.v2t, w.v2t), (parts.id_hub, w.id_hub), (parts.wrt_hub, w.wrt_hub)] {
        if let Some(p) = part {
            let s = tape.scale(p, lambda);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

/// Scalar form of [`total_loss`].
pub fn total_value(parts: [f64; 5], w: &LossWeights) -> f64 {
    parts[0] + parts[1] + w.v2t * parts[2] + w.id_hub * parts[3] + w.wrt_hub * parts[4]
}
