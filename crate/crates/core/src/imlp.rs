//! Identity prompts read through a frozen text tower act as the identity
//! classifier for sequence features.
//!
//! Each identity owns `M` learnable token embeddings that fill the slots of a
//! fixed word template (see [`template`]). All identities' prompts go through
//! the frozen tower together every step, and the unit-normalised outputs
//! serve as class prototypes.

use crate::autograd::{Tape, Var};
use crate::error::{config_err, Result, VldError};
use crate::nn::{transformer_block, BlockWeights};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::rng::{hash_str, CounterRng};
use crate::tensor::Tensor;

/// Seed of the frozen text tower and template embeddings. Fixed so the tower
/// can be rebuilt instead of stored.
pub const TEXT_SEED: u64 = 0x7E57_0000_0000_0001;
pub const PROMPT_INIT_STD: f64 = 0.02;

/// Words around the learnable slots; `<sot>`/`<eot>` delimit every prompt and
/// the tower reads its output at `<eot>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: u8,
    pub prefix: &'static [&'static str],
    pub suffix: &'static [&'static str],
}

pub fn template(id: u8) -> Result<Template> {
    let (prefix, suffix): (&'static [&'static str], &'static [&'static str]) = match id {
        1 => (&["<sot>"], &["person", "<eot>"]),
        2 => (&["<sot>", "A"], &["person", "<eot>"]),
        3 => (
            &["<sot>", "A"],
            &["person", "observed", "in", "RGB", "and", "infrared", "sequences", ".", "<eot>"],
        ),
        4 => (
            &["<sot>", "A"],
            &["person", "observed", "in", "both", "day", "and", "night", "conditions", ".", "<eot>"],
        ),
        other => return Err(config_err(format!("unknown prompt template {}", other))),
    };
    Ok(Template { id, prefix, suffix })
}

impl Template {
    pub fn render(&self, m: usize) -> String {
        let slots: Vec<String> = (1..=m).map(|i| format!("[X]{i}")).collect();
        self.prefix
            .iter()
            .map(|s| s.to_string())
            .chain(slots)
            .chain(self.suffix.iter().map(|s| s.to_string()))
            .filter(|w| !w.starts_with('<'))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn seq_len(&self, m: usize) -> usize {
        self.prefix.len() + m + self.suffix.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImlpConfig {
    pub num_tokens: usize,
    pub template_id: u8,
    pub text_layers: usize,
    pub text_heads: usize,
    pub logit_scale_init: f64,
    pub logit_scale_max: f64,
}

impl Default for ImlpConfig {
    fn default() -> Self {
        Self {
            num_tokens: 4,
            template_id: 4,
            text_layers: 2,
            text_heads: 4,
            logit_scale_init: 1.0 / 0.07,
            logit_scale_max: 100.0,
        }
    }
}

/// Seed-built text transformer whose weights never enter the optimizer.
#[derive(Debug, Clone)]
pub struct FrozenTextEncoder {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    weights: ParamStore,
}

impl FrozenTextEncoder {
    pub fn build(dim: usize, heads: usize, layers: usize, max_len: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(config_err(format!("text width {} not divisible by {} heads", dim, heads)));
        }
        let mut rng = CounterRng::new(TEXT_SEED, hash_str("text-encoder"));
        let mut weights = ParamStore::new();
        let std = 1.0 / (dim as f64).sqrt();
        weights.insert_normal("text/pos", &[max_len, dim], 0.01, &mut rng);
        for i in 0..layers {
            BlockWeights::init(&mut weights, &format!("text/blocks/{i}"), dim, 4, std, &mut rng);
        }
        weights.insert_const("text/ln_final/g", &[dim], 1.0);
        weights.insert_const("text/ln_final/b", &[dim], 0.0);
        weights.insert_normal("text/proj", &[dim, dim], std, &mut rng);
        for p in weights.iter_mut() {
            p.tensor.set_requires_grad(false);
        }
        Ok(Self { dim, heads, layers, weights })
    }

    pub fn weights(&self) -> &ParamStore {
        &self.weights
    }

    pub fn max_len(&self) -> usize {
        self.weights.get("text/pos").map_or(0, |t| t.shape()[0])
    }

    /// Places the weights on the tape as constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.weights.bind_constants(tape)
    }
}

/// Learnable slots (in the parameter store as `imlp/prompts`) plus the shared
/// frozen template embeddings.
#[derive(Debug, Clone)]
pub struct PromptBank {
    pub num_identities: usize,
    pub num_tokens: usize,
    pub dim: usize,
    pub template: Template,
    /// `[prefix_len, D]`, shared by every identity
    pub prefix: Tensor,
    /// `[suffix_len, D]`, shared by every identity
    pub suffix: Tensor,
}

fn template_embedding(template_id: u8, position: usize, dim: usize) -> Vec<f64> {
    let mut r = CounterRng::new(TEXT_SEED, hash_str(&format!("template/{template_id}/{position}")));
    r.normal_vec(dim, PROMPT_INIT_STD)
}

/// Registers `imlp/prompts` (`[N_y, M, D]`, prompt learning-rate group) and
/// returns the bank describing its template.
pub fn build_prompts(
    store: &mut ParamStore,
    num_identities: usize,
    num_tokens: usize,
    template_id: u8,
    dim: usize,
    rng: &mut CounterRng,
) -> Result<PromptBank> {
    if num_identities < 2 {
        return Err(config_err("prompt bank needs at least two identities"));
    }
    if num_tokens == 0 {
        return Err(config_err("prompt bank needs at least one learnable token"));
    }
    let template = template(template_id)?;
    let np = template.prefix.len();
    let prefix: Vec<f64> = (0..np).flat_map(|i| template_embedding(template_id, i, dim)).collect();
    let suffix: Vec<f64> = (0..template.suffix.len())
        .flat_map(|i| template_embedding(template_id, np + num_tokens + i, dim))
        .collect();
    let slots = Tensor::from_parts(
        vec![num_identities, num_tokens, dim],
        rng.normal_vec(num_identities * num_tokens * dim, PROMPT_INIT_STD),
    );
    store.insert("imlp/prompts", slots, ParamGroup::Prompt);
    Ok(PromptBank {
        num_identities,
        num_tokens,
        dim,
        prefix: Tensor::from_parts(vec![np, dim], prefix),
        suffix: Tensor::from_parts(vec![template.suffix.len(), dim], suffix),
        template,
    })
}

/// Runs every identity's prompt through the frozen tower; returns unit-norm
/// prototypes `[N_y, D]`.
pub fn encode_prompts(
    tape: &mut Tape,
    prompts: Var,
    bank: &PromptBank,
    enc: &FrozenTextEncoder,
    frozen: &Bound,
) -> Result<Var> {
    let (n, m, d) = (bank.num_identities, bank.num_tokens, bank.dim);
    if tape.shape(prompts) != [n, m, d] || enc.dim != d {
        return Err(VldError::Dimension(format!(
            "prompts {:?} vs bank [{}, {}, {}] and text width {}",
            tape.shape(prompts),
            n,
            m,
            d,
            enc.dim
        )));
    }
    let np = bank.prefix.shape()[0];
    let ns = bank.suffix.shape()[0];
    let seq = np + m + ns;
    if seq > enc.max_len() {
        return Err(config_err(format!("prompt of {} tokens exceeds text context {}", seq, enc.max_len())));
    }
    let pre = tape.constant(bank.prefix.shape().to_vec(), bank.prefix.data().to_vec());
    let suf = tape.constant(bank.suffix.shape().to_vec(), bank.suffix.data().to_vec());
    let slots = tape.reshape(prompts, &[n * m, d])?;
    let all = tape.concat_rows(&[pre, suf, slots])?;
    let mut idx = Vec::with_capacity(n * seq);
    let mut pos_idx = Vec::with_capacity(n * seq);
    for i in 0..n {
        idx.extend(0..np);
        idx.extend((0..m).map(|j| np + ns + i * m + j));
        idx.extend(np..np + ns);
        pos_idx.extend(0..seq);
    }
    let x = tape.gather_rows(all, &idx)?;
    let pos = tape.gather_rows(frozen.get("text/pos")?, &pos_idx)?;
    let mut x = tape.add(x, pos)?;
    for l in 0..enc.layers {
        let w = BlockWeights::bind(frozen, &format!("text/blocks/{l}"))?;
        x = transformer_block(tape, x, &w, n, seq, enc.heads, true)?;
    }
    let eot: Vec<usize> = (0..n).map(|i| i * seq + seq - 1).collect();
    let x = tape.gather_rows(x, &eot)?;
    let x = tape.layer_norm(x, frozen.get("text/ln_final/g")?, frozen.get("text/ln_final/b")?)?;
    let x = tape.matmul(x, frozen.get("text/proj")?)?;
    Ok(tape.normalize_rows(x))
}

/// Similarity logits `scale * cos(f_i, proto_j)`, `[n, N_y]`.
pub fn similarity_logits(tape: &mut Tape, features: Var, protos: Var, scale: Var) -> Result<Var> {
    let f = tape.normalize_rows(features);
    let pt = tape.permute(protos, &[1, 0])?;
    let sims = tape.matmul(f, pt)?;
    tape.scale_by(sims, scale)
}

/// Visual-to-text cross-entropy of sequence features against all prototypes.
pub fn v2t_loss(tape: &mut Tape, features: Var, labels: &[usize], protos: Var, scale: Var) -> Result<Var> {
    let logits = similarity_logits(tape, features, protos, scale)?;
    tape.cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_render() {
        assert_eq!(template(1).unwrap().render(2), "[X]1 [X]2 person");
        assert_eq!(
            template(4).unwrap().render(4),
            "A [X]1 [X]2 [X]3 [X]4 person observed in both day and night conditions ."
        );
        assert!(matches!(template(5), Err(VldError::Config(_))));
    }

    #[test]
    fn bank_shapes() {
        let mut s = ParamStore::new();
        let mut r = CounterRng::from_seed(1);
        let b = build_prompts(&mut s, 20, 4, 4, 16, &mut r).unwrap();
        assert_eq!(s.get("imlp/prompts").unwrap().shape(), &[20, 4, 16]);
        assert_eq!(b.prefix.shape(), &[2, 16]);
        let mut s = ParamStore::new();
        build_prompts(&mut s, 2, 1, 4, 16, &mut r).unwrap();
        assert_eq!(s.get("imlp/prompts").unwrap().shape(), &[2, 1, 16]);
        assert!(build_prompts(&mut s, 1, 1, 4, 16, &mut r).is_err());
        assert!(build_prompts(&mut s, 2, 0, 4, 16, &mut r).is_err());
    }
}
