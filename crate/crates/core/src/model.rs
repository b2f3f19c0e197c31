//! The assembled model: encoder, optional hub, optional identity prompts and
//! the two identity heads.

use crate::autograd::{Tape, Var};
use crate::data::Tracklet;
use crate::encoder::{self, EncoderConfig, EncoderOutput};
use crate::error::{config_err, Result, VldError};
use crate::imlp::{self, FrozenTextEncoder, ImlpConfig, PromptBank};
use crate::kernels::map_indices;
use crate::losses::{self, LossParts, LossWeights};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::rng::{hash_str, CounterRng};
use crate::stp::{self, HubState, StaOutput};
use crate::tensor::Tensor;

pub const HEAD_INIT_STD: f64 = 0.1;
/// Tracklets per tape during feature extraction.
pub const EXTRACT_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub frames: usize,
    pub stp: bool,
    pub insertion_layer: usize,
    /// Append the aggregated hub feature to the retrieval feature.
    pub retrieval_sta: bool,
    pub imlp: Option<ImlpConfig>,
    pub num_classes: usize,
    pub loss: LossWeights,
}

impl ModelConfig {
    pub fn hub_state(&self) -> HubState {
        let ins = if self.stp { self.insertion_layer } else { self.encoder.depth };
        HubState::new(self.frames, ins)
    }

    /// Width of one retrieval feature.
    pub fn feature_dim(&self) -> usize {
        if self.stp && self.retrieval_sta {
            2 * self.encoder.dim
        } else {
            self.encoder.dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.frames == 0 {
            return Err(config_err("frames per tracklet must be positive"));
        }
        if self.num_classes < 2 {
            return Err(config_err("need at least two training identities"));
        }
        if self.stp && self.insertion_layer >= self.encoder.depth {
            return Err(config_err(format!(
                "hub insertion layer {} must be below depth {}",
                self.insertion_layer, self.encoder.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VldModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub text: Option<FrozenTextEncoder>,
    pub bank: Option<PromptBank>,
}

/// Tape values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub enc: EncoderOutput,
    pub sta: Option<StaOutput>,
}

impl VldModel {
    /// Builds parameters from `seed`. Each component draws from its own
    /// stream, so enabling a component leaves the others' initial values alone.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let root = CounterRng::new(seed, hash_str("init"));
        let d = cfg.encoder.dim;
        let mut store = ParamStore::new();
        encoder::init(&mut store, &cfg.encoder, &mut root.derive_str("vit"));
        let mut hr = root.derive_str("head");
        store.insert_normal("head/cls/w", &[d, cfg.num_classes], HEAD_INIT_STD, &mut hr);
        store.insert_const("head/cls/b", &[cfg.num_classes], 0.0);
        if cfg.stp {
            stp::init(&mut store, d, cfg.frames, &mut root.derive_str("stp"));
            store.insert_normal("head/hub/w", &[d, cfg.num_classes], HEAD_INIT_STD, &mut hr);
            store.insert_const("head/hub/b", &[cfg.num_classes], 0.0);
        }
        let (text, bank) = match &cfg.imlp {
            Some(ic) => {
                let bank = imlp::build_prompts(
                    &mut store,
                    cfg.num_classes,
                    ic.num_tokens,
                    ic.template_id,
                    d,
                    &mut root.derive_str("imlp"),
                )?;
                let len = bank.template.seq_len(ic.num_tokens);
                let text = FrozenTextEncoder::build(d, ic.text_heads, ic.text_layers, len)?;
                store.insert("imlp/logit_scale", Tensor::scalar(ic.logit_scale_init), ParamGroup::Base);
                (Some(text), Some(bank))
            }
            None => (None, None),
        };
        Ok(Self { cfg, store, text, bank })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, patches: Var, tracklets: usize) -> Result<Forward> {
        let state = self.cfg.hub_state();
        let enc = stp::encode_with_hub(tape, p, &self.cfg.encoder, &state, patches, tracklets)?;
        let sta = match enc.hub_rows {
            Some(rows) => Some(stp::sta_aggregate(
                tape,
                p,
                enc.frame_cls,
                rows,
                tracklets,
                self.cfg.frames,
                self.cfg.encoder.heads,
            )?),
            None => None,
        };
        Ok(Forward { enc, sta })
    }

    /// Text prototypes `[N_y, D]` from the current prompts.
    pub fn prototypes(&self, tape: &mut Tape, p: &Bound) -> Result<Option<Var>> {
        match (&self.text, &self.bank) {
            (Some(text), Some(bank)) => {
                let frozen = text.bind(tape);
                let v = imlp::encode_prompts(tape, p.get("imlp/prompts")?, bank, text, &frozen)?;
                Ok(Some(v))
            }
            _ => Ok(None),
        }
    }

    /// All enabled loss parts and their weighted total.
    pub fn losses(&self, tape: &mut Tape, p: &Bound, fwd: &Forward, labels: &[usize]) -> Result<(LossParts, Var)> {
        let pooled = fwd.enc.pooled;
        let id_cls = losses::id_ce(tape, pooled, labels, p.get("head/cls/w")?, p.get("head/cls/b")?)?;
        let wrt_cls = losses::wrt_loss(tape, pooled, labels)?;
        let (id_hub, wrt_hub) = match &fwd.sta {
            Some(sta) => {
                let id = losses::id_ce(tape, sta.pooled, labels, p.get("head/hub/w")?, p.get("head/hub/b")?)?;
                let wrt = losses::wrt_loss(tape, sta.pooled, labels)?;
                (Some(id), Some(wrt))
            }
            None => (None, None),
        };
        let v2t = match self.prototypes(tape, p)? {
            Some(protos) => Some(imlp::v2t_loss(tape, pooled, labels, protos, p.get("imlp/logit_scale")?)?),
            None => None,
        };
        let parts = LossParts { id_cls, wrt_cls, v2t, id_hub, wrt_hub };
        let total = losses::total_loss(tape, &parts, &self.cfg.loss)?;
        Ok((parts, total))
    }

    /// Retrieval features: frame class features averaged over each tracklet,
    /// `[n, D]`, unnormalised. With `retrieval_sta` the aggregated hub
    /// feature follows on each row, `[n, 2D]`. Chunks run in parallel and are independent.
    pub fn extract_features(&self, tracklets: &[&Tracklet]) -> Result<Tensor> {
        if tracklets.is_empty() {
            return Err(VldError::EmptyInput("no tracklets to encode".into()));
        }
        if let Some(t) = tracklets.iter().find(|t| t.frames.len() != self.cfg.frames) {
            return Err(VldError::Data(format!(
                "tracklet {} has {} frames, model expects {}",
                t.id,
                t.frames.len(),
                self.cfg.frames
            )));
        }
        let chunks: Vec<&[&Tracklet]> = tracklets.chunks(EXTRACT_CHUNK).collect();
        let parts = map_indices(chunks.len(), |i| -> Result<Vec<f64>> {
            let chunk = chunks[i];
            let patches = batch_patches(&self.cfg.encoder, chunk)?;
            let mut tape = Tape::new();
            let p = self.store.bind_constants(&mut tape);
            let x = tape.leaf(&patches);
            let fwd = self.forward(&mut tape, &p, x, chunk.len())?;
            let cls = tape.value(fwd.enc.pooled);
            match fwd.sta {
                Some(sta) if self.cfg.retrieval_sta => {
                    let hub = tape.value(sta.pooled);
                    let d = self.cfg.encoder.dim;
                    Ok(cls.chunks(d).zip(hub.chunks(d)).flat_map(|(a, b)| a.iter().chain(b)).copied().collect())
                }
                _ => Ok(cls.to_vec()),
            }
        });
        let width = self.cfg.feature_dim();
        let mut data = Vec::with_capacity(tracklets.len() * width);
        for part in parts {
            data.extend(part?);
        }
        Ok(Tensor::from_parts(vec![tracklets.len(), width], data))
    }

    /// Keeps the logit scale inside `(0, max]` after an optimizer step.
    pub fn clamp_logit_scale(&mut self) {
        if let Some(ic) = &self.cfg.imlp {
            let max = ic.logit_scale_max;
            if let Some(t) = self.store.get_mut("imlp/logit_scale") {
                for v in t.data_mut() {
                    *v = v.clamp(1e-3, max);
                }
            }
        }
    }
}

/// Pixel standardisation applied before patch projection: `(v - MEAN) / STD`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Standardised `[B*T*N, 3P^2]` patches of a slice of tracklets.
pub fn batch_patches(cfg: &EncoderConfig, tracklets: &[&Tracklet]) -> Result<Tensor> {
    let mut t = encoder::patchify_tracklets(tracklets.iter().map(|t| t.frames.as_slice()), cfg)?;
    t.data_mut().iter_mut().for_each(|v| *v = (*v - PIXEL_MEAN) / PIXEL_STD);
    Ok(t)
}
