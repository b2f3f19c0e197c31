//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;

use crate::data::{AugmentConfig, BatchPlan, SyntheticSpec};
use crate::encoder::EncoderConfig;
use crate::error::{config_err, Result, VldError};
use crate::imlp::ImlpConfig;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;

pub const SEED_ENV: &str = "VLD_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub output: String,
    pub data_root: String,
    pub data: SyntheticSpec,
    pub encoder: EncoderConfig,
    pub stp: bool,
    pub insertion_layer: usize,
    pub retrieval_sta: bool,
    pub imlp_enabled: bool,
    pub imlp: ImlpConfig,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    pub plan: BatchPlan,
    pub augment: AugmentConfig,
    pub epochs: usize,
    /// identity passes per epoch
    pub repeats: usize,
}

impl RunConfig {
    /// Small model on the synthetic benchmark; the acceptance ordering runs on this.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 1,
            output: "runs".into(),
            data_root: "data/desk".into(),
            data: SyntheticSpec::desk(),
            encoder: EncoderConfig::desk(),
            stp: true,
            insertion_layer: 2,
            retrieval_sta: false,
            imlp_enabled: true,
            imlp: ImlpConfig::default(),
            loss: LossWeights::default(),
            adam: AdamConfig { base_lr: 1e-3, ..AdamConfig::default() },
            plan: BatchPlan { identities: 4, per_identity: 2 },
            augment: AugmentConfig { flip_p: 0.0, pad: 0, ..AugmentConfig::default() },
            epochs: 8,
            repeats: 4,
        }
    }

    /// Training recipe at full size (ViT-B/16, 288x144, T=6).
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.preset = "full".into();
        c.data_root = "data/full".into();
        c.data.frames = 6;
        c.data.height = 288;
        c.data.width = 144;
        c.encoder = EncoderConfig::profile();
        c.insertion_layer = 9;
        c.adam = AdamConfig::default();
        c.plan = BatchPlan::default();
        c.augment = AugmentConfig::default();
        c.epochs = 24;
        c.repeats = 1;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(config_err(format!("unknown preset '{}'", other))),
        }
    }

    /// Ablation rows: `B`, `B+STP`, `B+IMLP`, `B+STP+IMLP`.
    pub fn with_variant(mut self, name: &str) -> Result<Self> {
        let (stp, imlp) = match name {
            "B" => (false, false),
            "B+STP" => (true, false),
            "B+IMLP" => (false, true),
            "B+STP+IMLP" => (true, true),
            other => return Err(config_err(format!("unknown variant '{}'", other))),
        };
        self.stp = stp;
        self.imlp_enabled = imlp;
        Ok(self)
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        let mut encoder = self.encoder.clone();
        encoder.height = self.data.height;
        encoder.width = self.data.width;
        ModelConfig {
            encoder,
            frames: self.data.frames,
            stp: self.stp,
            insertion_layer: self.insertion_layer,
            retrieval_sta: self.retrieval_sta,
            imlp: self.imlp_enabled.then(|| self.imlp.clone()),
            num_classes,
            loss: self.loss,
        }
    }

    /// Parses text over the preset named by `run.preset` (default desk).
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| VldError::Parse {
                line: i + 1,
                msg: format!("expected 'section.key = value', got '{}'", line),
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let preset = pairs.iter().find(|(_, k, _)| k == "run.preset").map_or("desk", |(_, _, v)| v.as_str());
        let mut cfg = Self::preset(preset)?;
        for (line, k, v) in &pairs {
            cfg.set(k, v).map_err(|msg| VldError::Parse { line: *line, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `VLD_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{} = '{}' is not an unsigned integer", SEED_ENV, v)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config(self.data.train_identities.max(2)).validate()?;
        if self.epochs == 0 || self.repeats == 0 {
            return Err(config_err("epochs and repeats must be positive"));
        }
        if self.plan.identities < 2 || self.plan.per_identity == 0 {
            return Err(config_err("batch needs at least 2 identities and 1 tracklet per identity"));
        }
        if self.imlp.logit_scale_max <= 0.0 || self.imlp.logit_scale_init > self.imlp.logit_scale_max {
            return Err(config_err("logit scale must start inside (0, max]"));
        }
        for (name, v) in [("loss.v2t", self.loss.v2t), ("loss.id_hub", self.loss.id_hub), ("loss.wrt_hub", self.loss.wrt_hub)] {
            if !(v >= 0.0) {
                return Err(config_err(format!("{} must be nonnegative", name)));
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{} = '{}' is not a valid value", key, v))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("{} = '{}' is not true or false", key, v)),
            }
        }
        match key {
            "run.preset" => self.preset = v.to_string(),
            "run.seed" => self.seed = num(key, v)?,
            "run.output" => self.output = v.to_string(),
            "data.root" => self.data_root = v.to_string(),
            "data.identities" => self.data.identities = num(key, v)?,
            "data.train_identities" => self.data.train_identities = num(key, v)?,
            "data.tracklets_per_modality" => self.data.tracklets_per_modality = num(key, v)?,
            "data.frames" => self.data.frames = num(key, v)?,
            "data.height" => self.data.height = num(key, v)?,
            "data.width" => self.data.width = num(key, v)?,
            "data.visible_cameras" => self.data.visible_cameras = num(key, v)?,
            "data.infrared_cameras" => self.data.infrared_cameras = num(key, v)?,
            "data.pattern_std" => self.data.pattern_std = num(key, v)?,
            "data.stripe_std" => self.data.stripe_std = num(key, v)?,
            "data.max_speed" => self.data.max_speed = num(key, v)?,
            "data.mixing_std" => self.data.mixing_std = num(key, v)?,
            "data.visible_noise" => self.data.visible_noise = num(key, v)?,
            "data.infrared_noise" => self.data.infrared_noise = num(key, v)?,
            "data.infrared_offset" => self.data.infrared_offset = num(key, v)?,
            "data.gain_std" => self.data.gain_std = num(key, v)?,
            "model.patch" => self.encoder.patch = num(key, v)?,
            "model.dim" => self.encoder.dim = num(key, v)?,
            "model.depth" => self.encoder.depth = num(key, v)?,
            "model.heads" => self.encoder.heads = num(key, v)?,
            "model.mlp_ratio" => self.encoder.mlp_ratio = num(key, v)?,
            "model.init_std" => self.encoder.init_std = num(key, v)?,
            "stp.enabled" => self.stp = flag(key, v)?,
            "stp.insertion_layer" => self.insertion_layer = num(key, v)?,
            "stp.retrieval_sta" => self.retrieval_sta = flag(key, v)?,
            "imlp.enabled" => self.imlp_enabled = flag(key, v)?,
            "imlp.tokens" => self.imlp.num_tokens = num(key, v)?,
            "imlp.template" => self.imlp.template_id = num(key, v)?,
            "imlp.text_layers" => self.imlp.text_layers = num(key, v)?,
            "imlp.text_heads" => self.imlp.text_heads = num(key, v)?,
            "imlp.logit_scale_init" => self.imlp.logit_scale_init = num(key, v)?,
            "imlp.logit_scale_max" => self.imlp.logit_scale_max = num(key, v)?,
            "loss.v2t" => self.loss.v2t = num(key, v)?,
            "loss.id_hub" => self.loss.id_hub = num(key, v)?,
            "loss.wrt_hub" => self.loss.wrt_hub = num(key, v)?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.repeats" => self.repeats = num(key, v)?,
            "train.lr" => self.adam.base_lr = num(key, v)?,
            "train.prompt_lr_mult" => self.adam.prompt_lr_mult = num(key, v)?,
            "train.beta1" => self.adam.beta1 = num(key, v)?,
            "train.beta2" => self.adam.beta2 = num(key, v)?,
            "train.eps" => self.adam.eps = num(key, v)?,
            "train.identities_per_batch" => self.plan.identities = num(key, v)?,
            "train.tracklets_per_identity" => self.plan.per_identity = num(key, v)?,
            "augment.flip_p" => self.augment.flip_p = num(key, v)?,
            "augment.pad" => self.augment.pad = num(key, v)?,
            "augment.erase_p" => self.augment.erase_p = num(key, v)?,
            "augment.swap_p" => self.augment.swap_p = num(key, v)?,
            other => return Err(format!("unknown key '{}'", other)),
        }
        Ok(())
    }

    /// Every key with its resolved value; `parse(render())` round-trips.
    pub fn render(&self) -> String {
        let d = &self.data;
        let e = &self.encoder;
        let entries: Vec<(&str, String)> = vec![
            ("run.preset", self.preset.clone()),
            ("run.seed", self.seed.to_string()),
            ("run.output", self.output.clone()),
            ("data.root", self.data_root.clone()),
            ("data.identities", d.identities.to_string()),
            ("data.train_identities", d.train_identities.to_string()),
            ("data.tracklets_per_modality", d.tracklets_per_modality.to_string()),
            ("data.frames", d.frames.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.visible_cameras", d.visible_cameras.to_string()),
            ("data.infrared_cameras", d.infrared_cameras.to_string()),
            ("data.pattern_std", d.pattern_std.to_string()),
            ("data.stripe_std", d.stripe_std.to_string()),
            ("data.max_speed", d.max_speed.to_string()),
            ("data.mixing_std", d.mixing_std.to_string()),
            ("data.visible_noise", d.visible_noise.to_string()),
            ("data.infrared_noise", d.infrared_noise.to_string()),
            ("data.infrared_offset", d.infrared_offset.to_string()),
            ("data.gain_std", d.gain_std.to_string()),
            ("model.patch", e.patch.to_string()),
            ("model.dim", e.dim.to_string()),
            ("model.depth", e.depth.to_string()),
            ("model.heads", e.heads.to_string()),
            ("model.mlp_ratio", e.mlp_ratio.to_string()),
            ("model.init_std", e.init_std.to_string()),
            ("stp.enabled", self.stp.to_string()),
            ("stp.insertion_layer", self.insertion_layer.to_string()),
            ("stp.retrieval_sta", self.retrieval_sta.to_string()),
            ("imlp.enabled", self.imlp_enabled.to_string()),
            ("imlp.tokens", self.imlp.num_tokens.to_string()),
            ("imlp.template", self.imlp.template_id.to_string()),
            ("imlp.text_layers", self.imlp.text_layers.to_string()),
            ("imlp.text_heads", self.imlp.text_heads.to_string()),
            ("imlp.logit_scale_init", self.imlp.logit_scale_init.to_string()),
            ("imlp.logit_scale_max", self.imlp.logit_scale_max.to_string()),
            ("loss.v2t", self.loss.v2t.to_string()),
            ("loss.id_hub", self.loss.id_hub.to_string()),
            ("loss.wrt_hub", self.loss.wrt_hub.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.repeats", self.repeats.to_string()),
            ("train.lr", self.adam.base_lr.to_string()),
            ("train.prompt_lr_mult", self.adam.prompt_lr_mult.to_string()),
            ("train.beta1", self.adam.beta1.to_string()),
            ("train.beta2", self.adam.beta2.to_string()),
            ("train.eps", self.adam.eps.to_string()),
            ("train.identities_per_batch", self.plan.identities.to_string()),
            ("train.tracklets_per_identity", self.plan.per_identity.to_string()),
            ("augment.flip_p", self.augment.flip_p.to_string()),
            ("augment.pad", self.augment.pad.to_string()),
            ("augment.erase_p", self.augment.erase_p.to_string()),
            ("augment.swap_p", self.augment.swap_p.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in entries {
            let _ = writeln!(s, "{} = {}", k, v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        for c in [RunConfig::desk(), RunConfig::full()] {
            assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_key_names_line() {
        let e = RunConfig::parse("run.seed = 3\n\ntrain.speed = 2\n").unwrap_err();
        match e {
            VldError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("train.speed"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn comments_and_preset() {
        let c = RunConfig::parse("# hi\nrun.preset = full # ViT-B\nrun.seed = 7\n").unwrap();
        assert_eq!(c.encoder.dim, 768);
        assert_eq!(c.seed, 7);
        assert!(matches!(RunConfig::parse("stp.insertion_layer = 9\n"), Err(VldError::Config(_))));
    }
}
