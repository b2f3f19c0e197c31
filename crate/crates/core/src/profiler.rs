//! Closed-form parameter and FLOP counts.
//!
//! FLOPs cover matrix products only (patch projection, attention projections,
//! attention scores and mixing, MLP, the aggregation attention); softmax, norms
//! and GELU are left out. Costs are per frame: hub-layer growth is charged to
//! the frame that carries the rows, and the per-tracklet aggregation attention
//! is divided by `T`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::encoder::EncoderConfig;
use crate::params::ParamStore;
use crate::stp::hub_schedule;

/// How many FLOPs one multiply-accumulate counts as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    Mac,
    TwoPerMac,
}

impl FlopConvention {
    pub fn factor(self) -> u64 {
        match self {
            FlopConvention::Mac => 1,
            FlopConvention::TwoPerMac => 2,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            FlopConvention::Mac => "1 multiply-accumulate = 1 FLOP",
            FlopConvention::TwoPerMac => "1 multiply-accumulate = 2 FLOPs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub encoder: EncoderConfig,
    pub frames: usize,
    pub stp: bool,
    /// 0-based first hub layer
    pub insertion_layer: usize,
    pub convention: FlopConvention,
}

impl ProfileConfig {
    /// ViT-B/16 at 288x144, T=6, hub from the tenth block.
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::profile(),
            frames: 6,
            stp: true,
            insertion_layer: 9,
            convention: FlopConvention::Mac,
        }
    }

    pub fn without_stp(&self) -> Self {
        Self { stp: false, ..self.clone() }
    }

    fn hub_layers(&self) -> Vec<bool> {
        if self.stp {
            hub_schedule(self.encoder.depth, self.insertion_layer).iter().map(Option::is_some).collect()
        } else {
            vec![false; self.encoder.depth]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub convention: FlopConvention,
    pub params_total: u64,
    pub params_by_module: Vec<(String, u64)>,
    pub flops_per_frame: u64,
    pub flops_by_module: Vec<(String, u64)>,
    pub tokens_per_layer: Vec<usize>,
}

impl CostReport {
    pub fn params(&self, module: &str) -> u64 {
        self.params_by_module.iter().filter(|(m, _)| m.starts_with(module)).map(|(_, v)| v).sum()
    }

    pub fn flops(&self, module: &str) -> u64 {
        self.flops_by_module.iter().filter(|(m, _)| m.starts_with(module)).map(|(_, v)| v).sum()
    }
}

/// `(module, count)` rows matching the parameter-store prefixes.
pub fn count_params(cfg: &ProfileConfig) -> Vec<(String, u64)> {
    let e = &cfg.encoder;
    let d = e.dim as u64;
    let n = e.num_patches() as u64;
    let p = e.patch as u64;
    let c = e.channels as u64;
    let hidden = e.mlp_ratio as u64 * d;
    let block = 4 * d * d + 4 * d + 2 * d * hidden + hidden + d + 4 * d;
    let mut rows = vec![
        ("vit/patch".to_string(), c * p * p * d + d),
        ("vit/cls".to_string(), d),
        ("vit/pos".to_string(), (n + 1) * d),
        ("vit/blocks".to_string(), e.depth as u64 * block),
        ("vit/ln_post".to_string(), 2 * d),
    ];
    if cfg.stp {
        let t = cfg.frames as u64;
        rows.push(("stp/hub".to_string(), t * t * d));
        rows.push(("stp/sta/attn".to_string(), 4 * d * d + 4 * d));
        rows.push(("stp/sta/ln".to_string(), 2 * d));
    }
    rows
}

/// Multiply-accumulates of one transformer layer over `l` tokens.
fn layer_macs(l: u64, d: u64, hidden: u64) -> (u64, u64, u64) {
    (4 * l * d * d, 2 * l * l * d, 2 * l * d * hidden)
}

pub fn estimate_flops(cfg: &ProfileConfig) -> (Vec<(String, u64)>, Vec<usize>) {
    let e = &cfg.encoder;
    let k = cfg.convention.factor();
    let d = e.dim as u64;
    let n = e.num_patches() as u64;
    let t = cfg.frames as u64;
    let hidden = e.mlp_ratio as u64 * d;
    let base_len = n + 1;
    let mut rows = vec![("vit/patch".to_string(), k * n * e.patch_dim() as u64 * d)];
    let (mut proj, mut attn, mut mlp) = (0, 0, 0);
    let (mut hub_lin, mut hub_attn) = (0, 0);
    let mut tokens = Vec::with_capacity(e.depth);
    for hub in cfg.hub_layers() {
        let (p0, a0, m0) = layer_macs(base_len, d, hidden);
        proj += p0;
        attn += a0;
        mlp += m0;
        if hub {
            let (p1, a1, m1) = layer_macs(base_len + t, d, hidden);
            hub_lin += (p1 - p0) + (m1 - m0);
            hub_attn += a1 - a0;
            tokens.push((base_len + t) as usize);
        } else {
            tokens.push(base_len as usize);
        }
    }
    rows.push(("vit/blocks/proj".to_string(), k * proj));
    rows.push(("vit/blocks/attn".to_string(), k * attn));
    rows.push(("vit/blocks/mlp".to_string(), k * mlp));
    if cfg.stp {
        rows.push(("stp/hub_layers/linear".to_string(), k * hub_lin));
        rows.push(("stp/hub_layers/attn".to_string(), k * hub_attn));
        // per tracklet: kv projections over T^2 rows, T queries, T outputs,
        // T x T^2 scores and mixing; divided by T for the per-frame basis
        let sta = 2 * t * t * d * d + t * d * d + t * d * d + 2 * t * t * t * d;
        rows.push(("stp/sta".to_string(), k * sta / t));
    }
    (rows, tokens)
}

pub fn profile(cfg: &ProfileConfig) -> CostReport {
    let params_by_module = count_params(cfg);
    let (flops_by_module, tokens_per_layer) = estimate_flops(cfg);
    CostReport {
        convention: cfg.convention,
        params_total: params_by_module.iter().map(|(_, v)| v).sum(),
        params_by_module,
        flops_per_frame: flops_by_module.iter().map(|(_, v)| v).sum(),
        flops_by_module,
        tokens_per_layer,
    }
}

/// Parameter count of a constructed store, per module prefix of `report`.
pub fn enumerate_params(store: &ParamStore, modules: &[(String, u64)]) -> Vec<(String, u64)> {
    modules
        .iter()
        .map(|(m, _)| {
            let prefix = format!("{m}/");
            let n = store
                .iter()
                .filter(|p| p.name == *m || p.name.starts_with(&prefix))
                .map(|p| p.tensor.len() as u64)
                .sum();
            (m.clone(), n)
        })
        .collect()
}

/// Full and STP-free reports plus their differences.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub with_stp: CostReport,
    pub baseline: CostReport,
    pub param_delta: u64,
    pub flop_delta: u64,
}

pub fn compare(cfg: &ProfileConfig) -> Comparison {
    let with_stp = profile(cfg);
    let baseline = profile(&cfg.without_stp());
    Comparison {
        param_delta: with_stp.params_total - baseline.params_total,
        flop_delta: with_stp.flops_per_frame - baseline.flops_per_frame,
        with_stp,
        baseline,
    }
}

fn giga(v: u64) -> f64 {
    v as f64 / 1e9
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.with_stp;
        let _ = writeln!(s, "convention: {}; matrix products only", r.convention.describe());
        let _ = writeln!(s, "{:<24} {:>14}", "parameters", "count");
        for (m, v) in &r.params_by_module {
            let _ = writeln!(s, "{:<24} {:>14}", m, v);
        }
        let _ = writeln!(s, "{:<24} {:>14}", "total", r.params_total);
        let _ = writeln!(s, "{:<24} {:>14}", "baseline total", self.baseline.params_total);
        let _ = writeln!(s, "{:<24} {:>14}", "stp delta", self.param_delta);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>14}", "flops per frame", "G");
        for (m, v) in &r.flops_by_module {
            let _ = writeln!(s, "{:<24} {:>14.4}", m, giga(*v));
        }
        let _ = writeln!(s, "{:<24} {:>14.4}", "total", giga(r.flops_per_frame));
        let _ = writeln!(s, "{:<24} {:>14.4}", "baseline total", giga(self.baseline.flops_per_frame));
        let _ = writeln!(s, "{:<24} {:>14.4}", "stp delta", giga(self.flop_delta));
        let _ = writeln!(s, "{:<24} {:>14.4}", "stp delta (reported)", 0.12);
        let _ = writeln!(s);
        let toks: Vec<String> = r.tokens_per_layer.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(s, "tokens per layer: {}", toks.join(" "));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
