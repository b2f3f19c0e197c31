//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

pub mod mech;
pub mod oracle;

use vld::config::RunConfig;
use vld::data::{synthesize, Dataset, SyntheticSpec};
use vld::gradcheck::{self, GradComparison, DEFAULT_STEP};
use vld::model::{batch_patches, VldModel};
use vld::nn::{multi_head_attention, AttentionShape, AttentionWeights};
use vld::params::Bound;
use vld::rng::CounterRng;
use vld::{Tape, Tensor, Var};

pub fn rand(shape: &[usize], seed: u64) -> Tensor {
    let mut r = CounterRng::from_seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), r.normal_vec(n, 1.0)).unwrap()
}

pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> vld::Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.leaf(&rand(&shape, seed));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn worst(cmp: &[GradComparison]) -> f64 {
    cmp.iter().map(|c| c.rel_error()).fold(0.0, f64::max)
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> vld::Result<Var>>);

/// Worst relative error of each differentiable operation.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    let labels6 = [0usize, 1, 2, 0, 1, 2];
    let cases: Vec<Case> = vec![
        ("matmul", vec![rand(&[4, 5], 1), rand(&[5, 3], 2)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 3)
        })),
        ("bmm", vec![rand(&[3, 2, 4], 4), rand(&[3, 4, 2], 5)], Box::new(|t, v| {
            let y = t.bmm(v[0], v[1])?;
            weighted_sum(t, y, 6)
        })),
        ("add/sub/mul", vec![rand(&[3, 4], 7), rand(&[3, 4], 8)], Box::new(|t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let m = t.mul(s, v[1])?;
            weighted_sum(t, m, 9)
        })),
        ("add_bias/scale/scale_by", vec![rand(&[4, 3], 10), rand(&[3], 11), rand(&[], 12)], Box::new(|t, v| {
            let a = t.add_bias(v[0], v[1])?;
            let a = t.scale(a, 0.7);
            let a = t.scale_by(a, v[2])?;
            weighted_sum(t, a, 13)
        })),
        ("gelu", vec![rand(&[10], 14)], Box::new(|t, v| {
            let y = t.gelu(v[0]);
            weighted_sum(t, y, 15)
        })),
        ("softmax", vec![rand(&[3, 5], 16)], Box::new(|t, v| {
            let y = t.softmax(v[0]);
            weighted_sum(t, y, 17)
        })),
        ("causal_softmax", vec![rand(&[2, 4, 4], 18)], Box::new(|t, v| {
            let y = t.causal_softmax(v[0])?;
            weighted_sum(t, y, 19)
        })),
        ("layer_norm", vec![rand(&[3, 8], 20), rand(&[8], 21), rand(&[8], 22)], Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y, 23)
        })),
        ("normalize_rows", vec![rand(&[3, 4], 24)], Box::new(|t, v| {
            let y = t.normalize_rows(v[0]);
            weighted_sum(t, y, 25)
        })),
        ("reshape/permute", vec![rand(&[2, 3, 4], 26)], Box::new(|t, v| {
            let p = t.permute(v[0], &[2, 0, 1])?;
            let r = t.reshape(p, &[8, 3])?;
            weighted_sum(t, r, 27)
        })),
        ("gather/concat", vec![rand(&[4, 3], 28), rand(&[2, 3], 29)], Box::new(|t, v| {
            let c = t.concat_rows(&[v[0], v[1]])?;
            let g = t.gather_rows(c, &[5, 0, 0, 3, 4])?;
            weighted_sum(t, g, 30)
        })),
        ("mean_groups/sum/mean", vec![rand(&[6, 3], 31)], Box::new(|t, v| {
            let m = t.mean_groups(v[0], 3)?;
            let w = weighted_sum(t, m, 32)?;
            let s = t.mean(v[0]);
            let a = t.add(w, s)?;
            let s = t.sum(v[0]);
            t.add(a, s)
        })),
        ("cross_entropy", vec![rand(&[4, 5], 33)], Box::new(|t, v| t.cross_entropy(v[0], &[0, 4, 2, 2]))),
        ("pairwise_dist", vec![rand(&[5, 3], 34)], Box::new(|t, v| {
            let d = t.pairwise_dist(v[0])?;
            weighted_sum(t, d, 35)
        })),
        ("wrt_loss", vec![rand(&[6, 3], 36)], Box::new(move |t, v| {
            let d = t.pairwise_dist(v[0])?;
            t.wrt_loss(d, &labels6)
        })),
        ("attention", attention_inputs(40), Box::new(|t, v| {
            let names = AttentionWeights::NAMES.iter().map(|n| format!("a/{n}")).collect();
            let bound = Bound::new(names, v[3..11].to_vec());
            let w = AttentionWeights::bind(&bound, "a")?;
            let shape = AttentionShape { batch: 1, q_len: 2, kv_len: 3, heads: 2, causal: false };
            let a = multi_head_attention(t, v[0], v[1], v[2], &w, shape)?;
            weighted_sum(t, a.out, 41)
        })),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| (name, worst(&gradcheck::check(&inputs, f, DEFAULT_STEP).unwrap())))
        .collect()
}

fn attention_inputs(seed: u64) -> Vec<Tensor> {
    let mut v = vec![rand(&[2, 8], seed), rand(&[3, 8], seed + 1), rand(&[3, 8], seed + 2)];
    for (i, name) in AttentionWeights::NAMES.iter().enumerate() {
        let shape: &[usize] = if name.starts_with('w') { &[8, 8] } else { &[8] };
        let mut t = rand(shape, seed + 10 + i as u64);
        t.data_mut().iter_mut().for_each(|x| *x *= 0.4);
        v.push(t);
    }
    v
}

/// Full model with hub, prompts and both heads on a 2-identity micro-batch.
/// Returns the worst relative error over all parameters, sampled.
pub fn end_to_end() -> f64 {
    let spec = SyntheticSpec {
        identities: 2,
        train_identities: 2,
        tracklets_per_modality: 1,
        frames: 2,
        height: 8,
        width: 8,
        ..SyntheticSpec::desk()
    };
    let (train, _) = synthesize(&spec, 1).unwrap();
    let ds = Dataset::from_tracklets("mem".into(), train);
    let mut cfg = RunConfig::desk();
    cfg.data = spec;
    cfg.encoder.patch = 4;
    cfg.encoder.dim = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.depth = 2;
    cfg.encoder.init_std = 0.3;
    cfg.insertion_layer = 0;
    cfg.imlp.num_tokens = 2;
    cfg.imlp.text_heads = 2;
    cfg.imlp.logit_scale_init = 3.0;
    let model = VldModel::new(cfg.model_config(ds.num_classes()), 5).unwrap();
    let refs: Vec<_> = ds.tracklets.iter().collect();
    let labels: Vec<usize> = refs.iter().map(|t| ds.class_of(t.identity).unwrap()).collect();
    let patches = batch_patches(&model.cfg.encoder, &refs).unwrap();
    let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
    let inputs: Vec<Tensor> = model.store.iter().map(|p| p.tensor.clone()).collect();
    let n = refs.len();
    let f = |t: &mut Tape, v: &[Var]| -> vld::Result<Var> {
        let p = Bound::new(names.clone(), v.to_vec());
        let x = t.constant(patches.shape().to_vec(), patches.data().to_vec());
        let fwd = model.forward(t, &p, x, n)?;
        let (_, total) = model.losses(t, &p, &fwd, &labels)?;
        Ok(total)
    };
    let mut rng = CounterRng::from_seed(77);
    let cmp = gradcheck::check_sampled(&inputs, f, DEFAULT_STEP, 2, 3, &mut rng).unwrap();
    worst(&cmp)
}
