//! Independent oracles for retrieval metrics and the weighted triplet loss.

use vld::data::Modality;
use vld::eval::{evaluate, GalleryIndex, RetrievalReport};
use vld::losses;
use vld::rng::CounterRng;
use vld::{Tape, Tensor};

pub struct Oracle {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub excluded: usize,
}

/// Rank of gallery item `j` for query `q` is one plus the number of items
/// that beat it: higher cosine, or equal cosine and smaller id.
pub fn oracle(q: &[Vec<f64>], qid: &[usize], g: &[Vec<f64>], gid: &[usize], gtid: &[u64]) -> Oracle {
    let cos = |a: &[f64], b: &[f64]| {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum::<f64>()
    };
    let mut first = vec![0usize; g.len()];
    let mut ap_sum = 0.0;
    let mut valid = 0;
    for (qi, qv) in q.iter().enumerate() {
        let s: Vec<f64> = g.iter().map(|gv| cos(qv, gv)).collect();
        let mut hit_ranks: Vec<usize> = (0..g.len())
            .filter(|&j| gid[j] == qid[qi])
            .map(|j| 1 + (0..g.len()).filter(|&k| s[k] > s[j] || (s[k] == s[j] && gtid[k] < gtid[j])).count())
            .collect();
        if hit_ranks.is_empty() {
            continue;
        }
        hit_ranks.sort();
        valid += 1;
        first[hit_ranks[0] - 1] += 1;
        let mut ap = 0.0;
        for (n, r) in hit_ranks.iter().enumerate() {
            ap += (n + 1) as f64 / *r as f64;
        }
        ap_sum += ap / hit_ranks.len() as f64;
    }
    let mut acc = 0;
    let cmc = first
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / valid as f64
        })
        .collect();
    Oracle { cmc, map: ap_sum / valid as f64, excluded: q.len() - valid }
}

pub fn index(rows: &[Vec<f64>], ids: &[usize], m: Modality, tids: &[u64]) -> GalleryIndex {
    GalleryIndex::new(Tensor::from_rows(rows).unwrap(), ids.to_vec(), vec![m; ids.len()], tids.to_vec()).unwrap()
}

pub struct Instance {
    pub q: Vec<Vec<f64>>,
    pub qid: Vec<usize>,
    pub g: Vec<Vec<f64>>,
    pub gid: Vec<usize>,
    pub gtid: Vec<u64>,
}

pub fn instance(seed: u64, nq: usize, ng: usize) -> Instance {
    let mut r = CounterRng::from_seed(seed);
    let d = 1 + r.below(6);
    let ids = 1 + r.below(8);
    // coarse integer features make exact ties common
    let mut feat = || -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| r.below(3) as f64 - 1.0).collect();
            if v.iter().any(|&x| x != 0.0) {
                return v;
            }
        }
    };
    let q: Vec<Vec<f64>> = (0..nq).map(|_| feat()).collect();
    let g: Vec<Vec<f64>> = (0..ng).map(|_| feat()).collect();
    let mut r = CounterRng::from_seed(seed ^ 0xABCD);
    let qid = (0..nq).map(|_| r.below(ids)).collect();
    let gid = (0..ng).map(|_| r.below(ids)).collect();
    let mut gtid: Vec<u64> = (0..ng as u64).map(|i| i * 3 + 1).collect();
    r.shuffle(&mut gtid);
    Instance { q, qid, g, gid, gtid }
}

pub fn run(inst: &Instance) -> Option<RetrievalReport> {
    let q = index(&inst.q, &inst.qid, Modality::Infrared, &(0..inst.q.len() as u64).collect::<Vec<_>>());
    let g = index(&inst.g, &inst.gid, Modality::Visible, &inst.gtid);
    evaluate(&q, &g).ok()
}

pub fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// Per-anchor weighted triplet written out from pair enumeration.
pub fn wrt_oracle(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = x.len();
    let dist = |i: usize, j: usize| -> f64 {
        x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let pos: Vec<f64> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).map(|j| dist(i, j)).collect();
        let neg: Vec<f64> = (0..n).filter(|&k| labels[k] != labels[i]).map(|k| dist(i, k)).collect();
        let zp: f64 = pos.iter().map(|d| d.exp()).sum();
        let zn: f64 = neg.iter().map(|d| (-d).exp()).sum();
        let sp: f64 = pos.iter().map(|d| d.exp() / zp * d).sum();
        let sn: f64 = neg.iter().map(|d| (-d).exp() / zn * d).sum();
        total += softplus(sp - sn);
    }
    total / n as f64
}

pub fn wrt(x: &[Vec<f64>], labels: &[usize]) -> vld::Result<f64> {
    let mut tape = Tape::new();
    let v = tape.leaf(&Tensor::from_rows(x)?);
    let l = losses::wrt_loss(&mut tape, v, labels)?;
    Ok(tape.scalar(l))
}

