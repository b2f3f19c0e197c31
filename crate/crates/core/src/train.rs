//! Training loop, per-epoch evaluation and run-directory artifacts.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::autograd::Tape;
use crate::checkpoint::{self, Record};
use crate::config::RunConfig;
use crate::data::{batch_for, epoch_groups, generate, AugmentParams, Dataset, Frame, Split, Tracklet};
use crate::error::{Result, VldError};
use crate::eval::{evaluate_direction, Direction, GalleryIndex, RetrievalReport};
use crate::model::{batch_patches, VldModel};
use crate::optim::{cosine_lr, OptimizerState};
use crate::rng::{hash_str, CounterRng};
use crate::tensor::Tensor;

/// Loads `root/train` and `root/test`, generating them first when absent.
pub fn prepare_data(cfg: &RunConfig, root: &Path) -> Result<(Dataset, Dataset)> {
    if !root.join("train").join("manifest.tsv").exists() {
        generate(&cfg.data, cfg.seed, root)?;
    }
    let train = Dataset::load(root, Split::Train)?;
    let test = Dataset::load(root, Split::Test)?;
    for t in train.tracklets.iter().chain(&test.tracklets) {
        if t.frames.len() != cfg.data.frames
            || t.frames.iter().any(|f| f.height != cfg.data.height || f.width != cfg.data.width)
        {
            return Err(VldError::Data(format!(
                "tracklet {} does not match the configured {} frames of {}x{}",
                t.id, cfg.data.frames, cfg.data.height, cfg.data.width
            )));
        }
    }
    Ok((train, test))
}

/// Append-only JSON-lines log; `seq` is a logical timestamp so that reruns
/// produce identical files.
pub struct MetricsLog {
    file: Option<File>,
    seq: u64,
}

impl MetricsLog {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        Ok(Self { file, seq: 0 })
    }

    pub fn write<T: Serialize>(&mut self, kind: &str, body: &T) -> Result<()> {
        self.seq += 1;
        if let Some(f) = &mut self.file {
            let line = serde_json::json!({ "seq": self.seq, "kind": kind, "data": body });
            writeln!(f, "{}", line)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
struct StepLine {
    epoch: usize,
    step: usize,
    lr: f64,
    total: f64,
    id_cls: f64,
    wrt_cls: f64,
    v2t: Option<f64>,
    id_hub: Option<f64>,
    wrt_hub: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub ir2vis_map: f64,
    pub vis2ir_map: f64,
    pub ir2vis_rank1: f64,
    pub vis2ir_rank1: f64,
}

impl EpochRecord {
    pub fn mean_map(&self) -> f64 {
        0.5 * (self.ir2vis_map + self.vis2ir_map)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_map: f64,
    pub final_map: f64,
}

/// Index over `tracklets` with features from `model`.
pub fn extract_index(model: &VldModel, tracklets: &[Tracklet]) -> Result<GalleryIndex> {
    let refs: Vec<&Tracklet> = tracklets.iter().collect();
    let feats = model.extract_features(&refs)?;
    GalleryIndex::new(
        feats,
        tracklets.iter().map(|t| t.identity).collect(),
        tracklets.iter().map(|t| t.modality).collect(),
        tracklets.iter().map(|t| t.id).collect(),
    )
}

/// Unit-norm retrieval features of an index as `feat/<tracklet id>` records.
pub fn feature_records(index: &GalleryIndex) -> Vec<Record> {
    let feats = index.features();
    index
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| Record::f64(&format!("feat/{id}"), &Tensor::from_parts(vec![feats.shape()[1]], feats.row(i).to_vec())))
        .collect()
}

pub fn evaluate_both(model: &VldModel, test: &Dataset) -> Result<(RetrievalReport, RetrievalReport)> {
    let index = extract_index(model, &test.tracklets)?;
    Ok((evaluate_direction(&index, Direction::Ir2Vis)?, evaluate_direction(&index, Direction::Vis2Ir)?))
}

pub fn write_reports(dir: &Path, reports: &[&RetrievalReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in reports {
        let name = r.direction.map_or("custom", |d| d.as_str());
        std::fs::write(dir.join(format!("metrics-{name}.json")), r.metrics_json())?;
        std::fs::write(dir.join(format!("cmc-{name}.csv")), r.cmc_csv())?;
    }
    Ok(())
}

fn augmented(t: &Tracklet, params: &AugmentParams) -> Vec<Frame> {
    t.frames.iter().map(|f| params.apply(f)).collect()
}

/// Trains on `train`, evaluates on `test` after every epoch. With `out` set,
/// writes `config.txt`, `metrics.log`, `last.vldt`, `best.vldt`,
/// `final.vldt`, `summary.json` and final reports there.
pub fn train(cfg: &RunConfig, train: &Dataset, test: &Dataset, out: Option<&Path>) -> Result<(VldModel, RunSummary)> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.render())?;
    }
    let mut log = MetricsLog::open(out.map(|d| d.join("metrics.log")).as_deref())?;
    let mut model = VldModel::new(cfg.model_config(train.num_classes()), cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.adam.clone());
    let mut rng = CounterRng::new(cfg.seed, hash_str("train"));
    let groups_per_pass = epoch_groups(&cfg.plan, train, &mut rng.derive_str("probe"))?.len();
    let total_steps = cfg.epochs * cfg.repeats * groups_per_pass;
    let ckpt = |name: &str, m: &VldModel| -> Result<()> {
        if let Some(dir) = out {
            checkpoint::write(&dir.join(name), &checkpoint::store_records(&m.store))?;
        }
        Ok(())
    };

    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best = (0usize, f64::NEG_INFINITY);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for _ in 0..cfg.repeats {
            for group in epoch_groups(&cfg.plan, train, &mut rng)? {
                let batch = batch_for(&cfg.plan, train, &group, &mut rng)?;
                let frames: Vec<Tracklet> = batch
                    .indices
                    .iter()
                    .map(|&i| {
                        let t = &train.tracklets[i];
                        let p = AugmentParams::sample(&cfg.augment, t.modality, &mut rng);
                        Tracklet { frames: augmented(t, &p), ..t.clone() }
                    })
                    .collect();
                let refs: Vec<&Tracklet> = frames.iter().collect();
                let patches = batch_patches(&model.cfg.encoder, &refs)?;
                let mut tape = Tape::new();
                let p = model.store.bind(&mut tape);
                let x = tape.constant(patches.shape().to_vec(), patches.into_data());
                let fwd = model.forward(&mut tape, &p, x, refs.len())?;
                let (parts, total) = model.losses(&mut tape, &p, &fwd, &batch.labels)?;
                let total_v = tape.scalar(total);
                if !total_v.is_finite() {
                    return Err(VldError::Divergence { part: "total".into() });
                }
                tape.backward(total)?;
                model.store.zero_grad();
                model.store.accumulate(&p, &tape);
                let lr = cosine_lr(step, total_steps, cfg.adam.base_lr)?;
                opt.step(&mut model.store, lr)?;
                model.clamp_logit_scale();
                let val = |v: Option<crate::Var>| v.map(|v| tape.scalar(v));
                log.write(
                    "step",
                    &StepLine {
                        epoch,
                        step,
                        lr,
                        total: total_v,
                        id_cls: tape.scalar(parts.id_cls),
                        wrt_cls: tape.scalar(parts.wrt_cls),
                        v2t: val(parts.v2t),
                        id_hub: val(parts.id_hub),
                        wrt_hub: val(parts.wrt_hub),
                    },
                )?;
                loss_sum += total_v;
                loss_n += 1;
                step += 1;
            }
        }
        let (ir, vis) = evaluate_both(&model, test)?;
        let rec = EpochRecord {
            epoch,
            mean_loss: loss_sum / loss_n as f64,
            ir2vis_map: ir.map,
            vis2ir_map: vis.map,
            ir2vis_rank1: ir.rank(1),
            vis2ir_rank1: vis.rank(1),
        };
        log.write("epoch", &rec)?;
        ckpt("last.vldt", &model)?;
        if rec.mean_map() > best.1 {
            best = (epoch, rec.mean_map());
            ckpt("best.vldt", &model)?;
        }
        epochs.push(rec);
    }
    ckpt("final.vldt", &model)?;
    let summary = RunSummary {
        final_map: epochs.last().map_or(0.0, EpochRecord::mean_map),
        best_epoch: best.0,
        best_map: best.1,
        epochs,
    };
    if let Some(dir) = out {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary") + "\n")?;
        let (ir, vis) = evaluate_both(&model, test)?;
        write_reports(&dir.join("reports"), &[&ir, &vis])?;
    }
    Ok((model, summary))
}

/// Default run directory name: `run-<utc>-seed<seed>`.
pub fn run_dir_name(utc_stamp: &str, seed: u64) -> PathBuf {
    PathBuf::from(format!("run-{utc_stamp}-seed{seed}"))
}

/// Rebuilds a model from its resolved config and a checkpoint file.
pub fn load_model(cfg: &RunConfig, num_classes: usize, path: &Path) -> Result<VldModel> {
    let mut model = VldModel::new(cfg.model_config(num_classes), cfg.seed)?;
    let recs = checkpoint::read(path)?;
    checkpoint::load_into(&mut model.store, &recs)?;
    Ok(model)
}
