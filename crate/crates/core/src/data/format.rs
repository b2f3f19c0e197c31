//! On-disk layout: `<root>/<split>/manifest.tsv` plus one container file per
//! tracklet holding a `u8` record `frames` of shape `[T, H, W, 3]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Frame, Modality, Tracklet};
use crate::checkpoint::{self, Payload, Record};
use crate::error::{Result, VldError};

const HEADER: &str = "tracklet_id\tidentity\tmodality\tcamera\tframes\tpath";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: u64,
    pub identity: usize,
    pub modality: Modality,
    pub camera: usize,
    pub frames: usize,
    /// relative to the split directory
    pub path: String,
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.id,
            e.identity,
            e.modality.as_str(),
            e.camera,
            e.frames,
            e.path
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(VldError::Data("manifest line 1: missing header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| VldError::Data(format!("manifest line {}: {}", i + 1, what));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad(&format!("expected 6 columns, found {}", cols.len())));
        }
        let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| bad(&format!("bad {what} '{s}'")));
        out.push(ManifestEntry {
            id: num(cols[0], "tracklet id")?,
            identity: num(cols[1], "identity")? as usize,
            modality: Modality::parse(cols[2]).ok_or_else(|| bad(&format!("bad modality '{}'", cols[2])))?,
            camera: num(cols[3], "camera")? as usize,
            frames: num(cols[4], "frame count")? as usize,
            path: cols[5].to_string(),
        });
    }
    Ok(out)
}

pub fn tracklet_record(t: &Tracklet) -> Record {
    let (h, w) = t.frames.first().map_or((0, 0), |f| (f.height, f.width));
    let bytes = t
        .frames
        .iter()
        .flat_map(|f| f.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    Record::u8("frames", vec![t.frames.len(), h, w, 3], bytes)
}

fn frames_from_record(r: &Record) -> Result<Vec<Frame>> {
    let bytes = match &r.payload {
        Payload::U8(b) => b,
        _ => return Err(VldError::Data(format!("record '{}' is not u8", r.name))),
    };
    if r.shape.len() != 4 || r.shape[3] != 3 {
        return Err(VldError::Data(format!("frames record has shape {:?}", r.shape)));
    }
    let (t, h, w) = (r.shape[0], r.shape[1], r.shape[2]);
    Ok((0..t)
        .map(|i| Frame {
            height: h,
            width: w,
            data: bytes[i * h * w * 3..(i + 1) * h * w * 3].iter().map(|&b| b as f64 / 255.0).collect(),
        })
        .collect())
}

pub fn write_split(root: &Path, split: Split, tracklets: &[Tracklet]) -> Result<()> {
    let dir = root.join(split.as_str());
    std::fs::create_dir_all(dir.join("tracklets"))?;
    let mut entries = Vec::with_capacity(tracklets.len());
    for t in tracklets {
        let path = format!("tracklets/{:06}.vldt", t.id);
        checkpoint::write(&dir.join(&path), &[tracklet_record(t)])?;
        entries.push(ManifestEntry {
            id: t.id,
            identity: t.identity,
            modality: t.modality,
            camera: t.camera,
            frames: t.frames.len(),
            path,
        });
    }
    std::fs::write(dir.join("manifest.tsv"), render_manifest(&entries))?;
    Ok(())
}

/// A loaded split with identities mapped to contiguous class indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub tracklets: Vec<Tracklet>,
    classes: BTreeMap<usize, usize>,
}

impl Dataset {
    pub fn from_tracklets(dir: PathBuf, tracklets: Vec<Tracklet>) -> Self {
        let mut classes = BTreeMap::new();
        for t in &tracklets {
            classes.entry(t.identity).or_insert(0);
        }
        for (i, v) in classes.values_mut().enumerate() {
            *v = i;
        }
        Self { dir, tracklets, classes }
    }

    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let dir = root.join(split.as_str());
        let manifest = dir.join("manifest.tsv");
        let text = std::fs::read_to_string(&manifest)
            .map_err(|e| VldError::Data(format!("cannot read {}: {}", manifest.display(), e)))?;
        let mut tracklets = Vec::new();
        for e in parse_manifest(&text)? {
            let recs = checkpoint::read(&dir.join(&e.path))
                .map_err(|err| VldError::Data(format!("tracklet {}: {}", e.id, err)))?;
            let rec = recs
                .iter()
                .find(|r| r.name == "frames")
                .ok_or_else(|| VldError::Data(format!("tracklet {} has no frames record", e.id)))?;
            let frames = frames_from_record(rec)?;
            if frames.len() != e.frames {
                return Err(VldError::Data(format!(
                    "tracklet {}: manifest says {} frames, file has {}",
                    e.id,
                    e.frames,
                    frames.len()
                )));
            }
            tracklets.push(Tracklet { id: e.id, identity: e.identity, modality: e.modality, camera: e.camera, frames });
        }
        if tracklets.is_empty() {
            return Err(VldError::Data(format!("{} lists no tracklets", manifest.display())));
        }
        Ok(Self::from_tracklets(dir, tracklets))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, identity: usize) -> Option<usize> {
        self.classes.get(&identity).copied()
    }

    /// Identities with at least `k` tracklets in each modality, ascending.
    pub fn identities_with(&self, k: usize) -> Vec<usize> {
        self.classes
            .keys()
            .copied()
            .filter(|&id| {
                [Modality::Visible, Modality::Infrared].iter().all(|&m| {
                    self.tracklets.iter().filter(|t| t.identity == id && t.modality == m).count() >= k
                })
            })
            .collect()
    }
}
