//! Synthetic dataset generation, storage and the learnability floor.

use std::collections::BTreeMap;
use std::path::Path;

use vld::data::{generate, synthesize, Dataset, Modality, Split, SyntheticSpec, Tracklet};

fn small() -> SyntheticSpec {
    SyntheticSpec { identities: 6, train_identities: 4, tracklets_per_modality: 2, ..SyntheticSpec::desk() }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&small(), 1, a.path()).unwrap();
    generate(&small(), 1, b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert!(ta.len() > 10);
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    generate(&small(), 2, c.path()).unwrap();
    assert_ne!(read_tree(c.path()), ta);
}

#[test]
fn load_round_trips_quantised_frames() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small();
    generate(&spec, 3, dir.path()).unwrap();
    let (train, test) = synthesize(&spec, 3).unwrap();
    let lt = Dataset::load(dir.path(), Split::Train).unwrap();
    let le = Dataset::load(dir.path(), Split::Test).unwrap();
    assert_eq!(lt.tracklets, train);
    assert_eq!(le.tracklets, test);
    assert_eq!(lt.num_classes(), 4);
}

#[test]
fn splits_are_disjoint() {
    let (train, test) = synthesize(&SyntheticSpec::desk(), 1).unwrap();
    assert_eq!(train.len(), 20 * 8);
    assert_eq!(test.len(), 10 * 8);
    assert!(train.iter().all(|t| test.iter().all(|u| u.identity != t.identity)));
}

#[test]
fn missing_dataset_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Dataset::load(dir.path(), Split::Train), Err(vld::VldError::Data(_))));
}

fn mean_image(t: &Tracklet) -> Vec<f64> {
    let n = t.frames[0].data.len();
    let mut m = vec![0.0; n];
    for f in &t.frames {
        m.iter_mut().zip(&f.data).for_each(|(a, b)| *a += b / t.frames.len() as f64);
    }
    m
}

#[test]
fn cross_modal_signal_exceeds_cross_identity() {
    let (train, _) = synthesize(&SyntheticSpec::desk(), 1).unwrap();
    let by = |m: Modality| -> Vec<(usize, Vec<f64>)> {
        let rows: Vec<_> = train.iter().filter(|t| t.modality == m).map(|t| (t.identity, mean_image(t))).collect();
        let n = rows[0].1.len();
        let mut centre = vec![0.0; n];
        for (_, r) in &rows {
            centre.iter_mut().zip(r).for_each(|(c, v)| *c += v / rows.len() as f64);
        }
        rows.into_iter().map(|(i, r)| (i, r.iter().zip(&centre).map(|(a, b)| a - b).collect())).collect()
    };
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let (vis, ir) = (by(Modality::Visible), by(Modality::Infrared));
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
    for (i, a) in &vis {
        for (j, b) in &ir {
            if i == j {
                same += cos(a, b);
                ns += 1;
            } else {
                diff += cos(a, b);
                nd += 1;
            }
        }
    }
    let (same, diff) = (same / ns as f64, diff / nd as f64);
    assert!(same > diff + 0.1, "same {same:.3} vs different {diff:.3}");
}
