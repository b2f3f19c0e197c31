use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vld::config::RunConfig;
use vld::model::VldModel;
use vld::profiler::{count_params, enumerate_params, ProfileConfig};

const SMOKE: &str = "\
data.identities = 6
data.train_identities = 4
data.tracklets_per_modality = 2
train.epochs = 2
train.repeats = 2
";

fn vld(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vld"))
        .args(args)
        .current_dir(dir)
        .env_remove("VLD_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn smoke_dir() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("smoke.txt");
    std::fs::write(&cfg, SMOKE).unwrap();
    (tmp, cfg)
}

fn train_run(tmp: &Path, cfg: &Path, name: &str) -> PathBuf {
    let run = tmp.join(name);
    ok(&vld(
        &["train", "--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap(), "--data-root", "data"],
        tmp,
    ));
    run
}

#[test]
fn smoke_training_lowers_the_loss_and_repeats_exactly() {
    let (tmp, cfg) = smoke_dir();
    let a = train_run(tmp.path(), &cfg, "a");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let losses: Vec<f64> = summary["epochs"].as_array().unwrap().iter().map(|e| e["mean_loss"].as_f64().unwrap()).collect();
    assert_eq!(losses.len(), 2);
    assert!(losses[1] < losses[0], "{losses:?}");
    for f in ["config.txt", "metrics.log", "best.vldt", "last.vldt", "final.vldt", "reports/cmc-ir2vis.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let b = train_run(tmp.path(), &cfg, "b");
    for f in ["final.vldt", "metrics.log", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let eval = |out: &str| {
        ok(&vld(&["eval", "--run-dir", "a", "--direction", "both", "--data-root", "data", "--out", out], tmp.path()));
        tmp.path().join(out)
    };
    let (e1, e2) = (eval("e1"), eval("e2"));
    for f in ["metrics-ir2vis.json", "metrics-vis2ir.json", "cmc-ir2vis.csv", "cmc-vis2ir.csv", "features.vldt"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(e2.join(f)).unwrap(), "{f}");
    }
    // final reports written by training match a fresh evaluation of final.vldt
    assert_eq!(std::fs::read(a.join("reports/metrics-ir2vis.json")).unwrap(), std::fs::read(e1.join("metrics-ir2vis.json")).unwrap());

    ok(&vld(&["eval", "--run-dir", "a", "--direction", "vis2ir", "--data-root", "data", "--out", "e3"], tmp.path()));
    assert!(tmp.path().join("e3/metrics-vis2ir.json").exists());
    assert!(!tmp.path().join("e3/metrics-ir2vis.json").exists());
}

#[test]
fn default_run_directory_and_seed_override() {
    let (tmp, cfg) = smoke_dir();
    let text = format!("{SMOKE}train.epochs = 1\nrun.output = runs\n");
    std::fs::write(&cfg, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vld"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--data-root", "data"])
        .current_dir(tmp.path())
        .env("VLD_SEED", "7")
        .output()
        .unwrap();
    ok(&out);
    let runs: Vec<_> = std::fs::read_dir(tmp.path().join("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_string_lossy().into_owned();
    assert!(name.starts_with("run-") && name.ends_with("-seed7"), "{name}");
    let resolved = std::fs::read_to_string(tmp.path().join("runs").join(&name).join("config.txt")).unwrap();
    assert!(resolved.contains("run.seed = 7"));
}

#[test]
fn checkpoint_that_does_not_fit_the_config_is_a_load_error() {
    let (tmp, cfg) = smoke_dir();
    train_run(tmp.path(), &cfg, "a");
    let wide = tmp.path().join("wide.txt");
    std::fs::write(&wide, format!("{SMOKE}model.dim = 32\nmodel.heads = 4\n")).unwrap();
    let out = vld(&["eval", "--run-dir", "a", "--config", wide.to_str().unwrap(), "--data-root", "data"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn exit_codes_for_bad_config_and_missing_data() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "train.epochs = 2\ntrain.speed = 3\n").unwrap();
    let out = vld(&["train", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    std::fs::create_dir_all(tmp.path().join("empty")).unwrap();
    std::fs::write(tmp.path().join("empty/config.txt"), SMOKE).unwrap();
    std::fs::create_dir_all(tmp.path().join("nodata/train")).unwrap();
    std::fs::write(tmp.path().join("nodata/train/manifest.tsv"), "tracklet_id\tidentity\tmodality\tcamera\tframes\tpath\n").unwrap();
    let out = vld(&["eval", "--run-dir", "empty", "--data-root", "nodata"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_data_writes_both_splits() {
    let (tmp, cfg) = smoke_dir();
    ok(&vld(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "d"], tmp.path()));
    let train = std::fs::read_to_string(tmp.path().join("d/train/manifest.tsv")).unwrap();
    let test = std::fs::read_to_string(tmp.path().join("d/test/manifest.tsv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 4 * 2 * 2);
    assert_eq!(test.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn profile_reports_full_and_desk_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&vld(&["profile"], tmp.path()));
    assert!(text.lines().any(|l| l.starts_with("stp delta ") && l.trim_end().ends_with("2391552")), "{text}");
    let js: serde_json::Value = serde_json::from_str(&ok(&vld(&["profile", "--json", "--no-stp"], tmp.path()))).unwrap();
    assert_eq!(js["param_delta"], 0);
    assert_eq!(js["flop_delta"], 0);
    let two: serde_json::Value = serde_json::from_str(&ok(&vld(&["profile", "--json", "--convention", "two-per-mac"], tmp.path()))).unwrap();
    let one: serde_json::Value = serde_json::from_str(&ok(&vld(&["profile", "--json"], tmp.path()))).unwrap();
    assert_eq!(two["flop_delta"].as_u64().unwrap(), 2 * one["flop_delta"].as_u64().unwrap());

    let desk = tmp.path().join("desk.txt");
    std::fs::write(&desk, "run.preset = desk\n").unwrap();
    ok(&vld(&["profile", "--config", desk.to_str().unwrap(), "--out", "prof"], tmp.path()));
    let js: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("prof/profile.json")).unwrap()).unwrap();
    let reported: Vec<(String, u64)> = js["with_stp"]["params_by_module"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r[0].as_str().unwrap().to_string(), r[1].as_u64().unwrap()))
        .collect();
    let cfg = RunConfig::desk();
    let model = VldModel::new(cfg.model_config(cfg.data.train_identities), cfg.seed).unwrap();
    let mc = cfg.model_config(cfg.data.train_identities);
    let pc = ProfileConfig {
        encoder: mc.encoder.clone(),
        frames: mc.frames,
        stp: true,
        insertion_layer: mc.insertion_layer,
        convention: vld::profiler::FlopConvention::Mac,
    };
    assert_eq!(reported, count_params(&pc));
    assert_eq!(enumerate_params(&model.store, &reported), reported);
}

#[test]
fn plot_overlays_curves_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("perfect.csv"), "rank,value\n1,1\n2,1\n3,1\n").unwrap();
    std::fs::write(tmp.path().join("other.csv"), "rank,value\n1,0.4\n2,0.7\n3,0.9\n").unwrap();
    ok(&vld(&["plot", "perfect.csv", "other.csv", "--out", "a.svg"], tmp.path()));
    ok(&vld(&["plot", "perfect.csv", "other.csv", "--out", "b.svg"], tmp.path()));
    let a = std::fs::read_to_string(tmp.path().join("a.svg")).unwrap();
    assert_eq!(a, std::fs::read_to_string(tmp.path().join("b.svg")).unwrap());
    assert_eq!(a.matches("class=\"legend\"").count(), 2);
    assert!(a.contains(">perfect<") && a.contains(">other<"));

    std::fs::write(tmp.path().join("bad.csv"), "rank,value\n1,0.4\n2,x\n").unwrap();
    let out = vld(&["plot", "bad.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
