mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vld::checkpoint;
use vld::config::RunConfig;
use vld::data::generate;
use vld::eval::{evaluate_direction, Direction};
use vld::profiler::{compare, FlopConvention, ProfileConfig};
use vld::train::{extract_index, feature_records, load_model, prepare_data, run_dir_name, train, write_reports};
use vld::{Result, VldError};

#[derive(Parser)]
#[command(name = "vld", version, about = "Cross-modality video re-identification at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic benchmark described by the config.
    GenData {
        /// Config file; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root; defaults to data.root from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write checkpoints, metrics and reports into a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory; defaults to <run.output>/run-<utc>-seed<seed>.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Dataset root; generated from the config when missing.
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Ablation row: B, B+STP, B+IMLP or B+STP+IMLP.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Run directory holding config.txt and checkpoints.
        #[arg(long)]
        run_dir: PathBuf,
        /// Checkpoint file; defaults to <run-dir>/final.vldt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Config file; defaults to <run-dir>/config.txt.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        /// Output directory; defaults to <run-dir>/eval.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic parameter and FLOP report.
    Profile {
        /// Config file; the full-size preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Profile with the hub and aggregation removed.
        #[arg(long)]
        no_stp: bool,
        #[arg(long, value_enum, default_value_t = ConventionArg::Mac)]
        convention: ConventionArg,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
        /// Also write profile.txt and profile.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlay CMC curves from evaluator CSVs into one SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "cmc.svg")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Ir2vis,
    Vis2ir,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    Mac,
    TwoPerMac,
}

fn load_config(path: Option<&Path>, fallback: fn() -> RunConfig) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| VldError::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => fallback(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn gen_data(config: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config, RunConfig::desk)?;
    let root = out.unwrap_or_else(|| PathBuf::from(&cfg.data_root));
    generate(&cfg.data, cfg.seed, &root)?;
    println!("wrote {}", root.display());
    Ok(())
}

fn cmd_train(config: Option<&Path>, run_dir: Option<PathBuf>, data_root: Option<PathBuf>, variant: Option<&str>) -> Result<()> {
    let mut cfg = load_config(config, RunConfig::desk)?;
    if let Some(v) = variant {
        cfg = cfg.with_variant(v)?;
    }
    let root = data_root.unwrap_or_else(|| PathBuf::from(&cfg.data_root));
    let (train_ds, test_ds) = prepare_data(&cfg, &root)?;
    let dir = run_dir.unwrap_or_else(|| {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        Path::new(&cfg.output).join(run_dir_name(&stamp, cfg.seed))
    });
    let (_, summary) = train(&cfg, &train_ds, &test_ds, Some(&dir))?;
    for e in &summary.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  mAP ir2vis {:.4}  vis2ir {:.4}",
            e.epoch, e.mean_loss, e.ir2vis_map, e.vis2ir_map
        );
    }
    println!("best epoch {} mean mAP {:.4}", summary.best_epoch, summary.best_map);
    println!("run directory {}", dir.display());
    Ok(())
}

struct EvalArgs {
    run_dir: PathBuf,
    checkpoint: Option<PathBuf>,
    config: Option<PathBuf>,
    data_root: Option<PathBuf>,
    direction: DirectionArg,
    out: Option<PathBuf>,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg_path = a.config.unwrap_or_else(|| a.run_dir.join("config.txt"));
    let cfg = load_config(Some(&cfg_path), RunConfig::desk)?;
    let root = a.data_root.unwrap_or_else(|| PathBuf::from(&cfg.data_root));
    let (train_ds, test_ds) = prepare_data(&cfg, &root)?;
    let ckpt = a.checkpoint.unwrap_or_else(|| a.run_dir.join("final.vldt"));
    let model = load_model(&cfg, train_ds.num_classes(), &ckpt)?;
    let index = extract_index(&model, &test_ds.tracklets)?;
    let dirs = match a.direction {
        DirectionArg::Ir2vis => vec![Direction::Ir2Vis],
        DirectionArg::Vis2ir => vec![Direction::Vis2Ir],
        DirectionArg::Both => vec![Direction::Ir2Vis, Direction::Vis2Ir],
    };
    let reports = dirs.iter().map(|&d| evaluate_direction(&index, d)).collect::<Result<Vec<_>>>()?;
    let out = a.out.unwrap_or_else(|| a.run_dir.join("eval"));
    write_reports(&out, &reports.iter().collect::<Vec<_>>())?;
    checkpoint::write(&out.join("features.vldt"), &feature_records(&index))?;
    for r in &reports {
        println!(
            "{:<7} rank1 {:.4}  rank5 {:.4}  rank10 {:.4}  mAP {:.4}",
            r.direction.map_or("custom", |d| d.as_str()),
            r.rank(1),
            r.rank(5),
            r.rank(10),
            r.map
        );
    }
    println!("reports in {}", out.display());
    Ok(())
}

fn cmd_profile(config: Option<&Path>, no_stp: bool, convention: ConventionArg, json: bool, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config, RunConfig::full)?;
    let mut encoder = cfg.encoder.clone();
    encoder.height = cfg.data.height;
    encoder.width = cfg.data.width;
    let pc = ProfileConfig {
        encoder,
        frames: cfg.data.frames,
        stp: cfg.stp && !no_stp,
        insertion_layer: cfg.insertion_layer,
        convention: match convention {
            ConventionArg::Mac => FlopConvention::Mac,
            ConventionArg::TwoPerMac => FlopConvention::TwoPerMac,
        },
    };
    let cmp = compare(&pc);
    let (text, js) = (cmp.to_text(), cmp.to_json());
    print!("{}", if json { &js } else { &text });
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("profile.txt"), &text)?;
        std::fs::write(dir.join("profile.json"), &js)?;
    }
    Ok(())
}

fn cmd_plot(csv: &[PathBuf], out: &Path) -> Result<()> {
    let curves = csv.iter().map(|p| plot::read_cmc(p)).collect::<Result<Vec<_>>>()?;
    std::fs::write(out, plot::render_svg(&curves))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out } => gen_data(config.as_deref(), out),
        Cmd::Train { config, run_dir, data_root, variant } => {
            cmd_train(config.as_deref(), run_dir, data_root, variant.as_deref())
        }
        Cmd::Eval { run_dir, checkpoint, config, data_root, direction, out } => {
            cmd_eval(EvalArgs { run_dir, checkpoint, config, data_root, direction, out })
        }
        Cmd::Profile { config, no_stp, convention, json, out } => {
            cmd_profile(config.as_deref(), no_stp, convention, json, out)
        }
        Cmd::Plot { csv, out } => cmd_plot(&csv, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
