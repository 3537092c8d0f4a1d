//! Command-line front end. Every subcommand prints a JSON summary on
//! success; failures print `{"error": {"kind", "message"}}` to stderr and
//! exit nonzero.

use clap::{Args, Parser, Subcommand};
use photostereo::brdf::Vec3;
use photostereo::config::RunConfig;
use photostereo::dataset::{read_dataset, read_scene};
use photostereo::eval::{ablate, ablation_csv, ablation_text, evaluate};
use photostereo::image::Map;
use photostereo::metrics::{mae_degrees, woodham_baseline};
use photostereo::model::{write_prediction, InferOptions, Network};
use photostereo::render::generate_reference_dataset;
use photostereo::selfcheck::{diff_exchange, generate_exchange, read_exchange, write_exchange};
use photostereo::train::train;
use photostereo::{Error, Result};
use serde_json::{json, Value};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "photostereo", version, about = "Universal photometric stereo toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON, see `photostereo::config`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of images per scene.
    #[arg(long)]
    k: Option<usize>,
    /// Pixel samples per set.
    #[arg(long)]
    m: Option<usize>,
    /// Ignore object masks on the model input.
    #[arg(long)]
    no_mask: bool,
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
    },
    /// Train a network on a dataset and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict a normal (or material) map for one scene directory.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Mean angular error of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and evaluate over the ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Least-squares Lambertian normals for scenes lit by directional lights.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare a BRDF exchange file against this implementation, or write
    /// one with `--emit`.
    SelfcheckDiff {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "emit")]
        input: Option<PathBuf>,
        #[arg(long)]
        emit: Option<usize>,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.render.seed = s;
        cfg.train.seed = s;
        cfg.eval.seed = s;
    }
    if let Some(r) = common.resolution {
        cfg.render.resolution = r;
        cfg.model.resolution = r;
    }
    if let Some(k) = common.k {
        cfg.render.num_images = k;
        cfg.train.k_max = k;
        cfg.train.k_min = cfg.train.k_min.min(k);
        cfg.eval.k = Some(k);
    }
    if let Some(m) = common.m {
        cfg.train.m = m;
        cfg.eval.m = m;
    }
    if common.no_mask {
        cfg.train.mask_dropout = 1.0;
        cfg.eval.no_mask = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Generate { common, scenes } => {
            let cfg = load_config(&common)?;
            let out = required_out(&common)?;
            let manifest = generate_reference_dataset(scenes, &cfg.render, out)?;
            Ok(json!({ "dataset": out, "manifest": manifest, "scenes": scenes }))
        }
        Command::Train { common, data } => {
            let cfg = load_config(&common)?;
            let out = required_out(&common)?;
            let scenes: Vec<_> = read_dataset(&data)?.into_iter().map(|(_, s)| s).collect();
            let mut net = Network::new(&cfg.model, cfg.train.seed)?;
            let logs = train(&mut net, &cfg.train, &scenes, |l| {
                eprintln!("{}", serde_json::to_string(l).expect("log serializes"));
            })?;
            net.save(out)?;
            let curve = out.with_extension("loss.json");
            write_json(&curve, &json!(logs))?;
            Ok(json!({ "checkpoint": out, "loss_curve": curve, "final_loss": logs.last().map(|l| l.loss) }))
        }
        Command::Infer { common, checkpoint, input } => {
            let cfg = load_config(&common)?;
            let out = required_out(&common)?;
            let net = Network::load(&checkpoint)?;
            let scene = read_scene(&input)?;
            let k = common.k.unwrap_or(scene.num_images()).min(scene.num_images());
            let opts = InferOptions { m: cfg.eval.m, seed: cfg.eval.seed, no_mask: cfg.eval.no_mask };
            let pred = net.infer_full_map(&scene.images[..k], Some(&scene.mask), &opts)?;
            let stem = match net.config.target {
                photostereo::decoder::Target::Normals => "normal",
                photostereo::decoder::Target::Materials => "materials",
            };
            write_prediction(&pred, out, stem)?;
            let mae = if pred.map.channels == 3 { mae_degrees(&pred.map, &scene.normal, &scene.mask).ok() } else { None };
            Ok(json!({ "out": out, "images": k, "sets": pred.sets, "degenerate": pred.degenerate, "mae_deg": mae }))
        }
        Command::Eval { common, checkpoint, data } => {
            let cfg = load_config(&common)?;
            let net = Network::load(&checkpoint)?;
            let scenes = read_dataset(&data)?;
            let report = serde_json::to_value(evaluate(&net, &scenes, &cfg.eval)?).expect("report serializes");
            if let Some(out) = &common.out {
                write_json(out, &report)?;
            }
            Ok(report)
        }
        Command::Ablate { common, data, test } => {
            let cfg = load_config(&common)?;
            let out = required_out(&common)?;
            let train_scenes: Vec<_> = read_dataset(&data)?.into_iter().map(|(_, s)| s).collect();
            let test_scenes = read_dataset(&test)?;
            let rows = ablate(&cfg.model, &cfg.train, &cfg.eval, &cfg.ablate, &train_scenes, &test_scenes, |r| {
                eprintln!("{}", serde_json::to_string(r).expect("row serializes"));
            })?;
            std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
            let text = ablation_text(&rows);
            for (name, body) in [("ablation.csv", ablation_csv(&rows)), ("ablation.txt", text.clone())] {
                let p = out.join(name);
                std::fs::write(&p, body).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
            write_json(&out.join("ablation.json"), &json!(rows))?;
            Ok(json!({ "out": out, "rows": rows.len(), "table": text }))
        }
        Command::Baseline { common, data } => {
            let cfg = load_config(&common)?;
            let mut per_scene = Vec::new();
            let mut skipped = Vec::new();
            for (name, scene) in read_dataset(&data)? {
                let k = cfg.eval.k.unwrap_or(scene.num_images()).min(scene.num_images());
                let dirs: Option<Vec<Vec3>> =
                    scene.meta.lighting[..k].iter().map(|l| l.directional.as_ref().map(|d| Vec3::from(d.direction))).collect();
                let Some(dirs) = dirs else {
                    skipped.push(name);
                    continue;
                };
                let images: Vec<Map> = scene.images[..k].to_vec();
                let est = woodham_baseline(&images, &dirs, &scene.mask)?;
                per_scene.push(json!({ "name": name, "mae_deg": mae_degrees(&est, &scene.normal, &scene.mask)? }));
            }
            let mean = if per_scene.is_empty() {
                None
            } else {
                Some(per_scene.iter().map(|s| s["mae_deg"].as_f64().unwrap()).sum::<f64>() / per_scene.len() as f64)
            };
            let report = json!({ "scenes": per_scene, "mean_mae_deg": mean, "skipped_without_directional_light": skipped });
            if let Some(out) = &common.out {
                write_json(out, &report)?;
            }
            Ok(report)
        }
        Command::SelfcheckDiff { common, input, emit, tolerance } => {
            if let Some(n) = emit {
                let out = required_out(&common)?;
                write_exchange(&generate_exchange(n, common.seed.unwrap_or(0))?, out)?;
                return Ok(json!({ "out": out, "points": n }));
            }
            let input = input.expect("clap enforces --input without --emit");
            let report = diff_exchange(&read_exchange(&input)?, tolerance)?;
            let v = serde_json::to_value(&report).expect("report serializes");
            if !report.pass {
                // the report still goes to stdout so the worst point is visible
                let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
                return Err(Error::Invariant(format!(
                    "exchange differs: max relative error {:.3e} exceeds {tolerance:e}",
                    report.max_rel_err
                )));
            }
            Ok(v)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            // a closed stdout (e.g. piped into `head`) is not a failure
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
