//! Trains a toy network for a few epochs on freshly rendered scenes, saves
//! a checkpoint, reloads it and writes a predicted normal map.
//!
//!     cargo run --release --example train_and_infer -- /tmp/ps_run

use photostereo::eval::{evaluate, EvalOptions};
use photostereo::model::{write_prediction, InferOptions, ModelConfig, Network};
use photostereo::render::{make_scene, render_scene, scene_seed, RenderConfig};
use photostereo::train::{train, TrainConfig};
use std::path::PathBuf;

fn main() -> photostereo::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ps_run".into()));
    std::fs::create_dir_all(&out).map_err(|e| photostereo::Error::Io { path: out.clone(), source: e })?;
    let rc = RenderConfig { resolution: 32, num_images: 6, ..RenderConfig::default() };
    let scenes: Vec<_> = (0..24).map(|i| render_scene(&make_scene(scene_seed(3, i), &rc), &rc)).collect::<Result<_, _>>()?;
    let (train_set, test_set) = scenes.split_at(20);
    let test: Vec<_> = test_set.iter().enumerate().map(|(i, s)| (format!("test{i}"), s.clone())).collect();

    let model = ModelConfig { resolution: 32, ..ModelConfig::toy() };
    let mut net = Network::new(&model, 0)?;
    let opts = EvalOptions { k: Some(6), m: 256, ..Default::default() };
    println!("untrained MAE {:.2} deg", evaluate(&net, &test, &opts)?.mean_mae_deg);
    let cfg = TrainConfig { epochs: 4, lr: 1e-3, batch_size: 4, ..TrainConfig::default() };
    train(&mut net, &cfg, train_set, |l| println!("epoch {} lr {:.1e} loss {:.4}", l.epoch, l.lr, l.loss))?;
    println!("trained MAE {:.2} deg", evaluate(&net, &test, &opts)?.mean_mae_deg);

    let ckpt = out.join("toy.ckpt");
    net.save(&ckpt)?;
    let net = Network::load(&ckpt)?;
    let scene = &test_set[0];
    let pred = net.infer_full_map(&scene.images, Some(&scene.mask), &InferOptions { m: 256, seed: 0, no_mask: false })?;
    write_prediction(&pred, &out, "normal")?;
    println!("wrote {} and normal.f32/normal.png to {}", ckpt.display(), out.display());
    Ok(())
}
