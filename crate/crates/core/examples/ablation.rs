//! A miniature ablation over the sample count and the encoder switches.

use photostereo::eval::{ablate, ablation_text, AblateAxes, EvalOptions};
use photostereo::model::ModelConfig;
use photostereo::render::{make_scene, render_scene, scene_seed, RenderConfig};
use photostereo::train::TrainConfig;

fn main() -> photostereo::Result<()> {
    let rc = RenderConfig { resolution: 32, num_images: 4, ..RenderConfig::default() };
    let scenes: Vec<_> = (0..10).map(|i| render_scene(&make_scene(scene_seed(5, i), &rc), &rc)).collect::<Result<_, _>>()?;
    let (train_set, test_set) = scenes.split_at(8);
    let test: Vec<_> = test_set.iter().enumerate().map(|(i, s)| (format!("t{i}"), s.clone())).collect();
    let model = ModelConfig { resolution: 32, ..ModelConfig::toy() };
    let train_cfg = TrainConfig { epochs: 2, lr: 1e-3, batch_size: 4, k_min: 3, k_max: 4, ..TrainConfig::default() };
    let axes = AblateAxes { m: vec![32, 128], scale_invariant: vec![true, false], global_branch: vec![] };
    let rows = ablate(&model, &train_cfg, &EvalOptions { k: Some(4), ..Default::default() }, &axes, train_set, &test, |r| {
        eprintln!("done m={} si={} global={}", r.m, r.scale_invariant, r.global_branch)
    })?;
    print!("{}", ablation_text(&rows));
    Ok(())
}
