//! Held-out evaluation with K-subsampling trials, and the ablation grid.

use crate::dataset::SceneRecord;
use crate::decoder::Target;
use crate::encoder::EncoderMode;
use crate::image::{Map, Mask};
use crate::metrics::mae_degrees;
use crate::model::{InferOptions, ModelConfig, Network};
use crate::rng::{derive_seed, Rng};
use crate::train::{train, TrainConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Images per trial; `None` uses every image once.
    pub k: Option<usize>,
    pub trials: usize,
    pub m: usize,
    pub seed: u64,
    /// Feed an all-ones mask to the model; scoring still uses the true mask.
    pub no_mask: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { k: None, trials: DEFAULT_TRIALS, m: 256, seed: 0, no_mask: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneScore {
    pub name: String,
    pub mae_deg: f64,
    pub trial_mae_deg: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneScore>,
    pub mean_mae_deg: f64,
    pub k: usize,
    pub trials: usize,
    pub options: EvalOptions,
    pub config: serde_json::Value,
    pub runtime_s: f64,
}

/// Images chosen for `trial` of scene `index`: distinct within a trial.
pub fn trial_images(n: usize, k: usize, seed: u64, index: usize, trial: usize) -> Vec<usize> {
    if k == n {
        return (0..n).collect();
    }
    let mut picks = Rng::derived(derive_seed(seed, index as u64), 0x7e1a + trial as u64).choose_distinct(n, k);
    picks.sort_unstable();
    picks
}

/// Scores an arbitrary normal predictor `(scene index, images, mask, seed) -> map`.
pub fn evaluate_with(
    scenes: &[(String, SceneRecord)],
    opts: &EvalOptions,
    config: serde_json::Value,
    predict: impl Fn(usize, &[Map], Option<&Mask>, u64) -> Result<Map>,
) -> Result<EvalReport> {
    let start = Instant::now();
    if scenes.is_empty() {
        return Err(Error::Config("no scenes to evaluate".into()));
    }
    let available = scenes.iter().map(|(_, s)| s.num_images()).min().unwrap();
    let k = opts.k.unwrap_or(available);
    if k == 0 || k > available {
        return Err(Error::Config(format!("K={k} exceeds the {available} images available per scene")));
    }
    let mut scores = Vec::with_capacity(scenes.len());
    for (index, (name, scene)) in scenes.iter().enumerate() {
        let trials = if k == scene.num_images() { 1 } else { opts.trials.max(1) };
        let mut per_trial = Vec::with_capacity(trials);
        for t in 0..trials {
            let picks = trial_images(scene.num_images(), k, opts.seed, index, t);
            let images: Vec<Map> = picks.iter().map(|&i| scene.images[i].clone()).collect();
            let mask = if opts.no_mask { None } else { Some(&scene.mask) };
            let pred = predict(index, &images, mask, derive_seed(opts.seed, (index * 1000 + t) as u64))?;
            per_trial.push(mae_degrees(&pred, &scene.normal, &scene.mask)?);
        }
        let mae = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
        scores.push(SceneScore { name: name.clone(), mae_deg: mae, trial_mae_deg: per_trial });
    }
    let mean = scores.iter().map(|s| s.mae_deg).sum::<f64>() / scores.len() as f64;
    Ok(EvalReport {
        mean_mae_deg: mean,
        k,
        trials: if k == available { 1 } else { opts.trials.max(1) },
        scenes: scores,
        options: opts.clone(),
        config,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Evaluates a normal-predicting network on held-out scenes.
pub fn evaluate(net: &Network, scenes: &[(String, SceneRecord)], opts: &EvalOptions) -> Result<EvalReport> {
    if net.config.target != Target::Normals {
        return Err(Error::Config("angular evaluation needs a normal-predicting network".into()));
    }
    let config = serde_json::to_value(&net.config).unwrap_or_default();
    evaluate_with(scenes, opts, config, |_, images, mask, seed| {
        let infer = InferOptions { m: opts.m, seed, no_mask: opts.no_mask };
        Ok(net.infer_full_map(images, mask, &infer)?.map)
    })
}

/// Axes of the ablation grid; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateAxes {
    pub m: Vec<usize>,
    pub scale_invariant: Vec<bool>,
    pub global_branch: Vec<bool>,
}

impl AblateAxes {
    /// The grid used for the sample-size and encoder ablations.
    pub fn full() -> Self {
        AblateAxes { m: vec![32, 128, 512, 2048], scale_invariant: vec![true, false], global_branch: vec![true, false] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateRow {
    pub m: usize,
    pub scale_invariant: bool,
    pub global_branch: bool,
    pub mean_mae_deg: f64,
    pub final_loss: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

/// Every cell of the grid: `(m, scale_invariant, global_branch)`.
pub fn grid(axes: &AblateAxes, base_m: usize, base_mode: EncoderMode) -> Vec<(usize, bool, bool)> {
    let (si0, gl0) = base_mode.flags();
    let ms = if axes.m.is_empty() { vec![base_m] } else { axes.m.clone() };
    let sis = if axes.scale_invariant.is_empty() { vec![si0] } else { axes.scale_invariant.clone() };
    let gls = if axes.global_branch.is_empty() { vec![gl0] } else { axes.global_branch.clone() };
    let mut out = Vec::new();
    for &m in &ms {
        for &si in &sis {
            for &gl in &gls {
                out.push((m, si, gl));
            }
        }
    }
    out
}

/// Trains and evaluates one network per grid cell. `m` applies to both
/// training samples and inference sets.
pub fn ablate(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    eval: &EvalOptions,
    axes: &AblateAxes,
    train_scenes: &[SceneRecord],
    test_scenes: &[(String, SceneRecord)],
    mut on_row: impl FnMut(&AblateRow),
) -> Result<Vec<AblateRow>> {
    let mut rows = Vec::new();
    for (m, si, gl) in grid(axes, train_cfg.m, model.encoder.mode) {
        let mut mc = model.clone();
        mc.encoder.mode = EncoderMode::from_flags(si, gl);
        let tc = TrainConfig { m, ..train_cfg.clone() };
        let ec = EvalOptions { m, ..eval.clone() };
        let mut net = Network::new(&mc, tc.seed)?;
        let logs = train(&mut net, &tc, train_scenes, |_| {})?;
        let report = evaluate(&net, test_scenes, &ec)?;
        let row = AblateRow {
            m,
            scale_invariant: si,
            global_branch: gl,
            mean_mae_deg: report.mean_mae_deg,
            final_loss: logs.last().map_or(f64::NAN, |l| l.loss),
            model: mc,
            train: tc,
            eval: ec,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with one row per cell; the last column is the JSON config echo.
pub fn ablation_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from("m,scale_invariant,global_branch,mean_mae_deg,final_loss,config\n");
    for r in rows {
        let echo = serde_json::json!({ "model": r.model, "train": r.train, "eval": r.eval }).to_string();
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.6},\"{}\"",
            r.m,
            r.scale_invariant,
            r.global_branch,
            r.mean_mae_deg,
            r.final_loss,
            echo.replace('"', "\"\"")
        );
    }
    out
}

pub fn ablation_text(rows: &[AblateRow]) -> String {
    let mut out = format!("{:>6}  {:>5}  {:>6}  {:>9}  {:>10}\n", "m", "SI", "global", "MAE(deg)", "loss");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6}  {:>5}  {:>6}  {:>9.3}  {:>10.5}",
            r.m,
            if r.scale_invariant { "on" } else { "off" },
            if r.global_branch { "on" } else { "off" },
            r.mean_mae_deg,
            r.final_loss
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{make_scene, render_scene, RenderConfig};

    fn scenes(n: usize) -> Vec<(String, SceneRecord)> {
        let rc = RenderConfig { resolution: 32, num_images: 4, ..Default::default() };
        (0..n).map(|i| (format!("s{i}"), render_scene(&make_scene(i as u64 + 10, &rc), &rc).unwrap())).collect()
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let sc = scenes(3);
        let opts = EvalOptions { k: Some(2), trials: 3, ..Default::default() };
        let rep = evaluate_with(&sc, &opts, serde_json::Value::Null, |i, _, _, _| Ok(sc[i].1.normal.clone()))
        .unwrap();
        assert_eq!(rep.mean_mae_deg, 0.0);
        assert_eq!(rep.scenes[0].trial_mae_deg.len(), 3);
    }

    #[test]
    fn full_k_is_one_deterministic_trial() {
        let sc = scenes(2);
        let net = Network::new(&ModelConfig { resolution: 32, ..ModelConfig::toy() }, 0).unwrap();
        let opts = EvalOptions { k: None, m: 64, ..Default::default() };
        let a = evaluate(&net, &sc, &opts).unwrap();
        let b = evaluate(&net, &sc, &opts).unwrap();
        assert_eq!(a.trials, 1);
        assert_eq!(a.mean_mae_deg, b.mean_mae_deg);
        assert!(a.scenes.iter().all(|s| (0.0..=180.0).contains(&s.mae_deg)));
        assert!(evaluate(&net, &sc, &EvalOptions { k: Some(5), ..opts }).is_err());
    }

    #[test]
    fn trials_pick_distinct_images() {
        for t in 0..20 {
            let p = trial_images(10, 4, 3, 1, t);
            let mut u = p.clone();
            u.dedup();
            assert_eq!(u.len(), 4);
        }
        assert_ne!(trial_images(10, 4, 3, 1, 0), trial_images(10, 4, 3, 1, 1));
    }

    #[test]
    fn grid_sizes_and_tables() {
        assert_eq!(grid(&AblateAxes::default(), 256, EncoderMode::SplitGlobal), vec![(256, true, true)]);
        assert_eq!(grid(&AblateAxes::full(), 256, EncoderMode::SplitGlobal).len(), 16);
        let row = AblateRow {
            m: 32,
            scale_invariant: true,
            global_branch: false,
            mean_mae_deg: 12.5,
            final_loss: 0.1,
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
        };
        let csv = ablation_csv(&[row.clone(), row.clone()]);
        assert_eq!(csv.lines().count(), 3);
        let echo = csv.lines().nth(1).unwrap().splitn(6, ',').nth(5).unwrap();
        let echo: serde_json::Value = serde_json::from_str(&echo[1..echo.len() - 1].replace("\"\"", "\"")).unwrap();
        let back: ModelConfig = serde_json::from_value(echo["model"].clone()).unwrap();
        assert_eq!(back, ModelConfig::toy());
        assert_eq!(ablation_text(&[row]).lines().count(), 2);
    }
}
