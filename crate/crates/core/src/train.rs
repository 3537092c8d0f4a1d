//! Training loop: step-decay schedule with a one-epoch warmup, AdamW, and
//! a random number of lighting conditions per batch.

use crate::dataset::SceneRecord;
use crate::decoder::{sample_pixels, Target};
use crate::image::Map;
use crate::model::Network;
use crate::nn::{AdamW, Graph, Var};
use crate::preprocess::{fit_map, fit_mask, prepare_inputs, Fit, Mode};
use crate::rng::{derive_seed, Rng};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub epochs: usize,
    /// Pixels sampled per scene and step.
    pub m: usize,
    /// Probability of replacing a scene's input mask by all ones.
    pub mask_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 0.05,
            decay_factor: 0.8,
            decay_every: 10,
            warmup_epochs: 1,
            batch_size: 8,
            k_min: 3,
            k_max: 6,
            epochs: 60,
            m: 256,
            mask_dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(s.into()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad("need 1 <= k_min <= k_max");
        }
        if self.batch_size == 0 || self.m == 0 || self.decay_every == 0 {
            return bad("batch_size, m and decay_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_dropout) || !(self.decay_factor > 0.0) {
            return bad("mask_dropout must be in [0, 1] and decay_factor positive");
        }
        Ok(())
    }

    /// Learning rate for step `step` of `steps` within `epoch`: linear ramp
    /// during warmup, then multiplied by the decay factor every
    /// `decay_every` epochs.
    pub fn lr_at(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        let decayed = self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32);
        if epoch < self.warmup_epochs {
            let done = epoch * steps + step + 1;
            decayed * done as f64 / (self.warmup_epochs * steps.max(1)) as f64
        } else {
            decayed
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub seconds: f64,
}

/// Ground truth rows `[pixels, outputs]` for the network target.
pub fn target_rows(target: Target, normal: &Map, materials: [&Map; 3], pixels: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels.len() * target.outputs());
    for &p in pixels {
        match target {
            Target::Normals => out.extend(normal.at(p).iter().map(|&v| v as f64)),
            Target::Materials => {
                for m in materials {
                    out.extend(m.at(p).iter().map(|&v| v as f64));
                }
            }
        }
    }
    out
}

/// Builds the loss for one scene: `k` random images, a random `R x R`
/// window (or a resize when the scene is smaller), `m` sampled pixels.
/// Returns `None` when the window holds no masked pixel.
pub fn scene_loss(g: &Graph, net: &Network, scene: &SceneRecord, k: usize, cfg: &TrainConfig, seed: u64) -> Result<Option<Var>> {
    let r = net.config.resolution;
    let mut rng = Rng::new(seed);
    let (h, w) = (scene.height(), scene.width());
    let fit = if h >= r && w >= r { Fit::Crop { y: rng.int_inclusive(0, h - r), x: rng.int_inclusive(0, w - r) } } else { Fit::Resize };
    let picks = rng.choose_distinct(scene.num_images(), k);
    let images: Vec<Map> = picks.iter().map(|&i| scene.images[i].clone()).collect();
    let mask = fit_mask(&scene.mask, r, fit)?;
    if mask.count() == 0 {
        return Ok(None);
    }
    let input_mask = if rng.uniform() < cfg.mask_dropout { None } else { Some(&scene.mask) };
    let obs = prepare_inputs(&images, input_mask, r, Mode::Train, fit, rng.next_u64())?;
    let (pixels, _) = sample_pixels(&mask, cfg.m, rng.next_u64())?;
    let fitted = |m: &Map| fit_map(m, r, fit, true);
    let normal = fitted(&scene.normal)?;
    let mats = [fitted(&scene.basecolor)?, fitted(&scene.roughness)?, fitted(&scene.metalness)?];
    let target = target_rows(net.config.target, &normal, [&mats[0], &mats[1], &mats[2]], &pixels);
    let features = net.encode(g, &obs)?;
    let pred = net.decode(g, &features, &obs, &pixels);
    Ok(Some(g.mse_rows(&pred, &target, None)))
}

/// Trains `net` in place and returns the per-epoch mean loss. `on_epoch`
/// is called after every epoch.
pub fn train(net: &mut Network, cfg: &TrainConfig, scenes: &[SceneRecord], mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if scenes.len() < 2 {
        return Err(Error::Config(format!("training needs at least 2 scenes, got {}", scenes.len())));
    }
    let available = scenes.iter().map(|s| s.num_images()).min().unwrap_or(0);
    if available < cfg.k_min {
        return Err(Error::Config(format!("scenes have {available} images, k_min is {}", cfg.k_min)));
    }
    let k_max = cfg.k_max.min(available);
    let mut rng = Rng::derived(cfg.seed, 0x7a1);
    let mut opt = AdamW::new(cfg.weight_decay);
    let steps = scenes.len().div_ceil(cfg.batch_size);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        rng.shuffle(&mut order);
        let (mut total, mut count) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let k = rng.int_inclusive(cfg.k_min, k_max);
            let step_seed = rng.next_u64();
            let lr = cfg.lr_at(epoch, step, steps);
            let grads = {
                let g = Graph::new(&net.store, true, step_seed);
                let mut losses = Vec::with_capacity(batch.len());
                for (j, &s) in batch.iter().enumerate() {
                    if let Some(l) = scene_loss(&g, net, &scenes[s], k, cfg, derive_seed(step_seed, j as u64))? {
                        losses.push(l);
                    }
                }
                if losses.is_empty() {
                    continue;
                }
                let mut sum = losses[0].clone();
                for l in &losses[1..] {
                    sum = g.add(&sum, l);
                }
                let loss = g.scale(&sum, 1.0 / losses.len() as f64);
                total += loss.scalar() * losses.len() as f64;
                count += losses.len();
                g.backward(&loss)
            };
            opt.step(&mut net.store, &grads, lr);
        }
        let log = EpochLog {
            epoch,
            lr: cfg.lr_at(epoch, steps - 1, steps),
            loss: if count > 0 { total / count as f64 } else { f64::NAN },
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
