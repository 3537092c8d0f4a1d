//! Encoder and decoder bundled with their configuration, checkpoints and
//! full-map inference.

use crate::dataset::{encode_png8, f32_le_bytes};
use crate::decoder::{Decoder, DecoderConfig, Target};
use crate::encoder::{BackboneConfig, Encoder, FeatureMaps};
use crate::image::{Map, Mask};
use crate::nn::{load_checkpoint, save_checkpoint, Graph, ParamStore, Var};
use crate::preprocess::{fit_mask, prepare_inputs, Fit, Mode, Observation};
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: BackboneConfig,
    pub decoder: DecoderConfig,
    pub target: Target,
    /// Working resolution `R`.
    pub resolution: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig { encoder: BackboneConfig::toy(), decoder: DecoderConfig::toy(), target: Target::Normals, resolution: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        crate::preprocess::check_resolution(self.resolution)?;
        self.encoder.validate()
    }
}

pub struct Network {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Options for [`Network::infer_full_map`].
#[derive(Debug, Clone, Copy)]
pub struct InferOptions {
    /// Pixels per decoder set.
    pub m: usize,
    pub seed: u64,
    /// Ignore any supplied mask and predict every pixel.
    pub no_mask: bool,
}

/// Dense prediction at the input image size; pixels outside the mask are 0.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub map: Map,
    pub mask: Mask,
    /// Pixels whose normal head output vanished and were set to `(0, 0, 1)`.
    pub degenerate: usize,
    pub sets: usize,
}

impl Network {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::derived(seed, 0x1417);
        let encoder = Encoder::new(&mut store, &config.encoder, &mut rng)?;
        let decoder = Decoder::new(&mut store, &config.decoder, config.encoder.fusion_dim, config.target, &mut rng)?;
        Ok(Network { config: config.clone(), store, encoder, decoder })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_value(&self.config).map_err(|e| Error::Json { path: path.into(), source: e })?;
        save_checkpoint(path, &cfg, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let config: ModelConfig =
            serde_json::from_value(ckpt.config).map_err(|e| Error::Json { path: path.into(), source: e })?;
        let mut net = Network::new(&config, 0)?;
        net.store.load_from(&ckpt.store)?;
        Ok(net)
    }

    pub fn encode(&self, g: &Graph, obs: &[Observation]) -> Result<FeatureMaps> {
        self.encoder.encode_features(g, obs)
    }

    /// Predictions `[pixels.len(), outputs]` for flat pixel indices at the
    /// working resolution.
    pub fn decode(&self, g: &Graph, features: &FeatureMaps, obs: &[Observation], pixels: &[usize]) -> Var {
        self.decoder.decode(g, features, obs, pixels)
    }

    /// Predicts every masked pixel by partitioning the mask into sets of
    /// `m` pixels. When the mask has more than `m` pixels the last set is
    /// padded with other masked pixels; a pixel keeps the first value
    /// written to it.
    pub fn infer_full_map(&self, images: &[Map], mask: Option<&Mask>, opts: &InferOptions) -> Result<Prediction> {
        let first = images.first().ok_or_else(|| Error::Config("empty image stack".into()))?;
        if opts.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        let (h, w) = (first.height, first.width);
        let r = self.config.resolution;
        let mask = if opts.no_mask { None } else { mask };
        if let Some(mk) = mask {
            if mk.height != h || mk.width != w {
                return Err(Error::Shape(format!("mask is {}x{}, images {h}x{w}", mk.height, mk.width)));
            }
        }
        let fit = Fit::Resize;
        let work_mask = match mask {
            Some(mk) => fit_mask(mk, r, fit)?,
            None => Mask::ones(r, r),
        };
        let pixels = work_mask.indices();
        if pixels.is_empty() {
            return Err(Error::EmptyMask);
        }
        let obs = prepare_inputs(images, mask, r, Mode::Infer, fit, opts.seed)?;
        let g = Graph::inference(&self.store);
        let features = self.encode(&g, &obs)?;
        let outputs = self.config.target.outputs();
        let mut out = vec![0.0f32; r * r * outputs];
        let mut written = vec![false; r * r];
        let sets = partition(&pixels, opts.m, opts.seed);
        let mut degenerate = 0;
        for set in &sets {
            let pred = self.decode(&g, &features, &obs, set);
            for (row, &p) in set.iter().enumerate() {
                if written[p] {
                    continue;
                }
                written[p] = true;
                let v = pred.row(row);
                if outputs == 3 && v == [0.0, 0.0, 1.0] {
                    degenerate += 1;
                }
                for c in 0..outputs {
                    out[p * outputs + c] = v[c] as f32;
                }
            }
        }
        debug_assert!(pixels.iter().all(|&p| written[p]));
        let map = Map::from_vec(r, r, outputs, out)?;
        let (map, out_mask) = if (h, w) == (r, r) {
            (map, work_mask)
        } else {
            let full_mask = mask.cloned().unwrap_or_else(|| Mask::ones(h, w));
            (resample_nearest(&map, &full_mask), full_mask)
        };
        Ok(Prediction { map, mask: out_mask, degenerate, sets: sets.len() })
    }
}

/// Splits `pixels` into sets of at most `m`. With more than `m` pixels the
/// order is shuffled and the final set is filled up to `m` with randomly
/// chosen pixels from outside it.
pub fn partition(pixels: &[usize], m: usize, seed: u64) -> Vec<Vec<usize>> {
    if pixels.len() <= m {
        return vec![pixels.to_vec()];
    }
    let mut rng = Rng::derived(seed, 0x9a27);
    let mut order = pixels.to_vec();
    rng.shuffle(&mut order);
    let mut sets: Vec<Vec<usize>> = order.chunks(m).map(|c| c.to_vec()).collect();
    let last_start = (sets.len() - 1) * m;
    let last = sets.last_mut().unwrap();
    while last.len() < m {
        last.push(order[rng.below(last_start)]);
    }
    sets
}

/// Nearest-neighbour resample of a prediction to the mask size; zero
/// outside the mask.
fn resample_nearest(map: &Map, mask: &Mask) -> Map {
    let (h, w, c) = (mask.height, mask.width, map.channels);
    let mut out = Map::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let sy = ((y as f64 + 0.5) * map.height as f64 / h as f64) as usize;
            let sx = ((x as f64 + 0.5) * map.width as f64 / w as f64) as usize;
            out.pixel_mut(y, x).copy_from_slice(map.pixel(sy.min(map.height - 1), sx.min(map.width - 1)));
        }
    }
    out
}

/// Writes `{stem}.f32` (raw little-endian, `H x W x C`) and `{stem}.png`
/// (normals mapped from `[-1, 1]`, materials as basecolor).
pub fn write_prediction(pred: &Prediction, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let raw = dir.join(format!("{stem}.f32"));
    std::fs::write(&raw, f32_le_bytes(&pred.map.data)).map_err(|e| Error::io(&raw, e))?;
    let m = &pred.map;
    let mut preview = Map::zeros(m.height, m.width, 3);
    for i in 0..m.num_pixels() {
        if !pred.mask.data[i] {
            continue;
        }
        let v = m.at(i);
        let px = preview.at_mut(i);
        for c in 0..3 {
            px[c] = if m.channels == 3 { 0.5 * (v[c] + 1.0) } else { v[c] };
        }
    }
    let png = dir.join(format!("{stem}.png"));
    std::fs::write(&png, encode_png8(&preview)?).map_err(|e| Error::io(&png, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.resolution = 32;
        cfg.encoder.channels = [8, 8, 8, 8];
        cfg.encoder.blocks = [1, 1, 1, 1];
        cfg.encoder.light_blocks = [0, 1, 0, 0];
        cfg.encoder.heads = 2;
        cfg.encoder.fusion_dim = 8;
        cfg.decoder.agg_dim = 8;
        cfg.decoder.heads = 2;
        cfg
    }

    fn stack(k: usize, r: usize) -> Vec<Map> {
        (0..k)
            .map(|i| {
                let data = (0..r * r * 3).map(|j| (((i * 31 + j * 7) % 97) as f32) / 97.0).collect();
                Map::from_vec(r, r, 3, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn partition_covers_every_pixel() {
        let pixels: Vec<usize> = (0..1000).map(|i| i * 3).collect();
        for m in [7, 100, 999, 1000, 5000] {
            let sets = partition(&pixels, m, 4);
            let mut seen: Vec<usize> = sets.iter().flatten().copied().collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen, pixels);
            if pixels.len() > m {
                assert!(sets.iter().all(|s| s.len() == m));
                assert_eq!(sets.len(), pixels.len().div_ceil(m));
            }
        }
    }

    #[test]
    fn full_map_respects_mask_and_is_unit() {
        let net = Network::new(&tiny(), 1).unwrap();
        let mut mask = Mask::zeros(32, 32);
        for y in 8..24 {
            for x in 4..28 {
                mask.data[y * 32 + x] = true;
            }
        }
        let ims = stack(3, 32);
        let p = net.infer_full_map(&ims, Some(&mask), &InferOptions { m: 50, seed: 2, no_mask: false }).unwrap();
        assert_eq!(p.sets, (16 * 24usize).div_ceil(50));
        for i in 0..32 * 32 {
            let v = p.map.at(i);
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if mask.data[i] {
                assert!((n - 1.0).abs() < 1e-5);
            } else {
                assert_eq!(n, 0.0);
            }
        }
    }

    #[test]
    fn single_set_is_seed_independent() {
        let net = Network::new(&tiny(), 3).unwrap();
        let ims = stack(2, 32);
        let mut mask = Mask::zeros(32, 32);
        for i in 100..300 {
            mask.data[i] = true;
        }
        let a = net.infer_full_map(&ims, Some(&mask), &InferOptions { m: 256, seed: 1, no_mask: false }).unwrap();
        let b = net.infer_full_map(&ims, Some(&mask), &InferOptions { m: 256, seed: 99, no_mask: false }).unwrap();
        let worst = a.map.data.iter().zip(&b.map.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn checkpoint_round_trip_reproduces_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::new(&tiny(), 5).unwrap();
        let path = dir.path().join("model.ckpt");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(back.config, net.config);
        let ims = stack(2, 32);
        let opts = InferOptions { m: 128, seed: 0, no_mask: true };
        let a = net.infer_full_map(&ims, None, &opts).unwrap();
        let b = back.infer_full_map(&ims, None, &opts).unwrap();
        assert_eq!(a.map.data, b.map.data);
        write_prediction(&a, dir.path(), "normal").unwrap();
        assert_eq!(std::fs::metadata(dir.path().join("normal.f32")).unwrap().len(), 32 * 32 * 3 * 4);
    }

    #[test]
    fn resamples_to_input_size() {
        let net = Network::new(&tiny(), 6).unwrap();
        let ims = stack(2, 48);
        let p = net.infer_full_map(&ims, None, &InferOptions { m: 4096, seed: 0, no_mask: false }).unwrap();
        assert_eq!((p.map.height, p.map.width), (48, 48));
        assert!(matches!(net.infer_full_map(&[], None, &InferOptions { m: 4, seed: 0, no_mask: false }), Err(Error::Config(_))));
    }
}
