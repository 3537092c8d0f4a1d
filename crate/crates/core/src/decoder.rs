//! Pixel-sampling Transformer: per-pixel aggregation across lighting
//! conditions, non-local interaction among sampled pixels, and the
//! prediction heads.

use crate::encoder::FeatureMaps;
use crate::image::Mask;
use crate::nn::{Graph, Mlp, ParamId, ParamStore, RowMix, TransformerBlock, Var};
use crate::preprocess::Observation;
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Feature maps are at quarter resolution; feature `(i, j)` sits at pixel
/// coordinate `(4 i + 1.5, 4 j + 1.5)`.
pub const FEATURE_STRIDE: f64 = 4.0;
pub const FEATURE_OFFSET: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Normals,
    Materials,
}

impl Target {
    pub fn outputs(self) -> usize {
        match self {
            Target::Normals => 3,
            Target::Materials => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Width of the aggregated per-pixel vector.
    pub agg_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Blocks before and after the observations are concatenated again.
    pub light_blocks: [usize; 2],
    pub nonlocal_blocks: usize,
    /// Query rows per attention logits block.
    pub chunk: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl DecoderConfig {
    pub fn toy() -> Self {
        DecoderConfig { agg_dim: 48, heads: 8, dropout: 0.1, light_blocks: [2, 3], nonlocal_blocks: 2, chunk: 64 }
    }

    pub fn paper() -> Self {
        DecoderConfig { agg_dim: 384, heads: 8, dropout: 0.1, light_blocks: [2, 3], nonlocal_blocks: 2, chunk: 64 }
    }
}

/// Draws `m` masked pixels (flat indices). Without replacement when the
/// mask has at least `m` pixels; otherwise all of them in random order
/// followed by draws with replacement, and the flag is set.
pub fn sample_pixels(mask: &Mask, m: usize, seed: u64) -> Result<(Vec<usize>, bool)> {
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    if m == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let mut rng = Rng::derived(seed, 0x5a);
    if idx.len() >= m {
        return Ok((rng.choose_distinct(idx.len(), m).into_iter().map(|i| idx[i]).collect(), false));
    }
    let mut out = idx.clone();
    rng.shuffle(&mut out);
    while out.len() < m {
        out.push(idx[rng.below(idx.len())]);
    }
    Ok((out, true))
}

/// Bilinear taps into an `s x s` feature grid for the pixel at
/// `(x, y)` in input-image coordinates.
pub fn feature_taps(x: f64, y: f64, s: usize) -> [(usize, f64); 4] {
    let fx = ((x - FEATURE_OFFSET) / FEATURE_STRIDE).clamp(0.0, (s - 1) as f64);
    let fy = ((y - FEATURE_OFFSET) / FEATURE_STRIDE).clamp(0.0, (s - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(s - 1), (y0 + 1).min(s - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    [
        (y0 * s + x0, (1.0 - tx) * (1.0 - ty)),
        (y0 * s + x1, tx * (1.0 - ty)),
        (y1 * s + x0, (1.0 - tx) * ty),
        (y1 * s + x1, tx * ty),
    ]
}

/// Operator producing `[m * K, C]` rows, row `i * K + k` holding the
/// features of light `k` at sample `i`.
pub fn interp_mix(coords: &[(f64, f64)], k: usize, s: usize) -> RowMix {
    let mut mix = RowMix::new(k * s * s);
    for &(x, y) in coords {
        let taps = feature_taps(x, y, s);
        for light in 0..k {
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
            for (i, w) in taps {
                let row = light * s * s + i;
                match entries.iter_mut().find(|e| e.0 == row) {
                    Some(e) => e.1 += w,
                    None => entries.push((row, w)),
                }
            }
            mix.push_row(entries);
        }
    }
    mix
}

/// Interpolated features `[m * K, C_F]` at continuous pixel coordinates.
pub fn interp_features(g: &Graph, features: &FeatureMaps, coords: &[(f64, f64)]) -> Var {
    g.mix_rows(&features.var, &Rc::new(interp_mix(coords, features.k, features.size)))
}

/// Coordinates of flat pixel indices in an image of width `w`, as `(x, y)`.
pub fn pixel_coords(pixels: &[usize], w: usize) -> Vec<(f64, f64)> {
    pixels.iter().map(|&i| ((i % w) as f64, (i / w) as f64)).collect()
}

/// Normalized RGB observations `[m * K, 3]`, row `i * K + k`.
pub fn gather_observations(obs: &[Observation], pixels: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels.len() * obs.len() * 3);
    for &p in pixels {
        for o in obs {
            out.extend_from_slice(&o.data[p * 4..p * 4 + 3]);
        }
    }
    out
}

pub struct Decoder {
    pub config: DecoderConfig,
    pub fusion_dim: usize,
    pub target: Target,
    first: Vec<TransformerBlock>,
    second: Vec<TransformerBlock>,
    pma_seed: ParamId,
    pma: TransformerBlock,
    nonlocal: Vec<TransformerBlock>,
    head: Mlp,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, config: &DecoderConfig, fusion_dim: usize, target: Target, rng: &mut Rng) -> Result<Self> {
        let (f, a, h, p) = (fusion_dim, config.agg_dim, config.heads, config.dropout);
        if f % h != 0 || a % h != 0 || a < 2 {
            return Err(Error::Config(format!("widths {f} and {a} must be divisible by {h} heads")));
        }
        let stack = |store: &mut ParamStore, rng: &mut Rng, name: &str, n: usize| -> Vec<TransformerBlock> {
            (0..n)
                .map(|b| {
                    let in_dim = if b == 0 { f + 3 } else { f };
                    TransformerBlock::new(store, &format!("{name}.{b}"), in_dim, f, h, p, rng)
                })
                .collect()
        };
        let first = stack(store, rng, "dec.agg_a", config.light_blocks[0]);
        let second = stack(store, rng, "dec.agg_b", config.light_blocks[1]);
        if first.is_empty() || second.is_empty() {
            return Err(Error::Config("aggregation needs at least one block per stage".into()));
        }
        let pma_seed = store.add_normal("dec.pma.seed", 1, a, 1.0, rng);
        let pma = TransformerBlock::cross(store, "dec.pma", f, a, h, p, rng);
        let mut nonlocal: Vec<TransformerBlock> = (0..config.nonlocal_blocks)
            .map(|b| TransformerBlock::new(store, &format!("dec.nonlocal.{b}"), a, a, h, p, rng))
            .collect();
        for blk in &mut nonlocal {
            blk.chunk = config.chunk;
        }
        let head = Mlp::new(store, "dec.head", [a, a / 2, target.outputs()], rng);
        Ok(Decoder { config: config.clone(), fusion_dim, target, first, second, pma_seed, pma, nonlocal, head })
    }

    /// `features [m * K, C_F]`, `obs [m * K, 3]` to `[m, C_A]`.
    pub fn aggregate_light(&self, g: &Graph, features: &Var, obs: &Var, m: usize) -> Var {
        let k = features.rows() / m;
        let mut x = g.concat_cols(features, obs);
        for blk in &self.first {
            x = blk.forward(g, &x, m);
        }
        x = g.concat_cols(&x, obs);
        for blk in &self.second {
            x = blk.forward(g, &x, m);
        }
        debug_assert_eq!(x.rows(), m * k);
        let seeds = g.mix_rows(&g.param(self.pma_seed), &Rc::new(RowMix::gather(1, vec![Some(0); m])));
        self.pma.forward_cross(g, &seeds, &x, m)
    }

    /// Self-attention across the `m` samples, without positional input.
    pub fn nonlocal_interact(&self, g: &Graph, a: &Var) -> Var {
        let mut x = a.clone();
        for blk in &self.nonlocal {
            x = blk.forward(g, &x, 1);
        }
        x
    }

    /// Raw head outputs `[m, 3]` or `[m, 5]`.
    pub fn head_raw(&self, g: &Graph, a: &Var) -> Var {
        self.head.forward(g, a)
    }

    /// Unit normals; rows whose raw output vanishes become `(0, 0, 1)` and
    /// are reported.
    pub fn predict_normals(&self, g: &Graph, a: &Var) -> (Var, Vec<usize>) {
        normalize_head(g, &self.head_raw(g, a))
    }

    /// Basecolor, roughness, metalness in `(0, 1)`.
    pub fn predict_materials(&self, g: &Graph, a: &Var) -> Var {
        g.sigmoid(&self.head_raw(g, a))
    }

    /// Full decoder for one set of samples.
    pub fn decode(&self, g: &Graph, features: &FeatureMaps, obs: &[Observation], pixels: &[usize]) -> Var {
        let w = obs[0].size;
        let coords = pixel_coords(pixels, w);
        let f = interp_features(g, features, &coords);
        let o = g.constant(gather_observations(obs, pixels), pixels.len() * obs.len(), 3);
        let a = self.aggregate_light(g, &f, &o, pixels.len());
        let a = self.nonlocal_interact(g, &a);
        match self.target {
            Target::Normals => self.predict_normals(g, &a).0,
            Target::Materials => self.predict_materials(g, &a),
        }
    }
}

pub fn normalize_head(g: &Graph, raw: &Var) -> (Var, Vec<usize>) {
    g.normalize_rows(raw, 1e-12)
}
