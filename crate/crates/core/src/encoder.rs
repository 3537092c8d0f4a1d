//! Scale-invariant spatial-light feature encoder.
//!
//! Every observation tensor is split into `P^2` interleaved `G x G`
//! sub-tensors (`P = R / G`). All sub-tensors, plus a copy of each tensor
//! naively resized to `G x G`, run through one shared pipeline: a
//! ConvNeXt-style backbone, per-scale attention across the `K` lighting
//! conditions, and a top-down feature pyramid. The sub-tensor outputs are
//! merged back, the upsampled global output is added, and for `P > 4` the
//! result is smoothed by a depthwise Gaussian.
//!
//! Feature maps live in the graph as `[K * h * w, C]` matrices with row
//! `(k * h + y) * w + x`.

use crate::nn::{bilinear_resize_mix, depthwise_kernel_mix, Graph, MixKey, LayerNorm, Linear, ParamId, ParamStore, RowMix, SpatialCache, TransformerBlock, Var};
use crate::preprocess::Observation;
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Stride of each backbone stage relative to the input.
pub const STAGE_SCALES: [usize; 4] = [4, 8, 16, 32];

/// How the backbone sees an `R x R` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Split-and-merge plus the downsized global branch.
    SplitGlobal,
    /// Split-and-merge only.
    Split,
    /// Only the input resized to `G x G`, output upsampled.
    Downsize,
    /// The backbone runs on the full `R x R` input.
    Direct,
}

impl EncoderMode {
    pub fn from_flags(scale_invariant: bool, global_branch: bool) -> Self {
        match (scale_invariant, global_branch) {
            (true, true) => EncoderMode::SplitGlobal,
            (true, false) => EncoderMode::Split,
            (false, true) => EncoderMode::Downsize,
            (false, false) => EncoderMode::Direct,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            EncoderMode::SplitGlobal => (true, true),
            EncoderMode::Split => (true, false),
            EncoderMode::Downsize => (false, true),
            EncoderMode::Direct => (false, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub channels: [usize; 4],
    pub blocks: [usize; 4],
    /// Light-axis Transformer blocks per scale.
    pub light_blocks: [usize; 4],
    pub heads: usize,
    pub dropout: f64,
    /// Output width of the pyramid fusion.
    pub fusion_dim: usize,
    /// Backbone input size.
    pub g: usize,
    pub mode: EncoderMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl BackboneConfig {
    /// Small configuration used for tests and desk-scale training.
    pub fn toy() -> Self {
        BackboneConfig {
            channels: [16, 32, 64, 128],
            blocks: [1, 1, 2, 1],
            light_blocks: [0, 1, 2, 4],
            heads: 8,
            dropout: 0.1,
            fusion_dim: 32,
            g: 32,
            mode: EncoderMode::SplitGlobal,
        }
    }

    pub fn paper() -> Self {
        BackboneConfig {
            channels: [96, 192, 384, 768],
            blocks: [3, 3, 9, 3],
            light_blocks: [0, 1, 2, 4],
            heads: 8,
            dropout: 0.1,
            fusion_dim: 256,
            g: 256,
            mode: EncoderMode::SplitGlobal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 32 || self.g % 32 != 0 {
            return Err(Error::Config(format!("backbone input size {} must be a multiple of 32", self.g)));
        }
        if self.fusion_dim == 0 || self.channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        for (s, &c) in self.channels.iter().enumerate() {
            if self.light_blocks[s] > 0 && c % self.heads != 0 {
                return Err(Error::Config(format!("stage {s} width {c} not divisible by {} heads", self.heads)));
            }
        }
        Ok(())
    }
}

/// Splits an `r x r x c` tensor into `P^2` tensors of `g x g x c`;
/// sub-tensor `p * P + q` holds pixel `(P y + p, P x + q)` at `(y, x)`.
pub fn split_tensor<T: Copy>(data: &[T], r: usize, c: usize, g: usize) -> Result<Vec<Vec<T>>> {
    if g == 0 || r % g != 0 {
        return Err(Error::Shape(format!("G = {g} does not divide R = {r}")));
    }
    if data.len() != r * r * c {
        return Err(Error::Shape(format!("{} values for a {r}x{r}x{c} tensor", data.len())));
    }
    let p = r / g;
    let mut out = Vec::with_capacity(p * p);
    for sp in 0..p {
        for sq in 0..p {
            let mut sub = Vec::with_capacity(g * g * c);
            for y in 0..g {
                for x in 0..g {
                    let i = ((p * y + sp) * r + p * x + sq) * c;
                    sub.extend_from_slice(&data[i..i + c]);
                }
            }
            out.push(sub);
        }
    }
    Ok(out)
}

/// Inverse of [`split_tensor`] for `P^2` maps of `g x g x c`.
pub fn merge_maps<T: Copy + Default>(subs: &[Vec<T>], g: usize, c: usize) -> Result<Vec<T>> {
    let p = (subs.len() as f64).sqrt().round() as usize;
    if p * p != subs.len() || p == 0 {
        return Err(Error::Shape(format!("{} sub-maps is not a square number", subs.len())));
    }
    if subs.iter().any(|s| s.len() != g * g * c) {
        return Err(Error::Shape("sub-maps differ in shape".into()));
    }
    let r = p * g;
    let mut out = vec![T::default(); r * r * c];
    for (s, sub) in subs.iter().enumerate() {
        let (sp, sq) = (s / p, s % p);
        for y in 0..g {
            for x in 0..g {
                let o = ((p * y + sp) * r + p * x + sq) * c;
                out[o..o + c].copy_from_slice(&sub[(y * g + x) * c..(y * g + x + 1) * c]);
            }
        }
    }
    Ok(out)
}

/// Gaussian taps of length `size` with standard deviation `sigma`,
/// normalized to sum 1, and the index of the center tap.
pub fn gaussian_taps(size: usize, sigma: f64) -> (Vec<f64>, usize) {
    let left = (size - 1) / 2;
    let mut taps: Vec<f64> = (0..size)
        .map(|t| {
            let d = t as f64 - left as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    (taps, left)
}

struct Block {
    dw_weight: ParamId,
    dw_bias: ParamId,
    norm: LayerNorm,
    expand: Linear,
    contract: Linear,
}

struct Downsample {
    norm: LayerNorm,
    proj: Linear,
}

/// Encoder output: one `(R/4) x (R/4) x C_F` map per lighting condition.
#[derive(Clone)]
pub struct FeatureMaps {
    pub var: Var,
    pub k: usize,
    pub size: usize,
    pub channels: usize,
}

impl FeatureMaps {
    pub fn feature(&self, k: usize, y: usize, x: usize) -> &[f64] {
        self.var.row((k * self.size + y) * self.size + x)
    }
}

pub struct Encoder {
    pub config: BackboneConfig,
    stem: Linear,
    stem_norm: LayerNorm,
    stages: Vec<Vec<Block>>,
    downsamples: Vec<Downsample>,
    light: Vec<Vec<TransformerBlock>>,
    lateral: Vec<Linear>,
    smooth: Vec<Linear>,
    cache: SpatialCache,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: &BackboneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let stem = Linear::new(store, "enc.stem", 16 * 4, c[0], true, rng);
        let stem_norm = LayerNorm::new(store, "enc.stem_norm", c[0]);
        let mut stages = Vec::new();
        let mut downsamples = Vec::new();
        let mut light = Vec::new();
        for s in 0..4 {
            if s > 0 {
                downsamples.push(Downsample {
                    norm: LayerNorm::new(store, &format!("enc.down{s}.norm"), c[s - 1]),
                    proj: Linear::new(store, &format!("enc.down{s}.proj"), 4 * c[s - 1], c[s], true, rng),
                });
            }
            let blocks = (0..config.blocks[s])
                .map(|b| {
                    let name = format!("enc.stage{s}.block{b}");
                    Block {
                        dw_weight: store.add_normal(&format!("{name}.dw.weight"), 49, c[s], (1.0 / 49.0f64).sqrt(), rng),
                        dw_bias: store.add_const(&format!("{name}.dw.bias"), 1, c[s], 0.0),
                        norm: LayerNorm::new(store, &format!("{name}.norm"), c[s]),
                        expand: Linear::new(store, &format!("{name}.expand"), c[s], 4 * c[s], true, rng),
                        contract: Linear::new(store, &format!("{name}.contract"), 4 * c[s], c[s], true, rng),
                    }
                })
                .collect();
            stages.push(blocks);
            light.push(
                (0..config.light_blocks[s])
                    .map(|b| {
                        TransformerBlock::new(store, &format!("enc.light{s}.{b}"), c[s], c[s], config.heads, config.dropout, rng)
                    })
                    .collect(),
            );
        }
        let f = config.fusion_dim;
        let lateral = (0..4).map(|s| Linear::new(store, &format!("enc.fpn.lateral{s}"), c[s], f, true, rng)).collect();
        let smooth = (0..3).map(|s| Linear::new(store, &format!("enc.fpn.smooth{s}"), 9 * f, f, true, rng)).collect();
        Ok(Encoder {
            config: config.clone(),
            stem,
            stem_norm,
            stages,
            downsamples,
            light,
            lateral,
            smooth,
            cache: SpatialCache::default(),
        })
    }

    /// Parameter ids of the last layer of every backbone block.
    pub fn contract_layers(&self) -> Vec<(ParamId, Option<ParamId>)> {
        self.stages.iter().flatten().map(|b| (b.contract.weight, b.contract.bias)).collect()
    }

    /// Parameter ids of the 3x3 convolutions after each pyramid sum.
    pub fn smoothing_layers(&self) -> Vec<(ParamId, Option<ParamId>)> {
        self.smooth.iter().map(|l| (l.weight, l.bias)).collect()
    }

    /// `[batch * size^2, 4]` tensors to four stage outputs
    /// `[batch * (size / S_s)^2, C_s]`.
    pub fn backbone_forward(&self, g: &Graph, x: &Var, batch: usize, size: usize) -> Result<Vec<Var>> {
        if size < 32 || size % 32 != 0 {
            return Err(Error::Shape(format!("backbone input {size} must be a multiple of 32 and at least 32")));
        }
        if x.shape() != [batch * size * size, 4] {
            return Err(Error::Shape(format!("backbone input shape {:?}", x.shape())));
        }
        let mut h = size;
        let patches = self.cache.patchify(batch, h, h, 4);
        h /= 4;
        let mut cur = g.mix_rows(x, &patches).reshape(batch * h * h, 64);
        cur = self.stem_norm.forward(g, &self.stem.forward(g, &cur));
        let mut outs = Vec::with_capacity(4);
        for s in 0..4 {
            if s > 0 {
                let d = &self.downsamples[s - 1];
                let c = cur.cols();
                let normed = d.norm.forward(g, &cur);
                let patches = self.cache.patchify(batch, h, h, 2);
                h /= 2;
                cur = d.proj.forward(g, &g.mix_rows(&normed, &patches).reshape(batch * h * h, 4 * c));
            }
            for b in &self.stages[s] {
                let y = g.depthwise_conv(&cur, &g.param(b.dw_weight), &g.param(b.dw_bias), batch, h, h, 7);
                let y = b.norm.forward(g, &y);
                let y = g.gelu(&b.expand.forward(g, &y));
                let y = b.contract.forward(g, &y);
                cur = g.add(&cur, &y);
            }
            outs.push(cur.clone());
        }
        Ok(outs)
    }

    /// Row permutation between light-major `((j * K + k) * h + y) * w + x`
    /// and light-minor `((j * h + y) * w + x) * K + k` order.
    fn light_transpose(&self, slots: usize, k: usize, hw: usize, to_minor: bool) -> Rc<RowMix> {
        let key = MixKey::Other(format!("lt{slots}x{k}x{hw}x{to_minor}"));
        self.cache.get(key, || {
            let n = slots * k * hw;
            let mut rows = vec![None; n];
            for j in 0..slots {
                for kk in 0..k {
                    for p in 0..hw {
                        let major = (j * k + kk) * hw + p;
                        let minor = (j * hw + p) * k + kk;
                        if to_minor {
                            rows[minor] = Some(major);
                        } else {
                            rows[major] = Some(minor);
                        }
                    }
                }
            }
            RowMix::gather(n, rows)
        })
    }

    /// Attention across the `k` lighting conditions at every pixel of every
    /// scale. Batch entries are ordered `j * k + light` for `slots` values
    /// of `j`.
    pub fn light_axis_interact(&self, g: &Graph, stages: &[Var], slots: usize, k: usize) -> Vec<Var> {
        stages
            .iter()
            .enumerate()
            .map(|(s, x)| {
                if self.light[s].is_empty() {
                    return x.clone();
                }
                let hw = x.rows() / (slots * k);
                let mut t = g.mix_rows(x, &self.light_transpose(slots, k, hw, true));
                for blk in &self.light[s] {
                    t = blk.forward(g, &t, slots * hw);
                }
                g.mix_rows(&t, &self.light_transpose(slots, k, hw, false))
            })
            .collect()
    }

    /// Top-down fusion to the finest scale: `[batch * (size/4)^2, C_F]`.
    pub fn fuse_pyramid(&self, g: &Graph, stages: &[Var], batch: usize, size: usize) -> Var {
        let f = self.config.fusion_dim;
        let mut top = self.lateral[3].forward(g, &stages[3]);
        for s in (0..3).rev() {
            let h = size / STAGE_SCALES[s];
            let up = self.cache.resize(batch, h / 2, h / 2, h, h);
            let sum = g.add(&g.mix_rows(&top, &up), &self.lateral[s].forward(g, &stages[s]));
            let cols = g.mix_rows(&sum, &self.cache.im2col(batch, h, h, 3)).reshape(batch * h * h, 9 * f);
            top = self.smooth[s].forward(g, &cols);
        }
        top
    }

    /// Shared pipeline on `slots * k` tensors of `size x size x 4`.
    fn pipeline(&self, g: &Graph, x: &Var, slots: usize, k: usize, size: usize) -> Result<Var> {
        let batch = slots * k;
        let stages = self.backbone_forward(g, x, batch, size)?;
        let stages = self.light_axis_interact(g, &stages, slots, k);
        Ok(self.fuse_pyramid(g, &stages, batch, size))
    }

    pub fn encode_features(&self, g: &Graph, obs: &[Observation]) -> Result<FeatureMaps> {
        let k = obs.len();
        let first = obs.first().ok_or_else(|| Error::Config("no observations".into()))?;
        let r = first.size;
        if obs.iter().any(|o| o.size != r || o.data.len() != r * r * 4) {
            return Err(Error::Shape("observations differ in size".into()));
        }
        crate::preprocess::check_resolution(r)?;
        let gs = self.config.g;
        let (rf, f) = (r / 4, self.config.fusion_dim);
        let mode = self.config.mode;
        let split = matches!(mode, EncoderMode::SplitGlobal | EncoderMode::Split);
        let global = matches!(mode, EncoderMode::SplitGlobal | EncoderMode::Downsize);
        if split && r % gs != 0 {
            return Err(Error::Shape(format!("G = {gs} does not divide R = {r}")));
        }

        if mode == EncoderMode::Direct {
            let data: Vec<f64> = obs.iter().flat_map(|o| o.data.iter().copied()).collect();
            let x = g.constant(data, k * r * r, 4);
            let var = self.pipeline(g, &x, 1, k, r)?;
            return Ok(FeatureMaps { var, k, size: rf, channels: f });
        }

        let mut out: Option<Var> = None;
        let gf = gs / 4;
        if split {
            let p = r / gs;
            // Slot-major batch: entry (s * k + light).
            let mut data = Vec::with_capacity(p * p * k * gs * gs * 4);
            let subs: Vec<Vec<Vec<f64>>> =
                obs.iter().map(|o| split_tensor(&o.data, r, 4, gs)).collect::<Result<_>>()?;
            for s in 0..p * p {
                for sub in &subs {
                    data.extend_from_slice(&sub[s]);
                }
            }
            let x = g.constant(data, p * p * k * gs * gs, 4);
            let fused = self.pipeline(g, &x, p * p, k, gs)?;
            let merge = self.cache.get(MixKey::Other(format!("merge{p}x{k}x{gf}")), || {
                let mut rows = Vec::with_capacity(k * rf * rf);
                for light in 0..k {
                    for y in 0..rf {
                        for xx in 0..rf {
                            let s = (y % p) * p + xx % p;
                            rows.push(Some(((s * k + light) * gf + y / p) * gf + xx / p));
                        }
                    }
                }
                RowMix::gather(p * p * k * gf * gf, rows)
            });
            out = Some(g.mix_rows(&fused, &merge));
        }
        if global {
            let down = self.cache.resize(k, r, r, gs, gs);
            let data: Vec<f64> = obs.iter().flat_map(|o| o.data.iter().copied()).collect();
            let x = g.constant(down.apply(&data, 4), k * gs * gs, 4);
            let fused = self.pipeline(g, &x, 1, k, gs)?;
            let up = g.mix_rows(&fused, &self.cache.resize(k, gf, gf, rf, rf));
            out = Some(match out {
                Some(o) => g.add(&o, &up),
                None => up,
            });
        }
        let mut var = out.expect("at least one branch");
        let p = r / gs;
        if split && p > 4 {
            let (taps, left) = gaussian_taps(p - 1, p as f64 / 4.0);
            let hx = self.cache.get(MixKey::Other(format!("blurx{k}x{rf}x{p}")), || {
                depthwise_kernel_mix(k, rf, rf, &taps, left, true)
            });
            let hy = self.cache.get(MixKey::Other(format!("blury{k}x{rf}x{p}")), || {
                depthwise_kernel_mix(k, rf, rf, &taps, left, false)
            });
            var = g.mix_rows(&g.mix_rows(&var, &hx), &hy);
        }
        Ok(FeatureMaps { var, k, size: rf, channels: f })
    }
}

/// Bilinear resize of a plain `[batch * hi * wi, c]` buffer.
pub fn resize_buffer(data: &[f64], batch: usize, hi: usize, ho: usize, c: usize) -> Vec<f64> {
    bilinear_resize_mix(batch, hi, hi, ho, ho).apply(data, c)
}
