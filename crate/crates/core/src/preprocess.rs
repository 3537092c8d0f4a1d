//! Resolution fitting, per-image normalization and assembly of the
//! four-channel observation tensors.

use crate::image::{Map, Mask};
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Divisor position drawn uniformly between mean and max.
    Train,
    /// Divisor fixed halfway between mean and max.
    Infer,
}

/// How an image is brought to `R x R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fit {
    /// Bilinear resize (nearest for masks).
    Resize,
    /// Central `R x R` window.
    CenterCrop,
    /// `R x R` window with top-left corner `(y, x)`.
    Crop { y: usize, x: usize },
}

/// `R x R x 4` tensor: normalized RGB followed by the mask channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub size: usize,
    pub data: Vec<f64>,
    pub divisor: f64,
}

impl Observation {
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.size + x) * 4;
        &self.data[i..i + 4]
    }
}

pub fn check_resolution(r: usize) -> Result<()> {
    if r == 0 || r % 32 != 0 {
        return Err(Error::Config(format!("resolution {r} is not a positive multiple of 32")));
    }
    Ok(())
}

fn crop_origin(h: usize, w: usize, r: usize, fit: Fit) -> Result<(usize, usize)> {
    let (y, x) = match fit {
        Fit::CenterCrop => ((h.saturating_sub(r)) / 2, (w.saturating_sub(r)) / 2),
        Fit::Crop { y, x } => (y, x),
        Fit::Resize => unreachable!(),
    };
    if y + r > h || x + r > w {
        return Err(Error::Shape(format!("cannot take a {r}x{r} window at ({y}, {x}) from a {h}x{w} image")));
    }
    Ok((y, x))
}

/// Fits a map to `r x r`; `nearest` selects nearest-neighbour resampling.
pub fn fit_map(m: &Map, r: usize, fit: Fit, nearest: bool) -> Result<Map> {
    let c = m.channels;
    if fit == Fit::Resize {
        if (m.height, m.width) == (r, r) {
            return Ok(m.clone());
        }
        let mut out = Map::zeros(r, r, c);
        let sy = m.height as f64 / r as f64;
        let sx = m.width as f64 / r as f64;
        for y in 0..r {
            for x in 0..r {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (m.height - 1) as f64);
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (m.width - 1) as f64);
                let o = out.pixel_mut(y, x);
                if nearest {
                    let (ny, nx) = (((y as f64 + 0.5) * sy) as usize, ((x as f64 + 0.5) * sx) as usize);
                    o.copy_from_slice(m.pixel(ny.min(m.height - 1), nx.min(m.width - 1)));
                    continue;
                }
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(m.height - 1), (x0 + 1).min(m.width - 1));
                let (ty, tx) = ((fy - y0 as f64) as f32, (fx - x0 as f64) as f32);
                for ch in 0..c {
                    let a = m.pixel(y0, x0)[ch] * (1.0 - tx) + m.pixel(y0, x1)[ch] * tx;
                    let b = m.pixel(y1, x0)[ch] * (1.0 - tx) + m.pixel(y1, x1)[ch] * tx;
                    o[ch] = a * (1.0 - ty) + b * ty;
                }
            }
        }
        return Ok(out);
    }
    let (oy, ox) = crop_origin(m.height, m.width, r, fit)?;
    let mut out = Map::zeros(r, r, c);
    for y in 0..r {
        out.data[y * r * c..(y + 1) * r * c]
            .copy_from_slice(&m.data[((oy + y) * m.width + ox) * c..((oy + y) * m.width + ox + r) * c]);
    }
    Ok(out)
}

pub fn fit_mask(mask: &Mask, r: usize, fit: Fit) -> Result<Mask> {
    let m = Map { height: mask.height, width: mask.width, channels: 1, data: mask.data.iter().map(|&b| b as u8 as f32).collect() };
    let f = fit_map(&m, r, fit, true)?;
    Ok(Mask { height: r, width: r, data: f.data.iter().map(|&v| v > 0.5).collect() })
}

/// `mean + u * (max - mean)` of the channel values at the selected pixels.
/// Falls back to 1 for an all-black image.
pub fn divisor(image: &Map, pixels: &[usize], u: f64) -> f64 {
    let (mut sum, mut max, mut n) = (0.0f64, 0.0f64, 0usize);
    for &i in pixels {
        for &v in image.at(i) {
            sum += v as f64;
            max = max.max(v as f64);
            n += 1;
        }
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    let d = mean + u * (max - mean);
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Builds the observation tensors for a stack of images.
///
/// Statistics come from masked pixels when a mask is given (all pixels
/// otherwise, or when the fitted mask is empty). Without a mask the fourth
/// channel is all ones. Background pixels keep their values.
pub fn prepare_inputs(
    images: &[Map],
    mask: Option<&Mask>,
    r: usize,
    mode: Mode,
    fit: Fit,
    seed: u64,
) -> Result<Vec<Observation>> {
    check_resolution(r)?;
    let first = images.first().ok_or_else(|| Error::Config("empty image stack".into()))?;
    for (k, im) in images.iter().enumerate() {
        if !im.same_size(first) || im.channels != 3 {
            return Err(Error::Shape(format!(
                "image {k} is {}x{}x{}, expected {}x{}x3",
                im.height, im.width, im.channels, first.height, first.width
            )));
        }
    }
    if let Some(m) = mask {
        if (m.height, m.width) != (first.height, first.width) {
            return Err(Error::Shape("mask size differs from image size".into()));
        }
    }
    let fitted_mask = match mask {
        Some(m) => fit_mask(m, r, fit)?,
        None => Mask::ones(r, r),
    };
    let mut stat_pixels = fitted_mask.indices();
    if stat_pixels.is_empty() {
        stat_pixels = (0..r * r).collect();
    }
    let mut rng = Rng::derived(seed, 0x9e);
    images
        .iter()
        .map(|im| {
            let f = fit_map(im, r, fit, false)?;
            let u = match mode {
                Mode::Train => rng.uniform(),
                Mode::Infer => 0.5,
            };
            let d = divisor(&f, &stat_pixels, u);
            let mut data = Vec::with_capacity(r * r * 4);
            for i in 0..r * r {
                let p = f.at(i);
                data.extend(p.iter().map(|&v| (v as f64 / d).max(0.0)));
                data.push(if fitted_mask.data[i] { 1.0 } else { 0.0 });
            }
            Ok(Observation { size: r, data, divisor: d })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_stack(k: usize, h: usize, w: usize, seed: u64) -> Vec<Map> {
        let mut rng = Rng::new(seed);
        (0..k)
            .map(|_| Map { height: h, width: w, channels: 3, data: (0..h * w * 3).map(|_| rng.range(0.0, 2.0) as f32).collect() })
            .collect()
    }

    #[test]
    fn constant_image_normalizes_to_one() {
        let im = Map::filled(32, 32, &[0.37, 0.37, 0.37]);
        let o = prepare_inputs(&[im], None, 32, Mode::Infer, Fit::Resize, 0).unwrap();
        for p in o[0].data.chunks(4) {
            assert!((p[0] - 1.0).abs() < 1e-6 && p[3] == 1.0);
        }
    }

    #[test]
    fn bad_resolution_and_shapes() {
        let im = Map::zeros(100, 100, 3);
        assert!(matches!(prepare_inputs(&[im.clone()], None, 100, Mode::Infer, Fit::Resize, 0), Err(Error::Config(_))));
        assert!(prepare_inputs(&[], None, 32, Mode::Infer, Fit::Resize, 0).is_err());
        let other = Map::zeros(96, 100, 3);
        assert!(matches!(prepare_inputs(&[im, other], None, 32, Mode::Infer, Fit::Resize, 0), Err(Error::Shape(_))));
        assert!(prepare_inputs(&[Map::zeros(40, 40, 3)], None, 64, Mode::Infer, Fit::CenterCrop, 0).is_err());
    }

    #[test]
    fn max_lies_between_one_and_max_over_mean() {
        let stack = random_stack(5, 64, 64, 3);
        for mode in [Mode::Train, Mode::Infer] {
            let o = prepare_inputs(&stack, None, 64, mode, Fit::Resize, 9).unwrap();
            for (im, ob) in stack.iter().zip(&o) {
                let mean = im.data.iter().map(|&v| v as f64).sum::<f64>() / im.data.len() as f64;
                let max = im.data.iter().fold(0.0f64, |a, &v| a.max(v as f64));
                let out_max = ob.data.chunks(4).flat_map(|p| p[..3].to_vec()).fold(0.0, f64::max);
                assert!(out_max >= 1.0 - 1e-9 && out_max <= max / mean + 1e-9);
            }
        }
    }

    #[test]
    fn infer_is_deterministic_and_permutation_equivariant() {
        let stack = random_stack(4, 64, 64, 4);
        let a = prepare_inputs(&stack, None, 32, Mode::Infer, Fit::Resize, 1).unwrap();
        let b = prepare_inputs(&stack, None, 32, Mode::Infer, Fit::Resize, 2).unwrap();
        assert_eq!(a, b);
        let perm = [2, 0, 3, 1];
        let shuffled: Vec<Map> = perm.iter().map(|&i| stack[i].clone()).collect();
        let c = prepare_inputs(&shuffled, None, 32, Mode::Infer, Fit::Resize, 1).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(c[j], a[i]);
        }
    }

    #[test]
    fn masked_statistics_and_mask_channel() {
        let mut im = Map::filled(32, 32, &[1.0, 1.0, 1.0]);
        let mut mask = Mask::zeros(32, 32);
        for i in 0..32 * 16 {
            mask.data[i] = true;
            im.at_mut(i).copy_from_slice(&[4.0, 4.0, 4.0]);
        }
        let o = prepare_inputs(&[im], Some(&mask), 32, Mode::Infer, Fit::Resize, 0).unwrap();
        assert_eq!(o[0].divisor, 4.0);
        assert_eq!(o[0].pixel(0, 0), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(o[0].pixel(31, 0), &[0.25, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn crops_and_resizes() {
        let stack = random_stack(1, 96, 80, 5);
        let c = fit_map(&stack[0], 64, Fit::CenterCrop, false).unwrap();
        assert_eq!(c.pixel(0, 0), stack[0].pixel(16, 8));
        let e = fit_map(&stack[0], 32, Fit::Crop { y: 10, x: 20 }, false).unwrap();
        assert_eq!(e.pixel(3, 4), stack[0].pixel(13, 24));
        // Downsizing by exactly 2 averages 2x2 blocks.
        let d = fit_map(&stack[0], 32, Fit::Resize, false);
        assert!(d.is_ok());
        let sq = random_stack(1, 64, 64, 6).pop().unwrap();
        let half = fit_map(&sq, 32, Fit::Resize, false).unwrap();
        let want: f32 = (sq.pixel(2, 4)[1] + sq.pixel(2, 5)[1] + sq.pixel(3, 4)[1] + sq.pixel(3, 5)[1]) / 4.0;
        assert!((half.pixel(1, 2)[1] - want).abs() < 1e-5);
    }
}
