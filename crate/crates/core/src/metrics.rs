//! Masked losses, angular error and the least-squares Lambertian baseline.

use crate::brdf::Vec3;
use crate::image::{Map, Mask};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

fn check_shapes(pred: &Map, gt: &Map, mask: &Mask) -> Result<()> {
    if !pred.same_size(gt) || mask.height != gt.height || mask.width != gt.width {
        return Err(Error::Shape(format!(
            "pred {}x{}x{}, gt {}x{}x{}, mask {}x{}",
            pred.height, pred.width, pred.channels, gt.height, gt.width, gt.channels, mask.height, mask.width
        )));
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Mean over masked pixels of the squared vector error.
pub fn masked_mse_loss(pred: &Map, gt: &Map, mask: &Mask) -> Result<f64> {
    check_shapes(pred, gt, mask)?;
    let idx = mask.indices();
    let total: f64 = idx
        .iter()
        .map(|&i| pred.at(i).iter().zip(gt.at(i)).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>())
        .sum();
    Ok(total / idx.len() as f64)
}

/// Mean angle in degrees between unit normals over masked pixels.
pub fn mae_degrees(pred: &Map, gt: &Map, mask: &Mask) -> Result<f64> {
    Ok(angular_errors(pred, gt, mask)?.iter().sum::<f64>() / mask.count() as f64)
}

/// Per-pixel angles in degrees, in mask order.
pub fn angular_errors(pred: &Map, gt: &Map, mask: &Mask) -> Result<Vec<f64>> {
    check_shapes(pred, gt, mask)?;
    if gt.channels != 3 {
        return Err(Error::Shape(format!("normal maps need 3 channels, got {}", gt.channels)));
    }
    let mut out = Vec::with_capacity(mask.count());
    for i in mask.indices() {
        let a = Vec3::new(pred.at(i)[0] as f64, pred.at(i)[1] as f64, pred.at(i)[2] as f64);
        let b = Vec3::new(gt.at(i)[0] as f64, gt.at(i)[1] as f64, gt.at(i)[2] as f64);
        for (name, v) in [("prediction", &a), ("ground truth", &b)] {
            if (v.norm() - 1.0).abs() > 1e-3 {
                return Err(Error::Domain(format!("{name} at pixel {i} has norm {:.6}", v.norm())));
            }
        }
        // same angle as arccos(a . b) but well conditioned near 0 and 180
        out.push(a.cross(&b).norm().atan2(a.dot(&b)).to_degrees());
    }
    Ok(out)
}

/// Fraction of the per-pixel maximum below which an observation counts as
/// shadowed.
pub const SHADOW_THRESHOLD: f64 = 0.01;

/// Per-pixel least squares `i = L b` on channel-averaged intensities with
/// known unit light directions; the normal is `b / |b|`. Observations below
/// 1% of the pixel maximum are dropped when at least three remain.
pub fn woodham_baseline(images: &[Map], light_dirs: &[Vec3], mask: &Mask) -> Result<Map> {
    let k = images.len();
    if k < 3 || light_dirs.len() != k {
        return Err(Error::Config(format!("need at least 3 images with one direction each, got {k} and {}", light_dirs.len())));
    }
    let (h, w) = (images[0].height, images[0].width);
    if images.iter().any(|im| im.height != h || im.width != w) || mask.height != h || mask.width != w {
        return Err(Error::Shape("images and mask sizes differ".into()));
    }
    let l = DMatrix::from_fn(k, 3, |r, c| light_dirs[r][c]);
    if rank3(&l) < 3 {
        return Err(Error::RankDeficient);
    }
    let mut out = Map::zeros(h, w, 3);
    for p in mask.indices() {
        let obs: Vec<f64> = images.iter().map(|im| im.at(p).iter().map(|&v| v as f64).sum::<f64>() / im.channels as f64).collect();
        let peak = obs.iter().cloned().fold(0.0, f64::max);
        let lit: Vec<usize> = (0..k).filter(|&j| obs[j] >= SHADOW_THRESHOLD * peak).collect();
        let rows = if lit.len() >= 3 { lit } else { (0..k).collect() };
        let b = solve(&l, &obs, &rows).or_else(|| solve(&l, &obs, &(0..k).collect::<Vec<_>>()));
        let n = match b {
            Some(b) if b.norm() > 0.0 => b / b.norm(),
            _ => Vec3::z(),
        };
        out.at_mut(p).copy_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
    }
    Ok(out)
}

fn rank3(l: &DMatrix<f64>) -> usize {
    let sv = l.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-9 * top.max(1e-300)).count()
}

fn solve(l: &DMatrix<f64>, obs: &[f64], rows: &[usize]) -> Option<Vec3> {
    let a = DMatrix::from_fn(rows.len(), 3, |r, c| l[(rows[r], c)]);
    if rank3(&a) < 3 {
        return None;
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| obs[r]));
    let x = a.svd(true, true).solve(&y, 1e-12).ok()?;
    Some(Vec3::new(x[0], x[1], x[2]))
}
