//! BRDF exchange files: point-wise values of `eval_brdf`, `ggx_ndf` and
//! `fresnel_schlick` written by one implementation and diffed against this
//! one.

use crate::brdf::{eval_brdf, fresnel_schlick, ggx_ndf, spherical, Material, Rgb, ShadingGeometry, Vec3};
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const EXCHANGE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangePoint {
    pub n: [f64; 3],
    pub l: [f64; 3],
    pub v: [f64; 3],
    pub basecolor: Rgb,
    pub roughness: f64,
    pub metalness: f64,
    /// `eval_brdf(n, l, v, material)`.
    pub brdf: Rgb,
    /// `ggx_ndf(n . h, roughness^2)` with `h` the normalized half vector.
    pub ndf: f64,
    /// `fresnel_schlick(l . h, basecolor)`.
    pub fresnel: Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeFile {
    pub version: u32,
    pub seed: u64,
    pub points: Vec<ExchangePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    pub points: usize,
    pub max_rel_err: f64,
    /// Index and quantity name of the worst entry.
    pub worst: Option<(usize, String)>,
    pub tolerance: f64,
    pub pass: bool,
}

fn hemisphere(rng: &mut Rng, n: &Vec3) -> Vec3 {
    loop {
        let d = spherical(rng.uniform().acos(), rng.range(0.0, std::f64::consts::TAU));
        // Rotate the +z hemisphere sample onto `n`.
        let (t, b) = crate::brdf::tangent_frame(n);
        let w = (t * d.x + b * d.y + n * d.z).normalize();
        if w.dot(n) > 1e-3 {
            return w;
        }
    }
}

fn values(n: &Vec3, l: &Vec3, v: &Vec3, mat: &Material) -> Result<(Rgb, f64, Rgb)> {
    let h = (l + v).normalize();
    let brdf = eval_brdf(&ShadingGeometry::new(*n, *l, *v)?, mat)?;
    let ndf = ggx_ndf(n.dot(&h), mat.alpha())?;
    Ok((brdf, ndf, fresnel_schlick(l.dot(&h), mat.basecolor)))
}

/// Random inputs evaluated with this implementation.
pub fn generate_exchange(n_points: usize, seed: u64) -> Result<ExchangeFile> {
    let mut rng = Rng::derived(seed, 0xe8c4);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let n = spherical(rng.range(0.0, 1.4), rng.range(0.0, std::f64::consts::TAU));
        let l = hemisphere(&mut rng, &n);
        let v = hemisphere(&mut rng, &n);
        let mat = Material::new([rng.uniform(), rng.uniform(), rng.uniform()], rng.range(0.05, 1.0), rng.uniform());
        let (brdf, ndf, fresnel) = values(&n, &l, &v, &mat)?;
        points.push(ExchangePoint {
            n: n.into(),
            l: l.into(),
            v: v.into(),
            basecolor: mat.basecolor,
            roughness: mat.roughness,
            metalness: mat.metalness,
            brdf,
            ndf,
            fresnel,
        });
    }
    Ok(ExchangeFile { version: EXCHANGE_VERSION, seed, points })
}

pub fn read_exchange(path: &Path) -> Result<ExchangeFile> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound { Error::MissingFile(path.into()) } else { Error::io(path, e) }
    })?;
    let file: ExchangeFile = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
    if file.version != EXCHANGE_VERSION {
        return Err(Error::corrupt(path, format!("unsupported exchange version {}", file.version)));
    }
    Ok(file)
}

pub fn write_exchange(file: &ExchangeFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Json { path: path.into(), source: e })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Recomputes every point and reports the largest relative difference.
pub fn diff_exchange(file: &ExchangeFile, tolerance: f64) -> Result<DiffReport> {
    let mut worst_err = 0.0;
    let mut worst = None;
    for (i, p) in file.points.iter().enumerate() {
        let unit = |a: [f64; 3]| Vec3::from(a).normalize();
        let mat = Material::new(p.basecolor, p.roughness, p.metalness);
        mat.validate()?;
        let (brdf, ndf, fresnel) = values(&unit(p.n), &unit(p.l), &unit(p.v), &mat)?;
        let mut check = |name: &str, ours: f64, theirs: f64| {
            let e = rel(ours, theirs);
            if !(e <= worst_err) {
                worst_err = if e.is_nan() { f64::INFINITY } else { e };
                worst = Some((i, name.to_string()));
            }
        };
        for c in 0..3 {
            check("brdf", brdf[c], p.brdf[c]);
            check("fresnel", fresnel[c], p.fresnel[c]);
        }
        check("ndf", ndf, p.ndf);
    }
    Ok(DiffReport {
        points: file.points.len(),
        max_rel_err: worst_err,
        worst,
        tolerance,
        pass: worst_err < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_exchange_diffs_clean_after_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_exchange(&generate_exchange(500, 3).unwrap(), &path).unwrap();
        let rep = diff_exchange(&read_exchange(&path).unwrap(), 1e-5).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_rel_err < 1e-9);
    }

    #[test]
    fn perturbed_value_is_reported() {
        let mut f = generate_exchange(20, 1).unwrap();
        f.points[7].ndf *= 1.0 + 1e-4;
        let rep = diff_exchange(&f, 1e-5).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.worst, Some((7, "ndf".into())));
    }

    #[test]
    fn empty_and_deterministic() {
        let e = generate_exchange(0, 9).unwrap();
        assert!(e.points.is_empty());
        assert!(diff_exchange(&e, 1e-5).unwrap().pass);
        let a = serde_json::to_string(&generate_exchange(10, 9).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_exchange(10, 9).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
