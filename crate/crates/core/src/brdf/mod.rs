//! Dichromatic microfacet reflectance.
//!
//! The dielectric lobe is a basecolor-tinted diffuse term plus a white GGX
//! specular lobe with `f0 = 0.04`; the metallic lobe is GGX with
//! `f0 = basecolor`. Metalness blends the two. Roughness maps to the GGX
//! width as `alpha = roughness^2`.

mod lut;
pub mod sh;

pub use lut::{dfg, prefilter_attenuation};

use crate::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;
pub type Rgb = [f64; 3];

/// Reflectance at normal incidence for the dielectric lobe.
pub const DIELECTRIC_F0: f64 = 0.04;
/// Lower bound on GGX alpha so mirror-like materials stay finite.
pub const MIN_ALPHA: f64 = 1e-3;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub basecolor: Rgb,
    pub roughness: f64,
    pub metalness: f64,
}

impl Material {
    pub fn new(basecolor: Rgb, roughness: f64, metalness: f64) -> Self {
        Material { basecolor, roughness, metalness }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if self.basecolor.iter().all(|&c| ok(c)) && ok(self.roughness) && ok(self.metalness) {
            Ok(())
        } else {
            Err(Error::Domain(format!("material outside [0,1]: {self:?}")))
        }
    }

    pub fn alpha(&self) -> f64 {
        roughness_to_alpha(self.roughness)
    }

    /// Reflectance of the Lambertian part, `(1 - metalness) * basecolor`.
    pub fn diffuse_albedo(&self) -> Rgb {
        self.basecolor.map(|c| (1.0 - self.metalness) * c)
    }
}

pub fn roughness_to_alpha(roughness: f64) -> f64 {
    (roughness * roughness).max(MIN_ALPHA)
}

/// Normal, light and view directions in the camera frame.
#[derive(Debug, Clone, Copy)]
pub struct ShadingGeometry {
    pub n: Vec3,
    pub l: Vec3,
    pub v: Vec3,
}

impl ShadingGeometry {
    pub fn new(n: Vec3, l: Vec3, v: Vec3) -> Result<Self> {
        for (name, x) in [("n", n), ("l", l), ("v", v)] {
            if (x.norm() - 1.0).abs() > UNIT_TOL || !x.iter().all(|c| c.is_finite()) {
                return Err(Error::Domain(format!("{name} is not a unit vector (norm {})", x.norm())));
            }
        }
        Ok(ShadingGeometry { n, l, v })
    }
}

/// GGX / Trowbridge-Reitz normal distribution.
pub fn ggx_ndf(n_dot_h: f64, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 || alpha.is_nan() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok(ggx_d(n_dot_h, alpha))
}

#[inline]
pub(crate) fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * t * t)
}

pub fn fresnel_schlick(cos_theta: f64, f0: Rgb) -> Rgb {
    let w = (1.0 - cos_theta).powi(5);
    f0.map(|f| f + (1.0 - f) * w)
}

/// Smith masking for one direction, height-uncorrelated form.
#[inline]
pub fn smith_g1(n_dot_x: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * n_dot_x / (n_dot_x + (a2 + (1.0 - a2) * n_dot_x * n_dot_x).sqrt())
}

/// Schlick-weighted diffuse factor for one direction; `fd90` is the value at
/// grazing incidence.
#[inline]
fn diffuse_weight(n_dot_x: f64, fd90: f64) -> f64 {
    1.0 + (fd90 - 1.0) * (1.0 - n_dot_x).powi(5)
}

/// BRDF value in sr^-1 with input validation.
pub fn eval_brdf(geom: &ShadingGeometry, mat: &Material) -> Result<Rgb> {
    mat.validate()?;
    let g = ShadingGeometry::new(geom.n, geom.l, geom.v)?;
    Ok(brdf(&g.n, &g.l, &g.v, mat))
}

/// Diffuse and specular parts of the BRDF, already weighted by metalness.
/// Zero when either direction lies below the surface.
pub fn brdf_terms(n: &Vec3, l: &Vec3, v: &Vec3, mat: &Material) -> (Rgb, Rgb) {
    let nl = n.dot(l);
    let nv = n.dot(v);
    if nl <= 0.0 || nv <= 0.0 {
        return ([0.0; 3], [0.0; 3]);
    }
    let h = (l + v).normalize();
    let nh = n.dot(&h).clamp(0.0, 1.0);
    let lh = l.dot(&h).clamp(0.0, 1.0);
    let alpha = mat.alpha();
    let m = mat.metalness;

    // With fd90 = roughness the lobe is exactly Lambertian at roughness 1
    // and darkens toward grazing angles for smooth surfaces.
    let fd = diffuse_weight(nl, mat.roughness) * diffuse_weight(nv, mat.roughness) / PI;
    let diffuse = mat.basecolor.map(|c| (1.0 - m) * c * fd);

    let dg = ggx_d(nh, alpha) * smith_g1(nl, alpha) * smith_g1(nv, alpha) / (4.0 * nl * nv);
    let w = (1.0 - lh).powi(5);
    let f_diel = DIELECTRIC_F0 + (1.0 - DIELECTRIC_F0) * w;
    let specular = mat.basecolor.map(|c| {
        let f_metal = c + (1.0 - c) * w;
        dg * ((1.0 - m) * f_diel + m * f_metal)
    });
    (diffuse, specular)
}

/// Unchecked BRDF used on the rendering hot path.
pub fn brdf(n: &Vec3, l: &Vec3, v: &Vec3, mat: &Material) -> Rgb {
    let (d, s) = brdf_terms(n, l, v, mat);
    [d[0] + s[0], d[1] + s[1], d[2] + s[2]]
}

/// Builds a unit vector from spherical angles around +z.
pub fn spherical(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// An orthonormal basis `(t, b)` completing `n`.
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t = a.cross(n).normalize();
    (t, n.cross(&t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_unit_upper(rng: &mut Rng, n: &Vec3) -> Vec3 {
        loop {
            let d = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            if d.dot(n) > 0.0 {
                return d;
            }
        }
    }

    #[test]
    fn ndf_examples() {
        assert!((ggx_ndf(1.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((ggx_ndf(0.0, 0.5).unwrap() - 0.25 / PI).abs() < 1e-15);
        assert!(matches!(ggx_ndf(0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fresnel_examples() {
        assert_eq!(fresnel_schlick(1.0, [0.04, 0.5, 0.9]), [0.04, 0.5, 0.9]);
        assert_eq!(fresnel_schlick(0.0, [0.04, 0.5, 0.9]), [1.0; 3]);
        let f = fresnel_schlick(0.5, [0.04; 3]);
        assert!((f[0] - 0.07).abs() < 1e-15);
    }

    #[test]
    fn head_on_white_rough_dielectric() {
        // alpha = 1: D = 1/pi, G = 1, F = 0.04, spec = 0.04 / (4 pi);
        // both diffuse weights are 1, diffuse = 1/pi. Total = 1.01/pi.
        let z = Vec3::z();
        let g = ShadingGeometry::new(z, z, z).unwrap();
        let r = eval_brdf(&g, &Material::new([1.0; 3], 1.0, 0.0)).unwrap();
        for c in r {
            assert!((c - 1.01 / PI).abs() < 1e-14);
        }
    }

    #[test]
    fn metal_has_no_diffuse_and_reciprocity_holds() {
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let n = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            let l = rand_unit_upper(&mut rng, &n);
            let v = rand_unit_upper(&mut rng, &n);
            let mat = Material::new([rng.uniform(), rng.uniform(), rng.uniform()], rng.uniform(), rng.uniform());
            let a = brdf(&n, &l, &v, &mat);
            let b = brdf(&n, &v, &l, &mat);
            for i in 0..3 {
                assert!(a[i] >= 0.0 && a[i].is_finite());
                assert!((a[i] - b[i]).abs() <= 1e-12 * a[i].abs().max(1.0));
            }
            let metal = Material { metalness: 1.0, ..mat };
            assert_eq!(brdf_terms(&n, &l, &v, &metal).0, [0.0; 3]);
        }
    }

    #[test]
    fn below_horizon_is_black_and_bad_inputs_rejected() {
        let n = Vec3::z();
        let mat = Material::new([0.5; 3], 0.5, 0.0);
        assert_eq!(brdf(&n, &-Vec3::z(), &n, &mat), [0.0; 3]);
        assert!(ShadingGeometry::new(n * 0.9, n, n).is_err());
        assert!(eval_brdf(&ShadingGeometry { n, l: n, v: n }, &Material::new([1.2, 0.0, 0.0], 0.5, 0.0)).is_err());
    }
}
