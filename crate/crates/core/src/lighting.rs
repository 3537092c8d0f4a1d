//! Light source configurations and per-point shading.

use crate::brdf::{brdf_terms, dfg, prefilter_attenuation, sh, Material, Rgb, Vec3};
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The five lighting configurations, lettered `a` to `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LightKind {
    #[serde(rename = "env")]
    Env,
    #[serde(rename = "directional")]
    Directional,
    #[serde(rename = "point")]
    Point,
    #[serde(rename = "env+directional")]
    EnvDirectional,
    #[serde(rename = "env+point")]
    EnvPoint,
}

impl LightKind {
    pub const ALL: [LightKind; 5] =
        [LightKind::Env, LightKind::Directional, LightKind::Point, LightKind::EnvDirectional, LightKind::EnvPoint];

    pub fn from_letter(c: char) -> Result<Self> {
        match c {
            'a' => Ok(LightKind::Env),
            'b' => Ok(LightKind::Directional),
            'c' => Ok(LightKind::Point),
            'd' => Ok(LightKind::EnvDirectional),
            'e' => Ok(LightKind::EnvPoint),
            _ => Err(Error::Config(format!("unknown lighting kind '{c}' (expected a..e)"))),
        }
    }

    pub fn letter(self) -> char {
        b"abcde"[self.index()] as char
    }

    pub fn index(self) -> usize {
        LightKind::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn has_env(self) -> bool {
        matches!(self, LightKind::Env | LightKind::EnvDirectional | LightKind::EnvPoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Unit vector pointing from the surface toward the light.
    pub direction: [f64; 3],
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: [f64; 3],
    pub intensity: f64,
    pub inverse_square: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLight {
    /// 27 order-2 SH coefficients, layout as in [`sh`].
    pub sh: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingCondition {
    pub kind: LightKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directional: Option<DirectionalLight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PointLight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvLight>,
}

impl LightingCondition {
    pub fn directional(direction: Vec3, intensity: f64) -> Self {
        let d = direction.normalize();
        LightingCondition {
            kind: LightKind::Directional,
            directional: Some(DirectionalLight { direction: [d.x, d.y, d.z], intensity }),
            point: None,
            env: None,
        }
    }

    pub fn point(position: Vec3, intensity: f64, inverse_square: bool) -> Self {
        LightingCondition {
            kind: LightKind::Point,
            directional: None,
            point: Some(PointLight { position: [position.x, position.y, position.z], intensity, inverse_square }),
            env: None,
        }
    }

    pub fn env(sh: Vec<f64>) -> Self {
        LightingCondition { kind: LightKind::Env, directional: None, point: None, env: Some(EnvLight { sh }) }
    }

    /// Checks that the present components match `kind` and their geometric
    /// constraints for a scene of the given radius.
    pub fn validate(&self, scene_radius: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(format!("lighting: {m}")));
        let want_dir = matches!(self.kind, LightKind::Directional | LightKind::EnvDirectional);
        let want_point = matches!(self.kind, LightKind::Point | LightKind::EnvPoint);
        if want_dir != self.directional.is_some()
            || want_point != self.point.is_some()
            || self.kind.has_env() != self.env.is_some()
        {
            return bad(format!("components do not match kind {:?}", self.kind));
        }
        if let Some(d) = &self.directional {
            let v = Vec3::from(d.direction);
            if (v.norm() - 1.0).abs() > 1e-6 || v.z <= 0.0 {
                return bad(format!("directional light {:?} not a unit upper-hemisphere vector", d.direction));
            }
            if !(d.intensity >= 0.0 && d.intensity.is_finite()) {
                return bad("directional intensity must be finite and nonnegative".into());
            }
        }
        if let Some(p) = &self.point {
            let v = Vec3::from(p.position);
            if v.z <= 0.0 || v.norm() > 2.0 * scene_radius * (1.0 + 1e-9) {
                return bad(format!("point light {:?} outside the upper hemisphere of radius 2R", p.position));
            }
            if !(p.intensity >= 0.0 && p.intensity.is_finite()) {
                return bad("point intensity must be finite and nonnegative".into());
            }
        }
        if let Some(e) = &self.env {
            if e.sh.len() != 3 * sh::NUM_COEFFS || !e.sh.iter().all(|c| c.is_finite()) {
                return bad(format!("env light needs 27 finite SH coefficients, got {}", e.sh.len()));
            }
        }
        Ok(())
    }
}

/// Intensity range of sampled directional and point lights.
pub const INTENSITY_RANGE: (f64, f64) = (0.5, 4.0);
/// Sampled point lights keep at least this multiple of the scene radius
/// from the origin, so they stay outside the objects.
pub const POINT_MIN_RADIUS: f64 = 1.2;
const ENV_TEST_DIRECTIONS: usize = 64;

fn upper_hemisphere(rng: &mut Rng) -> Vec3 {
    // Uniform over the hemisphere: z uniform in (0, 1].
    let z = 1.0 - rng.uniform();
    let phi = 2.0 * PI * rng.uniform();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn sample_env(rng: &mut Rng) -> Vec<f64> {
    let level = rng.range(0.4, 1.0);
    let tint: Vec<f64> = (0..3).map(|_| level * rng.range(0.8, 1.2)).collect();
    let dirs = sh::fibonacci_sphere(ENV_TEST_DIRECTIONS);
    let y0 = sh::basis(&Vec3::z())[0];
    let nonneg = |c: &[f64]| dirs.iter().all(|d| sh::radiance(c, d).iter().all(|&x| x >= 0.0));
    let mut coeffs = vec![0.0; 27];
    for attempt in 0..64 {
        for ch in 0..3 {
            coeffs[ch] = tint[ch] / y0;
        }
        for i in 1..sh::NUM_COEFFS {
            let spread = if sh::BAND[i] == 1 { 0.8 } else { 0.5 };
            let shared = rng.normal();
            for ch in 0..3 {
                // Mostly achromatic variation with a little per-channel jitter.
                coeffs[3 * i + ch] = spread * tint[ch] / y0 * (shared + 0.2 * rng.normal());
            }
        }
        if nonneg(&coeffs) {
            return coeffs;
        }
        if attempt == 63 {
            break;
        }
    }
    // Shrink the non-constant bands until the field is nonnegative.
    while !nonneg(&coeffs) {
        for c in coeffs.iter_mut().skip(3) {
            *c *= 0.5;
        }
    }
    coeffs
}

/// Draws a lighting condition of the given kind; deterministic in `seed`.
pub fn sample_lighting(seed: u64, kind: LightKind, scene_radius: f64) -> LightingCondition {
    let mut rng = Rng::derived(seed, 0x11);
    let mut cond = LightingCondition { kind, directional: None, point: None, env: None };
    if kind.has_env() {
        cond.env = Some(EnvLight { sh: sample_env(&mut rng) });
    }
    let (lo, hi) = INTENSITY_RANGE;
    match kind {
        LightKind::Directional | LightKind::EnvDirectional => {
            let d = upper_hemisphere(&mut rng);
            cond.directional = Some(DirectionalLight { direction: [d.x, d.y, d.z], intensity: rng.log_range(lo, hi) });
        }
        LightKind::Point | LightKind::EnvPoint => {
            let d = upper_hemisphere(&mut rng);
            // Uniform in volume between the inner and outer shells.
            let (a, b) = (POINT_MIN_RADIUS.powi(3), 8.0);
            let r = scene_radius * (a + (b - a) * rng.uniform()).cbrt();
            let p = d * r;
            cond.point = Some(PointLight {
                position: [p.x, p.y, p.z],
                intensity: rng.log_range(lo, hi) * scene_radius * scene_radius,
                inverse_square: true,
            });
        }
        LightKind::Env => {}
    }
    cond
}

/// Radiance split into the shadowable direct part and the environment part.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Shading {
    pub direct: Rgb,
    pub env: Rgb,
}

impl Shading {
    pub fn total(&self) -> Rgb {
        [0, 1, 2].map(|c| self.direct[c] + self.env[c])
    }
}

/// Orthographic view direction used throughout.
pub fn view_dir() -> Vec3 {
    Vec3::z()
}

/// Environment lighting reflected toward the viewer: SH irradiance on the
/// diffuse albedo plus a split-sum GGX specular term that samples the
/// lobe-prefiltered radiance in the mirror direction.
pub fn shade_env(n: &Vec3, mat: &Material, coeffs: &[f64]) -> Rgb {
    let v = view_dir();
    let albedo = mat.diffuse_albedo();
    let e = sh::irradiance(coeffs, n);
    let nv = n.dot(&v);
    let mut out = [0, 1, 2].map(|c| albedo[c] / PI * e[c].max(0.0));
    if nv > 0.0 {
        let alpha = mat.alpha();
        let mirror = 2.0 * nv * n - v;
        // Rough lobes peak between the mirror direction and the normal.
        let f = (1.0 - alpha) * ((1.0 - alpha).sqrt() + alpha);
        let r = (n + (mirror - n) * f).normalize();
        let pref = sh::eval_weighted(coeffs, &r, prefilter_attenuation(alpha));
        let (a, b) = dfg(nv, alpha);
        let m = mat.metalness;
        for c in 0..3 {
            let f0 = (1.0 - m) * crate::brdf::DIELECTRIC_F0 + m * mat.basecolor[c];
            out[c] += pref[c].max(0.0) * (f0 * a + b);
        }
    }
    out
}

/// Radiance leaving `position` toward the camera. `visible(dir, dist)`
/// reports whether the segment from the point toward a light is unblocked.
pub fn shade_point(
    n: &Vec3,
    position: &Vec3,
    mat: &Material,
    light: &LightingCondition,
    visible: &dyn Fn(&Vec3, f64) -> bool,
) -> Shading {
    let v = view_dir();
    let mut s = Shading::default();
    let mut add = |l: &Vec3, scale: f64| {
        if n.dot(l) <= 0.0 || !visible(l, f64::INFINITY) {
            return;
        }
        let (d, sp) = brdf_terms(n, l, &v, mat);
        let w = n.dot(l) * scale;
        for c in 0..3 {
            s.direct[c] += (d[c] + sp[c]) * w;
        }
    };
    if let Some(d) = &light.directional {
        add(&Vec3::from(d.direction), d.intensity);
    }
    if let Some(p) = &light.point {
        let to = Vec3::from(p.position) - position;
        let dist = to.norm();
        if dist > 0.0 {
            let l = to / dist;
            if n.dot(&l) > 0.0 && visible(&l, dist) {
                let falloff = if p.inverse_square { 1.0 / (dist * dist) } else { 1.0 };
                let (d, sp) = brdf_terms(n, &l, &v, mat);
                let w = n.dot(&l) * p.intensity * falloff;
                for c in 0..3 {
                    s.direct[c] += (d[c] + sp[c]) * w;
                }
            }
        }
    }
    if let Some(e) = &light.env {
        s.env = shade_env(n, mat, &e.sh);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_letters_and_json() {
        for k in LightKind::ALL {
            assert_eq!(LightKind::from_letter(k.letter()).unwrap(), k);
        }
        assert!(LightKind::from_letter('f').is_err());
        let s = serde_json::to_string(&LightKind::EnvPoint).unwrap();
        assert_eq!(s, "\"env+point\"");
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        for k in LightKind::ALL {
            for seed in 0..50 {
                let a = sample_lighting(seed, k, 1.0);
                assert_eq!(a, sample_lighting(seed, k, 1.0));
                a.validate(1.0).unwrap();
                if let Some(p) = &a.point {
                    assert!(Vec3::from(p.position).norm() >= POINT_MIN_RADIUS - 1e-12);
                }
            }
        }
        let b = sample_lighting(3, LightKind::Directional, 1.0);
        assert!(b.env.is_none() && b.point.is_none() && b.directional.unwrap().direction[2] > 0.0);
    }

    #[test]
    fn env_is_nonnegative_on_test_directions() {
        for seed in 0..100 {
            let c = sample_lighting(seed, LightKind::Env, 1.0).env.unwrap().sh;
            for d in sh::fibonacci_sphere(ENV_TEST_DIRECTIONS) {
                assert!(sh::radiance(&c, &d).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn directional_head_on_gives_brdf_value() {
        let n = Vec3::z();
        let mat = Material::new([0.8, 0.6, 0.4], 1.0, 0.0);
        let light = LightingCondition::directional(n, 1.0);
        let s = shade_point(&n, &Vec3::zeros(), &mat, &light, &|_, _| true);
        let b = crate::brdf::brdf(&n, &n, &n, &mat);
        assert_eq!(s.direct, b);
        let below = LightingCondition::directional(Vec3::new(0.0, 0.6, -0.8), 1.0);
        assert_eq!(shade_point(&n, &Vec3::zeros(), &mat, &below, &|_, _| true).total(), [0.0; 3]);
    }

    #[test]
    fn constant_env_diffuse_is_albedo_times_radiance() {
        let mat = Material::new([0.5, 0.25, 1.0], 0.7, 0.3);
        let c = sh::constant([0.8, 0.8, 0.8]);
        for n in [Vec3::z(), Vec3::new(0.6, 0.0, 0.8)] {
            let albedo = mat.diffuse_albedo();
            let e = sh::irradiance(&c, &n);
            for ch in 0..3 {
                assert!((albedo[ch] / PI * e[ch] - albedo[ch] * 0.8).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_conditions_rejected() {
        let mut d = LightingCondition::directional(Vec3::z(), 1.0);
        d.directional.as_mut().unwrap().direction = [0.0, 0.0, -1.0];
        assert!(d.validate(1.0).is_err());
        let p = LightingCondition::point(Vec3::new(0.0, 0.0, 3.0), 1.0, true);
        assert!(p.validate(1.0).is_err());
        let mut e = LightingCondition::env(vec![0.0; 27]);
        e.kind = LightKind::EnvPoint;
        assert!(e.validate(1.0).is_err());
    }

    /// Monte-Carlo estimate of the environment specular integral.
    fn mc_env_specular(n: &Vec3, mat: &Material, coeffs: &[f64], samples: usize, seed: u64) -> Rgb {
        let mut rng = Rng::new(seed);
        let (t, b) = crate::brdf::tangent_frame(n);
        let v = view_dir();
        let mut acc = [0.0; 3];
        for _ in 0..samples {
            // Cosine-weighted: pdf = n.l / pi.
            let r = rng.uniform().sqrt();
            let phi = 2.0 * PI * rng.uniform();
            let l = t * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - r * r).max(0.0).sqrt();
            let (_, spec) = brdf_terms(n, &l, &v, mat);
            let rad = sh::radiance(coeffs, &l);
            for c in 0..3 {
                acc[c] += spec[c] * rad[c] * PI;
            }
        }
        acc.map(|a| a / samples as f64)
    }

    #[test]
    fn env_specular_tracks_monte_carlo_for_rough_materials() {
        let mut worst: f64 = 0.0;
        for (i, &rough) in [0.3, 0.5, 0.8, 1.0].iter().enumerate() {
            for seed in 0..4u64 {
                let coeffs = sample_lighting(seed, LightKind::Env, 1.0).env.unwrap().sh;
                let n = Vec3::new(0.3 * (seed as f64 - 1.5), 0.2 * i as f64 - 0.3, 1.0).normalize();
                let mat = Material::new([0.9, 0.7, 0.5], rough, 1.0);
                let approx = shade_env(&n, &mat, &coeffs);
                let mc = mc_env_specular(&n, &mat, &coeffs, 100_000, seed);
                for c in 0..3 {
                    worst = worst.max((approx[c] - mc[c]).abs() / mc[c]);
                }
            }
        }
        assert!(worst < 0.15, "worst relative error {worst}");
    }
}
