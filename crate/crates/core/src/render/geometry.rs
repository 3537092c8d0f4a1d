//! Analytic primitives and ray intersection.

use crate::brdf::Vec3;
use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

/// Rays start this far along the normal to avoid self-intersection.
pub const RAY_EPS: f64 = 1e-7;
const MARCH_TOL: f64 = 1e-10;
const MARCH_STEPS: usize = 1024;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Row-major rotation matrix taking local coordinates to world coordinates.
pub type Rot = [[f64; 3]; 3];

pub fn identity_rot() -> Rot {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn rot_from_axis_angle(axis: Vec3, angle: f64) -> Rot {
    let m = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
    [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)]))
}

fn to_matrix(r: &Rot) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Box that is axis-aligned in its local frame, posed by `rotation`.
    Box { center: [f64; 3], half_extents: [f64; 3], rotation: Rot },
    /// Torus around the local z axis.
    Torus { center: [f64; 3], major: f64, minor: f64, rotation: Rot },
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match self {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } | Shape::Torus { center, .. } => {
                Vec3::from(*center)
            }
        }
    }

    /// Radius of a sphere around `center` that contains the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Sphere { radius, .. } => *radius,
            Shape::Box { half_extents, .. } => Vec3::from(*half_extents).norm(),
            Shape::Torus { major, minor, .. } => major + minor,
        }
    }

    /// Nearest intersection with `t` in `(t_min, t_max)`.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        match self {
            Shape::Sphere { center, radius } => sphere_hit(&Vec3::from(*center), *radius, ray, t_min, t_max),
            Shape::Box { center, half_extents, rotation } => {
                let r = to_matrix(rotation);
                let local = Ray { origin: r.transpose() * (ray.origin - Vec3::from(*center)), dir: r.transpose() * ray.dir };
                box_hit(&Vec3::from(*half_extents), &local, t_min, t_max).map(|h| Hit { t: h.t, normal: r * h.normal })
            }
            Shape::Torus { center, major, minor, rotation } => {
                let r = to_matrix(rotation);
                let local = Ray { origin: r.transpose() * (ray.origin - Vec3::from(*center)), dir: r.transpose() * ray.dir };
                torus_hit(*major, *minor, &local, t_min, t_max).map(|h| Hit { t: h.t, normal: r * h.normal })
            }
        }
    }
}

/// Both roots of the ray/sphere quadratic, if real.
fn sphere_roots(center: &Vec3, radius: f64, ray: &Ray) -> Option<(f64, f64)> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

fn sphere_hit(center: &Vec3, radius: f64, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let (t0, t1) = sphere_roots(center, radius, ray)?;
    let t = if t0 > t_min { t0 } else { t1 };
    if t <= t_min || t >= t_max {
        return None;
    }
    Some(Hit { t, normal: (ray.at(t) - center) / radius })
}

fn box_hit(half: &Vec3, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut lo_axis, mut hi_axis) = (0, 0);
    for a in 0..3 {
        let (o, d) = (ray.origin[a], ray.dir[a]);
        if d.abs() < 1e-300 {
            if o.abs() > half[a] {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((-half[a] - o) / d, (half[a] - o) / d);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > lo {
            lo = t0;
            lo_axis = a;
        }
        if t1 < hi {
            hi = t1;
            hi_axis = a;
        }
    }
    if lo > hi {
        return None;
    }
    let (t, axis) = if lo > t_min { (lo, lo_axis) } else { (hi, hi_axis) };
    if t <= t_min || t >= t_max {
        return None;
    }
    let mut normal = Vec3::zeros();
    normal[axis] = ray.at(t)[axis].signum();
    Some(Hit { t, normal })
}

fn torus_sdf(major: f64, minor: f64, p: &Vec3) -> f64 {
    let q = (p.x * p.x + p.y * p.y).sqrt() - major;
    (q * q + p.z * p.z).sqrt() - minor
}

pub fn torus_normal(major: f64, p: &Vec3) -> Vec3 {
    let rxy = (p.x * p.x + p.y * p.y).sqrt().max(1e-300);
    let ring = Vec3::new(p.x / rxy * major, p.y / rxy * major, 0.0);
    (p - ring).normalize()
}

/// Sphere tracing of the torus distance field inside its bounding sphere.
/// Only used for rays that start outside the torus.
fn torus_hit(major: f64, minor: f64, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let (b0, b1) = sphere_roots(&Vec3::zeros(), major + minor, ray)?;
    let mut t = b0.max(t_min);
    let end = b1.min(t_max);
    // Rays leaving the surface start inside the field's zero band; step out
    // of it first.
    let mut steps = 0;
    while t < end && steps < MARCH_STEPS {
        let d = torus_sdf(major, minor, &ray.at(t));
        if d < MARCH_TOL {
            if t <= t_min + RAY_EPS {
                t += 4.0 * RAY_EPS;
                steps += 1;
                continue;
            }
            return Some(Hit { t, normal: torus_normal(major, &ray.at(t)) });
        }
        t += d;
        steps += 1;
    }
    None
}

/// Axis-aligned ground plane `z = height`, facing +z.
pub fn plane_hit(height: f64, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    if ray.dir.z.abs() < 1e-300 {
        return None;
    }
    let t = (height - ray.origin.z) / ray.dir.z;
    (t > t_min && t < t_max).then(|| Hit { t, normal: Vec3::z() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn down(x: f64, y: f64) -> Ray {
        Ray { origin: Vec3::new(x, y, 10.0), dir: -Vec3::z() }
    }

    #[test]
    fn sphere_center_hit_has_up_normal() {
        let s = Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 0.5 };
        let h = s.intersect(&down(0.0, 0.0), 0.0, f64::INFINITY).unwrap();
        assert!((h.t - 9.5).abs() < 1e-12);
        assert!((h.normal - Vec3::z()).norm() < 1e-12);
        assert!(s.intersect(&down(0.6, 0.0), 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn rotated_box_normals_are_unit_and_outward() {
        let b = Shape::Box {
            center: [0.1, 0.0, 0.0],
            half_extents: [0.3, 0.2, 0.25],
            rotation: rot_from_axis_angle(Vec3::new(1.0, 1.0, 0.3), 0.7),
        };
        let mut hits = 0;
        for i in 0..20 {
            for j in 0..20 {
                let r = down(-0.5 + i as f64 * 0.05, -0.5 + j as f64 * 0.05);
                if let Some(h) = b.intersect(&r, 0.0, f64::INFINITY) {
                    hits += 1;
                    assert!((h.normal.norm() - 1.0).abs() < 1e-12);
                    assert!(h.normal.dot(&r.dir) < 0.0);
                }
            }
        }
        assert!(hits > 20);
    }

    #[test]
    fn torus_hit_lies_on_surface_with_matching_normal() {
        let major = 0.4;
        let minor = 0.15;
        let t = Shape::Torus { center: [0.0, 0.0, 0.0], major, minor, rotation: identity_rot() };
        // Straight down onto the top of the tube.
        let h = t.intersect(&down(0.4, 0.0), 0.0, f64::INFINITY).unwrap();
        assert!((h.t - (10.0 - minor)).abs() < 1e-8);
        assert!((h.normal - Vec3::z()).norm() < 1e-6);
        // Through the hole.
        assert!(t.intersect(&down(0.0, 0.0), 0.0, f64::INFINITY).is_none());
        // Slanted: hit point is on the surface.
        let r = Ray { origin: Vec3::new(0.3, 0.2, 5.0), dir: Vec3::new(0.01, -0.02, -1.0).normalize() };
        let h = t.intersect(&r, 0.0, f64::INFINITY).unwrap();
        assert!(torus_sdf(major, minor, &r.at(h.t)).abs() < 1e-8);
    }
}
