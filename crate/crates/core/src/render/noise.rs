use crate::brdf::Vec3;
use crate::rng::mix64;

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = mix64(seed ^ mix64(x as u64 ^ mix64(y as u64 ^ mix64(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
pub fn value_noise(seed: u64, p: &Vec3) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let (bx, by, bz) = (base.x as i64, base.y as i64, base.z as i64);
    let (sx, sy, sz) = (smooth(f.x), smooth(f.y), smooth(f.z));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { sx } else { 1.0 - sx })
                    * (if dy == 1 { sy } else { 1.0 - sy })
                    * (if dz == 1 { sz } else { 1.0 - sz });
                acc += w * lattice(seed, bx + dx, by + dy, bz + dz);
            }
        }
    }
    acc
}
