//! Precomputed tables for the split-sum environment specular term.

use super::{smith_g1, Vec3, MIN_ALPHA};
use std::f64::consts::PI;
use std::sync::OnceLock;

const DFG_N: usize = 32;
const DFG_SAMPLES: usize = 512;
const PREFILTER_N: usize = 64;
const PREFILTER_SAMPLES: usize = 2048;

fn hammersley(i: usize, n: usize) -> (f64, f64) {
    let r = (i as u32).reverse_bits() as f64 / 4_294_967_296.0;
    ((i as f64 + 0.5) / n as f64, r)
}

/// GGX-distributed half vector around +z for a uniform pair `(u1, u2)`.
fn sample_half(u1: f64, u2: f64, alpha: f64) -> Vec3 {
    let a2 = alpha * alpha;
    let cos_t = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).sqrt();
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

fn grid(i: usize, n: usize, lo: f64) -> f64 {
    (i as f64 / (n - 1) as f64).max(lo)
}

fn dfg_table() -> &'static Vec<(f64, f64)> {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(DFG_N * DFG_N);
        for ia in 0..DFG_N {
            let alpha = grid(ia, DFG_N, MIN_ALPHA);
            for iv in 0..DFG_N {
                let nv = grid(iv, DFG_N, 1e-3);
                let v = Vec3::new((1.0 - nv * nv).sqrt(), 0.0, nv);
                let (mut a, mut b) = (0.0, 0.0);
                for s in 0..DFG_SAMPLES {
                    let (u1, u2) = hammersley(s, DFG_SAMPLES);
                    let h = sample_half(u1, u2, alpha);
                    let vh = v.dot(&h);
                    let l = 2.0 * vh * h - v;
                    if l.z <= 0.0 || vh <= 0.0 {
                        continue;
                    }
                    let g = smith_g1(l.z, alpha) * smith_g1(nv, alpha) * vh / (h.z * nv);
                    let fc = (1.0 - vh).powi(5);
                    a += (1.0 - fc) * g;
                    b += fc * g;
                }
                t.push((a / DFG_SAMPLES as f64, b / DFG_SAMPLES as f64));
            }
        }
        t
    })
}

fn lerp_index(x: f64, n: usize) -> (usize, f64) {
    let p = x.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (p.floor() as usize).min(n - 2);
    (i, p - i as f64)
}

/// Scale and bias `(A, B)` of the directional specular albedo: for a lobe
/// with reflectance `f0` the albedo is `f0 * A + B`.
pub fn dfg(n_dot_v: f64, alpha: f64) -> (f64, f64) {
    let t = dfg_table();
    let (ia, fa) = lerp_index(alpha, DFG_N);
    let (iv, fv) = lerp_index(n_dot_v, DFG_N);
    let at = |a: usize, v: usize| t[a * DFG_N + v];
    let mix = |p: (f64, f64), q: (f64, f64), f: f64| (p.0 + (q.0 - p.0) * f, p.1 + (q.1 - p.1) * f);
    let lo = mix(at(ia, iv), at(ia, iv + 1), fv);
    let hi = mix(at(ia + 1, iv), at(ia + 1, iv + 1), fv);
    mix(lo, hi, fa)
}

fn prefilter_table() -> &'static Vec<[f64; 3]> {
    static TABLE: OnceLock<Vec<[f64; 3]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..PREFILTER_N)
            .map(|ia| {
                let alpha = grid(ia, PREFILTER_N, MIN_ALPHA);
                // At normal incidence the reflected-direction density of the
                // GGX lobe is proportional to D/4; weighting by n.l gives the
                // prefilter kernel, and band l is attenuated by its mean
                // Legendre polynomial.
                let (mut w, mut p1, mut p2) = (0.0, 0.0, 0.0);
                for s in 0..PREFILTER_SAMPLES {
                    let (u1, u2) = hammersley(s, PREFILTER_SAMPLES);
                    let h = sample_half(u1, u2, alpha);
                    let c = 2.0 * h.z * h.z - 1.0;
                    if c <= 0.0 {
                        continue;
                    }
                    w += c;
                    p1 += c * c;
                    p2 += c * 0.5 * (3.0 * c * c - 1.0);
                }
                [1.0, p1 / w, p2 / w]
            })
            .collect()
    })
}

/// Per-band attenuation of an SH radiance field when prefiltered by the
/// GGX lobe of width `alpha`.
pub fn prefilter_attenuation(alpha: f64) -> [f64; 3] {
    let t = prefilter_table();
    let (i, f) = lerp_index(alpha, PREFILTER_N);
    [0, 1, 2].map(|b| t[i][b] + (t[i + 1][b] - t[i][b]) * f)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dfg_is_bounded_and_smooth_surfaces_reflect_everything() {
        for &(nv, a) in &[(1.0, 0.001), (0.5, 0.1), (0.2, 0.7), (0.9, 1.0)] {
            let (x, y) = dfg(nv, a);
            assert!(x >= 0.0 && y >= 0.0 && x + y <= 1.0 + 1e-9, "{nv} {a} {x} {y}");
        }
        let (x, y) = dfg(1.0, MIN_ALPHA);
        assert!((x + y - 1.0).abs() < 1e-3);
        assert!(y < 1e-6);
    }

    #[test]
    fn attenuation_decreases_with_roughness() {
        let s = prefilter_attenuation(0.01);
        let r = prefilter_attenuation(0.8);
        assert!((s[1] - 1.0).abs() < 0.02 && (s[2] - 1.0).abs() < 0.05, "{s:?}");
        assert!(r[1] < s[1] && r[2] < r[1] && r[2] > -0.5);
    }
}
