//! Real spherical harmonics up to order 2 (nine basis functions).
//!
//! RGB coefficient sets are stored coefficient-major: entry `3 * i + c` is
//! channel `c` of basis function `i`, with `i` ordered
//! `(0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2)`.

use super::{Rgb, Vec3};
use std::f64::consts::PI;

pub const NUM_COEFFS: usize = 9;

/// Band index of each basis function.
pub const BAND: [usize; NUM_COEFFS] = [0, 1, 1, 1, 2, 2, 2, 2, 2];

/// Cosine-lobe convolution factors per band (clamped cosine kernel).
pub const COSINE_LOBE: [f64; 3] = [PI, 2.0 * PI / 3.0, PI / 4.0];

pub fn basis(d: &Vec3) -> [f64; NUM_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        0.282_094_791_773_878_14,
        0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079_2 * x * y,
        1.092_548_430_592_079_2 * y * z,
        0.315_391_565_252_520_05 * (3.0 * z * z - 1.0),
        1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (x * x - y * y),
    ]
}

/// Reconstructs `sum_i w_l(i) c_i Y_i(d)` with per-band weights.
pub fn eval_weighted(coeffs: &[f64], d: &Vec3, band_weight: [f64; 3]) -> Rgb {
    debug_assert_eq!(coeffs.len(), 3 * NUM_COEFFS);
    let y = basis(d);
    let mut out = [0.0; 3];
    for i in 0..NUM_COEFFS {
        let w = band_weight[BAND[i]] * y[i];
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * coeffs[3 * i + c];
        }
    }
    out
}

/// Radiance arriving from direction `d`.
pub fn radiance(coeffs: &[f64], d: &Vec3) -> Rgb {
    eval_weighted(coeffs, d, [1.0; 3])
}

/// Irradiance on a surface with normal `n`:
/// the integral of radiance times the clamped cosine over the hemisphere.
pub fn irradiance(coeffs: &[f64], n: &Vec3) -> Rgb {
    eval_weighted(coeffs, n, COSINE_LOBE)
}

/// Coefficients of a constant radiance field.
pub fn constant(rgb: Rgb) -> Vec<f64> {
    let mut c = vec![0.0; 3 * NUM_COEFFS];
    for ch in 0..3 {
        c[ch] = rgb[ch] / basis(&Vec3::z())[0];
    }
    c
}

/// `n` points spread evenly over the sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}
