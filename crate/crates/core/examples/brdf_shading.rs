//! Evaluates the reflectance model for a few materials and compares the
//! closed-form environment shading with a brute-force integral.

use photostereo::brdf::{brdf, sh, spherical, Material, Vec3};
use photostereo::lighting::shade_env;
use std::f64::consts::PI;

fn main() {
    let n = Vec3::z();
    let v = Vec3::z();
    let materials = [
        ("rough white plastic", Material::new([0.9, 0.9, 0.9], 0.9, 0.0)),
        ("glossy red plastic", Material::new([0.8, 0.1, 0.1], 0.25, 0.0)),
        ("brushed gold", Material::new([1.0, 0.78, 0.34], 0.4, 1.0)),
    ];
    println!("{:<22} {:>10} {:>10} {:>10}", "material", "0 deg", "30 deg", "60 deg");
    for (name, mat) in &materials {
        let vals: Vec<f64> = [0.0f64, 30.0, 60.0]
            .iter()
            .map(|t| {
                let l = spherical(t.to_radians(), 0.0);
                brdf(&n, &l, &v, mat)[0] * l.z
            })
            .collect();
        println!("{name:<22} {:>10.4} {:>10.4} {:>10.4}", vals[0], vals[1], vals[2]);
    }

    // sky-like environment: brighter from above
    let mut env = sh::constant([0.6, 0.65, 0.7]);
    env[3 * 2 + 2] += 0.3;
    let mat = Material::new([0.7, 0.7, 0.7], 1.0, 0.0);
    let normal = Vec3::new(0.3, 0.2, 1.0).normalize();
    let closed = shade_env(&normal, &mat, &env);
    let dirs = sh::fibonacci_sphere(20000);
    let mut brute = [0.0; 3];
    for l in &dirs {
        let c = l.dot(&normal);
        if c <= 0.0 {
            continue;
        }
        let f = brdf(&normal, l, &v, &mat);
        let li = sh::radiance(&env, l);
        for ch in 0..3 {
            brute[ch] += f[ch] * li[ch] * c * 4.0 * PI / dirs.len() as f64;
        }
    }
    println!("environment shading, closed form {:.4?} vs quadrature {:.4?}", closed, brute);
}
