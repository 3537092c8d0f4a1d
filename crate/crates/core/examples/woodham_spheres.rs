//! Renders a matte sphere under four directional lights and recovers its
//! normals with the per-pixel least-squares baseline.

use photostereo::brdf::{Material, Vec3};
use photostereo::lighting::LightingCondition;
use photostereo::metrics::{angular_errors, woodham_baseline};
use photostereo::render::geometry::Shape;
use photostereo::render::{render_hdr, MaterialCategory, Primitive, RenderConfig, SceneSpec};

fn main() -> photostereo::Result<()> {
    let dirs: Vec<Vec3> = [(0.4, 0.3, 1.0), (-0.5, 0.2, 1.0), (0.1, -0.6, 1.0), (-0.2, -0.1, 1.0)]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
    let spec = SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 0.9 },
            material: Material::new([0.75, 0.75, 0.75], 1.0, 0.0),
            category: MaterialCategory::Diffuse,
            noise: None,
        }],
        ground: None,
        lights: dirs.iter().map(|d| LightingCondition::directional(*d, 1.0)).collect(),
        scene_radius: 1.0,
        seed: 0,
    };
    let cfg = RenderConfig { resolution: 96, num_images: 4, ground: false, ..RenderConfig::default() };
    let (images, record) = render_hdr(&spec, &cfg)?;
    let est = woodham_baseline(&images, &dirs, &record.mask)?;
    let errors = angular_errors(&est, &record.normal, &record.mask)?;
    let lit: Vec<f64> = record
        .mask
        .indices()
        .iter()
        .zip(&errors)
        .filter(|(&p, _)| {
            let n = record.normal.at(p);
            dirs.iter().all(|l| l.x * n[0] as f64 + l.y * n[1] as f64 + l.z * n[2] as f64 > 0.05)
        })
        .map(|(_, &e)| e)
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("{} masked pixels, mean error {:.3} deg", errors.len(), mean(&errors));
    println!("{} pixels lit by every light, mean error {:.3} deg", lit.len(), mean(&lit));
    Ok(())
}
