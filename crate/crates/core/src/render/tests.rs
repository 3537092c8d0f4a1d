use super::*;
use crate::brdf::sh;
use crate::dataset::read_scene;
use geometry::identity_rot;

fn single(shape: Shape, mat: Material, lights: Vec<LightingCondition>) -> SceneSpec {
    SceneSpec {
        primitives: vec![Primitive { shape, material: mat, category: MaterialCategory::Diffuse, noise: None }],
        ground: None,
        lights,
        scene_radius: 1.0,
        seed: 0,
    }
}

fn cfg(resolution: usize, k: usize) -> RenderConfig {
    RenderConfig { resolution, num_images: k, ground: false, ..RenderConfig::default() }
}

fn lambertian() -> Material {
    Material::new([0.8, 0.8, 0.8], 1.0, 0.0)
}

#[test]
fn make_scene_is_deterministic_and_bounded() {
    let c = RenderConfig::default();
    let mut counts = [0usize; 3];
    let mut total = 0;
    for seed in 0..300 {
        let s = make_scene(seed, &c);
        assert_eq!(s, make_scene(seed, &c));
        assert!((1..=4).contains(&s.primitives.len()));
        for p in &s.primitives {
            assert!(p.shape.center().norm() + p.shape.bounding_radius() <= s.scene_radius + 1e-12);
            p.material.validate().unwrap();
            counts[MaterialCategory::ALL.iter().position(|&k| k == p.category).unwrap()] += 1;
            total += 1;
            let ((m0, m1), (r0, r1)) = p.category.ranges();
            assert!(p.material.metalness >= m0 && p.material.metalness <= m1);
            assert!(p.material.roughness >= r0 && p.material.roughness <= r1);
        }
        assert_eq!(s.lights.len(), c.num_images);
    }
    for n in counts {
        let f = n as f64 / total as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.1, "{counts:?}");
    }
}

#[test]
fn lighting_kinds_are_uniform_over_scenes() {
    let c = RenderConfig::default();
    let mut hist = [0usize; 5];
    for i in 0..500 {
        let s = make_scene(scene_seed(7, i), &c);
        assert!(s.lights.iter().all(|l| l.kind == s.lights[0].kind));
        hist[s.lights[0].kind.index()] += 1;
    }
    for n in hist {
        assert!((n as f64 / 500.0 - 0.2).abs() < 0.05, "{hist:?}");
    }
}

#[test]
fn cosine_ratio_on_lambertian_sphere() {
    let light = LightingCondition::directional(Vec3::z(), 1.0);
    let spec = single(Shape::Sphere { center: [0.0; 3], radius: 0.6 }, lambertian(), vec![light]);
    let top = spec.shade(&Vec3::new(0.0, 0.0, 0.6), &Vec3::z(), &lambertian(), 0, true).total();
    let n = Vec3::new(0.75f64.sqrt(), 0.0, 0.5);
    let side = spec.shade(&(n * 0.6), &n, &lambertian(), 0, true).total();
    let ratio = top[0] / side[0];
    assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");

    // Same law at rendered pixels.
    let (hdr, rec) = render_hdr(&spec, &cfg(64, 1)).unwrap();
    let center = spec.pixel_of(0.0, 0.0, 64, 64);
    let i0 = center.0 * 64 + center.1;
    let n0 = rec.normal.at(i0)[2] as f64;
    for i in rec.mask.indices() {
        let nz = rec.normal.at(i)[2] as f64;
        if nz > 0.3 {
            let r = (hdr[0].at(i0)[0] as f64 / n0) / (hdr[0].at(i)[0] as f64 / nz);
            assert!((r - 1.0).abs() < 0.02, "nz {nz} ratio {r}");
        }
    }
}

#[test]
fn center_pixel_normal_points_at_camera() {
    let probe = single(Shape::Sphere { center: [0.0; 3], radius: 0.5 }, lambertian(), vec![]);
    let ray = probe.camera_ray(20, 37, 64, 64);
    let c = [ray.origin.x, ray.origin.y, 0.0];
    let light = LightingCondition::directional(Vec3::z(), 1.0);
    let spec = single(Shape::Sphere { center: c, radius: 0.5 }, lambertian(), vec![light]);
    let rec = render_scene(&spec, &cfg(64, 1)).unwrap();
    let n = rec.normal.pixel(20, 37);
    assert!((n[0].abs() + n[1].abs() + (n[2] - 1.0).abs()) < 1e-6, "{n:?}");
}

#[test]
fn mask_is_hit_set_and_normals_unit() {
    let c = RenderConfig { ground: true, ..cfg(48, 2) };
    for seed in 0..5 {
        let spec = make_scene(seed, &c);
        let rec = render_scene(&spec, &c).unwrap();
        rec.validate().unwrap();
        for row in 0..48 {
            for col in 0..48 {
                let ray = spec.camera_ray(row, col, 48, 48);
                let hit = matches!(spec.intersect(&ray, 0.0, f64::INFINITY), Some(Surface::Object { .. }));
                assert_eq!(hit, rec.mask.get(row, col));
            }
        }
    }
}

/// Independent occlusion oracle: does the open segment p -> p + dist * dir
/// pass through the ball?
fn segment_hits_ball(p: &Vec3, dir: &Vec3, dist: f64, c: &Vec3, r: f64) -> bool {
    let t = (c - p).dot(dir).clamp(0.0, dist);
    (p + dir * t - c).norm() < r
}

#[test]
fn point_light_shadows_match_segment_oracle() {
    let surf = Shape::Sphere { center: [0.0; 3], radius: 0.5 };
    let blocker_c = Vec3::new(1.0, 0.0, 0.75);
    let blocker = Shape::Sphere { center: blocker_c.into(), radius: 0.15 };
    let mat = lambertian();
    let env = sh::constant([0.3; 3]);
    let mut rng = Rng::new(5);
    let mut shadowed = 0;
    for trial in 0..400 {
        let light_pos = if trial == 0 {
            Vec3::new(1.6, 0.0, 1.2)
        } else {
            Vec3::new(rng.range(0.8, 1.8), rng.range(-0.4, 0.4), rng.range(0.8, 1.4))
        };
        let mut light = LightingCondition::point(light_pos, 1.0, true);
        light.kind = LightKind::EnvPoint;
        light.env = Some(crate::lighting::EnvLight { sh: env.clone() });
        let mut spec = single(surf.clone(), mat, vec![light]);
        spec.primitives.push(Primitive {
            shape: blocker.clone(),
            material: mat,
            category: MaterialCategory::Diffuse,
            noise: None,
        });
        let n = Vec3::new(0.8, 0.0, 0.6);
        let p = n * 0.5;
        let with = spec.shade(&p, &n, &mat, 0, true);
        let without = spec.shade(&p, &n, &mat, 0, false);
        let to = light_pos - p;
        let occluded = segment_hits_ball(&p, &to.normalize(), to.norm(), &blocker_c, 0.15);
        assert_eq!(with.env, without.env);
        if occluded {
            shadowed += 1;
            assert_eq!(with.direct, [0.0; 3]);
        } else {
            assert_eq!(with.direct, without.direct);
        }
        assert!(without.direct[0] > 0.0);
        if trial == 0 {
            assert!(occluded);
        }
    }
    assert!(shadowed > 10);
}

#[test]
fn shadowed_fraction_grows_as_blocker_slides_into_the_beam() {
    // A thin slab facing the light slides sideways into the beam, so the
    // shadowed parts of the sphere form a nested sequence.
    let l = Vec3::new(1.0, 0.0, 1.0).normalize();
    let rotation = geometry::rot_from_axis_angle(Vec3::y(), std::f64::consts::FRAC_PI_4);
    let mut counts: Vec<usize> = Vec::new();
    for y in [1.3, 1.1, 0.9, 0.7, 0.5, 0.3, 0.1, 0.0] {
        let c = l * 2.0 + Vec3::new(0.0, y, 0.0);
        let mut spec =
            single(Shape::Sphere { center: [0.0; 3], radius: 0.5 }, lambertian(), vec![LightingCondition::directional(l, 1.0)]);
        spec.primitives.push(Primitive {
            shape: Shape::Box { center: c.into(), half_extents: [0.8, 0.6, 0.02], rotation },
            material: lambertian(),
            category: MaterialCategory::Diffuse,
            noise: None,
        });
        let (hdr, rec) = render_hdr(&spec, &cfg(64, 1)).unwrap();
        let mut shadowed = 0;
        for i in rec.mask.indices() {
            let n = Vec3::new(rec.normal.at(i)[0] as f64, rec.normal.at(i)[1] as f64, rec.normal.at(i)[2] as f64);
            let ray = spec.camera_ray(i / 64, i % 64, 64, 64);
            let on_big = matches!(spec.intersect(&ray, 0.0, f64::INFINITY), Some(Surface::Object { index: 0, .. }));
            if on_big && n.dot(&l) > 0.05 && hdr[0].at(i)[0] == 0.0 {
                shadowed += 1;
            }
        }
        if let Some(&last) = counts.last() {
            assert!(shadowed >= last, "{counts:?} then {shadowed}");
        }
        counts.push(shadowed);
    }
    assert_eq!(counts[0], 0);
    assert!(*counts.last().unwrap() > 100, "{counts:?}");
}

#[test]
fn auto_expose_examples() {
    let mask = Mask::ones(4, 4);
    let (out, e) = auto_expose(&Map::filled(4, 4, &[2.0, 2.0, 2.0]), &mask, 0.9);
    assert!((e.gain - 0.45).abs() < 1e-12 && !e.warning);
    assert!(out.data.iter().all(|&v| (v - 0.9).abs() < 1e-6));

    let mut rng = Rng::new(1);
    let base = Map { height: 10, width: 10, channels: 3, data: (0..300).map(|_| rng.range(0.1, 3.0) as f32).collect() };
    let doubled = Map { data: base.data.iter().map(|v| v * 2.0).collect(), ..base.clone() };
    let m = Mask::ones(10, 10);
    assert_eq!(auto_expose(&base, &m, 0.9).0, auto_expose(&doubled, &m, 0.9).0);

    let (zero, e) = auto_expose(&Map::zeros(3, 3, 3), &Mask::ones(3, 3), 0.9);
    assert!(e.warning && e.gain == 1.0 && zero.data.iter().all(|&v| v == 0.0));
}

#[test]
fn hot_pixels_are_clipped_without_crushing_the_rest() {
    let (h, w) = (50, 40);
    let mut im = Map::filled(h, w, &[1.0, 1.0, 1.0]);
    let mut rng = Rng::new(2);
    let hot = rng.choose_distinct(h * w, h * w / 100);
    for &i in &hot {
        im.at_mut(i).iter_mut().for_each(|v| *v = 100.0);
    }
    let (out, _) = auto_expose(&im, &Mask::ones(h, w), 0.9);
    for i in 0..h * w {
        let v = out.at(i)[0];
        if hot.contains(&i) {
            assert_eq!(v, 1.0);
        } else {
            assert!(v >= 0.3 * 0.9, "{v}");
        }
    }
}

#[test]
fn percentile_matches_linear_interpolation() {
    assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), Some(2.5));
    assert_eq!(percentile(&[5.0], 98.0), Some(5.0));
    assert_eq!(percentile(&[], 98.0), None);
    assert_eq!(percentile(&[0.0, 10.0], 98.0), Some(9.8));
}

#[test]
fn dataset_generation_is_loadable_and_deterministic() {
    let c = RenderConfig { resolution: 32, num_images: 4, seed: 11, ..RenderConfig::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_reference_dataset(4, &c, a.path()).unwrap();
    generate_reference_dataset(4, &c, b.path()).unwrap();
    for i in 0..4 {
        let name = format!("scene_{i:05}");
        let rec = read_scene(&a.path().join(&name)).unwrap();
        assert_eq!(rec.num_images(), 4);
        for f in ["normal.f32", "basecolor.f32", "roughness.f32", "metalness.f32", "img_000.png"] {
            let x = std::fs::read(a.path().join(&name).join(f)).unwrap();
            let y = std::fs::read(b.path().join(&name).join(f)).unwrap();
            assert_eq!(x, y, "{name}/{f}");
        }
    }
}

#[test]
fn empty_scene_and_bad_config_rejected() {
    let mut spec = single(Shape::Sphere { center: [0.0; 3], radius: 0.5 }, lambertian(), vec![]);
    spec.primitives.clear();
    assert!(render_scene(&spec, &cfg(32, 0)).is_err());
    assert!(render_scene(&spec, &cfg(32, 1)).is_err());
    let bad: std::result::Result<RenderConfig, _> = serde_json::from_str(r#"{"resoluton": 64}"#);
    assert!(bad.is_err());
}

#[test]
fn torus_and_box_scenes_render() {
    let mat = Material::new([0.5, 0.6, 0.7], 0.3, 0.0);
    let light = LightingCondition::directional(Vec3::new(0.2, 0.3, 1.0), 1.0);
    let torus = Shape::Torus { center: [0.0; 3], major: 0.4, minor: 0.15, rotation: identity_rot() };
    let rec = render_scene(&single(torus, mat, vec![light.clone()]), &cfg(32, 1)).unwrap();
    rec.validate().unwrap();
    assert!(rec.mask.count() > 50);
    // The hole of the torus is background.
    assert!(!rec.mask.get(16, 16));
}
