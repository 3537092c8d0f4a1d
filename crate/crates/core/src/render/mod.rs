//! Procedural scene sampling and the reference ray-cast renderer.
//!
//! The camera is orthographic, looking down `-z`, and its image covers
//! `[-1.05 R, 1.05 R]^2` for scene radius `R`. World and camera frames
//! coincide: `x` right, `y` up, `z` toward the viewer. Image rows run
//! top to bottom, so row 0 is at `y = +1.05 R`.

pub mod geometry;
mod noise;

pub use geometry::{Hit, Ray, Shape};
pub use noise::value_noise;

use crate::brdf::{Material, Vec3};
use crate::dataset::{write_scene, Exposure, SceneMeta, SceneRecord};
use crate::image::{Map, Mask};
use crate::lighting::{sample_lighting, shade_point, LightKind, LightingCondition, Shading};
use crate::rng::{derive_seed, Rng};
use crate::{Error, Result};
use geometry::{plane_hit, rot_from_axis_angle, RAY_EPS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Half-width of the image footprint relative to the scene radius.
pub const VIEW_EXTENT: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialCategory {
    Diffuse,
    Specular,
    Metallic,
}

impl MaterialCategory {
    pub const ALL: [MaterialCategory; 3] = [MaterialCategory::Diffuse, MaterialCategory::Specular, MaterialCategory::Metallic];

    /// `(metalness range, roughness range)` of the category.
    pub fn ranges(self) -> ((f64, f64), (f64, f64)) {
        match self {
            MaterialCategory::Diffuse => ((0.0, 0.0), (0.6, 1.0)),
            MaterialCategory::Specular => ((0.0, 0.0), (0.05, 0.4)),
            MaterialCategory::Metallic => ((0.7, 1.0), (0.1, 0.6)),
        }
    }

    pub fn sample(self, rng: &mut Rng) -> Material {
        let ((m0, m1), (r0, r1)) = self.ranges();
        let basecolor = [0, 1, 2].map(|_| rng.range(0.05, 1.0));
        Material::new(basecolor, rng.range(r0, r1), if m1 > m0 { rng.range(m0, m1) } else { m0 })
    }
}

/// Spatial modulation of a primitive's basecolor and roughness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    pub frequency: f64,
    /// Basecolor is scaled by `1 - color_amp * noise`.
    pub color_amp: f64,
    /// Roughness is offset by `roughness_amp * (noise - 0.5)`.
    pub roughness_amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
    pub category: MaterialCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl Primitive {
    pub fn material_at(&self, p: &Vec3) -> Material {
        let Some(nz) = &self.noise else { return self.material };
        let v = value_noise(nz.seed, &(p * nz.frequency));
        let mut m = self.material;
        for c in m.basecolor.iter_mut() {
            *c = (*c * (1.0 - nz.color_amp * v)).clamp(0.0, 1.0);
        }
        m.roughness = (m.roughness + nz.roughness_amp * (v - 0.5)).clamp(0.0, 1.0);
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub height: f64,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<Ground>,
    /// One lighting condition per rendered image.
    pub lights: Vec<LightingCondition>,
    pub scene_radius: f64,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}
fn default_resolution() -> usize {
    64
}
fn default_k() -> usize {
    6
}
fn default_percentile() -> f64 {
    98.0
}
fn default_target() -> f64 {
    0.9
}
fn default_max_primitives() -> usize {
    4
}
fn default_radius() -> f64 {
    1.0
}
fn default_noise_prob() -> f64 {
    0.5
}

/// Rendering and scene-sampling options. Also the JSON schema of the
/// `generate` command's config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_k")]
    pub num_images: usize,
    /// Lighting kind of every image. When absent each scene draws one kind
    /// uniformly from all five and uses it for all its images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<LightKind>>,
    #[serde(default = "default_true")]
    pub shadows: bool,
    #[serde(default = "default_true")]
    pub ground: bool,
    /// Count ground pixels as foreground.
    #[serde(default)]
    pub ground_in_mask: bool,
    #[serde(default = "default_percentile")]
    pub exposure_percentile: f64,
    #[serde(default = "default_target")]
    pub exposure_target: f64,
    #[serde(default = "default_max_primitives")]
    pub max_primitives: usize,
    #[serde(default = "default_noise_prob")]
    pub noise_probability: f64,
    #[serde(default = "default_radius")]
    pub scene_radius: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.resolution == 0 {
            return bad("resolution must be positive");
        }
        if self.num_images == 0 {
            return bad("num_images must be at least 1");
        }
        if let Some(k) = &self.kinds {
            if k.len() != self.num_images {
                return bad("kinds must list one lighting kind per image");
            }
        }
        if !(self.exposure_percentile > 0.0 && self.exposure_percentile <= 100.0) {
            return bad("exposure_percentile must be in (0, 100]");
        }
        if !(self.exposure_target > 0.0 && self.exposure_target <= 1.0) {
            return bad("exposure_target must be in (0, 1]");
        }
        if self.max_primitives == 0 || self.max_primitives > 4 {
            return bad("max_primitives must be in 1..=4");
        }
        if !(self.scene_radius > 0.0) {
            return bad("scene_radius must be positive");
        }
        Ok(())
    }
}

fn random_axis(rng: &mut Rng) -> Vec3 {
    Vec3::new(rng.normal(), rng.normal(), rng.normal())
}

/// Center inside the ball of radius `max_dist`, biased toward the view axis
/// so objects overlap.
fn random_center(rng: &mut Rng, max_dist: f64) -> [f64; 3] {
    let d = random_axis(rng).normalize() * (max_dist.max(0.0) * rng.uniform().sqrt());
    [d.x, d.y, d.z]
}

fn sample_shape(rng: &mut Rng, r: f64) -> Shape {
    match rng.below(3) {
        0 => {
            let radius = r * rng.range(0.25, 0.6);
            Shape::Sphere { center: random_center(rng, r - radius), radius }
        }
        1 => {
            let half = [0, 1, 2].map(|_| r * rng.range(0.12, 0.38));
            let bound = Vec3::from(half).norm();
            let rotation = rot_from_axis_angle(random_axis(rng), rng.range(0.0, std::f64::consts::PI));
            Shape::Box { center: random_center(rng, r - bound), half_extents: half, rotation }
        }
        _ => {
            let major = r * rng.range(0.25, 0.45);
            let minor = major * rng.range(0.25, 0.5);
            let rotation = rot_from_axis_angle(random_axis(rng), rng.range(0.0, std::f64::consts::PI));
            Shape::Torus { center: random_center(rng, r - major - minor), major, minor, rotation }
        }
    }
}

/// Samples a scene: 1 to `max_primitives` objects inside the scene-radius
/// sphere, a ground plane if enabled, and one light per image.
pub fn make_scene(seed: u64, config: &RenderConfig) -> SceneSpec {
    let r = config.scene_radius;
    let mut rng = Rng::derived(seed, 1);
    let count = rng.int_inclusive(1, config.max_primitives);
    let primitives = (0..count)
        .map(|_| {
            let shape = sample_shape(&mut rng, r);
            let category = MaterialCategory::ALL[rng.below(3)];
            let material = category.sample(&mut rng);
            let noise = (rng.uniform() < config.noise_probability).then(|| NoiseSpec {
                seed: rng.next_u64(),
                frequency: rng.range(2.0, 8.0) / r,
                color_amp: rng.range(0.2, 0.6),
                roughness_amp: rng.range(0.0, 0.2),
            });
            Primitive { shape, material, category, noise }
        })
        .collect();
    let ground_material = MaterialCategory::Diffuse.sample(&mut rng);
    let ground = config.ground.then_some(Ground { height: -r, material: ground_material });
    let kinds = match &config.kinds {
        Some(k) => k.clone(),
        None => vec![LightKind::ALL[rng.below(5)]; config.num_images],
    };
    let lights = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| sample_lighting(derive_seed(seed, 100 + k as u64), kind, r))
        .collect();
    SceneSpec { primitives, ground, lights, scene_radius: r, seed }
}

/// What a camera ray sees first.
#[derive(Debug, Clone, Copy)]
pub enum Surface {
    Object { index: usize, hit: Hit },
    Ground { hit: Hit },
}

impl SceneSpec {
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Surface> {
        let mut best: Option<Surface> = None;
        let mut t_best = t_max;
        for (index, p) in self.primitives.iter().enumerate() {
            if let Some(hit) = p.shape.intersect(ray, t_min, t_best) {
                t_best = hit.t;
                best = Some(Surface::Object { index, hit });
            }
        }
        if let Some(g) = &self.ground {
            if let Some(hit) = plane_hit(g.height, ray, t_min, t_best) {
                best = Some(Surface::Ground { hit });
            }
        }
        best
    }

    /// True if nothing blocks the segment from `p` along `dir` up to `dist`.
    pub fn unoccluded(&self, p: &Vec3, dir: &Vec3, dist: f64) -> bool {
        let ray = Ray { origin: *p, dir: *dir };
        self.intersect(&ray, 0.0, dist).is_none()
    }

    pub fn camera_ray(&self, row: usize, col: usize, height: usize, width: usize) -> Ray {
        let e = VIEW_EXTENT * self.scene_radius;
        let x = -e + (col as f64 + 0.5) * (2.0 * e / width as f64);
        let y = e - (row as f64 + 0.5) * (2.0 * e / height as f64);
        Ray { origin: Vec3::new(x, y, 10.0 * self.scene_radius), dir: -Vec3::z() }
    }

    /// Pixel whose center is closest to the world-space point `(x, y)`.
    pub fn pixel_of(&self, x: f64, y: f64, height: usize, width: usize) -> (usize, usize) {
        let e = VIEW_EXTENT * self.scene_radius;
        let col = ((x + e) / (2.0 * e) * width as f64 - 0.5).round();
        let row = ((e - y) / (2.0 * e) * height as f64 - 0.5).round();
        (row.clamp(0.0, height as f64 - 1.0) as usize, col.clamp(0.0, width as f64 - 1.0) as usize)
    }

    /// Shading of one surface point under light `k`.
    pub fn shade(&self, p: &Vec3, n: &Vec3, mat: &Material, k: usize, shadows: bool) -> Shading {
        let origin = p + n * RAY_EPS * self.scene_radius.max(1.0);
        let visible = |dir: &Vec3, dist: f64| !shadows || self.unoccluded(&origin, dir, dist);
        shade_point(n, p, mat, &self.lights[k], &visible)
    }
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of `values`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    Some(if i + 1 < v.len() { v[i] + (v[i + 1] - v[i]) * f } else { v[i] })
}

/// Gain mapping the `percentile` of the masked channel values of `images`
/// to `target`. Falls back to gain 1 with the warning flag set when that
/// percentile is zero.
pub fn exposure_gain(images: &[Map], mask: &Mask, percentile_p: f64, target: f64) -> Exposure {
    let idx = mask.indices();
    let values: Vec<f64> =
        images.iter().flat_map(|im| idx.iter().flat_map(move |&i| im.at(i).iter().map(|&v| v as f64))).collect();
    let level = percentile(&values, percentile_p).unwrap_or(0.0);
    let (gain, warning) = if level > 0.0 && level.is_finite() { (target / level, false) } else { (1.0, true) };
    Exposure { gain, percentile: percentile_p, target, warning }
}

/// Exposes one HDR image: a single gain puts the 98th percentile of masked
/// radiance at `target`, then values are clipped to `[0, 1]`.
pub fn auto_expose(hdr: &Map, mask: &Mask, target: f64) -> (Map, Exposure) {
    let mut out = vec![hdr.clone()];
    let e = auto_expose_stack(&mut out, mask, default_percentile(), target);
    (out.pop().unwrap(), e)
}

/// Exposes a stack of images with one shared gain, preserving their
/// relative brightness.
pub fn auto_expose_stack(images: &mut [Map], mask: &Mask, percentile_p: f64, target: f64) -> Exposure {
    let e = exposure_gain(images, mask, percentile_p, target);
    for im in images.iter_mut() {
        for v in im.data.iter_mut() {
            *v = ((*v as f64) * e.gain).clamp(0.0, 1.0) as f32;
        }
    }
    e
}

/// Per-pixel result of ray casting before lighting.
struct GBuffer {
    mask: Mask,
    surfaces: Vec<Option<(Vec3, Vec3, Material)>>,
    normal: Map,
    basecolor: Map,
    roughness: Map,
    metalness: Map,
}

fn cast(spec: &SceneSpec, config: &RenderConfig) -> GBuffer {
    let (h, w) = (config.resolution, config.resolution);
    let mut g = GBuffer {
        mask: Mask::zeros(h, w),
        surfaces: vec![None; h * w],
        normal: Map::zeros(h, w, 3),
        basecolor: Map::zeros(h, w, 3),
        roughness: Map::zeros(h, w, 1),
        metalness: Map::zeros(h, w, 1),
    };
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let ray = spec.camera_ray(row, col, h, w);
            let (hit, mat, fg) = match spec.intersect(&ray, 0.0, f64::INFINITY) {
                None => continue,
                Some(Surface::Object { index, hit }) => {
                    (hit, spec.primitives[index].material_at(&ray.at(hit.t)), true)
                }
                Some(Surface::Ground { hit }) => {
                    let m = spec.ground.as_ref().map(|gr| gr.material).unwrap_or(Material::new([0.5; 3], 1.0, 0.0));
                    (hit, m, config.ground_in_mask)
                }
            };
            let p = ray.at(hit.t);
            g.surfaces[i] = Some((p, hit.normal, mat));
            if fg {
                g.mask.data[i] = true;
                let n = hit.normal;
                g.normal.at_mut(i).copy_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
                g.basecolor.at_mut(i).copy_from_slice(&mat.basecolor.map(|c| c as f32));
                g.roughness.at_mut(i)[0] = mat.roughness as f32;
                g.metalness.at_mut(i)[0] = mat.metalness as f32;
            }
        }
    }
    g
}

/// Linear radiance of every image plus the ground-truth maps, before
/// exposure. Useful for exact shading comparisons.
pub fn render_hdr(spec: &SceneSpec, config: &RenderConfig) -> Result<(Vec<Map>, SceneRecord)> {
    config.validate()?;
    if spec.primitives.is_empty() {
        return Err(Error::Config("scene has no primitives".into()));
    }
    if spec.lights.len() != config.num_images {
        return Err(Error::Config(format!(
            "scene has {} lights but config asks for {} images",
            spec.lights.len(),
            config.num_images
        )));
    }
    let (h, w) = (config.resolution, config.resolution);
    let g = cast(spec, config);
    let mut images = vec![Map::zeros(h, w, 3); config.num_images];
    for (i, s) in g.surfaces.iter().enumerate() {
        let Some((p, n, mat)) = s else { continue };
        for (k, im) in images.iter_mut().enumerate() {
            let rad = spec.shade(p, n, mat, k, config.shadows).total();
            im.at_mut(i).copy_from_slice(&rad.map(|v| v as f32));
        }
    }
    let record = SceneRecord {
        images: images.clone(),
        mask: g.mask,
        normal: g.normal,
        basecolor: g.basecolor,
        roughness: g.roughness,
        metalness: g.metalness,
        meta: SceneMeta { lighting: spec.lights.clone(), seed: spec.seed, scene_radius: spec.scene_radius, exposure: None },
    };
    Ok((images, record))
}

/// Renders all images of `spec` and exposes them with one shared gain.
pub fn render_scene(spec: &SceneSpec, config: &RenderConfig) -> Result<SceneRecord> {
    let (_, mut rec) = render_hdr(spec, config)?;
    let e = auto_expose_stack(&mut rec.images, &rec.mask, config.exposure_percentile, config.exposure_target);
    rec.meta.exposure = Some(e);
    Ok(rec)
}

/// Top-level `dataset.json` written next to the scene directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_scenes: usize,
    pub config: RenderConfig,
    pub scenes: Vec<String>,
    pub kinds: Vec<LightKind>,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

/// Seed of scene `i` of a dataset generated with `seed`.
pub fn scene_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, 0x5ce4e000 + i as u64)
}

/// Samples, renders and writes `n_scenes` scenes into `out_dir`.
pub fn generate_reference_dataset(n_scenes: usize, config: &RenderConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut scenes = Vec::with_capacity(n_scenes);
    let mut kinds = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let spec = make_scene(scene_seed(config.seed, i), config);
        let rec = render_scene(&spec, config)?;
        let name = format!("scene_{i:05}");
        write_scene(&rec, &out_dir.join(&name))?;
        kinds.push(spec.lights[0].kind);
        scenes.push(name);
    }
    let man = DatasetManifest { num_scenes: n_scenes, config: config.clone(), scenes, kinds };
    let path = out_dir.join(DATASET_MANIFEST);
    let json = serde_json::to_vec_pretty(&man).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests;
