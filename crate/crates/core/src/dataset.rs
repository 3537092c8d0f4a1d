//! On-disk scene format.
//!
//! A scene directory holds `meta.json`, one 16-bit RGB PNG per image
//! (`img_000.png`, ...), an 8-bit grayscale `mask.png`, and the ground-truth
//! maps as raw little-endian `f32` files in row-major order. Image values in
//! `[0, 1]` are stored as `round(v * 65535)` with ties to even.

use crate::image::{Map, Mask};
use crate::lighting::LightingCondition;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "meta.json";
const NORMAL_TOL: f32 = 1e-5;

/// Exposure applied when the scene was rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub gain: f64,
    pub percentile: f64,
    pub target: f64,
    /// Set when the radiance was all zero and the gain fell back to 1.
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub lighting: Vec<LightingCondition>,
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub scene_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<Exposure>,
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub images: Vec<Map>,
    pub mask: Mask,
    pub normal: Map,
    pub basecolor: Map,
    pub roughness: Map,
    pub metalness: Map,
    pub meta: SceneMeta,
}

impl SceneRecord {
    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let bad = |m: String| Err(Error::Invariant(m));
        if self.images.is_empty() {
            return bad("scene has no images".into());
        }
        if self.mask.data.len() != h * w {
            return bad("mask size does not match its dimensions".into());
        }
        for (k, im) in self.images.iter().enumerate() {
            if im.height != h || im.width != w || im.channels != 3 || im.data.len() != h * w * 3 {
                return bad(format!("image {k} is {}x{}x{}, expected {h}x{w}x3", im.height, im.width, im.channels));
            }
            if im.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("image {k} has negative or non-finite values"));
            }
        }
        for (name, m, c) in [
            ("normal", &self.normal, 3),
            ("basecolor", &self.basecolor, 3),
            ("roughness", &self.roughness, 1),
            ("metalness", &self.metalness, 1),
        ] {
            if m.height != h || m.width != w || m.channels != c || m.data.len() != h * w * c {
                return bad(format!("{name} map has wrong shape"));
            }
            if name != "normal" && m.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("{name} values outside [0,1]"));
            }
        }
        for i in self.mask.indices() {
            let n = self.normal.at(i);
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !((norm - 1.0).abs() <= NORMAL_TOL) {
                return bad(format!("masked normal at pixel ({}, {}) has norm {norm}", i / w, i % w));
            }
        }
        if self.meta.lighting.len() != self.images.len() {
            return bad(format!(
                "{} lighting descriptors for {} images",
                self.meta.lighting.len(),
                self.images.len()
            ));
        }
        for l in &self.meta.lighting {
            l.validate(self.meta.scene_radius)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Files {
    pub images: Vec<String>,
    pub mask: String,
    pub normal: String,
    pub basecolor: String,
    pub roughness: String,
    pub metalness: String,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub resolution: [usize; 2],
    pub num_images: usize,
    pub lighting: Vec<LightingCondition>,
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub scene_radius: f64,
    pub files: Files,
    pub dtype_gt: String,
    /// Shape of every ground-truth file, `[H, W, C]`.
    pub shapes: BTreeMap<String, [usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<Exposure>,
    /// SHA-256 of each file, hex encoded. Optional for readers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checksums: BTreeMap<String, String>,
}

/// `round(v * 65535)` with ties to even, clipped to the 16-bit range.
pub fn quantize16(v: f32) -> u16 {
    let x = (v as f64 * 65535.0).round_ties_even();
    x.clamp(0.0, 65535.0) as u16
}

pub fn dequantize16(q: u16) -> f32 {
    (q as f64 / 65535.0) as f32
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn png_bytes(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, raw: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let encode_err = |e: png::EncodingError| Error::Invariant(format!("png encoding failed: {e}"));
        let mut writer = enc.write_header().map_err(encode_err)?;
        writer.write_image_data(raw).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

/// 16-bit RGB PNG encoding of an image with values in `[0, 1]`.
pub fn encode_png16(im: &Map) -> Result<Vec<u8>> {
    let raw: Vec<u8> = im.data.iter().flat_map(|&v| quantize16(v).to_be_bytes()).collect();
    png_bytes(im.width, im.height, png::ColorType::Rgb, png::BitDepth::Sixteen, &raw)
}

/// 8-bit PNG of a 1- or 3-channel map with values in `[0, 1]`.
pub fn encode_png8(im: &Map) -> Result<Vec<u8>> {
    let color = match im.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Shape(format!("cannot store {c} channels as png"))),
    };
    let raw: Vec<u8> = im.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    png_bytes(im.width, im.height, color, png::BitDepth::Eight, &raw)
}

fn mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    png_bytes(mask.width, mask.height, png::ColorType::Grayscale, png::BitDepth::Eight, &raw)
}

pub fn f32_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `record` into `dir` (created if needed) and returns the path of
/// `meta.json`. The record is validated before anything is written.
pub fn write_scene(record: &SceneRecord, dir: &Path) -> Result<PathBuf> {
    record.validate()?;
    let (h, w) = (record.height(), record.width());

    // Encode everything first so an encoding failure leaves no files behind.
    let mut outputs: Vec<(String, Vec<u8>)> = Vec::new();
    let mut image_names = Vec::new();
    for (k, im) in record.images.iter().enumerate() {
        let name = format!("img_{k:03}.png");
        outputs.push((name.clone(), encode_png16(im)?));
        image_names.push(name);
    }
    outputs.push(("mask.png".into(), mask_png(&record.mask)?));
    let mut shapes = BTreeMap::new();
    for (key, m) in [
        ("normal", &record.normal),
        ("basecolor", &record.basecolor),
        ("roughness", &record.roughness),
        ("metalness", &record.metalness),
    ] {
        outputs.push((format!("{key}.f32"), f32_le_bytes(&m.data)));
        shapes.insert(key.to_string(), [h, w, m.channels]);
    }
    let checksums = outputs.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect();
    let manifest = Manifest {
        version: FORMAT_VERSION,
        resolution: [h, w],
        num_images: record.images.len(),
        lighting: record.meta.lighting.clone(),
        seed: record.meta.seed,
        scene_radius: record.meta.scene_radius,
        files: Files {
            images: image_names,
            mask: "mask.png".into(),
            normal: "normal.f32".into(),
            basecolor: "basecolor.f32".into(),
            roughness: "roughness.f32".into(),
            metalness: "metalness.f32".into(),
        },
        dtype_gt: "f32le".into(),
        shapes,
        exposure: record.meta.exposure.clone(),
        checksums,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in &outputs {
        write_file(&dir.join(name), bytes)?;
    }
    let path = dir.join(MANIFEST);
    write_file(&path, &json)?;
    Ok(path)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>)> {
    let corrupt = |e: png::DecodingError| Error::corrupt(path, e.to_string());
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(corrupt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = read_bytes(&path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path, source })
}

/// Reads a scene directory written by [`write_scene`] (or any producer of
/// the same format) and validates it.
pub fn read_scene(dir: &Path) -> Result<SceneRecord> {
    let man = read_manifest(dir)?;
    let mpath = dir.join(MANIFEST);
    if man.version != FORMAT_VERSION {
        return Err(Error::corrupt(&mpath, format!("unsupported format version {}", man.version)));
    }
    if man.dtype_gt != "f32le" {
        return Err(Error::corrupt(&mpath, format!("unsupported dtype_gt {:?}", man.dtype_gt)));
    }
    if man.files.images.len() != man.num_images {
        return Err(Error::corrupt(
            &mpath,
            format!("num_images is {} but {} image files are listed", man.num_images, man.files.images.len()),
        ));
    }
    let [h, w] = man.resolution;
    let load = |name: &str| -> Result<(PathBuf, Vec<u8>)> {
        let path = dir.join(name);
        let bytes = read_bytes(&path)?;
        if let Some(want) = man.checksums.get(name) {
            if *want != sha256_hex(&bytes) {
                return Err(Error::Checksum(path));
            }
        }
        Ok((path, bytes))
    };

    // Check presence of every file up front so the first error names it.
    for name in man.files.images.iter().chain([
        &man.files.mask,
        &man.files.normal,
        &man.files.basecolor,
        &man.files.roughness,
        &man.files.metalness,
    ]) {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }

    let mut images = Vec::with_capacity(man.num_images);
    for name in &man.files.images {
        let (path, bytes) = load(name)?;
        let (info, buf) = decode_png(&path, &bytes)?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
            return Err(Error::corrupt(&path, "expected 16-bit RGB png"));
        }
        if (info.height as usize, info.width as usize) != (h, w) {
            return Err(Error::Shape(format!(
                "{} is {}x{}, manifest says {h}x{w}",
                path.display(),
                info.height,
                info.width
            )));
        }
        let data = buf.chunks_exact(2).map(|b| dequantize16(u16::from_be_bytes([b[0], b[1]]))).collect();
        images.push(Map { height: h, width: w, channels: 3, data });
    }

    let (path, bytes) = load(&man.files.mask)?;
    let (info, buf) = decode_png(&path, &bytes)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::corrupt(&path, "expected 8-bit grayscale mask"));
    }
    if (info.height as usize, info.width as usize) != (h, w) {
        return Err(Error::Shape(format!("mask is {}x{}, manifest says {h}x{w}", info.height, info.width)));
    }
    let mask = Mask { height: h, width: w, data: buf.iter().map(|&b| b >= 128).collect() };

    let load_gt = |key: &str, name: &str| -> Result<Map> {
        let shape = *man
            .shapes
            .get(key)
            .ok_or_else(|| Error::corrupt(&mpath, format!("no shape recorded for {key}")))?;
        if shape[0] != h || shape[1] != w {
            return Err(Error::Shape(format!("{key} shape {shape:?} does not match resolution {h}x{w}")));
        }
        let (path, bytes) = load(name)?;
        let want = shape.iter().product::<usize>() * 4;
        if bytes.len() != want {
            return Err(Error::corrupt(&path, format!("{} bytes, expected {want}", bytes.len())));
        }
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Map::from_vec(h, w, shape[2], data)
    };
    let record = SceneRecord {
        images,
        mask,
        normal: load_gt("normal", &man.files.normal)?,
        basecolor: load_gt("basecolor", &man.files.basecolor)?,
        roughness: load_gt("roughness", &man.files.roughness)?,
        metalness: load_gt("metalness", &man.files.metalness)?,
        meta: SceneMeta {
            lighting: man.lighting,
            seed: man.seed,
            scene_radius: man.scene_radius,
            exposure: man.exposure,
        },
    };
    record.validate()?;
    Ok(record)
}

/// Scene directories of a dataset, sorted by name. A directory counts as a
/// scene when it contains `meta.json`.
pub fn list_scenes(dataset_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dataset_dir).map_err(|e| Error::io(dataset_dir, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dataset_dir, e))?.path();
        if p.join(MANIFEST).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Reads every scene of a dataset, keyed by directory name.
pub fn read_dataset(dataset_dir: &Path) -> Result<Vec<(String, SceneRecord)>> {
    let dirs = list_scenes(dataset_dir)?;
    if dirs.is_empty() {
        return Err(Error::Config(format!("no scenes found in {}", dataset_dir.display())));
    }
    dirs.iter()
        .map(|d| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_scene(d)?))
        })
        .collect()
}
