use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable arrays.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<[usize; 2]>,
    values: Vec<Rc<Vec<f64>>>,
    decay: Vec<bool>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. `decay` marks it for weight decay.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>, decay: bool) -> ParamId {
        assert_eq!(value.len(), rows * cols, "param {name}: value length");
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let id = ParamId(self.names.len());
        self.names.push(name.to_string());
        self.shapes.push([rows, cols]);
        self.values.push(Rc::new(value));
        self.decay.push(decay);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> ParamId {
        let v = (0..rows * cols).map(|_| std * rng.normal()).collect();
        self.add(name, rows, cols, v, true)
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, rows, cols, vec![value; rows * cols], false)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> [usize; 2] {
        self.shapes[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn value(&self, id: ParamId) -> Rc<Vec<f64>> {
        self.values[id.0].clone()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Copies values from `other` for every parameter present in both with
    /// the same shape. Returns the number of parameters copied.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.names[id.0].clone();
            let Some(src) = other.by_name(&name) else {
                return Err(Error::Config(format!("checkpoint lacks parameter {name}")));
            };
            if other.shape(src) != self.shape(id) {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    other.shape(src),
                    self.shape(id)
                )));
            }
            *self.value_mut(id) = other.value(src).as_ref().clone();
            n += 1;
        }
        Ok(n)
    }
}

const MAGIC: &[u8; 8] = b"PSCKPT\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
    decay: bool,
}

/// Parameters plus the configuration that built them.
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub store: ParamStore,
}

/// Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
/// header (names, shapes, element offsets, config echo), then every
/// parameter as little-endian `f64`.
pub fn save_checkpoint(path: &Path, config: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let mut offset = 0;
    let params = store
        .ids()
        .map(|id| {
            let e = ParamEntry {
                name: store.name(id).to_string(),
                shape: store.shape(id),
                offset,
                decay: store.decays(id),
            };
            offset += store.value(id).len();
            e
        })
        .collect();
    let header = Header { format_version: FORMAT_VERSION, config: config.clone(), params };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Json { path: path.into(), source: e })?;
    let mut buf = Vec::with_capacity(24 + json.len() + offset * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for id in store.ids() {
        for v in store.value(id).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { Error::MissingFile(path.into()) } else { Error::io(path, e) })?;
    if buf.len() < 20 || &buf[..8] != MAGIC {
        return Err(Error::corrupt(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::corrupt(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let body = 20 + hlen;
    if buf.len() < body {
        return Err(Error::corrupt(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&buf[20..body]).map_err(|e| Error::Json { path: path.into(), source: e })?;
    let payload = &buf[body..];
    let total: usize = header.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
    if payload.len() != total * 8 {
        return Err(Error::corrupt(path, format!("payload has {} bytes, expected {}", payload.len(), total * 8)));
    }
    let mut store = ParamStore::new();
    for p in &header.params {
        let n = p.shape[0] * p.shape[1];
        let vals = payload[p.offset * 8..(p.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(&p.name, p.shape[0], p.shape[1], vals, p.decay);
    }
    Ok(Checkpoint { config: header.config, store })
}
