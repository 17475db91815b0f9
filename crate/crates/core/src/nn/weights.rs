//! Binary weight files.
//!
//! Layout: magic `DXW1`, a `u32` little-endian byte length, a UTF-8 JSON
//! header (format version, endianness, model descriptor, tensor names and
//! shapes), then every tensor in declaration order as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierArch, ClassifierNet};
use super::generator::{AdversarialGenerator, GenMode, GeneratorArch, GeneratorPair};
use super::params::ParamSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DXW1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDescriptor {
    Classifier { arch: ClassifierArch },
    GeneratorPair { mode: GenMode, arch: GeneratorArch },
    Adversary { arch: GeneratorArch },
}

impl ModelDescriptor {
    fn to_text(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    endianness: String,
    model: ModelDescriptor,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn save_weights(path: &Path, model: &ModelDescriptor, params: &ParamSet) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        endianness: "little".into(),
        model: model.clone(),
        tensors: params.layout(),
    };
    let text = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(8 + text.len() + 4 * params.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&text);
    for t in params.tensors() {
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<(ModelDescriptor, ParamSet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::NotWeightFile(path.to_path_buf()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| Error::format(path, "truncated header"))?;
    let raw: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Version { path: path.to_path_buf(), found: version, supported: FORMAT_VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.endianness != "little" {
        return Err(Error::format(path, format!("unsupported endianness `{}`", header.endianness)));
    }
    let mut data = &bytes[8 + len..];
    let mut params = ParamSet::new();
    for (name, shape) in header.tensors {
        let n: usize = shape.iter().product();
        if data.len() < 4 * n {
            return Err(Error::format(path, format!("truncated tensor `{name}`")));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        data = &data[4 * n..];
        params.push(name, shape, values);
    }
    if !data.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", data.len())));
    }
    Ok((header.model, params))
}

/// Loads a file and checks its descriptor against the expected model.
pub fn load_expecting(path: &Path, expected: &ModelDescriptor) -> Result<ParamSet> {
    let (found, params) = load_weights(path)?;
    if &found != expected {
        return Err(Error::ArchMismatch { expected: expected.to_text(), found: found.to_text() });
    }
    Ok(params)
}

/// Whatever model a weight file holds.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Classifier(ClassifierNet),
    Pair(GeneratorPair),
    Adversary(AdversarialGenerator),
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let (desc, params) = load_weights(path)?;
    Ok(match desc {
        ModelDescriptor::Classifier { arch } => LoadedModel::Classifier(ClassifierNet::from_parts(arch, params)?),
        ModelDescriptor::GeneratorPair { mode, arch } => LoadedModel::Pair(GeneratorPair::from_parts(mode, arch, params)?),
        ModelDescriptor::Adversary { arch } => LoadedModel::Adversary(AdversarialGenerator::from_parts(arch, params)?),
    })
}

impl ClassifierNet {
    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Classifier { arch: self.arch().clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.descriptor(), self.params())
    }

    pub fn load(path: &Path, arch: &ClassifierArch) -> Result<Self> {
        let params = load_expecting(path, &ModelDescriptor::Classifier { arch: arch.clone() })?;
        Self::from_parts(arch.clone(), params)
    }
}

impl GeneratorPair {
    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::GeneratorPair { mode: self.mode(), arch: self.arch().clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.descriptor(), self.params())
    }

    pub fn load(path: &Path, mode: GenMode, arch: &GeneratorArch) -> Result<Self> {
        let params = load_expecting(path, &ModelDescriptor::GeneratorPair { mode, arch: arch.clone() })?;
        Self::from_parts(mode, arch.clone(), params)
    }
}

impl AdversarialGenerator {
    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Adversary { arch: self.arch().clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.descriptor(), self.params())
    }

    pub fn load(path: &Path, arch: &GeneratorArch) -> Result<Self> {
        let params = load_expecting(path, &ModelDescriptor::Adversary { arch: arch.clone() })?;
        Self::from_parts(arch.clone(), params)
    }
}
