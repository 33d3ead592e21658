//! Binary parameter container: an 8-byte magic, a little-endian u64 manifest
//! length, the JSON manifest, then every tensor as little-endian f64 in
//! manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Model, MoeConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MOECKPT1";
const MAX_MANIFEST: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub config: MoeConfig,
    pub vocab: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(model: &Model, seed: Option<u64>, mut w: impl Write) -> Result<Manifest> {
    let mut tensors = Vec::new();
    model.visit(&mut |name, x| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            len: x.len(),
        })
    });
    let manifest = Manifest {
        schema_version: 1,
        seed,
        config: model.moe.config(),
        vocab: model.heads.vocab(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    w.write_all(MAGIC)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    let mut data = Vec::with_capacity(model.parameter_count() * 8);
    model.visit(&mut |_, x| {
        for v in x {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    w.write_all(&data)?;
    Ok(manifest)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(Model, Manifest)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
    }
    let len = r.read_u64::<LittleEndian>()?;
    if len > MAX_MANIFEST {
        return Err(Error::Format(format!("manifest length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json)?;
    if manifest.schema_version != 1 {
        return Err(Error::Format(format!(
            "unsupported checkpoint schema {}",
            manifest.schema_version
        )));
    }
    let mut model = Model::init(&manifest.config, manifest.vocab, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let mut expected = Vec::new();
    model.visit(&mut |name, x| expected.push((name.to_string(), x.len())));
    let listed: Vec<(String, usize)> = manifest.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
    if expected != listed {
        return Err(Error::Format("tensor list does not match the stored configuration".into()));
    }
    let mut failure = None;
    model.visit_mut(&mut |name, x| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = r.read_f64_into::<LittleEndian>(x) {
            failure = Some(Error::Format(format!("truncated data in tensor {name}: {e}")));
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    Ok((model, manifest))
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn save_checkpoint(model: &Model, seed: Option<u64>, path: &Path) -> Result<Manifest> {
    let tmp = path.with_extension("ckpt.partial");
    let mut buf = Vec::new();
    let manifest = write_checkpoint(model, seed, &mut buf)?;
    fs::write(&tmp, &buf).map_err(|e| Error::path(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::path(path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Manifest)> {
    let bytes = fs::read(path).map_err(|e| Error::path(path, e))?;
    read_checkpoint(bytes.as_slice())
}
