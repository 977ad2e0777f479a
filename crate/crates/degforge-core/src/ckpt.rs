//! Single-file checkpoint container.
//!
//! Layout: magic `DGFC`, little-endian u32 format version, little-endian u32
//! JSON header length, the header, then each tensor's `f32` values in
//! little-endian order, concatenated in header order. The header carries the
//! model kind, its architecture scalars, the epoch, and the training seed, so
//! a dataset manifest pointing at a checkpoint fully determines a re-forge.

use crate::{Error, Result};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DGFC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Model family, e.g. "vqvae", "vqvae2", "mae", "degclf", "sr".
    pub kind: String,
    pub epoch: u64,
    pub seed: u64,
    /// Architecture scalars, interpreted by the owning module.
    pub scalars: serde_json::Value,
    pub tensors: Vec<TensorMeta>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    epoch: u64,
    seed: u64,
    scalars: &impl Serialize,
    tensors: &[(String, &ArrayD<f32>)],
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        epoch,
        seed,
        scalars: serde_json::to_value(scalars)
            .map_err(|e| Error::Format(format!("scalar encoding: {e}")))?,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header encoding: {e}")))?;

    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let werr = |e| Error::io(path, e);
    file.write_all(MAGIC).map_err(werr)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(werr)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(werr)?;
    file.write_all(&header_bytes).map_err(werr)?;
    for (_, tensor) in tensors {
        let view = tensor.as_standard_layout();
        let mut buf = Vec::with_capacity(view.len() * 4);
        for &v in view.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf).map_err(werr)?;
    }
    file.flush().map_err(werr)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, HashMap<String, ArrayD<f32>>)> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    );
    let rerr = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(rerr)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word).map_err(rerr)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint format version {version}",
            path.display()
        )));
    }
    file.read_exact(&mut word).map_err(rerr)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes).map_err(rerr)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("{}: header decode: {e}", path.display())))?;
    if header.format_version != version {
        return Err(Error::Format(format!(
            "{}: header/container version mismatch",
            path.display()
        )));
    }

    let mut tensors = HashMap::new();
    for meta in &header.tensors {
        let len: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; len * 4];
        file.read_exact(&mut buf).map_err(rerr)?;
        let values: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&meta.shape), values)
            .map_err(|e| Error::Format(format!("{}: tensor {}: {e}", path.display(), meta.name)))?;
        tensors.insert(meta.name.clone(), arr);
    }
    Ok((header, tensors))
}

/// Pulls one named tensor out of a loaded checkpoint, shape-checked.
pub fn take_tensor(
    tensors: &mut HashMap<String, ArrayD<f32>>,
    name: &str,
    shape: &[usize],
) -> Result<ArrayD<f32>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Format(format!("checkpoint missing tensor '{name}'")))?;
    if t.shape() != shape {
        return Err(Error::Format(format!(
            "tensor '{name}' has shape {:?}, expected {:?}",
            t.shape(),
            shape
        )));
    }
    Ok(t)
}

/// Hex SHA-256 of a file's bytes; used by dataset manifests to pin the
/// generator checkpoint.
pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
