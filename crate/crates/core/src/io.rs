//! Repo-wide tensor file format.
//!
//! A tensor named `stem` is stored as `stem.bin`, a little-endian IEEE-754
//! float32 buffer in row-major order, next to `stem.json` holding
//! `{"shape":[...],"dtype":"f32","layout":"row-major"}`.

use std::fs;
use std::path::{Path, PathBuf};

use dgir_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DgirError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

impl TensorHeader {
    pub fn f32(shape: &[usize]) -> Self {
        TensorHeader { shape: shape.to_vec(), dtype: "f32".into(), layout: "row-major".into() }
    }
}

pub fn data_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "bin")
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "json")
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_raw(stem: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(DgirError::Shape(format!("{} values for shape {:?}", values.len(), shape)));
    }
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).map_err(|e| DgirError::io(parent, e))?;
    }
    let header = serde_json::to_string(&TensorHeader::f32(shape)).expect("header serialises");
    let hp = header_path(stem);
    fs::write(&hp, header).map_err(|e| DgirError::io(&hp, e))?;
    let dp = data_path(stem);
    fs::write(&dp, encode_f32(values)).map_err(|e| DgirError::io(&dp, e))?;
    Ok(())
}

pub fn read_raw(stem: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let hp = header_path(stem);
    if !hp.exists() {
        return Err(DgirError::MissingArtifact(hp));
    }
    let text = fs::read_to_string(&hp).map_err(|e| DgirError::io(&hp, e))?;
    let header: TensorHeader =
        serde_json::from_str(&text).map_err(|e| DgirError::corrupt(&hp, e.to_string()))?;
    if header.dtype != "f32" || header.layout != "row-major" {
        return Err(DgirError::corrupt(&hp, format!("unsupported {} / {}", header.dtype, header.layout)));
    }
    let dp = data_path(stem);
    if !dp.exists() {
        return Err(DgirError::MissingArtifact(dp));
    }
    let bytes = fs::read(&dp).map_err(|e| DgirError::io(&dp, e))?;
    let n: usize = header.shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(DgirError::corrupt(
            &dp,
            format!("expected {} bytes for shape {:?}, found {}", 4 * n, header.shape, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.shape, values))
}

pub fn write_tensor<T: Real>(stem: &Path, t: &Tensor<T>) -> Result<()> {
    let values: Vec<f32> = t.data().iter().map(|v| v.as_f64() as f32).collect();
    write_raw(stem, t.shape(), &values)
}

pub fn read_tensor<T: Real>(stem: &Path) -> Result<Tensor<T>> {
    let (shape, values) = read_raw(stem)?;
    let data = values.into_iter().map(|v| T::from_f64(v as f64)).collect();
    Ok(Tensor::from_vec(data, &shape)?)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DgirError::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serialises");
    fs::write(path, text + "\n").map_err(|e| DgirError::io(path, e))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    if !path.exists() {
        return Err(DgirError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| DgirError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DgirError::corrupt(path, e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash over every regular file below `root`, visited in sorted
/// path order; relative paths are part of the digest.
pub fn hash_tree(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        let bytes = fs::read(&f).map_err(|e| DgirError::io(&f, e))?;
        hasher.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(dir).map_err(|e| DgirError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| DgirError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
