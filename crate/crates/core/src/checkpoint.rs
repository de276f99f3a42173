//! Model checkpoints: a small binary archive holding a JSON header plus
//! named f32 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic (8 bytes)
//! header length (u32), header JSON (UTF-8)
//! tensor count (u32)
//! per tensor: name length (u32), name (UTF-8),
//!             ndim (u32), dims (ndim x u32),
//!             data (product(dims) x f32)
//! ```
//!
//! Parameters are kept in f64 in memory and cast to f32 on disk. Saving,
//! loading, and saving again reproduces the file byte for byte.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::corpus::EmotionLabel;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::pooling::PoolingMode;
use crate::tensors::NamedTensors;

pub const MAGIC: &[u8; 8] = b"DLGEMO01";

/// Everything about a checkpoint that is not a tensor.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub encoder: EncoderConfig,
    /// Present once a classification head exists (absent on post-training
    /// checkpoints).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier: Option<ClassifierConfig>,
    /// Pooling mode the head was trained with.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pooling: Option<PoolingMode>,
    /// Per-class gold counts of the training split; used at prediction time
    /// for frequency-based tie-breaking and fallback labels.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_counts: Option<[u64; EmotionLabel::COUNT]>,
    /// Number of optimizer steps taken, when optimizer state is included.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optimizer_step: Option<u64>,
}

impl CheckpointHeader {
    pub fn new(encoder: EncoderConfig) -> Self {
        CheckpointHeader {
            encoder,
            classifier: None,
            pooling: None,
            class_counts: None,
            optimizer_step: None,
        }
    }
}

/// One named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Write a checkpoint archive.
pub fn save(path: &Path, header: &CheckpointHeader, records: &[TensorRecord]) -> Result<()> {
    let header_json = serde_json::to_string(header).map_err(|e| {
        format_error(path, format!("header serialization failed: {e}"))
    })?;
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| io_error(path, e))
    };

    write(&mut w, MAGIC)?;
    write(&mut w, &(header_json.len() as u32).to_le_bytes())?;
    write(&mut w, header_json.as_bytes())?;
    write(&mut w, &(records.len() as u32).to_le_bytes())?;
    for record in records {
        let expected: usize = record.shape.iter().product();
        if expected != record.data.len() {
            return Err(format_error(
                path,
                format!(
                    "tensor {} declares {} elements but carries {}",
                    record.name,
                    expected,
                    record.data.len()
                ),
            ));
        }
        write(&mut w, &(record.name.len() as u32).to_le_bytes())?;
        write(&mut w, record.name.as_bytes())?;
        write(&mut w, &(record.shape.len() as u32).to_le_bytes())?;
        for &dim in &record.shape {
            write(&mut w, &(dim as u32).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(record.data.len() * 4);
        for &v in &record.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write(&mut w, &bytes)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Read a checkpoint archive back.
pub fn load(path: &Path) -> Result<(CheckpointHeader, Vec<TensorRecord>)> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_error(path, e))?;
    if &magic != MAGIC {
        return Err(format_error(path, "not a model checkpoint (bad magic)"));
    }

    let read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(|e| io_error(path, e))?;
        Ok(u32::from_le_bytes(buf))
    };
    let read_string = |r: &mut BufReader<File>, len: usize| -> Result<String> {
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| io_error(path, e))?;
        String::from_utf8(buf).map_err(|_| format_error(path, "non-UTF-8 string field"))
    };

    let header_len = read_u32(&mut r)? as usize;
    let header_json = read_string(&mut r, header_len)?;
    let header: CheckpointHeader = serde_json::from_str(&header_json)
        .map_err(|e| format_error(path, format!("bad header: {e}")))?;

    let n_tensors = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(n_tensors);
    let mut seen = HashMap::new();
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut r)? as usize;
        let name = read_string(&mut r, name_len)?;
        if seen.insert(name.clone(), ()).is_some() {
            return Err(format_error(path, format!("duplicate tensor {name}")));
        }
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes).map_err(|e| io_error(path, e))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(TensorRecord { name, shape, data });
    }

    // Anything after the declared tensors is corruption.
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(format_error(path, "trailing bytes after final tensor")),
        Err(e) => return Err(io_error(path, e)),
    }
    Ok((header, records))
}

/// Snapshot the tensors of `source` as records named `prefix` + path.
pub fn collect_records(prefix: &str, source: &impl NamedTensors) -> Vec<TensorRecord> {
    source
        .tensors()
        .into_iter()
        .map(|(path, tensor)| TensorRecord {
            name: format!("{prefix}{path}"),
            shape: tensor.shape(),
            data: tensor.as_slice().iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

/// Copy records named `prefix` + path back into `target`, checking shapes.
/// Every tensor of `target` must be present; unrelated records are ignored.
pub fn restore_records(
    file: &Path,
    prefix: &str,
    records: &[TensorRecord],
    target: &mut impl NamedTensors,
) -> Result<()> {
    let by_name: HashMap<&str, &TensorRecord> =
        records.iter().map(|r| (r.name.as_str(), r)).collect();
    for (path, mut tensor) in target.tensors_mut() {
        let name = format!("{prefix}{path}");
        let record = by_name.get(name.as_str()).ok_or_else(|| {
            format_error(file, format!("missing tensor {name}"))
        })?;
        if record.shape != tensor.shape() {
            return Err(format_error(
                file,
                format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    record.shape,
                    tensor.shape()
                ),
            ));
        }
        let slice = tensor.as_slice_mut();
        for (dst, &src) in slice.iter_mut().zip(&record.data) {
            *dst = src as f64;
        }
    }
    Ok(())
}
