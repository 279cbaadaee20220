//! Binary checkpoints: a magic string, a format version, then a run of
//! named tensors. Numbers are little-endian; values are f32. Saving a
//! loaded checkpoint reproduces the original bytes.

use crate::error::{CliError, Result};
use dimix_core::Tensor;
use std::path::Path;

const MAGIC: &[u8; 8] = b"DMIXCKPT";
const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Data(format!(
                "{}: truncated checkpoint: needed {n} bytes for {what} at offset {}, file has {}",
                self.name,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Serialize named tensors to `path`.
pub fn save(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, entries.len() as u32);
    for (name, tensor) in entries {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, tensor.rank() as u32);
        for e in tensor.shape() {
            push_u64(&mut out, e as u64);
        }
        for &v in tensor.value().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Read back every named tensor in file order.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let mut r = Reader { bytes: &bytes, pos: 0, name: path.display().to_string() };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(CliError::Data(format!("{}: not a checkpoint (bad magic)", path.display())));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| CliError::Data(format!("{}: tensor {i}: name is not UTF-8", path.display())))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4, "values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, values)?;
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(CliError::Data(format!(
            "{}: {} trailing bytes after the last tensor",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Save a parameter list under generated names `p0000`, `p0001`, ...
pub fn save_params(path: &Path, params: &[Tensor<f32>]) -> Result<()> {
    let entries: Vec<(String, Tensor<f32>)> = params
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("p{i:04}"), p.detach()))
        .collect();
    save(path, &entries)
}

/// Restore values into an existing parameter list, checking count and shape.
pub fn load_params(path: &Path, params: &[Tensor<f32>]) -> Result<()> {
    let entries = load(path)?;
    if entries.len() != params.len() {
        return Err(CliError::Data(format!(
            "{}: checkpoint holds {} tensors but the model has {} parameters",
            path.display(),
            entries.len(),
            params.len()
        )));
    }
    for (i, ((name, loaded), param)) in entries.iter().zip(params).enumerate() {
        if loaded.shape() != param.shape() {
            return Err(CliError::Data(format!(
                "{}: tensor {i} ({name}) has shape {:?}, model expects {:?}",
                path.display(),
                loaded.shape(),
                param.shape()
            )));
        }
        param.set_data(&loaded.value())?;
    }
    Ok(())
}
