//! Named-tensor container format for checkpoints and pretrained weights.
//!
//! Binary layout (little-endian): magic `NTAR`, format version u32, entry
//! count u32, then per entry: name length u16 + UTF-8 name, rank u8, dims as
//! u32s, and the f32 payload. A JSON side-record at `<path>.json` carries
//! `{kind, config, format_version}` so loading can rebuild the exact model
//! shape. Values are stored as raw f32 bits, which makes the save→load round
//! trip bit-exact.

use super::ModelError;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NTAR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Archive {
        path: path.to_path_buf(),
        message: source.to_string(),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Archive {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Write tensors plus the JSON metadata side-record.
pub fn write_archive(
    path: &Path,
    entries: &BTreeMap<String, TensorEntry>,
    metadata: &serde_json::Value,
) -> Result<(), ModelError> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| io_err(path, e))?,
    );
    let mut write = |buf: &[u8]| file.write_all(buf).map_err(|e| io_err(path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(entries.len() as u32).to_le_bytes())?;
    for (name, entry) in entries {
        let name_bytes = name.as_bytes();
        write(&(name_bytes.len() as u16).to_le_bytes())?;
        write(name_bytes)?;
        write(&[entry.shape.len() as u8])?;
        for &d in &entry.shape {
            write(&(d as u32).to_le_bytes())?;
        }
        debug_assert_eq!(entry.shape.iter().product::<usize>(), entry.values.len());
        for &v in &entry.values {
            write(&v.to_le_bytes())?;
        }
    }
    file.flush().map_err(|e| io_err(path, e))?;
    std::fs::write(
        side_record_path(path),
        serde_json::to_string_pretty(metadata).expect("metadata serializes"),
    )
    .map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn side_record_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Read all tensors and the metadata side-record (if present).
pub fn read_archive(
    path: &Path,
) -> Result<(BTreeMap<String, TensorEntry>, Option<serde_json::Value>), ModelError> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| io_err(path, e))?,
    );
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic; not a tensor archive"));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(|e| io_err(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format version {version}")));
    }
    file.read_exact(&mut u32buf).map_err(|e| io_err(path, e))?;
    let count = u32::from_le_bytes(u32buf);
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        file.read_exact(&mut u16buf).map_err(|e| io_err(path, e))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        file.read_exact(&mut name_bytes).map_err(|e| io_err(path, e))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| format_err(path, "non-utf8 tensor name"))?;
        let mut rank = [0u8; 1];
        file.read_exact(&mut rank).map_err(|e| io_err(path, e))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            file.read_exact(&mut u32buf).map_err(|e| io_err(path, e))?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut payload = vec![0u8; len * 4];
        file.read_exact(&mut payload).map_err(|e| io_err(path, e))?;
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.insert(name, TensorEntry { shape, values });
    }
    let meta_path = side_record_path(path);
    let metadata = match std::fs::read_to_string(&meta_path) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| {
            format_err(&meta_path, format!("malformed metadata: {e}"))
        })?),
        Err(_) => None,
    };
    Ok((entries, metadata))
}
