//! Binary checkpoint files for named tensor blobs.
//!
//! Layout: magic `FOVN`, format version (u32 LE), then one record per blob
//! in map order: name length (u32 LE), name bytes (UTF-8), dtype tag (u8),
//! rank (u64 LE), extents (u64 LE each), raw little-endian values. A CRC32
//! of everything before it closes the file. Writing the same blobs twice
//! produces byte-identical files, and a load feeds back into an identical
//! map, so checkpoints double as the determinism fixture.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::diffcore::{Dtype, Scalar, Tensor};

use super::{NetError, Result};

const MAGIC: [u8; 4] = *b"FOVN";

/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Guard against absurd extents from corrupt files.
const MAX_NUMEL: u64 = 1 << 28;

fn corrupt(path: &Path, detail: impl Into<String>) -> NetError {
    NetError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> NetError {
    NetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes `blobs` to `path`, replacing any existing file.
pub fn write_checkpoint(path: &Path, blobs: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, tensor) in blobs {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(Dtype::F32.tag());
        buf.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut buf);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(self.path, format!("truncated {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint written by [`write_checkpoint`]. Any structural
/// damage (bad magic, version, dtype, truncation, trailing bytes, CRC
/// mismatch, duplicate names) is an error.
pub fn read_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return Err(corrupt(path, "file shorter than header and checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(corrupt(
            path,
            format!("checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})"),
        ));
    }

    let mut r = Reader { path, bytes: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(corrupt(path, "bad magic bytes"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }

    let mut blobs = BTreeMap::new();
    while r.pos < r.bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| corrupt(path, "blob name is not UTF-8"))?
            .to_string();
        let tag = r.take(1, "dtype")?[0];
        if Dtype::from_tag(tag) != Some(Dtype::F32) {
            return Err(corrupt(path, format!("blob '{name}': unsupported dtype tag {tag}")));
        }
        let rank = r.u64("rank")? as usize;
        if rank > 8 {
            return Err(corrupt(path, format!("blob '{name}': rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let dim = r.u64("extent")?;
            numel = numel.saturating_mul(dim.max(1));
            shape.push(dim as usize);
        }
        if numel > MAX_NUMEL {
            return Err(corrupt(path, format!("blob '{name}': {numel} elements out of range")));
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * Dtype::F32.byte_width(), "values")?;
        let mut data = Vec::with_capacity(count);
        for chunk in raw.chunks_exact(Dtype::F32.byte_width()) {
            data.push(f32::read_le(chunk));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(path, e.to_string()))?;
        if blobs.insert(name.clone(), tensor).is_some() {
            return Err(corrupt(path, format!("duplicate blob '{name}'")));
        }
    }
    Ok(blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netblocks::params::{generator_blobs, ParamStore};
    use crate::netblocks::NetConfig;

    fn sample_blobs() -> BTreeMap<String, Tensor<f32>> {
        let store = ParamStore::init(&generator_blobs(&NetConfig::tiny()), 11);
        let mut blobs = store.into_blobs();
        blobs.insert("meta.step".into(), Tensor::scalar(1234.0));
        blobs
    }

    #[test]
    fn round_trip_is_bit_exact_and_rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let blobs = sample_blobs();
        write_checkpoint(&path, &blobs).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), blobs.len());
        for (name, tensor) in &blobs {
            let got = &loaded[name];
            assert_eq!(got.shape(), tensor.shape(), "{name}");
            let a: Vec<u32> = tensor.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = got.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }

        let first = std::fs::read(&path).unwrap();
        write_checkpoint(&path, &loaded).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn flipped_bits_fail_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &sample_blobs()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn truncation_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &sample_blobs()).unwrap();
        let good = std::fs::read(&path).unwrap();

        std::fs::write(&path, &good[..good.len() - 9]).unwrap();
        assert!(read_checkpoint(&path).is_err());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(read_checkpoint(&path).unwrap_err().to_string().contains("checksum"));

        // Re-stamp the CRC so only the magic is wrong.
        let crc = crc32fast::hash(&bad_magic[..bad_magic.len() - 4]);
        let n = bad_magic.len();
        bad_magic[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(read_checkpoint(&path).unwrap_err().to_string().contains("magic"));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        let crc = crc32fast::hash(&bad_version[..bad_version.len() - 4]);
        let n = bad_version.len();
        bad_version[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bad_version).unwrap();
        assert!(read_checkpoint(&path).unwrap_err().to_string().contains("version"));
    }
}
