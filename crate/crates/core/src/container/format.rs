//! REPSIM01 byte layout.
//!
//! ```text
//! 0..8       b"REPSIM01"
//! 8..16      u64 LE metadata length M
//! 16..16+M   UTF-8 JSON metadata
//! ..         zero padding to the next 64-byte boundary
//! data       tensors, each at a 64-byte aligned offset relative to the data
//!            region start, row-major f32 LE
//! ```

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TensorBlock;
use crate::error::ContainerError;

pub const MAGIC: &[u8; 8] = b"REPSIM01";
pub const SCHEMA_VERSION: u64 = 1;
pub const ALIGN: u64 = 64;
const HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Activations,
    Ranks,
    Params,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Activations => "activations",
            Kind::Ranks => "ranks",
            Kind::Params => "params",
        }
    }
}

/// Per-tensor entry of the metadata block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<u64>,
    pub offset: u64,
    pub byte_len: u64,
}

/// The JSON metadata block. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: Kind,
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub schema: u64,
}

/// Untyped container contents: what is physically in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawContainer {
    pub kind: Kind,
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub tensors: Vec<TensorBlock>,
}

#[inline]
pub fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

impl RawContainer {
    fn layout(&self) -> (Vec<TensorEntry>, u64) {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            offset = align_up(offset);
            let byte_len = 4 * t.data.len() as u64;
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.iter().map(|&d| d as u64).collect(),
                offset,
                byte_len,
            });
            offset += byte_len;
        }
        (entries, offset)
    }

    /// Serializes to the exact on-disk byte sequence.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tensors {
            t.validate()?;
            if !seen.insert(t.name.as_str()) {
                return Err(ContainerError::Invariant {
                    kind: self.kind.as_str(),
                    reason: format!("duplicate tensor name {:?}", t.name),
                });
            }
        }
        let (entries, data_len) = self.layout();
        let meta = Metadata {
            kind: self.kind,
            model_id: self.model_id.clone(),
            sample_ids: self.sample_ids.clone(),
            tensors: entries.clone(),
            schema: SCHEMA_VERSION,
        };
        let json =
            serde_json::to_vec(&meta).map_err(|e| ContainerError::Metadata(e.to_string()))?;
        let data_start = align_up(HEADER_LEN + json.len() as u64);
        let mut out = Vec::with_capacity((data_start + data_len) as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.resize(data_start as usize, 0);
        for (t, e) in self.tensors.iter().zip(&entries) {
            out.resize((data_start + e.offset) as usize, 0);
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let index = parse_header(bytes, bytes.len() as u64)?;
        let mut tensors = Vec::with_capacity(index.meta.tensors.len());
        for e in &index.meta.tensors {
            let start = (index.data_start + e.offset) as usize;
            let raw = &bytes[start..start + e.byte_len as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(TensorBlock {
                name: e.name.clone(),
                shape: e.shape.iter().map(|&d| d as usize).collect(),
                data,
            });
        }
        Ok(RawContainer {
            kind: index.meta.kind,
            model_id: index.meta.model_id,
            sample_ids: index.meta.sample_ids,
            tensors,
        })
    }

    /// Writes through a sibling temporary file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        let bytes = self.to_bytes()?;
        let io = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Validated header and metadata, without tensor data.
#[derive(Debug, Clone)]
pub struct ContainerIndex {
    pub meta: Metadata,
    pub data_start: u64,
    pub file_len: u64,
}

impl ContainerIndex {
    /// Reads only the header and metadata, validating offsets against the
    /// file size.
    pub fn open(path: &Path) -> Result<Self, ContainerError> {
        let io = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::open(path).map_err(io)?;
        let file_len = f.metadata().map_err(io)?.len();
        let mut head = [0u8; HEADER_LEN as usize];
        let got = read_up_to(&mut f, &mut head).map_err(io)?;
        check_magic(&head[..got])?;
        if got < HEADER_LEN as usize {
            return Err(truncated("header", HEADER_LEN, got as u64));
        }
        let m = u64::from_le_bytes(head[8..16].try_into().unwrap());
        if HEADER_LEN.saturating_add(m) > file_len {
            return Err(truncated(
                "metadata",
                HEADER_LEN.saturating_add(m),
                file_len,
            ));
        }
        let mut buf = vec![0u8; (HEADER_LEN + m) as usize];
        buf[..HEADER_LEN as usize].copy_from_slice(&head);
        f.read_exact(&mut buf[HEADER_LEN as usize..]).map_err(io)?;
        parse_header(&buf, file_len)
    }

    /// Reads a single tensor by seeking to its offset.
    pub fn read_tensor(&self, path: &Path, name: &str) -> Result<TensorBlock, ContainerError> {
        let e = self
            .meta
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ContainerError::Layout {
                name: name.to_string(),
                reason: "not present in container".into(),
            })?;
        let io = |source| ContainerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::open(path).map_err(io)?;
        f.seek(SeekFrom::Start(self.data_start + e.offset))
            .map_err(io)?;
        let mut raw = vec![0u8; e.byte_len as usize];
        f.read_exact(&mut raw).map_err(io)?;
        Ok(TensorBlock {
            name: e.name.clone(),
            shape: e.shape.iter().map(|&d| d as usize).collect(),
            data: raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        })
    }
}

fn read_up_to(f: &mut fs::File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        let n = f.read(&mut buf[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    Ok(got)
}

fn truncated(what: &str, needed: u64, available: u64) -> ContainerError {
    ContainerError::Truncated {
        what: what.to_string(),
        needed,
        available,
    }
}

fn check_magic(head: &[u8]) -> Result<(), ContainerError> {
    let n = head.len().min(8);
    if n < 8 || &head[..8] != MAGIC {
        return Err(ContainerError::BadMagic {
            found: head[..n].to_vec(),
        });
    }
    Ok(())
}

/// Validates everything except the tensor payload bytes. `bytes` must hold at
/// least the header and metadata; `file_len` is the full file length.
fn parse_header(bytes: &[u8], file_len: u64) -> Result<ContainerIndex, ContainerError> {
    check_magic(bytes)?;
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(truncated("header", HEADER_LEN, bytes.len() as u64));
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let meta_end = HEADER_LEN.saturating_add(m);
    if meta_end > bytes.len() as u64 {
        return Err(truncated("metadata", meta_end, bytes.len() as u64));
    }
    let json = std::str::from_utf8(&bytes[HEADER_LEN as usize..meta_end as usize])
        .map_err(|e| ContainerError::Metadata(format!("metadata is not UTF-8: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| ContainerError::Metadata(e.to_string()))?;
    match value.get("schema").and_then(|s| s.as_u64()) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(ContainerError::UnknownSchema(v)),
        None => {
            return Err(ContainerError::Metadata(
                "missing integer field \"schema\"".into(),
            ))
        }
    }
    let meta: Metadata =
        serde_json::from_value(value).map_err(|e| ContainerError::Metadata(e.to_string()))?;

    let data_start = align_up(meta_end);
    let mut spans = Vec::with_capacity(meta.tensors.len());
    let mut names = std::collections::HashSet::new();
    for e in &meta.tensors {
        let layout = |reason: String| ContainerError::Layout {
            name: e.name.clone(),
            reason,
        };
        if e.name.is_empty() {
            return Err(layout("empty tensor name".into()));
        }
        if !names.insert(e.name.as_str()) {
            return Err(layout("duplicate tensor name".into()));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(layout(format!(
                "shape {:?} must be non-empty and positive",
                e.shape
            )));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| layout("shape overflows".into()))?;
        if count != e.byte_len {
            return Err(layout(format!(
                "shape {:?} needs {count} bytes but byte_len is {}",
                e.shape, e.byte_len
            )));
        }
        if e.offset % ALIGN != 0 {
            return Err(layout(format!(
                "offset {} is not 64-byte aligned",
                e.offset
            )));
        }
        let end = data_start
            .checked_add(e.offset)
            .and_then(|s| s.checked_add(e.byte_len))
            .ok_or_else(|| layout("offset overflows".into()))?;
        if end > file_len {
            return Err(truncated(&format!("tensor {:?}", e.name), end, file_len));
        }
        spans.push((e.offset, e.offset + e.byte_len, e.name.clone()));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(ContainerError::Layout {
                name: w[1].2.clone(),
                reason: format!("overlaps tensor {:?}", w[0].2),
            });
        }
    }
    Ok(ContainerIndex {
        meta,
        data_start,
        file_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawContainer {
        RawContainer {
            kind: Kind::Activations,
            model_id: "m".into(),
            sample_ids: vec!["a".into(), "b".into()],
            tensors: vec![TensorBlock {
                name: "embed".into(),
                shape: vec![2, 3],
                data: (0..6).map(|v| v as f32).collect(),
            }],
        }
    }

    #[test]
    fn data_region_is_aligned_little_endian() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let start = align_up(16 + m) as usize;
        assert_eq!(start % 64, 0);
        assert_eq!(bytes.len(), start + 24);
        for (i, c) in bytes[start..].chunks_exact(4).enumerate() {
            assert_eq!(f32::from_le_bytes(c.try_into().unwrap()), i as f32);
        }
        assert!(bytes[16 + m as usize..start].iter().all(|&b| b == 0));
    }

    #[test]
    fn metadata_key_order_is_fixed() {
        let bytes = sample().to_bytes().unwrap();
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[16..16 + m]).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"activations","model_id":"m","sample_ids":["a","b"],"tensors":[{"name":"embed","shape":[2,3],"offset":0,"byte_len":24}],"schema":1}"#
        );
    }

    #[test]
    fn second_tensor_offset_is_rounded_up() {
        let mut c = sample();
        c.tensors.push(TensorBlock {
            name: "final_norm".into(),
            shape: vec![2, 1],
            data: vec![7.0, 8.0],
        });
        let (entries, _) = c.layout();
        assert_eq!(entries[1].offset, 64);
        let back = RawContainer::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[..8].copy_from_slice(b"REPSIM99");
        assert!(matches!(
            RawContainer::from_bytes(&bytes),
            Err(ContainerError::BadMagic { .. })
        ));
        assert!(matches!(
            RawContainer::from_bytes(b"REP"),
            Err(ContainerError::BadMagic { .. })
        ));
    }

    #[test]
    fn rejects_truncated_data() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(
            RawContainer::from_bytes(cut),
            Err(ContainerError::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_truncated_metadata() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            RawContainer::from_bytes(&bytes[..20]),
            Err(ContainerError::Truncated { .. })
        ));
    }

    fn rewrite_meta(bytes: &[u8], f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let start = align_up(16 + m as u64) as usize;
        let mut v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + m]).unwrap();
        f(&mut v);
        let json = serde_json::to_vec(&v).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.resize(align_up(out.len() as u64) as usize, 0);
        out.extend_from_slice(&bytes[start..]);
        out
    }

    #[test]
    fn rejects_unknown_schema() {
        let bytes = rewrite_meta(&sample().to_bytes().unwrap(), |v| v["schema"] = 2.into());
        assert!(matches!(
            RawContainer::from_bytes(&bytes),
            Err(ContainerError::UnknownSchema(2))
        ));
    }

    #[test]
    fn rejects_shape_byte_len_mismatch() {
        let bytes = rewrite_meta(&sample().to_bytes().unwrap(), |v| {
            v["tensors"][0]["shape"] = serde_json::json!([3, 3]);
        });
        assert!(matches!(
            RawContainer::from_bytes(&bytes),
            Err(ContainerError::Layout { .. })
        ));
    }

    #[test]
    fn rejects_misaligned_offset() {
        let bytes = rewrite_meta(&sample().to_bytes().unwrap(), |v| {
            v["tensors"][0]["offset"] = 4.into();
        });
        assert!(matches!(
            RawContainer::from_bytes(&bytes),
            Err(ContainerError::Layout { .. })
        ));
    }

    #[test]
    fn rejects_byte_len_past_end_of_file() {
        let bytes = rewrite_meta(&sample().to_bytes().unwrap(), |v| {
            v["tensors"][0]["shape"] = serde_json::json!([2, 30]);
            v["tensors"][0]["byte_len"] = 240.into();
        });
        assert!(matches!(
            RawContainer::from_bytes(&bytes),
            Err(ContainerError::Truncated { .. })
        ));
    }

    #[test]
    fn index_and_seek_read_match_full_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.rs1");
        let c = sample();
        c.write(&p).unwrap();
        let idx = ContainerIndex::open(&p).unwrap();
        assert_eq!(idx.meta.tensors.len(), 1);
        let t = idx.read_tensor(&p, "embed").unwrap();
        assert_eq!(t, c.tensors[0]);
        assert!(idx.read_tensor(&p, "nope").is_err());
    }
}
