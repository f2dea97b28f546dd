//! Dense task vectors and the `TVC1` container they are stored in.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TVC1\n"
//! u64  manifest byte length
//! manifest:
//!   u32  record count
//!   per record:
//!     u32 name length, name bytes (UTF-8)
//!     u32 rank, rank x u32 shape entries
//!     u8  dtype (0 = f32, 1 = f16, 2 = bf16)
//!     u64 offset in bytes from the start of the payload
//!     u64 length in elements
//! payload: raw little-endian values, records back to back in manifest order
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use half::{bf16, f16};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 5] = b"TVC1\n";

/// Storage precision of one tensor in the container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
    Bf16,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
            DType::Bf16 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F16),
            2 => Ok(DType::Bf16),
            other => Err(Error::DtypeUnsupported(other)),
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::Bf16 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::Bf16 => "bf16",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f16" => Ok(DType::F16),
            "bf16" => Ok(DType::Bf16),
            _ => Err(Error::ManifestCorrupt(format!("unknown dtype `{s}`"))),
        }
    }
}

/// One manifest record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<u32>,
    pub dtype: DType,
    pub offset_bytes: u64,
    pub length_elems: u64,
}

impl TensorMeta {
    pub fn byte_len(&self) -> u64 {
        self.length_elems * self.dtype.size_bytes() as u64
    }
}

/// A named dense tensor held at working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Group {
    /// A rank-1 group of shape `[data.len()]`.
    pub fn flat(name: impl Into<String>, data: Vec<f32>) -> Self {
        let shape = vec![data.len()];
        Group {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Group {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// An ordered collection of uniquely named dense groups with at least one
/// element in total. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    groups: Vec<Group>,
}

impl TaskVector {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidTaskVector("no groups".into()));
        }
        let mut seen = HashSet::with_capacity(groups.len());
        for g in &groups {
            if !seen.insert(g.name.as_str()) {
                return Err(Error::InvalidTaskVector(format!(
                    "duplicate group name `{}`",
                    g.name
                )));
            }
            if g.data.is_empty() {
                return Err(Error::InvalidTaskVector(format!("group `{}` is empty", g.name)));
            }
            let expected: usize = g.shape.iter().product();
            if expected != g.data.len() {
                return Err(Error::InvalidTaskVector(format!(
                    "group `{}` has shape {:?} but {} elements",
                    g.name,
                    g.shape,
                    g.data.len()
                )));
            }
            check_finite(g)?;
        }
        Ok(TaskVector { groups })
    }

    /// Single flat group, handy for tests and small tools.
    pub fn from_flat(name: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        TaskVector::new(vec![Group::flat(name, data)])
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn into_groups(self) -> Vec<Group> {
        self.groups
    }

    pub fn get(&self, name: &str) -> Option<&Group> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Total number of parameters across all groups.
    pub fn dim(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + Clone + '_ {
        self.groups.iter().flat_map(|g| g.data.iter().copied())
    }

    /// Checks that `other` has the same group names, order and shapes.
    pub fn check_same_layout(&self, other: &TaskVector) -> Result<()> {
        if self.groups.len() != other.groups.len() {
            return Err(Error::NameMismatch {
                left: format!("{} groups", self.groups.len()),
                right: format!("{} groups", other.groups.len()),
            });
        }
        for (a, b) in self.groups.iter().zip(&other.groups) {
            if a.name != b.name {
                return Err(Error::NameMismatch {
                    left: a.name.clone(),
                    right: b.name.clone(),
                });
            }
            if a.shape != b.shape {
                return Err(Error::ShapeMismatch {
                    name: a.name.clone(),
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

fn check_finite(g: &Group) -> Result<()> {
    match g.data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            group: g.name.clone(),
            index,
        }),
        None => Ok(()),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ManifestCorrupt(format!("manifest ends early at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the manifest and returns it with the payload slice.
pub fn parse_manifest(bytes: &[u8]) -> Result<(Vec<TensorMeta>, &[u8])> {
    if bytes.len() < CONTAINER_MAGIC.len() || &bytes[..CONTAINER_MAGIC.len()] != CONTAINER_MAGIC {
        return Err(Error::ManifestCorrupt("missing TVC1 magic".into()));
    }
    let rest = &bytes[CONTAINER_MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::ManifestCorrupt("missing manifest length".into()));
    }
    let manifest_len = u64::from_le_bytes(rest[..8].try_into().unwrap());
    let rest = &rest[8..];
    if manifest_len > rest.len() as u64 {
        return Err(Error::ManifestCorrupt(format!(
            "manifest length {manifest_len} exceeds file size"
        )));
    }
    let (manifest, payload) = rest.split_at(manifest_len as usize);
    let mut cur = Cursor { buf: manifest, pos: 0 };

    let count = cur.u32()?;
    if count == 0 {
        return Err(Error::ManifestCorrupt("manifest has no records".into()));
    }
    let mut metas = Vec::new();
    let mut expected_offset = 0u64;
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::ManifestCorrupt("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        if rank > manifest.len() / 4 {
            return Err(Error::ManifestCorrupt(format!("implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let dtype = DType::from_tag(cur.u8()?)?;
        let offset_bytes = cur.u64()?;
        let length_elems = cur.u64()?;

        let product = shape
            .iter()
            .try_fold(1u64, |acc, &s| acc.checked_mul(s as u64))
            .ok_or_else(|| Error::ManifestCorrupt(format!("shape of `{name}` overflows")))?;
        if product != length_elems {
            return Err(Error::ManifestCorrupt(format!(
                "`{name}`: shape {shape:?} implies {product} elements, record says {length_elems}"
            )));
        }
        if length_elems == 0 {
            return Err(Error::ManifestCorrupt(format!("`{name}` has no elements")));
        }
        if offset_bytes != expected_offset {
            return Err(Error::ManifestCorrupt(format!(
                "`{name}` starts at byte {offset_bytes}, expected {expected_offset}"
            )));
        }
        let meta = TensorMeta {
            name,
            shape,
            dtype,
            offset_bytes,
            length_elems,
        };
        expected_offset = length_elems
            .checked_mul(dtype.size_bytes() as u64)
            .and_then(|n| n.checked_add(offset_bytes))
            .ok_or_else(|| Error::ManifestCorrupt("payload size overflows".into()))?;
        metas.push(meta);
    }
    if cur.pos != manifest.len() {
        return Err(Error::ManifestCorrupt(format!(
            "{} trailing manifest bytes",
            manifest.len() - cur.pos
        )));
    }
    let available = payload.len() as u64;
    if available < expected_offset {
        return Err(Error::PayloadTruncated {
            needed: expected_offset,
            available,
        });
    }
    if available > expected_offset {
        return Err(Error::ManifestCorrupt(format!(
            "{} bytes past the last tensor",
            available - expected_offset
        )));
    }
    Ok((metas, payload))
}

/// Decodes a whole container held in memory.
pub fn parse_container(bytes: &[u8]) -> Result<TaskVector> {
    let (metas, payload) = parse_manifest(bytes)?;
    let mut groups = Vec::with_capacity(metas.len());
    for meta in metas {
        let start = meta.offset_bytes as usize;
        let raw = &payload[start..start + meta.byte_len() as usize];
        let data: Vec<f32> = match meta.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
            DType::Bf16 => raw
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        };
        let shape = meta.shape.iter().map(|&s| s as usize).collect();
        groups.push(Group::new(meta.name, shape, data));
    }
    TaskVector::new(groups).map_err(|e| match e {
        Error::InvalidTaskVector(msg) => Error::ManifestCorrupt(msg),
        other => other,
    })
}

pub fn load_container(path: impl AsRef<Path>) -> Result<TaskVector> {
    parse_container(&fs::read(path)?)
}

/// Manifest records `save_container` would write for `tv`.
pub fn manifest_for(tv: &TaskVector, dtype: DType) -> Result<Vec<TensorMeta>> {
    let mut offset = 0u64;
    let mut metas = Vec::with_capacity(tv.groups.len());
    for g in &tv.groups {
        let shape = g
            .shape
            .iter()
            .map(|&s| {
                u32::try_from(s).map_err(|_| {
                    Error::InvalidTaskVector(format!("dimension {s} of `{}` exceeds u32", g.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = TensorMeta {
            name: g.name.clone(),
            shape,
            dtype,
            offset_bytes: offset,
            length_elems: g.len() as u64,
        };
        offset += meta.byte_len();
        metas.push(meta);
    }
    Ok(metas)
}

fn encode_manifest(metas: &[TensorMeta]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(metas.len() as u32).to_le_bytes());
    for m in metas {
        out.extend_from_slice(&(m.name.len() as u32).to_le_bytes());
        out.extend_from_slice(m.name.as_bytes());
        out.extend_from_slice(&(m.shape.len() as u32).to_le_bytes());
        for s in &m.shape {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(m.dtype.tag());
        out.extend_from_slice(&m.offset_bytes.to_le_bytes());
        out.extend_from_slice(&m.length_elems.to_le_bytes());
    }
    out
}

/// Streams the container encoding of `tv` into `w`.
pub fn write_container<W: Write>(tv: &TaskVector, dtype: DType, mut w: W) -> Result<()> {
    let manifest = encode_manifest(&manifest_for(tv, dtype)?);
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;

    let mut chunk = Vec::with_capacity(1 << 16);
    for g in &tv.groups {
        for block in g.data.chunks(1 << 14) {
            chunk.clear();
            for &v in block {
                match dtype {
                    DType::F32 => chunk.extend_from_slice(&v.to_le_bytes()),
                    DType::F16 => {
                        let h = f16::from_f32(v);
                        if !h.is_finite() {
                            return Err(overflow(g, v, dtype));
                        }
                        chunk.extend_from_slice(&h.to_le_bytes());
                    }
                    DType::Bf16 => {
                        let h = bf16::from_f32(v);
                        if !h.is_finite() {
                            return Err(overflow(g, v, dtype));
                        }
                        chunk.extend_from_slice(&h.to_le_bytes());
                    }
                }
            }
            w.write_all(&chunk)?;
        }
    }
    Ok(())
}

fn overflow(g: &Group, value: f32, dtype: DType) -> Error {
    Error::DtypeOverflow {
        group: g.name.clone(),
        value,
        dtype: dtype.name(),
    }
}

pub fn encode_container(tv: &TaskVector, dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_container(tv, dtype, &mut out)?;
    Ok(out)
}

pub fn save_container(tv: &TaskVector, dtype: DType, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = io::BufWriter::new(file);
    write_container(tv, dtype, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Exact byte size of the container `save_container` would produce.
pub fn container_size(tv: &TaskVector, dtype: DType) -> Result<u64> {
    let metas = manifest_for(tv, dtype)?;
    let manifest = encode_manifest(&metas).len() as u64;
    let payload: u64 = metas.iter().map(TensorMeta::byte_len).sum();
    Ok(CONTAINER_MAGIC.len() as u64 + 8 + manifest + payload)
}

/// First 8 bytes (little-endian) of the SHA-256 of the f32 container encoding.
pub fn fingerprint(tv: &TaskVector) -> u64 {
    let mut hasher = Sha256::new();
    write_container(tv, DType::F32, HashWriter(&mut hasher))
        .expect("hashing a validated task vector cannot fail");
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

struct HashWriter<'a>(&'a mut Sha256);

impl Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
