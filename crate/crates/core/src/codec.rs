//! The `CPT1` blob: bit-exact serialization of compressed artifacts.
//!
//! ```text
//! "CPT1"  u8 version (1)  u8 format (0 = golomb, 1 = bitmask)  u32 tensor count
//! per tensor:
//!   u32 name length, name bytes (UTF-8)
//!   u64 dim, u64 nonzero count
//!   f32 scale (IEEE binary32)
//!   u8  rice parameter b            (golomb only)
//! per tensor payload, each zero-padded to a byte boundary, bits MSB-first:
//!   golomb:  per nonzero, Rice(b) code of the zero run before it, then a
//!            sign bit (1 = +1, 0 = -1)
//!   bitmask: positive mask (dim bits, padded), negative mask (dim bits, padded)
//! trailer:
//!   f64 k_percent, f64 alpha, u64 source fingerprint
//! ```
//!
//! All integers and floats are little-endian. Decoding accepts only the
//! canonical encoding, so `encode(decode(bytes)) == bytes` whenever decoding
//! succeeds.

use std::collections::HashSet;
use std::fmt;

use crate::bits::{self, BitReader, BitWriter};
use crate::compress::{CompressedArtifact, TernaryTensor};
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"CPT1";
pub const BLOB_VERSION: u8 = 1;
const TRAILER_LEN: usize = 24;
/// Bits charged for the shared scale in size accounting.
pub const SCALE_ACCOUNTING_BITS: u64 = 16;
const MAX_RICE_PARAMETER: u32 = 32;
/// Largest tensor the compressor can produce (its selection keys hold 32-bit
/// indices); larger dims in a blob are rejected.
pub const MAX_TENSOR_DIM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Golomb,
    Bitmask,
}

impl Format {
    fn tag(self) -> u8 {
        match self {
            Format::Golomb => 0,
            Format::Bitmask => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Format::Golomb),
            1 => Ok(Format::Bitmask),
            t => Err(Error::HeaderMismatch(format!("unknown format tag {t}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Golomb => "golomb",
            Format::Bitmask => "bitmask",
        })
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "golomb" => Ok(Format::Golomb),
            "bitmask" => Ok(Format::Bitmask),
            _ => Err(Error::HeaderMismatch(format!("unknown format `{s}`"))),
        }
    }
}

// ── Entropy accounting ──────────────────────────────────────────────────

/// Entropy per parameter of a sparse ternary vector of density `k` with
/// uniformly distributed signs: `-((1-k) log2(1-k) + k log2(k/2))`.
pub fn entropy_per_param(k: f64) -> Result<f64> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::DomainError(format!("density {k} outside (0, 1]")));
    }
    let zeros = if k == 1.0 { 0.0 } else { (1.0 - k) * (1.0 - k).log2() };
    Ok(-(zeros + k * (k / 2.0).log2()))
}

/// Entropy of a `d`-parameter update plus 16 bits for the scale.
pub fn entropy_bits(k: f64, d: u64) -> Result<f64> {
    if d == 0 {
        return Err(Error::DomainError("dimension must be positive".into()));
    }
    Ok(entropy_per_param(k)? * d as f64 + SCALE_ACCOUNTING_BITS as f64)
}

/// Rice parameter and expected bits per nonzero position for density `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GolombParams {
    pub p: f64,
    pub b_star: u32,
    pub avg_bits_per_pos: f64,
}

/// `b* = 1 + floor(log2(ln(phi - 1) / ln(1 - p)))`, clamped to at least 1,
/// and `b_pos = b* + 1 / (1 - (1 - p)^(2^b*))`.
pub fn golomb_params(p: f64) -> Result<GolombParams> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("probability {p} outside (0, 1)")));
    }
    let phi = (5f64.sqrt() + 1.0) / 2.0;
    let raw = 1.0 + ((phi - 1.0).ln() / (-p).ln_1p()).log2().floor();
    let b_star = raw.clamp(1.0, MAX_RICE_PARAMETER as f64) as u32;
    let miss = ((-p).ln_1p() * 2f64.powi(b_star as i32)).exp();
    Ok(GolombParams {
        p,
        b_star,
        avg_bits_per_pos: b_star as f64 + 1.0 / (1.0 - miss),
    })
}

/// The Rice parameter the encoder uses for `nnz` nonzeros out of `dim`.
/// Zero for empty tensors, where no code is written.
pub fn rice_parameter(nnz: u64, dim: u64) -> u8 {
    if nnz == 0 {
        return 0;
    }
    if nnz >= dim {
        return 1;
    }
    golomb_params(nnz as f64 / dim as f64)
        .map(|g| g.b_star as u8)
        .unwrap_or(1)
}

// ── Tensor-level codecs ─────────────────────────────────────────────────

/// One tensor's payload with its unpadded length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorPayload {
    pub bytes: Vec<u8>,
    pub bits: u64,
}

#[inline]
fn rice_code_len(gap: u64, b: u8) -> u64 {
    (gap >> b) + 1 + b as u64
}

/// Exact Golomb payload size of `t` in bits, without encoding it.
pub fn golomb_payload_bits(t: &TernaryTensor) -> u64 {
    let b = rice_parameter(t.nnz() as u64, t.dim);
    let mut prev: i64 = -1;
    let mut bits = 0;
    for &i in &t.indices {
        let gap = (i as i64 - prev - 1) as u64;
        bits += rice_code_len(gap, b) + 1;
        prev = i as i64;
    }
    bits
}

pub fn encode_golomb(t: &TernaryTensor) -> TensorPayload {
    let b = rice_parameter(t.nnz() as u64, t.dim);
    let mut w = BitWriter::with_capacity((t.nnz() * (b as usize + 3)).div_ceil(8));
    let mut prev: i64 = -1;
    for (&i, &s) in t.indices.iter().zip(&t.signs) {
        let gap = (i as i64 - prev - 1) as u64;
        let q = gap >> b;
        // remainder and sign, as b + 1 bits
        let tail = ((gap & ((1u64 << b) - 1)) << 1) | (s > 0) as u64;
        if q + b as u64 + 2 <= bits::MAX_WRITE as u64 {
            w.write_bits((((1u64 << q) - 1) << (b + 2)) | tail, q as u32 + b as u32 + 2);
        } else {
            w.write_unary(q);
            w.write_bits(tail, b as u32 + 1);
        }
        prev = i as i64;
    }
    let bits = w.bits_written();
    TensorPayload {
        bytes: w.finish(),
        bits,
    }
}

/// Header fields of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorHeader {
    pub name: String,
    pub dim: u64,
    pub nnz: u64,
    pub scale: f32,
    /// Present for golomb blobs only.
    pub rice: Option<u8>,
}

impl TensorHeader {
    fn for_tensor(t: &TernaryTensor, format: Format) -> Self {
        TensorHeader {
            name: t.name.clone(),
            dim: t.dim,
            nnz: t.nnz() as u64,
            scale: t.scale,
            rice: match format {
                Format::Golomb => Some(rice_parameter(t.nnz() as u64, t.dim)),
                Format::Bitmask => None,
            },
        }
    }
}

fn check_header(h: &TensorHeader) -> Result<()> {
    if h.dim == 0 || h.nnz > h.dim || !h.scale.is_finite() {
        return Err(Error::HeaderMismatch(format!(
            "`{}`: {} nonzeros in dim {}, scale {}",
            h.name, h.nnz, h.dim, h.scale
        )));
    }
    Ok(())
}

/// The decoders emit strictly increasing in-range indices and +-1 signs,
/// and `check_header` vetted the rest.
fn assemble(h: &TensorHeader, indices: Vec<u64>, signs: Vec<i8>) -> TernaryTensor {
    TernaryTensor {
        name: h.name.clone(),
        dim: h.dim,
        indices,
        signs,
        scale: h.scale,
    }
}

fn check_padding(r: &BitReader<'_>, bytes: &[u8]) -> Result<usize> {
    let used = r.position().div_ceil(8) as usize;
    let tail_bits = (used as u64 * 8 - r.position()) as u32;
    if tail_bits > 0 && bytes[used - 1] & ((1u8 << tail_bits) - 1) != 0 {
        return Err(Error::BitstreamCorrupt("non-zero padding bits".into()));
    }
    Ok(used)
}

/// Decodes one golomb payload at the start of `bytes`; returns the tensor
/// and the number of bytes it occupied.
pub fn decode_golomb(h: &TensorHeader, bytes: &[u8]) -> Result<(TernaryTensor, usize)> {
    decode_golomb_counted(h, bytes).map(|(t, used, _)| (t, used))
}

/// As [`decode_golomb`], also returning the payload length in bits.
fn decode_golomb_counted(h: &TensorHeader, bytes: &[u8]) -> Result<(TernaryTensor, usize, u64)> {
    check_header(h)?;
    let b = h
        .rice
        .ok_or_else(|| Error::HeaderMismatch("golomb tensor without rice parameter".into()))?;
    let expected = rice_parameter(h.nnz, h.dim);
    if b != expected {
        return Err(Error::HeaderMismatch(format!(
            "`{}`: rice parameter {b}, expected {expected}",
            h.name
        )));
    }
    let mut r = BitReader::new(bytes);
    // every code takes at least b + 2 bits
    if h.nnz.saturating_mul(b as u64 + 2) > r.remaining() {
        return Err(Error::BitstreamCorrupt(format!(
            "`{}`: {} nonzeros cannot fit in {} bits",
            h.name,
            h.nnz,
            r.remaining()
        )));
    }
    let exhausted = || Error::BitstreamCorrupt(format!("`{}`: payload exhausted early", h.name));
    let overrun = || Error::BitstreamCorrupt(format!("`{}`: gap overruns dim", h.name));
    let limit = h.dim >> b;
    let mut indices = vec![0u64; h.nnz as usize];
    let mut signs = vec![0i8; h.nnz as usize];
    let mut next = 0u64;
    for (slot, sign) in indices.iter_mut().zip(signs.iter_mut()) {
        let (q, tail) = r.read_rice(b as u32 + 1, limit).ok_or_else(exhausted)?;
        if q > limit {
            return Err(overrun());
        }
        // q <= dim >> b keeps this far from overflow
        let idx = next + ((q << b) | (tail >> 1));
        if idx >= h.dim {
            return Err(overrun());
        }
        *slot = idx;
        *sign = 2 * (tail & 1) as i8 - 1;
        next = idx + 1;
    }
    let used = check_padding(&r, bytes)?;
    Ok((assemble(h, indices, signs), used, r.position()))
}

fn mask_bytes(dim: u64) -> u64 {
    dim.div_ceil(8)
}

pub fn encode_bitmask(t: &TernaryTensor) -> TensorPayload {
    let n = mask_bytes(t.dim) as usize;
    let mut bytes = vec![0u8; 2 * n];
    for (&i, &s) in t.indices.iter().zip(&t.signs) {
        let base = if s > 0 { 0 } else { n };
        bytes[base + (i / 8) as usize] |= 0x80 >> (i % 8);
    }
    TensorPayload {
        bytes,
        bits: 2 * t.dim,
    }
}

pub fn decode_bitmask(h: &TensorHeader, bytes: &[u8]) -> Result<(TernaryTensor, usize)> {
    check_header(h)?;
    let n = mask_bytes(h.dim);
    if bytes.len() as u64 / 2 < n {
        return Err(Error::BitstreamCorrupt(format!(
            "`{}`: masks need {} bytes, {} left",
            h.name,
            2 * n,
            bytes.len()
        )));
    }
    let n = n as usize;
    let (pos, neg) = (&bytes[..n], &bytes[n..2 * n]);
    let tail = (n as u64 * 8 - h.dim) as u32;
    if tail > 0 {
        let pad = (1u8 << tail) - 1;
        if pos[n - 1] & pad != 0 || neg[n - 1] & pad != 0 {
            return Err(Error::BitstreamCorrupt("non-zero padding bits".into()));
        }
    }
    if let Some((i, both)) = pos.iter().zip(neg).map(|(p, m)| p & m).enumerate().find(|(_, b)| *b != 0) {
        return Err(Error::MaskOverlap(i as u64 * 8 + both.leading_zeros() as u64));
    }
    let count: u64 = pos.iter().chain(neg).map(|b| b.count_ones() as u64).sum();
    if count != h.nnz {
        return Err(Error::BitstreamCorrupt(format!(
            "`{}`: masks hold {count} entries, header says {}",
            h.name, h.nnz
        )));
    }
    let mut indices = vec![0u64; count as usize];
    let mut signs = vec![0i8; count as usize];
    let word = |chunk: &[u8]| {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        u64::from_be_bytes(buf)
    };
    let mut k = 0;
    for (w, (pc, nc)) in pos.chunks(8).zip(neg.chunks(8)).enumerate() {
        let (p, m) = (word(pc), word(nc));
        let mut any = p | m;
        while any != 0 {
            let bit = any.leading_zeros();
            indices[k] = w as u64 * 64 + bit as u64;
            signs[k] = 2 * ((p >> (63 - bit)) & 1) as i8 - 1;
            k += 1;
            any &= !(1u64 << 63 >> bit);
        }
    }
    Ok((assemble(h, indices, signs), 2 * n))
}

// ── Artifact-level blob ─────────────────────────────────────────────────

/// A serialized artifact: headers, per-tensor payloads and trailer fields.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlob {
    pub format: Format,
    pub headers: Vec<TensorHeader>,
    pub payloads: Vec<TensorPayload>,
    pub k_percent: f64,
    pub alpha: f64,
    pub source_fingerprint: u64,
}

pub fn encode(ca: &CompressedArtifact, format: Format) -> EncodedBlob {
    let payloads = ca
        .tensors
        .iter()
        .map(|t| match format {
            Format::Golomb => encode_golomb(t),
            Format::Bitmask => encode_bitmask(t),
        })
        .collect();
    EncodedBlob {
        format,
        headers: ca
            .tensors
            .iter()
            .map(|t| TensorHeader::for_tensor(t, format))
            .collect(),
        payloads,
        k_percent: ca.k_percent,
        alpha: ca.alpha,
        source_fingerprint: ca.source_fingerprint,
    }
}

impl EncodedBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.push(self.format.tag());
        out.extend_from_slice(&(self.headers.len() as u32).to_le_bytes());
        for h in &self.headers {
            out.extend_from_slice(&(h.name.len() as u32).to_le_bytes());
            out.extend_from_slice(h.name.as_bytes());
            out.extend_from_slice(&h.dim.to_le_bytes());
            out.extend_from_slice(&h.nnz.to_le_bytes());
            out.extend_from_slice(&h.scale.to_le_bytes());
            if let Some(b) = h.rice {
                out.push(b);
            }
        }
        for p in &self.payloads {
            out.extend_from_slice(&p.bytes);
        }
        out.extend_from_slice(&self.k_percent.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.source_fingerprint.to_le_bytes());
        out
    }

    /// Payload bits before byte padding, summed over tensors.
    pub fn measured_size_bits(&self) -> u64 {
        self.payloads.iter().map(|p| p.bits).sum()
    }

    /// Payload bits plus 16 bits per tensor scale.
    pub fn accounted_size_bits(&self) -> u64 {
        self.measured_size_bits() + SCALE_ACCOUNTING_BITS * self.headers.len() as u64
    }

    pub fn dim(&self) -> u64 {
        self.headers.iter().map(|h| h.dim).sum()
    }

    pub fn nnz(&self) -> u64 {
        self.headers.iter().map(|h| h.nnz).sum()
    }
}

/// Payload bits of `blob`; see [`EncodedBlob::measured_size_bits`].
pub fn measured_size_bits(blob: &EncodedBlob) -> u64 {
    blob.measured_size_bits()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::HeaderMismatch(format!("header ends early at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
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

/// Parses and fully decodes a blob into its artifact, returning the
/// structured blob alongside.
pub fn parse_blob(bytes: &[u8]) -> Result<(EncodedBlob, CompressedArtifact)> {
    let (blob, ca) = parse(bytes, true)?;
    Ok((blob.expect("payloads kept"), ca))
}

fn parse(bytes: &[u8], keep_payloads: bool) -> Result<(Option<EncodedBlob>, CompressedArtifact)> {
    if bytes.len() < BLOB_MAGIC.len() + 2 + 4 + TRAILER_LEN {
        return Err(Error::HeaderMismatch("blob too short".into()));
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(Error::HeaderMismatch("missing CPT1 magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u8()?;
    if version != BLOB_VERSION {
        return Err(Error::HeaderMismatch(format!("unsupported version {version}")));
    }
    let format = Format::from_tag(r.u8()?)?;
    let count = r.u32()?;

    let mut headers = Vec::new();
    let mut names = HashSet::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::HeaderMismatch("tensor name is not UTF-8".into()))?
            .to_owned();
        if !names.insert(name.clone()) {
            return Err(Error::HeaderMismatch(format!("duplicate tensor `{name}`")));
        }
        let dim = r.u64()?;
        let nnz = r.u64()?;
        let scale = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let rice = match format {
            Format::Golomb => Some(r.u8()?),
            Format::Bitmask => None,
        };
        if dim == 0 || nnz > dim {
            return Err(Error::HeaderMismatch(format!(
                "`{name}`: {nnz} nonzeros in dim {dim}"
            )));
        }
        if dim > MAX_TENSOR_DIM {
            return Err(Error::HeaderMismatch(format!("`{name}`: dim {dim} too large")));
        }
        if !scale.is_finite() {
            return Err(Error::HeaderMismatch(format!("`{name}`: non-finite scale")));
        }
        headers.push(TensorHeader {
            name,
            dim,
            nnz,
            scale,
            rice,
        });
    }

    let mut payload = &body[r.pos..];
    let mut payloads = Vec::with_capacity(headers.len());
    let mut tensors = Vec::with_capacity(headers.len());
    for h in &headers {
        let (t, used, bits) = match format {
            Format::Golomb => decode_golomb_counted(h, payload)?,
            Format::Bitmask => {
                let (t, used) = decode_bitmask(h, payload)?;
                (t, used, 2 * h.dim)
            }
        };
        if keep_payloads {
            payloads.push(TensorPayload {
                bytes: payload[..used].to_vec(),
                bits,
            });
        }
        tensors.push(t);
        payload = &payload[used..];
    }
    if !payload.is_empty() {
        return Err(Error::BitstreamCorrupt(format!(
            "{} bytes after the last payload",
            payload.len()
        )));
    }

    let k_percent = f64::from_le_bytes(trailer[0..8].try_into().unwrap());
    let alpha = f64::from_le_bytes(trailer[8..16].try_into().unwrap());
    let source_fingerprint = u64::from_le_bytes(trailer[16..24].try_into().unwrap());
    let ca = CompressedArtifact {
        tensors,
        k_percent,
        alpha,
        source_fingerprint,
    };
    ca.validate()
        .map_err(|e| Error::HeaderMismatch(format!("trailer: {e}")))?;
    let blob = keep_payloads.then(|| EncodedBlob {
        format,
        headers,
        payloads,
        k_percent,
        alpha,
        source_fingerprint,
    });
    Ok((blob, ca))
}

pub fn decode(bytes: &[u8]) -> Result<CompressedArtifact> {
    parse(bytes, false).map(|(_, ca)| ca)
}

pub fn encode_bytes(ca: &CompressedArtifact, format: Format) -> Vec<u8> {
    encode(ca, format).to_bytes()
}
