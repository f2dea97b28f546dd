//! Popcount kernels over the dual-bitmask form of a ternary tensor.
//!
//! Masks are stored as 64-bit words; bit `i % 64` of word `i / 64` (LSB
//! first) marks index `i`. Bits past `dim` are always zero.

use crate::compress::TernaryTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BitmaskPair {
    pub dim: usize,
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
    pub scale: f32,
}

fn words(dim: usize) -> usize {
    dim.div_ceil(64)
}

impl BitmaskPair {
    pub fn from_ternary(t: &TernaryTensor) -> Self {
        let dim = t.dim as usize;
        let mut pos = vec![0u64; words(dim)];
        let mut neg = vec![0u64; words(dim)];
        for (&i, &s) in t.indices.iter().zip(&t.signs) {
            let mask = if s > 0 { &mut pos } else { &mut neg };
            mask[(i / 64) as usize] |= 1 << (i % 64);
        }
        BitmaskPair {
            dim,
            pos,
            neg,
            scale: t.scale,
        }
    }

    pub fn to_ternary(&self, name: impl Into<String>) -> TernaryTensor {
        let mut indices = Vec::with_capacity(self.nnz() as usize);
        let mut signs = Vec::with_capacity(indices.capacity());
        for (w, (&p, &n)) in self.pos.iter().zip(&self.neg).enumerate() {
            let mut any = p | n;
            while any != 0 {
                let bit = any.trailing_zeros() as u64;
                indices.push(w as u64 * 64 + bit);
                signs.push(if p >> bit & 1 == 1 { 1 } else { -1 });
                any &= any - 1;
            }
        }
        TernaryTensor {
            name: name.into(),
            dim: self.dim as u64,
            indices,
            signs,
            scale: self.scale,
        }
    }

    /// Same support with every sign flipped.
    pub fn negated(&self) -> Self {
        BitmaskPair {
            dim: self.dim,
            pos: self.neg.clone(),
            neg: self.pos.clone(),
            scale: self.scale,
        }
    }

    pub fn nnz(&self) -> u64 {
        popcount(&self.pos) + popcount(&self.neg)
    }

    /// Squared Euclidean norm of the reconstruction.
    pub fn norm_sq(&self) -> f64 {
        let s = self.scale as f64;
        s * s * self.nnz() as f64
    }
}

fn popcount(words: &[u64]) -> u64 {
    words.iter().map(|w| w.count_ones() as u64).sum()
}

fn check_dims(a: &BitmaskPair, b: &BitmaskPair) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch(a.dim, b.dim));
    }
    Ok(())
}

/// Agreement counts between two supports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Overlap {
    same: u64,
    opposite: u64,
    only_a: u64,
    only_b: u64,
}

fn overlap(a: &BitmaskPair, b: &BitmaskPair) -> Overlap {
    let mut o = Overlap::default();
    for i in 0..a.pos.len() {
        let (ap, an, bp, bn) = (a.pos[i], a.neg[i], b.pos[i], b.neg[i]);
        let (sa, sb) = (ap | an, bp | bn);
        o.same += ((ap & bp) | (an & bn)).count_ones() as u64;
        o.opposite += ((ap & bn) | (an & bp)).count_ones() as u64;
        o.only_a += (sa & !sb).count_ones() as u64;
        o.only_b += (sb & !sa).count_ones() as u64;
    }
    o
}

/// Dot product of the two reconstructions:
/// `sa * sb * (|P∧P'| + |N∧N'| - |P∧N'| - |N∧P'|)`.
pub fn dot(a: &BitmaskPair, b: &BitmaskPair) -> Result<f64> {
    check_dims(a, b)?;
    let mut count: i64 = 0;
    for i in 0..a.pos.len() {
        count += ((a.pos[i] & b.pos[i]).count_ones() + (a.neg[i] & b.neg[i]).count_ones()) as i64;
        count -= ((a.pos[i] & b.neg[i]).count_ones() + (a.neg[i] & b.pos[i]).count_ones()) as i64;
    }
    Ok(a.scale as f64 * b.scale as f64 * count as f64)
}

/// Hamming distance over both masks. A `+1` against `-1` counts twice.
pub fn sign_distance(a: &BitmaskPair, b: &BitmaskPair) -> Result<u64> {
    check_dims(a, b)?;
    Ok(a.pos
        .iter()
        .zip(&b.pos)
        .chain(a.neg.iter().zip(&b.neg))
        .map(|(x, y)| (x ^ y).count_ones() as u64)
        .sum())
}

/// Euclidean distance between the reconstructions.
///
/// Equal to `sqrt(|a|^2 + |b|^2 - 2 a.b)`, evaluated per overlap class so
/// that nearly identical inputs do not cancel catastrophically.
pub fn scaled_l2_distance(a: &BitmaskPair, b: &BitmaskPair) -> Result<f64> {
    check_dims(a, b)?;
    let o = overlap(a, b);
    let (sa, sb) = (a.scale as f64, b.scale as f64);
    let sq = o.only_a as f64 * sa * sa
        + o.only_b as f64 * sb * sb
        + o.same as f64 * (sa - sb) * (sa - sb)
        + o.opposite as f64 * (sa + sb) * (sa + sb);
    Ok(sq.sqrt())
}

/// Dense sum of the reconstructions, accumulated in input order.
pub fn accumulate(vs: &[BitmaskPair]) -> Result<Vec<f32>> {
    let first = vs.first().ok_or(Error::EmptyList)?;
    for v in &vs[1..] {
        check_dims(first, v)?;
    }
    let mut out = vec![0.0f32; first.dim];
    for v in vs {
        for (w, (&p, &n)) in v.pos.iter().zip(&v.neg).enumerate() {
            let base = w * 64;
            let mut bits = p;
            while bits != 0 {
                out[base + bits.trailing_zeros() as usize] += v.scale;
                bits &= bits - 1;
            }
            let mut bits = n;
            while bits != 0 {
                out[base + bits.trailing_zeros() as usize] -= v.scale;
                bits &= bits - 1;
            }
        }
    }
    Ok(out)
}
