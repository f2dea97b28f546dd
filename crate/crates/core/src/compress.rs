//! Top-k sparsification of the sign vector and quantization of the kept
//! magnitudes to one scale per tensor, plus the inverse direction.
//!
//! Selection ranks entries by magnitude, descending, and breaks ties by the
//! lower index. This makes the kept set a deterministic prefix of one total
//! order, so supports are nested across densities and recompressing a
//! reconstruction at the same density returns the same support.

use crate::decompose::{self, sign_of, SignMagnitude};
use crate::error::{Error, Result};
use crate::tensor_store::{self, Group, TaskVector};

/// Sparse ternary form of one tensor: `scale * sign` at `indices`, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryTensor {
    pub name: String,
    pub dim: u64,
    /// Strictly increasing, all `< dim`.
    pub indices: Vec<u64>,
    /// `+1` or `-1`, parallel to `indices`.
    pub signs: Vec<i8>,
    pub scale: f32,
}

impl TernaryTensor {
    pub fn new(
        name: impl Into<String>,
        dim: u64,
        indices: Vec<u64>,
        signs: Vec<i8>,
        scale: f32,
    ) -> Result<Self> {
        let t = TernaryTensor {
            name: name.into(),
            dim,
            indices,
            signs,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTernary(format!("`{}`: {msg}", self.name)));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.indices.len() != self.signs.len() {
            return bad(format!(
                "{} indices but {} signs",
                self.indices.len(),
                self.signs.len()
            ));
        }
        if !self.scale.is_finite() {
            return bad(format!("scale {} is not finite", self.scale));
        }
        if let Some(s) = self.signs.iter().find(|&&s| s != 1 && s != -1) {
            return bad(format!("sign {s} is not +-1"));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return bad("indices are not strictly increasing".into());
        }
        if let Some(&last) = self.indices.last() {
            if last >= self.dim {
                return bad(format!("index {last} out of range for dim {}", self.dim));
            }
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / self.dim as f64
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; self.dim as usize];
        for (&i, &s) in self.indices.iter().zip(&self.signs) {
            out[i as usize] = if s > 0 { self.scale } else { -self.scale };
        }
        out
    }
}

/// A compressed task vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedArtifact {
    pub tensors: Vec<TernaryTensor>,
    pub k_percent: f64,
    pub alpha: f64,
    pub source_fingerprint: u64,
}

impl CompressedArtifact {
    pub fn validate(&self) -> Result<()> {
        check_density(self.k_percent)?;
        check_alpha(self.alpha)?;
        for t in &self.tensors {
            t.validate()?;
            let slack = self.k_percent / 100.0 + 1.0 / t.dim as f64;
            if t.density() > slack {
                return Err(Error::InvalidTernary(format!(
                    "`{}` has density {} above k = {}%",
                    t.name,
                    t.density(),
                    self.k_percent
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> u64 {
        self.tensors.iter().map(|t| t.dim).sum()
    }

    pub fn nnz(&self) -> usize {
        self.tensors.iter().map(TernaryTensor::nnz).sum()
    }
}

/// Where the standard deviation entering each scale is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// Each tensor uses its own population std.
    #[default]
    PerGroup,
    /// Every tensor uses the std of the whole task vector.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressOptions {
    pub k_percent: f64,
    pub alpha: f64,
    pub sigma: SigmaMode,
}

impl CompressOptions {
    pub fn new(k_percent: f64, alpha: f64) -> Self {
        CompressOptions {
            k_percent,
            alpha,
            sigma: SigmaMode::PerGroup,
        }
    }
}

/// Kept positions of one group and their signs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseSigns {
    pub indices: Vec<u64>,
    pub signs: Vec<i8>,
}

fn check_density(k_percent: f64) -> Result<()> {
    if k_percent > 0.0 && k_percent <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidDensity(k_percent))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Number of entries kept in a group of `n`: `round(n * k / 100)` with halves
/// rounded up, clamped to `[1, n]`.
pub fn keep_count(n: usize, k_percent: f64) -> usize {
    let raw = (n as f64 * k_percent / 100.0 + 0.5).floor();
    (raw as usize).clamp(1, n.max(1))
}

/// Indices of the `keep` largest magnitudes under (magnitude desc, index asc),
/// returned ascending. Zero magnitudes are never selected.
pub(crate) fn top_indices(n: usize, keep: usize, magnitude: impl Fn(usize) -> f32) -> Result<Vec<u64>> {
    if n > u32::MAX as usize + 1 {
        return Err(Error::InvalidTaskVector(format!(
            "group of {n} elements exceeds the 2^32 selection limit"
        )));
    }
    // Non-negative finite floats order like their bit patterns, so one u64
    // key carries both the magnitude and the inverted index.
    let mut keys: Vec<u64> = (0..n)
        .filter_map(|i| {
            let m = magnitude(i);
            (m > 0.0).then(|| ((m.to_bits() as u64) << 32) | (u32::MAX - i as u32) as u64)
        })
        .collect();
    if keys.len() > keep {
        keys.select_nth_unstable_by(keep - 1, |a, b| b.cmp(a));
        keys.truncate(keep);
    }
    let mut idx: Vec<u64> = keys
        .into_iter()
        .map(|k| (u32::MAX - (k & 0xFFFF_FFFF) as u32) as u64)
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

pub fn sparsify_topk(sm: &SignMagnitude, k_percent: f64) -> Result<Vec<SparseSigns>> {
    check_density(k_percent)?;
    sm.signs
        .iter()
        .zip(&sm.magnitudes)
        .map(|(signs, mags)| {
            let keep = keep_count(mags.len(), k_percent);
            let indices = top_indices(mags.len(), keep, |i| mags[i])?;
            let signs = indices.iter().map(|&i| signs[i as usize]).collect();
            Ok(SparseSigns { indices, signs })
        })
        .collect()
}

pub fn quantize(
    names: &[String],
    dims: &[u64],
    sparse: Vec<SparseSigns>,
    sigmas: &[f32],
    alpha: f64,
) -> Result<Vec<TernaryTensor>> {
    check_alpha(alpha)?;
    if names.len() != sparse.len() || sigmas.len() != sparse.len() || dims.len() != sparse.len() {
        return Err(Error::InvalidTernary(format!(
            "{} groups, {} sigmas, {} names",
            sparse.len(),
            sigmas.len(),
            names.len()
        )));
    }
    sparse
        .into_iter()
        .enumerate()
        .map(|(g, s)| {
            let sigma = sigmas[g] as f64;
            let scale = (alpha * sigma) as f32;
            if !scale.is_finite() {
                return Err(Error::NonFiniteScale {
                    group: names[g].clone(),
                    alpha,
                    sigma,
                });
            }
            if scale == 0.0 && !s.indices.is_empty() {
                log::warn!("group `{}` has zero spread; its reconstruction is all zeros", names[g]);
            }
            TernaryTensor::new(names[g].clone(), dims[g], s.indices, s.signs, scale)
        })
        .collect()
}

pub fn compress(tau: &TaskVector, k_percent: f64, alpha: f64) -> Result<CompressedArtifact> {
    compress_with(tau, &CompressOptions::new(k_percent, alpha))
}

/// Same result as `quantize(sparsify_topk(sign_magnitude(tau)))` without
/// materializing the decomposition.
pub fn compress_with(tau: &TaskVector, opts: &CompressOptions) -> Result<CompressedArtifact> {
    check_density(opts.k_percent)?;
    check_alpha(opts.alpha)?;
    let sigmas = match opts.sigma {
        SigmaMode::PerGroup => decompose::group_sigmas(tau),
        SigmaMode::Pooled => vec![decompose::pooled_sigma(tau); tau.groups().len()],
    };
    let mut names = Vec::with_capacity(sigmas.len());
    let mut dims = Vec::with_capacity(sigmas.len());
    let mut sparse = Vec::with_capacity(sigmas.len());
    for g in tau.groups() {
        let keep = keep_count(g.len(), opts.k_percent);
        let indices = top_indices(g.len(), keep, |i| g.data[i].abs())?;
        let signs = indices.iter().map(|&i| sign_of(g.data[i as usize])).collect();
        names.push(g.name.clone());
        dims.push(g.len() as u64);
        sparse.push(SparseSigns { indices, signs });
    }
    let tensors = quantize(&names, &dims, sparse, &sigmas, opts.alpha)?;
    Ok(CompressedArtifact {
        tensors,
        k_percent: opts.k_percent,
        alpha: opts.alpha,
        source_fingerprint: tensor_store::fingerprint(tau),
    })
}

/// Dense flat groups with `+-scale` at the kept positions.
pub fn reconstruct(ca: &CompressedArtifact) -> Result<TaskVector> {
    TaskVector::new(
        ca.tensors
            .iter()
            .map(|t| Group::flat(t.name.clone(), t.to_dense()))
            .collect(),
    )
}

/// `theta_init + reconstruct(ca)`, keeping the shapes of `theta_init`.
pub fn apply(theta_init: &TaskVector, ca: &CompressedArtifact) -> Result<TaskVector> {
    if theta_init.groups().len() != ca.tensors.len() {
        return Err(Error::NameMismatch {
            left: format!("{} groups", theta_init.groups().len()),
            right: format!("{} tensors", ca.tensors.len()),
        });
    }
    let mut groups = Vec::with_capacity(ca.tensors.len());
    for (g, t) in theta_init.groups().iter().zip(&ca.tensors) {
        if g.name != t.name {
            return Err(Error::NameMismatch {
                left: g.name.clone(),
                right: t.name.clone(),
            });
        }
        if g.len() as u64 != t.dim {
            return Err(Error::ShapeMismatch {
                name: g.name.clone(),
                left: g.shape.clone(),
                right: vec![t.dim as usize],
            });
        }
        let mut data = g.data.clone();
        for (&i, &s) in t.indices.iter().zip(&t.signs) {
            data[i as usize] += if s > 0 { t.scale } else { -t.scale };
        }
        groups.push(Group::new(g.name.clone(), g.shape.clone(), data));
    }
    TaskVector::new(groups)
}
