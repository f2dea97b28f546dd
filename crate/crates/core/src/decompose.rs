//! Task-vector formation, sign/magnitude decomposition and distribution
//! statistics.

use crate::error::{Error, Result};
use crate::tensor_store::{Group, TaskVector};

/// Per-group signs in {-1, 0, +1} and magnitudes `|tau|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMagnitude {
    pub names: Vec<String>,
    pub signs: Vec<Vec<i8>>,
    pub magnitudes: Vec<Vec<f32>>,
}

impl SignMagnitude {
    /// Elementwise `sign * magnitude`, per group.
    pub fn recombine(&self) -> Vec<Vec<f32>> {
        self.signs
            .iter()
            .zip(&self.magnitudes)
            .map(|(s, m)| s.iter().zip(m).map(|(&s, &m)| s as f32 * m).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

/// Statistics per group and over the whole vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStats {
    pub per_group: Vec<(String, Moments)>,
    pub pooled: Moments,
}

/// `theta_ft - theta_init`, elementwise.
pub fn task_vector(theta_ft: &TaskVector, theta_init: &TaskVector) -> Result<TaskVector> {
    theta_ft.check_same_layout(theta_init)?;
    let groups = theta_ft
        .groups()
        .iter()
        .zip(theta_init.groups())
        .map(|(ft, init)| {
            let data = ft.data.iter().zip(&init.data).map(|(a, b)| a - b).collect();
            Group::new(ft.name.clone(), ft.shape.clone(), data)
        })
        .collect();
    TaskVector::new(groups)
}

/// Sign of `v` with `sgn(0) = sgn(-0) = 0`.
#[inline]
pub fn sign_of(v: f32) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

pub fn sign_magnitude(tau: &TaskVector) -> SignMagnitude {
    let mut out = SignMagnitude {
        names: Vec::with_capacity(tau.groups().len()),
        signs: Vec::with_capacity(tau.groups().len()),
        magnitudes: Vec::with_capacity(tau.groups().len()),
    };
    for g in tau.groups() {
        out.names.push(g.name.clone());
        out.signs.push(g.data.iter().map(|&v| sign_of(v)).collect());
        out.magnitudes.push(g.data.iter().map(|v| v.abs()).collect());
    }
    out
}

/// Moments of a slice, accumulated in double precision.
pub fn moments(values: &[f32]) -> Result<Moments> {
    moments_iter(values.iter().copied(), values.len())
}

fn moments_iter(values: impl Iterator<Item = f32> + Clone, count: usize) -> Result<Moments> {
    if count == 0 {
        return Err(Error::EmptyVector);
    }
    let n = count as f64;
    let (mut sum, mut max, mut min) = (0.0f64, f64::NEG_INFINITY, f64::INFINITY);
    for v in values.clone() {
        let v = v as f64;
        sum += v;
        max = max.max(v);
        min = min.min(v);
    }
    let mean = sum / n;
    // two-pass variance
    let ss: f64 = values.map(|v| (v as f64 - mean).powi(2)).sum();
    Ok(Moments {
        count,
        // keep min <= mean <= max under rounding
        mean: mean.clamp(min, max),
        std: (ss / n).sqrt(),
        max,
        min,
    })
}

pub fn stats(tau: &TaskVector) -> Result<VectorStats> {
    let per_group = tau
        .groups()
        .iter()
        .map(|g| Ok((g.name.clone(), moments(&g.data)?)))
        .collect::<Result<Vec<_>>>()?;
    let pooled = moments_iter(tau.values(), tau.dim())?;
    Ok(VectorStats { per_group, pooled })
}

/// Population standard deviation of each group, rounded to working precision.
pub fn group_sigmas(tau: &TaskVector) -> Vec<f32> {
    tau.groups()
        .iter()
        .map(|g| moments(&g.data).map(|m| m.std as f32).unwrap_or(0.0))
        .collect()
}

pub fn pooled_sigma(tau: &TaskVector) -> f32 {
    moments_iter(tau.values(), tau.dim())
        .map(|m| m.std as f32)
        .unwrap_or(0.0)
}
