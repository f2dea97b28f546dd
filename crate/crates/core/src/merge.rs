//! Merging several task vectors into one: averaging, task arithmetic and
//! TIES (trim, elect sign, disjoint mean).
//!
//! Compressed inputs are reconstructed densely first, so every method gives
//! the same answer on an artifact as on its reconstruction.

use std::fmt;

use crate::compress::{self, keep_count, CompressedArtifact};
use crate::error::{Error, Result};
use crate::tensor_store::{Group, TaskVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMethod {
    Average,
    TaskArithmetic,
    Ties,
}

impl fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMethod::Average => "average",
            MergeMethod::TaskArithmetic => "task-arithmetic",
            MergeMethod::Ties => "ties",
        })
    }
}

impl std::str::FromStr for MergeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(MergeMethod::Average),
            "task-arithmetic" | "task_arithmetic" | "ta" => Ok(MergeMethod::TaskArithmetic),
            "ties" => Ok(MergeMethod::Ties),
            _ => Err(Error::InvalidMerge(format!("unknown method `{s}`"))),
        }
    }
}

/// Method plus parameters. `lambda` scales the merged vector; `trim_density`
/// (percent kept per tensor) is used by TIES only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeSpec {
    pub method: MergeMethod,
    pub lambda: f64,
    pub trim_density: f64,
}

impl MergeSpec {
    pub fn new(method: MergeMethod) -> Self {
        MergeSpec {
            method,
            lambda: 1.0,
            trim_density: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::InvalidMerge(format!("lambda {} is not finite", self.lambda)));
        }
        if !(self.trim_density > 0.0 && self.trim_density <= 100.0) {
            return Err(Error::InvalidMerge(format!(
                "trim density {} outside (0, 100]",
                self.trim_density
            )));
        }
        Ok(())
    }
}

/// Lambda values an evaluation harness would try by default.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.5, 0.8, 1.0, 1.3, 1.5];

fn check_inputs(taus: &[TaskVector]) -> Result<&TaskVector> {
    let first = taus.first().ok_or(Error::EmptyList)?;
    for t in &taus[1..] {
        first.check_same_layout(t)?;
    }
    Ok(first)
}

/// Builds a vector shaped like `template`, computing each element from the
/// column of input values at that position.
fn combine(
    taus: &[TaskVector],
    mut per_group: impl FnMut(usize, &[&[f32]]) -> Vec<f32>,
) -> Result<TaskVector> {
    let template = check_inputs(taus)?;
    let groups = template
        .groups()
        .iter()
        .enumerate()
        .map(|(g, tg)| {
            let cols: Vec<&[f32]> = taus.iter().map(|t| t.groups()[g].data.as_slice()).collect();
            Group::new(tg.name.clone(), tg.shape.clone(), per_group(g, &cols))
        })
        .collect();
    TaskVector::new(groups)
}

fn scaled_sum(taus: &[TaskVector], factor: f64) -> Result<TaskVector> {
    combine(taus, |_, cols| {
        (0..cols[0].len())
            .map(|i| (cols.iter().map(|c| c[i] as f64).sum::<f64>() * factor) as f32)
            .collect()
    })
}

pub fn merge_average(taus: &[TaskVector]) -> Result<TaskVector> {
    let n = taus.len() as f64;
    combine(taus, |_, cols| {
        (0..cols[0].len())
            .map(|i| (cols.iter().map(|c| c[i] as f64).sum::<f64>() / n) as f32)
            .collect()
    })
}

/// `lambda * sum(taus)`.
pub fn merge_task_arithmetic(taus: &[TaskVector], lambda: f64) -> Result<TaskVector> {
    if !lambda.is_finite() {
        return Err(Error::InvalidMerge(format!("lambda {lambda} is not finite")));
    }
    scaled_sum(taus, lambda)
}

/// Keeps the top `density`% magnitudes of each group, zeroing the rest.
pub fn trim(tau: &TaskVector, density: f64) -> Result<TaskVector> {
    if !(density > 0.0 && density <= 100.0) {
        return Err(Error::InvalidDensity(density));
    }
    let groups = tau
        .groups()
        .iter()
        .map(|g| {
            let keep = keep_count(g.len(), density);
            let idx = compress::top_indices(g.len(), keep, |i| g.data[i].abs())?;
            let mut data = vec![0.0f32; g.len()];
            for i in idx {
                data[i as usize] = g.data[i as usize];
            }
            Ok(Group::new(g.name.clone(), g.shape.clone(), data))
        })
        .collect::<Result<Vec<_>>>()?;
    TaskVector::new(groups)
}

/// TIES merging: trim each input, elect the sign of the summed trimmed
/// values per coordinate (a zero sum elects nothing and yields 0), average
/// the trimmed values that agree with the elected sign, scale by `lambda`.
pub fn merge_ties(taus: &[TaskVector], lambda: f64, trim_density: f64) -> Result<TaskVector> {
    MergeSpec {
        method: MergeMethod::Ties,
        lambda,
        trim_density,
    }
    .validate()?;
    check_inputs(taus)?;
    let trimmed = taus
        .iter()
        .map(|t| trim(t, trim_density))
        .collect::<Result<Vec<_>>>()?;
    combine(&trimmed, |_, cols| {
        (0..cols[0].len())
            .map(|i| {
                let total: f64 = cols.iter().map(|c| c[i] as f64).sum();
                if total == 0.0 {
                    return 0.0;
                }
                let (mut sum, mut count) = (0.0f64, 0u32);
                for c in cols {
                    let v = c[i] as f64;
                    if v != 0.0 && (v > 0.0) == (total > 0.0) {
                        sum += v;
                        count += 1;
                    }
                }
                if count == 0 {
                    0.0
                } else {
                    (sum / count as f64 * lambda) as f32
                }
            })
            .collect()
    })
}

/// Dispatches on `spec.method`; averaging is also scaled by `lambda`.
pub fn merge(taus: &[TaskVector], spec: &MergeSpec) -> Result<TaskVector> {
    spec.validate()?;
    match spec.method {
        MergeMethod::Average => {
            let n = taus.len() as f64;
            if spec.lambda == 1.0 {
                merge_average(taus)
            } else {
                check_inputs(taus)?;
                scaled_sum(taus, spec.lambda / n)
            }
        }
        MergeMethod::TaskArithmetic => merge_task_arithmetic(taus, spec.lambda),
        MergeMethod::Ties => merge_ties(taus, spec.lambda, spec.trim_density),
    }
}

pub fn merge_compressed(artifacts: &[CompressedArtifact], spec: &MergeSpec) -> Result<TaskVector> {
    let dense = artifacts
        .iter()
        .map(compress::reconstruct)
        .collect::<Result<Vec<_>>>()?;
    merge(&dense, spec)
}
