//! Grid search over density and scale with a caller-supplied scorer.

use std::fmt::Display;

use crate::codec;
use crate::compress::{self, CompressedArtifact};
use crate::error::{Error, Result};
use crate::tensor_store::TaskVector;

pub const DEFAULT_K: [f64; 5] = [5.0, 10.0, 20.0, 30.0, 50.0];
pub const DEFAULT_ALPHA: [f64; 9] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// Densities in percent.
    pub k_values: Vec<f64>,
    pub alpha_values: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            k_values: DEFAULT_K.to_vec(),
            alpha_values: DEFAULT_ALPHA.to_vec(),
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.alpha_values.is_empty() {
            return Err(Error::InvalidGrid("grid axes must be non-empty".into()));
        }
        if let Some(k) = self.k_values.iter().find(|&&k| !(k > 0.0 && k <= 100.0)) {
            return Err(Error::InvalidGrid(format!("density {k} outside (0, 100]")));
        }
        if let Some(a) = self.alpha_values.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidGrid(format!("alpha {a} is not positive")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.k_values.len() * self.alpha_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k_percent: f64,
    pub alpha: f64,
    /// `-inf` when the cell failed.
    pub score: f64,
    pub size_bits: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Index into `rows`; `None` only when every cell failed.
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|i| &self.rows[i])
    }
}

/// Is `a` a better cell than `b`: higher score, then smaller size, then smaller alpha.
fn better(a: &SweepRow, b: &SweepRow) -> bool {
    a.score
        .total_cmp(&b.score)
        .then(b.size_bits.cmp(&a.size_bits))
        .then(b.alpha.total_cmp(&a.alpha))
        .is_gt()
}

/// Compresses `tau` at every grid cell (k outer, alpha inner) and scores it.
/// A failing cell is recorded and the sweep continues.
pub fn run_sweep<F, E>(tau: &TaskVector, grid: &SweepGrid, mut scorer: F) -> Result<SweepResult>
where
    F: FnMut(&CompressedArtifact) -> std::result::Result<f64, E>,
    E: Display,
{
    grid.validate()?;
    let mut rows = Vec::with_capacity(grid.len());
    for &k in &grid.k_values {
        for &alpha in &grid.alpha_values {
            let mut row = SweepRow {
                k_percent: k,
                alpha,
                score: f64::NEG_INFINITY,
                size_bits: 0,
                error: None,
            };
            match compress::compress(tau, k, alpha) {
                Ok(ca) => {
                    row.size_bits = ca.tensors.iter().map(codec::golomb_payload_bits).sum();
                    match scorer(&ca) {
                        Ok(s) if s.is_nan() => row.error = Some("scorer returned NaN".into()),
                        Ok(s) => row.score = s,
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            rows.push(row);
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.error.is_none())
        .fold(None, |acc: Option<usize>, (i, r)| match acc {
            Some(j) if !better(r, &rows[j]) => Some(j),
            _ => Some(i),
        });
    Ok(SweepResult { rows, best })
}

/// Negated Euclidean distance between `tau` and the artifact's reconstruction.
pub fn negative_reconstruction_error(
    tau: &TaskVector,
) -> impl Fn(&CompressedArtifact) -> Result<f64> + '_ {
    move |ca| {
        let groups = tau.groups();
        if ca.tensors.len() != groups.len()
            || ca.tensors.iter().zip(groups).any(|(t, g)| t.dim != g.len() as u64)
        {
            return Err(Error::InvalidGrid("artifact does not match the task vector".into()));
        }
        let sq: f64 = groups
            .iter()
            .zip(&ca.tensors)
            .map(|(g, t)| {
                g.data
                    .iter()
                    .zip(t.to_dense())
                    .map(|(&a, b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
            })
            .sum();
        Ok(-sq.sqrt())
    }
}

/// Outcome of [`recommend_alpha`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRecommendation {
    Fixed(f64),
    /// Outside the regime where a fixed scale is known to work; run the grid.
    SweepRequired,
}

/// `alpha = 1` for models with at least 13B parameters at density <= 20%.
pub fn recommend_alpha(model_params: u64, k_percent: f64) -> AlphaRecommendation {
    if model_params >= 13_000_000_000 && k_percent > 0.0 && k_percent <= 20.0 {
        AlphaRecommendation::Fixed(1.0)
    } else {
        AlphaRecommendation::SweepRequired
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau() -> TaskVector {
        TaskVector::from_flat("w", (0..64).map(|i| ((i * 37 % 64) as f32 - 31.5) / 16.0).collect())
            .unwrap()
    }

    #[test]
    fn default_grid_shape() {
        let g = SweepGrid::default();
        assert_eq!(g.len(), 45);
        g.validate().unwrap();
        assert!(SweepGrid { k_values: vec![], alpha_values: vec![1.0] }.validate().is_err());
        assert!(SweepGrid { k_values: vec![0.0], alpha_values: vec![1.0] }.validate().is_err());
        assert!(SweepGrid { k_values: vec![5.0], alpha_values: vec![-1.0] }.validate().is_err());
    }

    #[test]
    fn single_cell() {
        let grid = SweepGrid { k_values: vec![20.0], alpha_values: vec![2.0] };
        let r = run_sweep(&tau(), &grid, |_| Ok::<_, Error>(0.5)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.best, Some(0));
    }

    #[test]
    fn constant_scorer_prefers_small_then_low_alpha() {
        let r = run_sweep(&tau(), &SweepGrid::default(), |_| Ok::<_, Error>(1.0)).unwrap();
        let best = r.best_row().unwrap();
        assert_eq!((best.k_percent, best.alpha), (5.0, 0.5));
        let min_size = r.rows.iter().map(|r| r.size_bits).min().unwrap();
        assert_eq!(best.size_bits, min_size);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let grid = SweepGrid { k_values: vec![10.0, 50.0], alpha_values: vec![1.0] };
        let r = run_sweep(&tau(), &grid, |ca| {
            if ca.k_percent == 10.0 {
                Err("scorer crashed")
            } else {
                Ok(0.0)
            }
        })
        .unwrap();
        assert_eq!(r.rows[0].score, f64::NEG_INFINITY);
        assert!(r.rows[0].error.is_some());
        assert_eq!(r.best, Some(1));

        let none = run_sweep(&tau(), &grid, |_| Err::<f64, _>("nope")).unwrap();
        assert_eq!(none.best, None);
    }

    #[test]
    fn reconstruction_scorer_is_zero_for_exact_fit() {
        let t = TaskVector::from_flat("w", vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let ca = compress::compress(&t, 100.0, 1.0).unwrap();
        assert_eq!(negative_reconstruction_error(&t)(&ca).unwrap(), 0.0);
    }

    #[test]
    fn alpha_recommendation_regime() {
        assert_eq!(recommend_alpha(13_000_000_000, 20.0), AlphaRecommendation::Fixed(1.0));
        assert_eq!(recommend_alpha(3_000_000_000, 5.0), AlphaRecommendation::SweepRequired);
        assert_eq!(recommend_alpha(70_000_000_000, 50.0), AlphaRecommendation::SweepRequired);
    }
}
