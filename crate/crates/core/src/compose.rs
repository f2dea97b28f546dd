//! Weighted composition of low-rank expert modules.
//!
//! For experts `(A_i, B_i)` and weights `w_i`, the composed module stores
//! `A = sum w_i A_i` and `B = sum w_i B_i` for every layer. Its effective
//! update `B A` is therefore quadratic in the weights; it is not the
//! weighted sum of the experts' individual updates.
//!
//! Layers are recognized by group name: a rank-2 group whose name contains
//! `lora_A` pairs with the group of the same name with `lora_B` in its place.
//! `A` has shape `[rank, in]` and `B` has shape `[out, rank]`.

use crate::compress::{self, CompressedArtifact};
use crate::error::{Error, Result};
use crate::nelder_mead;
use crate::tensor_store::{Group, TaskVector};

pub const A_TAG: &str = "lora_A";
pub const B_TAG: &str = "lora_B";
/// Number of experts composed by default.
pub const DEFAULT_EXPERTS: usize = 20;
pub const DEFAULT_BOUNDS: (f64, f64) = (-1.5, 1.5);

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidModule(format!(
                "{rows}x{cols} matrix with {} values",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// `self * rhs`, accumulated in f64.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::InvalidModule(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0f32; self.rows * rhs.cols];
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = 0.0f64;
                for k in 0..self.cols {
                    acc += self.data[i * self.cols + k] as f64 * rhs.data[k * rhs.cols + j] as f64;
                }
                out[i * rhs.cols + j] = acc as f32;
            }
        }
        Matrix::new(self.rows, rhs.cols, out)
    }
}

/// One adapted layer: `a` is `[rank, in]`, `b` is `[out, rank]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPair {
    pub a_name: String,
    pub b_name: String,
    pub a: Matrix,
    pub b: Matrix,
}

impl LayerPair {
    /// The dense update `B A`, shape `[out, in]`.
    pub fn effective_update(&self) -> Result<Matrix> {
        self.b.matmul(&self.a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModule {
    pub layers: Vec<LayerPair>,
    pub rank: usize,
}

impl LowRankModule {
    pub fn new(layers: Vec<LayerPair>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidModule("no layers".into()))?;
        let rank = first.a.rows;
        if rank == 0 {
            return Err(Error::InvalidModule("rank must be positive".into()));
        }
        for l in &layers {
            if l.a.rows != rank || l.b.cols != rank {
                return Err(Error::RankMismatch(rank, if l.a.rows != rank { l.a.rows } else { l.b.cols }));
            }
        }
        Ok(LowRankModule { layers, rank })
    }

    /// Pairs up `lora_A` / `lora_B` groups. Every group must belong to a pair.
    pub fn from_task_vector(tv: &TaskVector) -> Result<Self> {
        Self::from_groups(tv.groups(), None)
    }

    /// Rebuilds the module from a compressed artifact, whose tensors are
    /// flat: `rank` recovers the matrix shapes.
    pub fn from_artifact(ca: &CompressedArtifact, rank: usize) -> Result<Self> {
        let dense = compress::reconstruct(ca)?;
        Self::from_groups(dense.groups(), Some(rank))
    }

    fn from_groups(groups: &[Group], rank: Option<usize>) -> Result<Self> {
        let find = |name: &str| groups.iter().find(|g| g.name == name);
        let mut layers = Vec::new();
        let mut used = 0;
        for g in groups.iter().filter(|g| g.name.contains(A_TAG)) {
            let b_name = g.name.replacen(A_TAG, B_TAG, 1);
            let gb = find(&b_name)
                .ok_or_else(|| Error::InvalidModule(format!("`{}` has no `{b_name}`", g.name)))?;
            let (a, b) = match rank {
                None => (as_matrix(g)?, as_matrix(gb)?),
                Some(r) => (reshape(g, r, true)?, reshape(gb, r, false)?),
            };
            layers.push(LayerPair {
                a_name: g.name.clone(),
                b_name,
                a,
                b,
            });
            used += 2;
        }
        if used != groups.len() {
            return Err(Error::InvalidModule(format!(
                "{} groups are not part of a {A_TAG}/{B_TAG} pair",
                groups.len() - used
            )));
        }
        Self::new(layers)
    }

    pub fn to_task_vector(&self) -> Result<TaskVector> {
        let mut groups = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            groups.push(Group::new(l.a_name.clone(), vec![l.a.rows, l.a.cols], l.a.data.clone()));
            groups.push(Group::new(l.b_name.clone(), vec![l.b.rows, l.b.cols], l.b.data.clone()));
        }
        TaskVector::new(groups)
    }

    fn check_compatible(&self, other: &LowRankModule) -> Result<()> {
        if self.rank != other.rank {
            return Err(Error::RankMismatch(self.rank, other.rank));
        }
        if self.layers.len() != other.layers.len() {
            return Err(Error::InvalidModule("modules have different layer counts".into()));
        }
        for (x, y) in self.layers.iter().zip(&other.layers) {
            if x.a_name != y.a_name {
                return Err(Error::NameMismatch {
                    left: x.a_name.clone(),
                    right: y.a_name.clone(),
                });
            }
            for (p, q) in [(&x.a, &y.a), (&x.b, &y.b)] {
                if (p.rows, p.cols) != (q.rows, q.cols) {
                    return Err(Error::ShapeMismatch {
                        name: x.a_name.clone(),
                        left: vec![p.rows, p.cols],
                        right: vec![q.rows, q.cols],
                    });
                }
            }
        }
        Ok(())
    }
}

fn as_matrix(g: &Group) -> Result<Matrix> {
    match g.shape[..] {
        [rows, cols] => Matrix::new(rows, cols, g.data.clone()),
        _ => Err(Error::InvalidModule(format!(
            "`{}` has shape {:?}, expected a matrix",
            g.name, g.shape
        ))),
    }
}

fn reshape(g: &Group, rank: usize, is_a: bool) -> Result<Matrix> {
    if rank == 0 || g.len() % rank != 0 {
        return Err(Error::InvalidModule(format!(
            "`{}` has {} values, not a multiple of rank {rank}",
            g.name,
            g.len()
        )));
    }
    let other = g.len() / rank;
    if is_a {
        Matrix::new(rank, other, g.data.clone())
    } else {
        Matrix::new(other, rank, g.data.clone())
    }
}

/// Weights with per-coordinate bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposeWeights {
    pub w: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl ComposeWeights {
    pub fn new(w: Vec<f64>) -> Self {
        let bounds = vec![DEFAULT_BOUNDS; w.len()];
        ComposeWeights { w, bounds }
    }

    pub fn with_bounds(w: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if w.len() != bounds.len() {
            return Err(Error::InvalidOptimizer("weights and bounds differ in length".into()));
        }
        let mut cw = ComposeWeights { w, bounds };
        cw.clamp();
        Ok(cw)
    }

    pub fn clamp(&mut self) {
        for (v, &(lo, hi)) in self.w.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

fn weighted_sum(mats: &[&Matrix], w: &[f64]) -> Matrix {
    let mut acc = vec![0.0f64; mats[0].data.len()];
    for (m, &wi) in mats.iter().zip(w) {
        for (a, &v) in acc.iter_mut().zip(&m.data) {
            *a += wi * v as f64;
        }
    }
    Matrix {
        rows: mats[0].rows,
        cols: mats[0].cols,
        data: acc.into_iter().map(|v| v as f32).collect(),
    }
}

/// Per layer, `A = sum w_i A_i` and `B = sum w_i B_i`.
pub fn compose_modules(mods: &[LowRankModule], w: &ComposeWeights) -> Result<LowRankModule> {
    let first = mods.first().ok_or(Error::EmptyList)?;
    if w.len() != mods.len() {
        return Err(Error::InvalidModule(format!(
            "{} modules but {} weights",
            mods.len(),
            w.len()
        )));
    }
    for m in &mods[1..] {
        first.check_compatible(m)?;
    }
    let layers = (0..first.layers.len())
        .map(|l| {
            let a: Vec<&Matrix> = mods.iter().map(|m| &m.layers[l].a).collect();
            let b: Vec<&Matrix> = mods.iter().map(|m| &m.layers[l].b).collect();
            LayerPair {
                a_name: first.layers[l].a_name.clone(),
                b_name: first.layers[l].b_name.clone(),
                a: weighted_sum(&a, &w.w),
                b: weighted_sum(&b, &w.w),
            }
        })
        .collect();
    LowRankModule::new(layers)
}

pub fn compose_compressed(
    artifacts: &[CompressedArtifact],
    w: &ComposeWeights,
    rank: usize,
) -> Result<LowRankModule> {
    let mods = artifacts
        .iter()
        .map(|ca| LowRankModule::from_artifact(ca, rank))
        .collect::<Result<Vec<_>>>()?;
    compose_modules(&mods, w)
}

/// Settings for [`optimize_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub budget: usize,
    pub seed: u64,
    pub bounds: (f64, f64),
    pub initial: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            budget: 200,
            seed: 0,
            bounds: DEFAULT_BOUNDS,
            initial: 0.0,
        }
    }
}

/// Searches weights for `n_modules` experts that minimize a black-box loss.
/// Returns the best weights seen; never worse than the starting point.
pub fn optimize_weights<F>(n_modules: usize, mut loss: F, cfg: &OptimizeConfig) -> Result<ComposeWeights>
where
    F: FnMut(&ComposeWeights) -> Result<f64>,
{
    let (lo, hi) = cfg.bounds;
    let bounds = vec![cfg.bounds; n_modules];
    let nm_cfg = nelder_mead::Config {
        budget: cfg.budget,
        lower: vec![lo; n_modules],
        upper: vec![hi; n_modules],
        initial_step: 0.2,
        seed: cfg.seed,
    };
    let start = vec![cfg.initial; n_modules];
    let outcome = nelder_mead::minimize(
        |x| {
            loss(&ComposeWeights {
                w: x.to_vec(),
                bounds: bounds.clone(),
            })
        },
        &start,
        &nm_cfg,
    )?;
    ComposeWeights::with_bounds(outcome.best, vec![cfg.bounds; n_modules])
}
