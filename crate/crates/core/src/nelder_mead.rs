//! Box-constrained Nelder-Mead with a hard evaluation budget.
//!
//! Trial points are clamped into the box before evaluation. When the simplex
//! collapses (vertices or values indistinguishable) it is rebuilt around the
//! best point with a halved step, until the budget runs out. The best point
//! seen so far is returned; it only moves on strict improvement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Maximum number of objective evaluations, including the start point.
    pub budget: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Edge length of the first simplex, as a fraction of each box width.
    pub initial_step: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub restarts: usize,
}

struct Evaluator<F> {
    objective: F,
    budget: usize,
    used: usize,
    best: Vec<f64>,
    best_value: f64,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Evaluator<F> {
    /// `Ok(None)` once the budget is spent.
    fn eval(&mut self, x: &[f64]) -> Result<Option<f64>> {
        if self.used >= self.budget {
            return Ok(None);
        }
        self.used += 1;
        let v = (self.objective)(x)?;
        if !v.is_finite() {
            return Err(Error::LossNonFinite(v));
        }
        if v < self.best_value {
            self.best_value = v;
            self.best.copy_from_slice(x);
        }
        Ok(Some(v))
    }
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Point `c + t (p - c)`, clamped.
fn along(c: &[f64], p: &[f64], t: f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = c.iter().zip(p).map(|(c, p)| c + t * (p - c)).collect();
    clamp(&mut out, lo, hi);
    out
}

macro_rules! try_eval {
    ($ev:expr, $x:expr) => {
        match $ev.eval($x)? {
            Some(v) => v,
            None => return Ok(()),
        }
    };
}

pub fn minimize<F>(objective: F, x0: &[f64], cfg: &Config) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidOptimizer("empty parameter vector".into()));
    }
    if cfg.lower.len() != n || cfg.upper.len() != n {
        return Err(Error::InvalidOptimizer("bounds do not match dimension".into()));
    }
    if cfg.lower.iter().zip(&cfg.upper).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
        return Err(Error::InvalidOptimizer("bounds must be finite with lower <= upper".into()));
    }
    if cfg.budget < n + 2 {
        return Err(Error::InvalidOptimizer(format!(
            "budget {} below dimension + 2 = {}",
            cfg.budget,
            n + 2
        )));
    }
    if !(cfg.initial_step > 0.0 && cfg.initial_step.is_finite()) {
        return Err(Error::InvalidOptimizer("initial step must be positive".into()));
    }

    let mut start = x0.to_vec();
    clamp(&mut start, &cfg.lower, &cfg.upper);
    let mut ev = Evaluator {
        objective,
        budget: cfg.budget,
        used: 0,
        best: start.clone(),
        best_value: f64::INFINITY,
    };
    let mut restarts = 0;
    run(&mut ev, &start, cfg, &mut restarts)?;
    Ok(Outcome {
        best: ev.best,
        best_value: ev.best_value,
        evaluations: ev.used,
        restarts,
    })
}

fn run<F>(ev: &mut Evaluator<F>, start: &[f64], cfg: &Config, restarts: &mut usize) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = start.len();
    let (lo, hi) = (&cfg.lower[..], &cfg.upper[..]);
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(1e-12)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = cfg.initial_step;

    let f0 = try_eval!(ev, start);
    let mut anchor = (start.to_vec(), f0);

    loop {
        // build a simplex around the anchor
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![anchor.clone()];
        for i in 0..n {
            let mut x = anchor.0.clone();
            let delta = step * width[i] * rng.gen_range(0.75..1.25);
            x[i] += if x[i] + delta <= hi[i] { delta } else { -delta };
            clamp(&mut x, lo, hi);
            let fx = try_eval!(ev, &x);
            simplex.push((x, fx));
        }

        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (fbest, fworst) = (simplex[0].1, simplex[n].1);
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).zip(&width).map(|((a, b), w)| (a - b).abs() / w))
                .fold(0.0f64, f64::max);
            if diameter < 1e-10 || (fworst - fbest).abs() <= 1e-14 * (1.0 + fbest.abs()) {
                break;
            }

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }
            let worst = simplex[n].0.clone();
            let xr = along(&centroid, &worst, -1.0, lo, hi);
            let fr = try_eval!(ev, &xr);

            if fr < fbest {
                let xe = along(&centroid, &worst, -2.0, lo, hi);
                let fe = try_eval!(ev, &xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < fworst {
                    let xc = along(&centroid, &xr, 0.5, lo, hi);
                    let fc = try_eval!(ev, &xc);
                    (xc, fc)
                } else {
                    let xc = along(&centroid, &worst, 0.5, lo, hi);
                    let fc = try_eval!(ev, &xc);
                    (xc, fc)
                };
                if fc < fr.min(fworst) {
                    simplex[n] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let x = along(&best, &vertex.0, 0.5, lo, hi);
                        let fx = try_eval!(ev, &x);
                        *vertex = (x, fx);
                    }
                }
            }
        }

        *restarts += 1;
        step = (step * 0.5).max(1e-9);
        anchor = (ev.best.clone(), ev.best_value);
    }
}
