//! Stochastic exponents and total-variation bounds between two
//! mean-field drifts sharing a diffusion.
//!
//! With `b~ = sigma^{-1} b`, the log-weight of a path is
//! `M - Q/2` where `M = sum b~(t_k, X_k) . dW_k` and `Q = sum |b~|^2 dt`,
//! evaluated at left endpoints on the simulation grid. All weight
//! arithmetic stays in log space.

mod contraction;
mod probe;

pub use contraction::{alpha_max, contraction_iterate, interval_induction, ContractionTrace, IntervalVerdict, TvLedger};
pub use probe::{empirical_uniqueness_probe, CoordinateTest, ProbeReport};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{Kernel, KernelCoefficients, MeasureSummary};
use crate::error::{Error, Result};
use crate::simulate::{PathBundle, StepObserver, StepView};
use crate::stats::{mean_se, MeanEstimate};

/// Default clamp on `|log weight|`.
pub const LOG_WEIGHT_GUARD: f64 = 700.0;
/// Constant in `E exp(c int |db~|^2 ds)`.
pub const RHO_EXPONENT_CONSTANT: f64 = 6.0;

/// Per-particle running `M` and `Q`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogWeightAccumulator {
    pub m: Vec<f64>,
    pub q: Vec<f64>,
    pub steps: usize,
    pub horizon: f64,
    pub guard: f64,
}

impl LogWeightAccumulator {
    pub fn new(particles: usize) -> Self {
        Self { m: vec![0.0; particles], q: vec![0.0; particles], steps: 0, horizon: 0.0, guard: LOG_WEIGHT_GUARD }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// `M - Q/2`, clamped to `[-guard, guard]`.
    pub fn log_weight(&self, i: usize) -> f64 {
        (self.m[i] - 0.5 * self.q[i]).clamp(-self.guard, self.guard)
    }

    /// Number of particles whose log-weight hit the guard.
    pub fn clamped(&self) -> usize {
        (0..self.len()).filter(|&i| (self.m[i] - 0.5 * self.q[i]).abs() >= self.guard).count()
    }

    /// Sample mean and standard error of `gamma_T^power`.
    pub fn gamma_moment(&self, power: f64) -> MeanEstimate {
        let v: Vec<f64> = (0..self.len()).map(|i| (power * self.log_weight(i)).exp()).collect();
        mean_se(&v)
    }

    /// Adds one step: `b_tilde` is `n x d` at left endpoints, `noise` is `n x d`.
    fn add_step(&mut self, b_tilde: &[f64], noise: &[f64], d: usize, dt: f64) {
        self.m.par_iter_mut().zip(self.q.par_iter_mut()).enumerate().for_each(|(i, (m, q))| {
            let b = &b_tilde[i * d..(i + 1) * d];
            let w = &noise[i * d..(i + 1) * d];
            *m += b.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            *q += b.iter().map(|a| a * a).sum::<f64>() * dt;
        });
        self.steps += 1;
        self.horizon += dt;
    }
}

fn square(coeffs: &KernelCoefficients) -> Result<usize> {
    let d = coeffs.dim_state;
    if coeffs.dim_noise != d {
        return Err(Error::Dimension { context: "stochastic exponent needs a square diffusion", expected: d, got: coeffs.dim_noise });
    }
    Ok(d)
}

/// `b~ = sigma^{-1} b` at each point of `points` against the measure with atoms `measure`.
fn b_tilde_at(coeffs: &KernelCoefficients, t: f64, points: &[f64], measure: &[f64], step: usize) -> Result<Vec<f64>> {
    let d = square(coeffs)?;
    let sb = coeffs.drift.summarize(t, measure)?;
    let ss = coeffs.diffusion.summarize(t, measure)?;
    let rows: Vec<std::result::Result<Vec<f64>, Error>> = points
        .par_chunks(d)
        .enumerate()
        .map(|(i, x)| {
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * d];
            coeffs.drift.average(t, x, &sb, &mut b)?;
            coeffs.diffusion.average(t, x, &ss, &mut s)?;
            solve(&s, &b, d).ok_or_else(|| {
                let sig = DMatrix::from_row_slice(d, d, &s);
                let smin = sig.singular_values().min();
                Error::Degenerate { eigenvalue: smin * smin, floor: 0.0, location: Some((step, i)) }
            })
        })
        .collect();
    let mut out = Vec::with_capacity(points.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

fn solve(s: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    if d == 1 {
        let v = b[0] / s[0];
        return v.is_finite().then(|| vec![v]);
    }
    let m = DMatrix::from_row_slice(d, d, s);
    let x = m.lu().solve(&DVector::from_column_slice(b))?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Accumulates log-weights for the recorded particles of `bundle`, using
/// the recorded particles as the empirical measure at each step.
pub fn accumulate_logweight(acc: &mut LogWeightAccumulator, bundle: &PathBundle, coeffs: &KernelCoefficients) -> Result<()> {
    let d = square(coeffs)?;
    if bundle.dim != d || bundle.noise_dim != d {
        return Err(Error::Dimension { context: "bundle versus exponent drift", expected: d, got: bundle.noise_dim });
    }
    let noise = bundle
        .noise
        .as_ref()
        .ok_or_else(|| Error::Precondition("bundle does not retain noise increments".into()))?;
    let n = bundle.recorded();
    if acc.len() != n {
        return Err(Error::Dimension { context: "accumulator size", expected: n, got: acc.len() });
    }
    for k in 0..bundle.steps {
        let states = bundle.states_at(k);
        let bt = b_tilde_at(coeffs, k as f64 * bundle.dt, states, states, k)?;
        acc.add_step(&bt, &noise[k * n * d..(k + 1) * n * d], d, bundle.dt);
    }
    Ok(())
}

/// Streams log-weights over the full ensemble while the simulation runs.
pub struct LogWeightObserver<'a> {
    pub coeffs: &'a KernelCoefficients,
    pub acc: LogWeightAccumulator,
}

impl<'a> LogWeightObserver<'a> {
    pub fn new(coeffs: &'a KernelCoefficients, particles: usize) -> Self {
        Self { coeffs, acc: LogWeightAccumulator::new(particles) }
    }
}

impl StepObserver for LogWeightObserver<'_> {
    fn observe(&mut self, view: &StepView<'_>) -> Result<()> {
        let d = square(self.coeffs)?;
        if view.noise_dim != d {
            return Err(Error::Dimension { context: "observer noise", expected: d, got: view.noise_dim });
        }
        let bt = b_tilde_at(self.coeffs, view.time, view.states, view.states, view.step)?;
        self.acc.add_step(&bt, view.noise, d, view.dt);
        Ok(())
    }
}

/// `sqrt(Erho2 - 1)`; defects down to `-1e-9` are clipped to zero.
pub fn tv_upper_bound(erho2: f64) -> Result<f64> {
    if erho2.is_nan() || erho2 < 1.0 - 1e-9 {
        return Err(Error::Precondition(format!("E rho^2 must be at least 1, got {erho2}")));
    }
    Ok((erho2 - 1.0).max(0.0).sqrt())
}

/// One side of the drift comparison: coefficients plus the bundle whose
/// recorded particles give the measure (`None`: the integrated bundle).
#[derive(Clone, Copy)]
pub struct DriftModel<'a> {
    pub coeffs: &'a KernelCoefficients,
    pub measure: Option<&'a PathBundle>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rho2Estimate {
    /// Sample mean of `exp(c int |db~|^2 ds)`.
    pub raw: f64,
    pub raw_se: f64,
    /// `sqrt(raw)`, the bound on `E rho^2`.
    pub bound: f64,
    /// `sqrt(bound - 1)`.
    pub tv_bound: f64,
    pub constant: f64,
}

/// Monte Carlo bound on `E rho^2` along the recorded paths of `bundle`.
pub fn estimate_rho2(bundle: &PathBundle, mu1: DriftModel<'_>, mu2: DriftModel<'_>, constant: f64) -> Result<Rho2Estimate> {
    let n = bundle.recorded();
    if n == 0 {
        return Err(Error::Precondition("bundle records no particles".into()));
    }
    for m in [&mu1, &mu2] {
        if let Some(b) = m.measure {
            if b.steps < bundle.steps || b.dim != bundle.dim {
                return Err(Error::Precondition("measure bundle does not cover the integration grid".into()));
            }
        }
    }
    let d = bundle.dim;
    let mut integral = vec![0.0; n];
    for k in 0..bundle.steps {
        let t = k as f64 * bundle.dt;
        let states = bundle.states_at(k);
        let m1 = mu1.measure.map_or(states, |b| b.states_at(k));
        let m2 = mu2.measure.map_or(states, |b| b.states_at(k));
        let b1 = b_tilde_at(mu1.coeffs, t, states, m1, k)?;
        let b2 = b_tilde_at(mu2.coeffs, t, states, m2, k)?;
        integral.par_iter_mut().enumerate().for_each(|(i, acc)| {
            let diff: f64 = (0..d).map(|j| (b2[i * d + j] - b1[i * d + j]).powi(2)).sum();
            *acc += diff * bundle.dt;
        });
    }
    let values: Vec<f64> = integral.iter().map(|v| (constant * v).min(LOG_WEIGHT_GUARD).exp()).collect();
    let est = mean_se(&values);
    let bound = est.mean.sqrt();
    Ok(Rho2Estimate { raw: est.mean, raw_se: est.se, bound, tv_bound: tv_upper_bound(bound)?, constant })
}

/// Distinct atoms with their masses (equal weights per input atom).
fn merge_atoms(atoms: &[f64], dim: usize) -> Vec<(Vec<f64>, f64)> {
    let n = atoms.len() / dim;
    let mut rows: Vec<&[f64]> = atoms.chunks_exact(dim).collect();
    rows.sort_by(|a, b| a.iter().zip(*b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((a, w)) if a.as_slice() == r => *w += 1.0 / n as f64,
            _ => out.push((r.to_vec(), 1.0 / n as f64)),
        }
    }
    out
}

/// L1 distance between two empirical measures on their common atoms.
pub fn atom_tv(mu1: &[f64], mu2: &[f64], dim: usize) -> f64 {
    let a = merge_atoms(mu1, dim);
    let b = merge_atoms(mu2, dim);
    let (mut i, mut j, mut tv) = (0, 0, 0.0);
    let cmp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal);
    while i < a.len() || j < b.len() {
        let ord = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => cmp(&x.0, &y.0),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                tv += a[i].1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                tv += b[j].1;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                tv += (a[i].1 - b[j].1).abs();
                i += 1;
                j += 1;
            }
        }
    }
    tv
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelTvGap {
    /// `|k[x, mu2] - k[x, mu1]|`
    pub gap: f64,
    /// `sup_y |k(x, y)|` over the atoms of both measures.
    pub sup_kernel: f64,
    pub tv_hat: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compares the mean-field gap of a `d x 1` kernel with `sup_y |k| * TV`.
/// TV is the histogram distance on the measures' atoms.
pub fn kernel_tv_gap(kernel: &Kernel, t: f64, x: &[f64], mu1: &[f64], mu2: &[f64]) -> Result<KernelTvGap> {
    let d = kernel.rows();
    let avg = |mu: &[f64]| -> Result<Vec<f64>> {
        let s: MeasureSummary = kernel.summarize(t, mu)?;
        let mut out = vec![0.0; kernel.len()];
        kernel.average(t, x, &s, &mut out)?;
        Ok(out)
    };
    let (a1, a2) = (avg(mu1)?, avg(mu2)?);
    let gap = a1.iter().zip(&a2).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let sup_kernel = mu1
        .chunks_exact(d)
        .chain(mu2.chunks_exact(d))
        .map(|y| kernel.eval_vec(t, x, y).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tv_hat = atom_tv(mu1, mu2, d);
    let bound = sup_kernel * tv_hat;
    Ok(KernelTvGap { gap, sup_kernel, tv_hat, bound, holds: gap <= bound * (1.0 + 1e-12) + 1e-14 })
}

/// `E exp(c (C v)^2 int (1 + |X_s|)^2 ds)` over the recorded paths: the
/// bound on `E rho^2` when `sup_y |b~(x, y)| <= C (1 + |x|)` and the laws
/// differ by at most `v` in total variation.
pub fn linear_growth_surrogate(bundle: &PathBundle, growth: f64, v: f64, constant: f64) -> MeanEstimate {
    let n = bundle.recorded();
    let scale = constant * (growth * v).powi(2);
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let int: f64 = (0..bundle.steps)
                .map(|k| {
                    let r = bundle.state(k, p).iter().map(|a| a * a).sum::<f64>().sqrt();
                    (1.0 + r).powi(2) * bundle.dt
                })
                .sum();
            (scale * int).min(LOG_WEIGHT_GUARD).exp()
        })
        .collect();
    mean_se(&vals)
}

#[cfg(test)]
mod tests;
