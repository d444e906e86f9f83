use serde::Serialize;

use crate::error::{Error, Result};

/// Iterates below this count as zero.
const ZERO: f64 = 1e-12;
/// `C T v^2` above this is reported as divergence.
const BLOWUP: f64 = 700.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionTrace {
    pub c: f64,
    pub t: f64,
    pub iterates: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    /// Iterates never increased.
    pub monotone: bool,
}

/// Iterates `v -> sqrt(exp(C T v^2) - 1)` from `v0` until the value drops
/// below `1e-12`, the exponent exceeds 700, or `max_iter` is reached.
pub fn contraction_iterate(c: f64, t: f64, v0: f64, max_iter: usize) -> Result<ContractionTrace> {
    if !(c > 0.0 && t > 0.0) {
        return Err(Error::Precondition(format!("contraction needs C, T > 0, got C = {c}, T = {t}")));
    }
    if !(0.0..=2.0).contains(&v0) {
        return Err(Error::Precondition(format!("v0 must lie in [0, 2], got {v0}")));
    }
    let mut iterates = vec![v0];
    let mut v = v0;
    let (mut converged, mut diverged) = (v < ZERO, false);
    while !converged && !diverged && iterates.len() <= max_iter {
        let e = c * t * v * v;
        if e > BLOWUP {
            diverged = true;
            break;
        }
        v = e.exp_m1().sqrt();
        iterates.push(v);
        converged = v < ZERO;
    }
    let monotone = iterates.windows(2).all(|w| w[1] <= w[0]);
    Ok(ContractionTrace { c, t, iterates, converged, diverged, monotone })
}

/// Largest `alpha` with `exp(4 alpha) - 1 <= 8 alpha` (about 0.3142).
pub fn alpha_max() -> f64 {
    let f = |a: f64| (4.0 * a).exp_m1() - 8.0 * a;
    let (mut lo, mut hi) = (0.1, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalVerdict {
    pub k: usize,
    pub start: f64,
    pub end: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `v(end)`: zero when the contraction from the worst case `v = 2` converged.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvLedger {
    pub endpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub contraction_constant: f64,
    pub interval: f64,
    /// `C T`
    pub alpha: f64,
    pub alpha_max: f64,
    pub intervals: Vec<IntervalVerdict>,
}

impl TvLedger {
    pub fn all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Walks `[0, horizon]` in steps of `T`, applying the single-interval
/// contraction from `v(kT) = 0`. Requires `T < 1/(2C)` and `C T <= alpha_max`.
pub fn interval_induction(c: f64, t: f64, horizon: f64) -> Result<TvLedger> {
    if !(c > 0.0 && t > 0.0 && horizon > 0.0) {
        return Err(Error::Precondition("induction needs C, T, horizon > 0".into()));
    }
    if t >= 1.0 / (2.0 * c) {
        return Err(Error::Precondition(format!("T = {t} violates T < 1/(2C) = {}", 1.0 / (2.0 * c))));
    }
    let a_max = alpha_max();
    if c * t > a_max {
        return Err(Error::Precondition(format!("C T = {} exceeds the smallness bound {a_max}", c * t)));
    }
    let count = ((horizon / t) - 1e-9).ceil().max(1.0) as usize;
    let mut endpoints = vec![0.0];
    let mut values = vec![0.0];
    let mut intervals = Vec::with_capacity(count);
    for k in 0..count {
        let start = k as f64 * t;
        let end = ((k + 1) as f64 * t).min(horizon.max(t));
        let trace = contraction_iterate(c, t, 2.0, 10_000)?;
        let value = if trace.converged { 0.0 } else { *trace.iterates.last().unwrap_or(&2.0) };
        intervals.push(IntervalVerdict { k: k + 1, start, end, iterations: trace.iterates.len() - 1, converged: trace.converged, value });
        endpoints.push(end);
        values.push(value);
    }
    Ok(TvLedger { endpoints, values, contraction_constant: c, interval: t, alpha: c * t, alpha_max: a_max, intervals })
}
