use serde::Serialize;

use super::PathBundle;
use crate::stats::{ols_slope, ordered_sum};

/// One rung of the increment ladder: `E|X_{t+h} - X_t|^4` at lag `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IncrementPoint {
    pub h: f64,
    pub lag_steps: usize,
    pub m4: f64,
    /// `m4 / h^2`
    pub ratio: f64,
}

/// Measured constants in the a priori bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsWitness {
    /// `sup_t E|X_t|^2 / (1 + E|x0|^2)`
    pub c_m2: f64,
    /// `sup_t E|X_t|^4 / (1 + E|x0|^4)`
    pub c_m4: f64,
    /// `E sup_t |X_t|^2 / (1 + E|x0|^2)` over recorded particles.
    pub c_sup_m2: f64,
    /// `max_h E|X_{t+h} - X_t|^4 / h^2`
    pub c_increment: f64,
    pub ladder: Vec<IncrementPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub sup_m2: f64,
    pub sup_m4: f64,
    /// Slope of `log E|dX|^4` against `log h`; `None` when increments vanish.
    pub increment_exponent: Option<f64>,
    pub constants_witness: ConstantsWitness,
}

const LADDER: [usize; 4] = [1, 2, 4, 8];

fn increment_m4(bundle: &PathBundle, lag: usize) -> f64 {
    let n_rec = bundle.recorded();
    let starts = bundle.steps + 1 - lag;
    let count = starts * n_rec;
    let sum = ordered_sum(count, |i| {
        let (k, p) = (i / n_rec, i % n_rec);
        let a = bundle.state(k, p);
        let b = bundle.state(k + lag, p);
        a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().powi(2)
    });
    sum / count as f64
}

/// Moment diagnostics from the ensemble-wide moment track and the
/// recorded trajectories.
pub fn moment_report(bundle: &PathBundle) -> MomentReport {
    let sup_m2 = bundle.ensemble_moments.iter().map(|m| m.0).fold(0.0, f64::max);
    let sup_m4 = bundle.ensemble_moments.iter().map(|m| m.1).fold(0.0, f64::max);
    let (e2, e4) = bundle.initial_moments;

    let ladder: Vec<IncrementPoint> = if bundle.recorded() == 0 {
        Vec::new()
    } else {
        LADDER
            .iter()
            .filter(|&&lag| lag <= bundle.steps)
            .map(|&lag| {
                let h = lag as f64 * bundle.dt;
                let m4 = increment_m4(bundle, lag);
                IncrementPoint { h, lag_steps: lag, m4, ratio: m4 / (h * h) }
            })
            .collect()
    };
    let increment_exponent = if ladder.len() >= 2 && ladder.iter().all(|p| p.m4 > 0.0 && p.m4.is_finite()) {
        let lx: Vec<f64> = ladder.iter().map(|p| p.h.ln()).collect();
        let ly: Vec<f64> = ladder.iter().map(|p| p.m4.ln()).collect();
        Some(ols_slope(&lx, &ly))
    } else {
        None
    };

    let n_rec = bundle.recorded();
    let sup_sq = if n_rec == 0 {
        0.0
    } else {
        ordered_sum(n_rec, |p| {
            (0..=bundle.steps)
                .map(|k| bundle.state(k, p).iter().map(|v| v * v).sum::<f64>())
                .fold(0.0, f64::max)
        }) / n_rec as f64
    };

    MomentReport {
        sup_m2,
        sup_m4,
        increment_exponent,
        constants_witness: ConstantsWitness {
            c_m2: sup_m2 / (1.0 + e2),
            c_m4: sup_m4 / (1.0 + e4),
            c_sup_m2: sup_sq / (1.0 + e2),
            c_increment: ladder.iter().map(|p| p.ratio).fold(0.0, f64::max),
            ladder,
        },
    }
}
