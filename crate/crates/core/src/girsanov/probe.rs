use serde::Serialize;

use crate::error::Result;
use crate::simulate::{simulate, SimConfig};
use crate::stats::{binned_tv, ks_threshold, ks_two_sample, BinnedTv};

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateTest {
    pub axis: usize,
    pub ks_stat: f64,
    pub ks_threshold: f64,
    pub tv: BinnedTv,
}

/// Two-sample comparison of terminal marginals.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub alpha: f64,
    pub coordinates: Vec<CoordinateTest>,
    /// Largest KS statistic over coordinates.
    pub ks_stat: f64,
    /// Threshold at level `alpha / d`.
    pub ks_threshold: f64,
    pub tv_hat: f64,
    pub tv_threshold: f64,
    /// Equal laws rejected on some coordinate.
    pub rejected: bool,
}

/// Simulates both configs (concurrently) and tests whether their terminal
/// laws differ, coordinate by coordinate at level `alpha / d`.
pub fn empirical_uniqueness_probe(a: &SimConfig, b: &SimConfig, alpha: f64) -> Result<ProbeReport> {
    let (ra, rb) = rayon::join(|| simulate(a), || simulate(b));
    let (ta, tb) = (ra?.terminal, rb?.terminal);
    let d = ta.dim();
    let level = alpha / d as f64;
    let coordinates: Vec<CoordinateTest> = (0..d)
        .map(|axis| {
            let (xa, xb) = (ta.coordinate(axis), tb.coordinate(axis));
            CoordinateTest {
                axis,
                ks_stat: ks_two_sample(&xa, &xb),
                ks_threshold: ks_threshold(level, xa.len(), xb.len()),
                tv: binned_tv(&xa, &xb),
            }
        })
        .collect();
    let worst = coordinates
        .iter()
        .max_by(|p, q| (p.ks_stat / p.ks_threshold).total_cmp(&(q.ks_stat / q.ks_threshold)))
        .expect("at least one coordinate");
    let worst_tv = coordinates.iter().max_by(|p, q| p.tv.tv.total_cmp(&q.tv.tv)).expect("at least one coordinate");
    Ok(ProbeReport {
        alpha,
        ks_stat: worst.ks_stat,
        ks_threshold: worst.ks_threshold,
        tv_hat: worst_tv.tv.tv,
        tv_threshold: worst_tv.tv.threshold(),
        rejected: coordinates.iter().any(|c| c.ks_stat > c.ks_threshold),
        coordinates,
    })
}
