use serde::Serialize;

use super::config::ExperimentConfig;
use crate::coeffs::{mollify, Mollifier};
use crate::error::Result;
use crate::simulate::simulate;
use crate::stats::{binned_tv, mean_se, moment_summary};

/// Distances between terminal laws at two consecutive levels.
#[derive(Clone, Debug, Serialize)]
pub struct LevelDistance {
    pub from: u32,
    pub to: u32,
    /// `mean_i |X_i(from) - X_i(to)|` under shared noise: bounds the
    /// Wasserstein-1 distance of the two empirical laws.
    pub coupling: f64,
    pub coupling_se: f64,
    pub mean_distance: f64,
    pub cov_distance: f64,
    /// Largest binned TV over coordinates.
    pub tv_hat: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MollifyReport {
    pub levels: Vec<u32>,
    pub distances: Vec<LevelDistance>,
    /// Coupling distances non-increasing from the first level >= 8 on,
    /// within `se_multiplier` standard errors.
    pub nonincreasing: bool,
    pub se_multiplier: f64,
    /// Set when the run is too small for the comparison to mean anything.
    pub warning: Option<String>,
}

/// Simulates the model mollified at each level with the same noise and
/// compares consecutive terminal laws.
pub fn mollify_converge(config: &ExperimentConfig, levels: &[u32], nodes: usize, se_multiplier: f64) -> Result<MollifyReport> {
    let base = config.sim_config()?.record_first(0);
    let d = config.d;
    let mut terminals = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut cfg = base.clone();
        cfg.coeffs = mollify(&base.coeffs, &Mollifier::new(level, nodes)?)?;
        log::info!("mollify-converge: level {level}");
        terminals.push(simulate(&cfg)?.terminal.states().to_vec());
    }
    let distances: Vec<LevelDistance> = levels
        .windows(2)
        .zip(terminals.windows(2))
        .map(|(l, t)| {
            let (a, b) = (&t[0], &t[1]);
            let gaps: Vec<f64> = a
                .chunks_exact(d)
                .zip(b.chunks_exact(d))
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
                .collect();
            let coupling = mean_se(&gaps);
            let (ma, mb) = (moment_summary(a, d), moment_summary(b, d));
            let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let tv_hat = (0..d)
                .map(|axis| {
                    let ca: Vec<f64> = a.iter().skip(axis).step_by(d).copied().collect();
                    let cb: Vec<f64> = b.iter().skip(axis).step_by(d).copied().collect();
                    binned_tv(&ca, &cb).tv
                })
                .fold(0.0, f64::max);
            LevelDistance {
                from: l[0],
                to: l[1],
                coupling: coupling.mean,
                coupling_se: if coupling.se.is_finite() { coupling.se } else { 0.0 },
                mean_distance: dist(&ma.mean, &mb.mean),
                cov_distance: dist(&ma.cov, &mb.cov),
                tv_hat,
            }
        })
        .collect();
    let warning = (config.particles < 2).then(|| format!("N = {} is too small to compare laws", config.particles));
    let nonincreasing = distances
        .windows(2)
        .filter(|w| w[1].from >= 8)
        .all(|w| w[1].coupling <= w[0].coupling + se_multiplier * w[1].coupling_se.hypot(w[0].coupling_se));
    Ok(MollifyReport { levels: levels.to_vec(), distances, nonincreasing, se_multiplier, warning })
}
