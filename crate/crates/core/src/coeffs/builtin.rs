//! Analytic coefficient families selectable by name from a config file.

use serde::{Deserialize, Serialize};

use super::kernel::{rect_identity, Kernel, Term};
use super::KernelCoefficients;
use crate::error::{Error, Result};

/// Builtin kernel families. Parameters are named as in the config schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Builtin {
    /// `b = drift`, `sigma = diffusion` (row-major rows of length d1).
    Constant { drift: Vec<f64>, diffusion: Vec<Vec<f64>> },
    /// `b = 0`, `sigma = scale * I`.
    Brownian { scale: f64 },
    /// `b(t,x,y) = a x + beta y`, `sigma = sigma * I`.
    Linear { a: f64, beta: f64, sigma: f64 },
    /// `b(t,x,y) = -kappa (x - y)`, `sigma = sigma * I`.
    MeanReverting { kappa: f64, sigma: f64 },
    /// `b_i = sign(x_i)`, `sigma = sigma * I`.
    StepDrift { sigma: f64 },
    /// `b_i = sign(sin(frequency x_i)) + coupling tanh(y_i)`,
    /// `sigma = diag(1 + sigma_amplitude sin(x_i))`; requires d = d1.
    Oscillating { frequency: f64, coupling: f64, sigma_amplitude: f64 },
    /// `b = -kappa (x - y)`, `sigma_ij = base_ij (1 + amplitude sin(x_i))`.
    Rectangular { kappa: f64, base: Vec<Vec<f64>>, amplitude: f64 },
}

/// Pass/fail verdicts a family is known to have for each checked condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnownVerdicts {
    pub linear_growth: bool,
    pub nondegeneracy: bool,
    /// `None` when no verdict is shipped (d != d1, or no closed form).
    pub nondegeneracy_strong: Option<bool>,
    pub lipschitz_x_local_y: bool,
    pub lipschitz_sigma_global: bool,
}

fn frob(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn flatten(rows: &[Vec<f64>], d: usize, d1: usize, what: &'static str) -> Result<Vec<f64>> {
    if rows.len() != d {
        return Err(Error::Dimension { context: what, expected: d, got: rows.len() });
    }
    let mut flat = Vec::with_capacity(d * d1);
    for r in rows {
        if r.len() != d1 {
            return Err(Error::Dimension { context: what, expected: d1, got: r.len() });
        }
        flat.extend_from_slice(r);
    }
    Ok(flat)
}

fn scaled_identity(d: usize, d1: usize, s: f64) -> Vec<f64> {
    rect_identity(d, d1).into_iter().map(|v| v * s).collect()
}

/// `b(t,x,y) = a x + beta y` as separable terms.
fn linear_drift(d: usize, a: f64, beta: f64) -> Kernel {
    let mut terms = vec![Term::new(move |_, x, s, out: &mut [f64]| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o += s * a * xi;
        }
    })];
    if beta != 0.0 {
        for k in 0..d {
            terms.push(Term::new(move |_, _, s, out: &mut [f64]| out[k] += s * beta).with_measure(move |_, y| y[k]));
        }
    }
    Kernel::separable(d, 1, terms).time_independent()
}

impl Builtin {
    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Constant { .. } => "constant",
            Builtin::Brownian { .. } => "brownian",
            Builtin::Linear { .. } => "linear",
            Builtin::MeanReverting { .. } => "mean-reverting",
            Builtin::StepDrift { .. } => "step-drift",
            Builtin::Oscillating { .. } => "oscillating",
            Builtin::Rectangular { .. } => "rectangular",
        }
    }

    /// Builds the kernels for state dimension `d` and noise dimension `d1`.
    pub fn coefficients(&self, d: usize, d1: usize) -> Result<KernelCoefficients> {
        if d == 0 || d1 == 0 {
            return Err(Error::Config("dimensions d and d1 must be positive".into()));
        }
        let sqrt_min = (d.min(d1) as f64).sqrt();
        let (drift, diffusion, growth) = match self {
            Builtin::Constant { drift, diffusion } => {
                if drift.len() != d {
                    return Err(Error::Dimension { context: "constant drift", expected: d, got: drift.len() });
                }
                let sig = flatten(diffusion, d, d1, "constant diffusion")?;
                let growth = frob(drift) + frob(&sig);
                (Kernel::constant(d, 1, drift.clone()), Kernel::constant(d, d1, sig), growth)
            }
            Builtin::Brownian { scale } => (
                Kernel::constant(d, 1, vec![0.0; d]),
                Kernel::constant(d, d1, scaled_identity(d, d1, *scale)),
                scale.abs() * sqrt_min,
            ),
            Builtin::Linear { a, beta, sigma } => (
                linear_drift(d, *a, *beta),
                Kernel::constant(d, d1, scaled_identity(d, d1, *sigma)),
                a.abs() + beta.abs() + sigma.abs() * sqrt_min,
            ),
            Builtin::MeanReverting { kappa, sigma } => (
                linear_drift(d, -kappa, *kappa),
                Kernel::constant(d, d1, scaled_identity(d, d1, *sigma)),
                2.0 * kappa.abs() + sigma.abs() * sqrt_min,
            ),
            Builtin::StepDrift { sigma } => {
                let drift = Kernel::separable(
                    d,
                    1,
                    vec![Term::new(|_, x, s, out: &mut [f64]| {
                        for (o, xi) in out.iter_mut().zip(x) {
                            *o += s * sign(*xi);
                        }
                    })],
                )
                .time_independent();
                (drift, Kernel::constant(d, d1, scaled_identity(d, d1, *sigma)), (d as f64).sqrt() + sigma.abs() * sqrt_min)
            }
            Builtin::Oscillating { frequency, coupling, sigma_amplitude } => {
                if d != d1 {
                    return Err(Error::Config("oscillating family requires d = d1".into()));
                }
                let (f, c, amp) = (*frequency, *coupling, *sigma_amplitude);
                let mut terms = vec![Term::new(move |_, x, s, out: &mut [f64]| {
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o += s * sign((f * xi).sin());
                    }
                })];
                for k in 0..d {
                    terms.push(Term::new(move |_, _, s, out: &mut [f64]| out[k] += s * c).with_measure(move |_, y| y[k].tanh()));
                }
                let drift = Kernel::separable(d, 1, terms).time_independent();
                let diffusion = Kernel::separable(
                    d,
                    d,
                    vec![Term::new(move |_, x, s, out: &mut [f64]| {
                        for (i, xi) in x.iter().enumerate() {
                            out[i * d + i] += s * (1.0 + amp * xi.sin());
                        }
                    })],
                )
                .time_independent();
                let growth = (d as f64).sqrt() * (1.0 + c.abs() + 1.0 + amp.abs());
                (drift, diffusion, growth)
            }
            Builtin::Rectangular { kappa, base, amplitude } => {
                let b = flatten(base, d, d1, "rectangular base")?;
                let amp = *amplitude;
                let bb = b.clone();
                let diffusion = Kernel::separable(
                    d,
                    d1,
                    vec![Term::new(move |_, x, s, out: &mut [f64]| {
                        for i in 0..d {
                            let f = s * (1.0 + amp * x[i].sin());
                            for j in 0..d1 {
                                out[i * d1 + j] += f * bb[i * d1 + j];
                            }
                        }
                    })],
                )
                .time_independent();
                let growth = 2.0 * kappa.abs() + (1.0 + amp.abs()) * frob(&b);
                (linear_drift(d, -kappa, *kappa), diffusion, growth)
            }
        };
        Ok(KernelCoefficients {
            dim_state: d,
            dim_noise: d1,
            drift,
            diffusion,
            growth_constant: growth,
            builtin: Some(self.clone()),
        })
    }

    /// Constant for the local-in-y Lipschitz condition on drift and diffusion
    /// together; `None` for families with a discontinuous drift.
    pub fn lipschitz_constant(&self, d: usize, d1: usize) -> Option<f64> {
        match self {
            Builtin::Constant { .. } | Builtin::Brownian { .. } => Some(0.0),
            Builtin::Linear { a, .. } => Some(a.abs()),
            Builtin::MeanReverting { kappa, .. } => Some(kappa.abs()),
            Builtin::StepDrift { .. } | Builtin::Oscillating { .. } => None,
            Builtin::Rectangular { kappa, .. } => Some(kappa.abs() + self.sigma_lipschitz_constant(d, d1)),
        }
    }

    /// Global Lipschitz constant of the diffusion in x (Frobenius norm).
    pub fn sigma_lipschitz_constant(&self, _d: usize, _d1: usize) -> f64 {
        match self {
            Builtin::Oscillating { sigma_amplitude, .. } => sigma_amplitude.abs(),
            Builtin::Rectangular { base, amplitude, .. } => {
                let max_row = base.iter().map(|r| frob(r)).fold(0.0, f64::max);
                amplitude.abs() * max_row
            }
            _ => 0.0,
        }
    }

    /// Lower bound on the smallest eigenvalue of sigma sigma^T.
    pub fn min_eigenvalue_bound(&self, d: usize, d1: usize) -> f64 {
        let rank_ok = d <= d1;
        match self {
            Builtin::Constant { diffusion, .. } => {
                let flat: Vec<f64> = diffusion.iter().flatten().copied().collect();
                crate::sqrtlift::min_eigenvalue_aat(&flat, d, d1)
            }
            Builtin::Brownian { scale: s } | Builtin::Linear { sigma: s, .. } | Builtin::MeanReverting { sigma: s, .. } | Builtin::StepDrift { sigma: s } => {
                if rank_ok {
                    s * s
                } else {
                    0.0
                }
            }
            Builtin::Oscillating { sigma_amplitude, .. } => (1.0 - sigma_amplitude.abs()).max(0.0).powi(2),
            Builtin::Rectangular { base, amplitude, .. } => {
                let flat: Vec<f64> = base.iter().flatten().copied().collect();
                (1.0 - amplitude.abs()).max(0.0).powi(2) * crate::sqrtlift::min_eigenvalue_aat(&flat, d, d1)
            }
        }
    }

    /// Verdicts for the standard sample plan with the given eigenvalue floor.
    pub fn known_verdicts(&self, d: usize, d1: usize, floor: f64) -> KnownVerdicts {
        let bounded_in_y = match self {
            Builtin::Linear { beta, .. } => *beta == 0.0,
            Builtin::MeanReverting { kappa, .. } | Builtin::Rectangular { kappa, .. } => *kappa == 0.0,
            _ => true,
        };
        let strong = (d == d1).then_some(()).and_then(|_| match self {
            Builtin::Constant { diffusion, .. } => {
                let flat: Vec<f64> = diffusion.iter().flatten().copied().collect();
                Some(crate::sqrtlift::min_eigenvalue_sym_part(&flat, d) >= floor)
            }
            Builtin::Brownian { scale: s } | Builtin::Linear { sigma: s, .. } | Builtin::MeanReverting { sigma: s, .. } | Builtin::StepDrift { sigma: s } => Some(*s >= floor),
            Builtin::Oscillating { sigma_amplitude, .. } => Some(1.0 - sigma_amplitude.abs() >= floor),
            // only diagonal bases have a closed-form verdict
            Builtin::Rectangular { base, amplitude, .. } => {
                let diagonal = base.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, v)| i == j || *v == 0.0));
                diagonal.then(|| {
                    let min_diag = (0..d).map(|i| base[i][i]).fold(f64::INFINITY, f64::min);
                    (1.0 - amplitude.abs()) * min_diag >= floor
                })
            }
        });
        KnownVerdicts {
            linear_growth: bounded_in_y,
            nondegeneracy: self.min_eigenvalue_bound(d, d1) >= floor,
            nondegeneracy_strong: strong,
            lipschitz_x_local_y: self.lipschitz_constant(d, d1).is_some(),
            lipschitz_sigma_global: true,
        }
    }
}
