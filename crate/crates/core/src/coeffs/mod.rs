//! Kernel coefficients `b(t, x, y)`, `sigma(t, x, y)` and their averages
//! against empirical measures.

mod builtin;
mod check;
mod kernel;
mod mollify;

pub use builtin::{Builtin, KnownVerdicts};
pub use check::{
    check_linear_growth, check_lipschitz, check_nondegeneracy, check_nondegeneracy_strong, Condition, ConditionReport,
    LipschitzVariant, SamplePlan, Witness,
};
pub use kernel::{rect_identity, Kernel, MeasureFactorFn, MeasureSummary, PointFn, StateFactorFn, Term};
pub use mollify::{gauss_legendre, mollify, mollify_kernel, Bandwidths, BumpRule, Mollifier, MAX_MOLLIFY_DIM};

use crate::error::{Error, Result};
use crate::simulate::ParticleEnsemble;

/// Drift and diffusion kernels with declared dimensions.
#[derive(Clone, Debug)]
pub struct KernelCoefficients {
    pub dim_state: usize,
    pub dim_noise: usize,
    /// `d x 1` kernel.
    pub drift: Kernel,
    /// `d x d1` kernel, row-major.
    pub diffusion: Kernel,
    /// Declared `C` with `|b| + |sigma|_F <= C (1 + |x|)`.
    pub growth_constant: f64,
    pub builtin: Option<Builtin>,
}

impl KernelCoefficients {
    /// Validates that kernel shapes agree with the declared dimensions.
    pub fn new(drift: Kernel, diffusion: Kernel, growth_constant: f64) -> Result<Self> {
        let d = drift.rows();
        if drift.cols() != 1 {
            return Err(Error::Dimension { context: "drift kernel columns", expected: 1, got: drift.cols() });
        }
        if diffusion.rows() != d {
            return Err(Error::Dimension { context: "diffusion kernel rows", expected: d, got: diffusion.rows() });
        }
        if d == 0 || diffusion.cols() == 0 {
            return Err(Error::Config("kernel dimensions must be positive".into()));
        }
        if !(growth_constant >= 0.0) {
            return Err(Error::Config(format!("growth constant must be nonnegative, got {growth_constant}")));
        }
        Ok(Self { dim_state: d, dim_noise: diffusion.cols(), drift, diffusion, growth_constant, builtin: None })
    }

    /// Coefficients from plain pointwise closures (general, O(N) per evaluation).
    pub fn from_fns<B, S>(d: usize, d1: usize, growth_constant: f64, b: B, sigma: S) -> Result<Self>
    where
        B: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(Kernel::general(d, 1, b), Kernel::general(d, d1, sigma), growth_constant)
    }

    /// Summaries of the measure for both kernels.
    pub fn summarize(&self, t: f64, states: &[f64]) -> Result<(MeasureSummary, MeasureSummary)> {
        Ok((self.drift.summarize(t, states)?, self.diffusion.summarize(t, states)?))
    }
}

fn check_ensemble(coeffs: &KernelCoefficients, x: &[f64], ensemble: &ParticleEnsemble) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::Precondition("mean-field average over an empty ensemble".into()));
    }
    if ensemble.dim() != coeffs.dim_state {
        return Err(Error::Dimension { context: "ensemble state dimension", expected: coeffs.dim_state, got: ensemble.dim() });
    }
    if x.len() != coeffs.dim_state {
        return Err(Error::Dimension { context: "evaluation point", expected: coeffs.dim_state, got: x.len() });
    }
    Ok(())
}

/// `(1/N) sum_j b(t, x, Y_j)` over all ensemble states.
pub fn mean_field_drift(coeffs: &KernelCoefficients, t: f64, x: &[f64], ensemble: &ParticleEnsemble) -> Result<Vec<f64>> {
    check_ensemble(coeffs, x, ensemble)?;
    let s = coeffs.drift.summarize(t, ensemble.states())?;
    let mut out = vec![0.0; coeffs.dim_state];
    coeffs.drift.average(t, x, &s, &mut out)?;
    Ok(out)
}

/// `(1/N) sum_j sigma(t, x, Y_j)`, row-major `d x d1`.
pub fn mean_field_diffusion(coeffs: &KernelCoefficients, t: f64, x: &[f64], ensemble: &ParticleEnsemble) -> Result<Vec<f64>> {
    check_ensemble(coeffs, x, ensemble)?;
    let s = coeffs.diffusion.summarize(t, ensemble.states())?;
    let mut out = vec![0.0; coeffs.dim_state * coeffs.dim_noise];
    coeffs.diffusion.average(t, x, &s, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedLineage;
    use proptest::prelude::*;

    fn attraction() -> KernelCoefficients {
        Builtin::MeanReverting { kappa: 1.0, sigma: 0.0 }.coefficients(1, 1).unwrap()
    }

    fn ens(states: Vec<f64>, dim: usize) -> ParticleEnsemble {
        ParticleEnsemble::new(states, dim, SeedLineage::new(0)).unwrap()
    }

    #[test]
    fn symmetric_particles_cancel() {
        let v = mean_field_drift(&attraction(), 0.0, &[2.0], &ens(vec![1.0, 3.0], 1)).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn attraction_towards_mean() {
        let v = mean_field_drift(&attraction(), 0.0, &[0.0], &ens(vec![1.0, 3.0], 1)).unwrap();
        // direct summation: (1 + 3) / 2
        assert!((v[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_drift_ignores_measure() {
        let c = Builtin::Constant { drift: vec![0.3, -1.2], diffusion: vec![vec![1.0, 0.0], vec![0.0, 1.0]] }
            .coefficients(2, 2)
            .unwrap();
        let v = mean_field_drift(&c, 0.5, &[9.0, 1.0], &ens(vec![1.0, 2.0, -4.0, 0.5, 7.0, 7.0], 2)).unwrap();
        assert_eq!(v, vec![0.3, -1.2]);
        let s = mean_field_diffusion(&c, 0.5, &[9.0, 1.0], &ens(vec![1.0, 2.0], 2)).unwrap();
        assert_eq!(s, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn diffusion_linear_in_y() {
        let c = KernelCoefficients::from_fns(1, 1, 1.0, |_, _, _, o| o[0] = 0.0, |_, _, y, o| o[0] = y[0]).unwrap();
        let s = mean_field_diffusion(&c, 0.0, &[0.0], &ens(vec![1.0, 3.0], 1)).unwrap();
        assert_eq!(s, vec![2.0]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let c = attraction();
        assert!(mean_field_diffusion(&c, 0.0, &[0.0], &ParticleEnsemble::empty(1, SeedLineage::new(0))).is_err());
        assert!(matches!(
            mean_field_drift(&c, 0.0, &[0.0, 1.0], &ens(vec![1.0], 1)),
            Err(Error::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn averaging_is_linear_under_concatenation(
            a in prop::collection::vec(-10.0f64..10.0, 1..40),
            seed in 0u64..1000,
            x in -5.0f64..5.0,
        ) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.5 + (seed + i as u64) as f64 * 0.01).collect();
            let c = Builtin::Linear { a: -0.7, beta: 1.3, sigma: 0.1 }.coefficients(1, 1).unwrap();
            let general = KernelCoefficients::from_fns(1, 1, 1.0, |_, x, y, o| o[0] = (x[0] - y[0]).sin(), |_, _, _, o| o[0] = 1.0).unwrap();
            for k in [&c, &general] {
                let va = mean_field_drift(k, 0.0, &[x], &ens(a.clone(), 1)).unwrap()[0];
                let vb = mean_field_drift(k, 0.0, &[x], &ens(b.clone(), 1)).unwrap()[0];
                let mut joined = a.clone();
                joined.extend_from_slice(&b);
                let vj = mean_field_drift(k, 0.0, &[x], &ens(joined, 1)).unwrap()[0];
                let expect = 0.5 * (va + vb);
                prop_assert!((vj - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}
