//! Sample-based checks of growth, nondegeneracy and Lipschitz hypotheses.
//!
//! Points are deterministic: the corners of the `(x, y)` box first, then a
//! Halton sequence. Evaluation runs in parallel; the max reduction runs in
//! index order so reports are bit-identical across thread counts.

use rayon::prelude::*;
use serde::Serialize;

use super::KernelCoefficients;
use crate::error::{Error, Result};
use crate::sqrtlift::{min_eigenvalue_aat, min_eigenvalue_sym_part};
use crate::stats::halton;

/// `(t, x, x', y)` probe for the Lipschitz checks.
type PointPair = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    LinearGrowth,
    Nondegeneracy,
    NondegeneracyStrong,
    LipschitzXLocalY,
    LipschitzSigmaGlobal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Point { t: f64, x: Vec<f64>, y: Vec<f64> },
    Pair { t: f64, x: Vec<f64>, x_prime: Vec<f64>, y: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub samples_checked: usize,
    /// Worst quotient against the claimed bound; `passed` iff `<= 1 + tolerance`.
    pub worst_ratio: f64,
    /// The raw quantity at the witness (norm, eigenvalue or difference quotient).
    pub observed: f64,
    pub worst_witness: Witness,
    pub passed: bool,
}

/// Which Lipschitz inequality to test, with its claimed constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LipschitzVariant {
    /// `|sigma(x) - sigma(x')|_F <= C (1 + |y|^2) |x - x'|`
    SigmaLocalY { constant: f64 },
    /// `|b(x) - b(x')| + |sigma(x) - sigma(x')|_F <= C (1 + |y|^2) |x - x'|`
    DriftSigmaLocalY { constant: f64 },
    /// `|sigma(x) - sigma(x')|_F <= C |x - x'|`
    SigmaGlobal { constant: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub points: usize,
    pub t_range: (f64, f64),
    pub x_radius: f64,
    pub y_radius: f64,
    pub tolerance: f64,
    pub nondegeneracy_floor: f64,
    /// Distances `|x - x'|` used for Lipschitz pairs.
    pub pair_scales: Vec<f64>,
}

const MAX_CORNER_AXES: usize = 12;

impl SamplePlan {
    pub fn standard() -> Self {
        let r = 5.0;
        Self {
            points: 2048,
            t_range: (0.0, 1.0),
            x_radius: r,
            y_radius: r,
            tolerance: 1e-9,
            nondegeneracy_floor: 1e-6,
            pair_scales: vec![r, 0.1 * r, 0.01 * r, 1e-3 * r],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.points == 0 || !(self.t_range.1 >= self.t_range.0) || !(self.x_radius > 0.0) || !(self.y_radius >= 0.0) {
            return Err(Error::Config("sample plan needs points > 0, an ordered t range and positive radii".into()));
        }
        if self.pair_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("pair scales must be positive".into()));
        }
        Ok(())
    }

    /// The `i`-th sample `(t, x, y)`.
    fn point(&self, i: usize, d: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let axes = 2 * d;
        let corners = if axes <= MAX_CORNER_AXES { 1usize << axes } else { 0 };
        let (t0, t1) = self.t_range;
        if i < corners {
            let x = (0..d).map(|k| if i >> k & 1 == 1 { self.x_radius } else { -self.x_radius }).collect();
            let y = (0..d).map(|k| if i >> (d + k) & 1 == 1 { self.y_radius } else { -self.y_radius }).collect();
            return (t1, x, y);
        }
        let h = (i - corners + 1) as u64;
        let t = t0 + (t1 - t0) * halton(h, 0);
        let x = (0..d).map(|k| self.x_radius * (2.0 * halton(h, 1 + k) - 1.0)).collect();
        let y = (0..d).map(|k| self.y_radius * (2.0 * halton(h, 1 + d + k) - 1.0)).collect();
        (t, x, y)
    }

    fn direction(&self, i: usize, d: usize) -> Vec<f64> {
        let h = i as u64 + 1;
        let mut u: Vec<f64> = (0..d).map(|k| 2.0 * halton(h, 1 + 2 * d + k) - 1.0).collect();
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-6 {
            u.iter_mut().for_each(|v| *v = 0.0);
            u[0] = 1.0;
        } else {
            u.iter_mut().for_each(|v| *v /= n);
        }
        u
    }

    fn pairs(&self, d: usize) -> Vec<PointPair> {
        let mut out = Vec::with_capacity(self.points * (2 * self.pair_scales.len()));
        for i in 0..self.points {
            let (t, x, y) = self.point(i, d);
            let u = self.direction(i, d);
            for &s in &self.pair_scales {
                let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + s * b).collect();
                out.push((t, x.clone(), xp, y.clone()));
                // straddle the origin, where discontinuities of sign-like drifts sit
                let half = 0.5 * s;
                let xs: Vec<f64> = u.iter().map(|v| half * v).collect();
                let xn: Vec<f64> = u.iter().map(|v| -half * v).collect();
                out.push((t, xs, xn, y.clone()));
            }
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `(ratio, observed)`; NaN ratios count as infinitely bad.
fn worst<W>(condition: Condition, tol: f64, evals: Vec<(f64, f64)>, witness: W) -> ConditionReport
where
    W: Fn(usize) -> Witness,
{
    let mut best = 0usize;
    let mut best_ratio = f64::NEG_INFINITY;
    for (i, &(r, _)) in evals.iter().enumerate() {
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if r > best_ratio {
            best_ratio = r;
            best = i;
        }
    }
    ConditionReport {
        condition,
        samples_checked: evals.len(),
        worst_ratio: best_ratio,
        observed: evals[best].1,
        worst_witness: witness(best),
        passed: best_ratio <= 1.0 + tol,
    }
}

fn quotient(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Worst `(|b| + |sigma|_F) / (C (1 + |x|))` over the plan.
pub fn check_linear_growth(coeffs: &KernelCoefficients, plan: &SamplePlan) -> Result<ConditionReport> {
    plan.validate()?;
    let d = coeffs.dim_state;
    let c = coeffs.growth_constant;
    let evals: Vec<(f64, f64)> = (0..plan.points)
        .into_par_iter()
        .map(|i| {
            let (t, x, y) = plan.point(i, d);
            let b = coeffs.drift.eval_vec(t, &x, &y);
            let s = coeffs.diffusion.eval_vec(t, &x, &y);
            let num = norm(&b) + norm(&s);
            (quotient(num, c * (1.0 + norm(&x))), num)
        })
        .collect();
    Ok(worst(Condition::LinearGrowth, plan.tolerance, evals, |i| {
        let (t, x, y) = plan.point(i, d);
        Witness::Point { t, x, y }
    }))
}

/// Worst `floor / lambda_min(sigma sigma^T)`; `observed` is the smallest eigenvalue.
pub fn check_nondegeneracy(coeffs: &KernelCoefficients, plan: &SamplePlan) -> Result<ConditionReport> {
    plan.validate()?;
    let (d, d1) = (coeffs.dim_state, coeffs.dim_noise);
    eigen_check(Condition::Nondegeneracy, coeffs, plan, |s| min_eigenvalue_aat(s, d, d1))
}

/// Worst `floor / lambda_min(sym(sigma))` for square diffusions.
pub fn check_nondegeneracy_strong(coeffs: &KernelCoefficients, plan: &SamplePlan) -> Result<ConditionReport> {
    plan.validate()?;
    let d = coeffs.dim_state;
    if coeffs.dim_noise != d {
        return Err(Error::Dimension { context: "strong nondegeneracy needs a square diffusion", expected: d, got: coeffs.dim_noise });
    }
    eigen_check(Condition::NondegeneracyStrong, coeffs, plan, |s| min_eigenvalue_sym_part(s, d))
}

fn eigen_check<F>(condition: Condition, coeffs: &KernelCoefficients, plan: &SamplePlan, lambda: F) -> Result<ConditionReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = coeffs.dim_state;
    let floor = plan.nondegeneracy_floor;
    let evals: Vec<(f64, f64)> = (0..plan.points)
        .into_par_iter()
        .map(|i| {
            let (t, x, y) = plan.point(i, d);
            let l = lambda(&coeffs.diffusion.eval_vec(t, &x, &y));
            let ratio = if l > 0.0 { floor / l } else { f64::INFINITY };
            (ratio, l)
        })
        .collect();
    Ok(worst(condition, plan.tolerance, evals, |i| {
        let (t, x, y) = plan.point(i, d);
        Witness::Point { t, x, y }
    }))
}

/// Worst difference quotient over `(x, x')` pairs against `variant`'s bound.
pub fn check_lipschitz(coeffs: &KernelCoefficients, plan: &SamplePlan, variant: LipschitzVariant) -> Result<ConditionReport> {
    plan.validate()?;
    let d = coeffs.dim_state;
    let pairs = plan.pairs(d);
    let condition = match variant {
        LipschitzVariant::SigmaGlobal { .. } => Condition::LipschitzSigmaGlobal,
        _ => Condition::LipschitzXLocalY,
    };
    let evals: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(t, x, xp, y)| {
            let dx = diff_norm(x, xp);
            let ds = diff_norm(&coeffs.diffusion.eval_vec(*t, x, y), &coeffs.diffusion.eval_vec(*t, xp, y));
            let y2 = 1.0 + y.iter().map(|v| v * v).sum::<f64>();
            let (num, c) = match variant {
                LipschitzVariant::SigmaLocalY { constant } => (ds, constant * y2),
                LipschitzVariant::DriftSigmaLocalY { constant } => {
                    let db = diff_norm(&coeffs.drift.eval_vec(*t, x, y), &coeffs.drift.eval_vec(*t, xp, y));
                    (db + ds, constant * y2)
                }
                LipschitzVariant::SigmaGlobal { constant } => (ds, constant),
            };
            (quotient(num, c * dx), quotient(num, dx))
        })
        .collect();
    Ok(worst(condition, plan.tolerance, evals, |i| {
        let (t, x, xp, y) = pairs[i].clone();
        Witness::Pair { t, x, x_prime: xp, y }
    }))
}

#[cfg(test)]
mod tests {
    use super::super::{Builtin, Kernel};
    use super::*;

    fn small_plan() -> SamplePlan {
        SamplePlan { points: 256, ..SamplePlan::standard() }
    }

    fn coeffs(d: usize, d1: usize, c: f64, b: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static, s: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> KernelCoefficients {
        KernelCoefficients::new(
            Kernel::general(d, 1, move |_, x, y, o| b(x, y, o)),
            Kernel::general(d, d1, move |_, x, _, o| s(x, o)),
            c,
        )
        .unwrap()
    }

    fn identity(_: &[f64], o: &mut [f64]) {
        let d = (o.len() as f64).sqrt() as usize;
        o.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            o[i * d + i] = 1.0;
        }
    }

    #[test]
    fn growth_examples() {
        let plan = small_plan();
        let bm = coeffs(1, 1, 1.0, |_, _, o| o[0] = 0.0, |_, o| o[0] = 1.0);
        let r = check_linear_growth(&bm, &plan).unwrap();
        assert!(r.passed && r.worst_ratio <= 1.0);

        let double = coeffs(1, 1, 1.0, |x, _, o| o[0] = 2.0 * x[0], |_, o| o[0] = 0.0);
        let r = check_linear_growth(&double, &plan).unwrap();
        assert!(!r.passed);
        let corner = 2.0 * 5.0 / 6.0;
        assert!((r.worst_ratio - corner).abs() < 1e-12);
        match r.worst_witness {
            Witness::Point { x, .. } => assert_eq!(x[0].abs(), 5.0),
            _ => panic!(),
        }

        let ident = coeffs(1, 1, 1.0, |x, _, o| o[0] = x[0], |_, o| o[0] = 0.0);
        let r = check_linear_growth(&ident, &plan).unwrap();
        assert!(r.passed && r.worst_ratio < 1.0);
    }

    #[test]
    fn nondegeneracy_examples() {
        let plan = small_plan();
        let id = coeffs(2, 2, 1.0, |_, _, o| o.fill(0.0), identity);
        let r = check_nondegeneracy(&id, &plan).unwrap();
        assert!(r.passed && (r.observed - 1.0).abs() < 1e-12);

        let eps = 1e-2;
        let thin = coeffs(2, 2, 1.0, |_, _, o| o.fill(0.0), move |_, o| o.copy_from_slice(&[1.0, 0.0, 0.0, eps]));
        let r = check_nondegeneracy(&thin, &plan).unwrap();
        assert!((r.observed - eps * eps).abs() < 1e-14);

        let rect = coeffs(2, 3, 1.0, |_, _, o| o.fill(0.0), |_, o| o.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let r = check_nondegeneracy(&rect, &plan).unwrap();
        assert!(r.passed && (r.observed - 1.0).abs() < 1e-12);
        assert!(check_nondegeneracy_strong(&rect, &plan).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let plan = small_plan();
        let flat = coeffs(1, 1, 1.0, |_, _, o| o[0] = 0.0, |_, o| o[0] = 3.0);
        let r = check_lipschitz(&flat, &plan, LipschitzVariant::SigmaGlobal { constant: 1.0 }).unwrap();
        assert!(r.passed && r.worst_ratio == 0.0);

        let steep = coeffs(1, 1, 1.0, |_, _, o| o[0] = 0.0, |x, o| o[0] = 2.0 * x[0]);
        let r = check_lipschitz(&steep, &plan, LipschitzVariant::SigmaGlobal { constant: 1.0 }).unwrap();
        assert!(!r.passed);
        assert!((r.worst_ratio - 2.0).abs() < 1e-9);

        let quad = coeffs(1, 1, 1.0, |x, y, o| o[0] = y[0] * y[0] * x[0], |_, o| o[0] = 1.0);
        let r = check_lipschitz(&quad, &plan, LipschitzVariant::DriftSigmaLocalY { constant: 1.0 }).unwrap();
        assert!(r.passed && r.worst_ratio < 1.0);
    }

    #[test]
    fn reports_are_deterministic() {
        let c = Builtin::Oscillating { frequency: 7.0, coupling: 0.3, sigma_amplitude: 0.2 }.coefficients(2, 2).unwrap();
        let plan = small_plan();
        let a = check_lipschitz(&c, &plan, LipschitzVariant::DriftSigmaLocalY { constant: 1.0 }).unwrap();
        let b = check_lipschitz(&c, &plan, LipschitzVariant::DriftSigmaLocalY { constant: 1.0 }).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    fn verdict_families() -> Vec<(Builtin, usize, usize)> {
        vec![
            (Builtin::Brownian { scale: 1.0 }, 1, 1),
            (Builtin::Brownian { scale: 0.5 }, 2, 3),
            (Builtin::Constant { drift: vec![0.5, -0.5], diffusion: vec![vec![1.0, 0.2], vec![0.0, 0.8]] }, 2, 2),
            (Builtin::Linear { a: -1.0, beta: 0.0, sigma: 0.2 }, 1, 1),
            (Builtin::Linear { a: -1.0, beta: 0.5, sigma: 0.2 }, 1, 1),
            (Builtin::MeanReverting { kappa: 1.5, sigma: 0.3 }, 2, 2),
            (Builtin::StepDrift { sigma: 1.0 }, 1, 1),
            (Builtin::StepDrift { sigma: 1.0 }, 3, 3),
            (Builtin::Oscillating { frequency: 7.0, coupling: 0.3, sigma_amplitude: 0.2 }, 1, 1),
            (Builtin::Oscillating { frequency: 7.0, coupling: 0.3, sigma_amplitude: 0.2 }, 2, 2),
            (
                Builtin::Rectangular { kappa: 1.0, base: vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.5]], amplitude: 0.2 },
                2,
                3,
            ),
            (Builtin::Rectangular { kappa: 0.0, base: vec![vec![1.0, 0.0], vec![0.0, 2.0]], amplitude: 0.3 }, 2, 2),
        ]
    }

    #[test]
    fn checkers_reproduce_builtin_verdicts() {
        let plan = SamplePlan::standard();
        for (family, d, d1) in verdict_families() {
            let c = family.coefficients(d, d1).unwrap();
            let known = family.known_verdicts(d, d1, plan.nondegeneracy_floor);
            let tag = format!("{family:?} d={d} d1={d1}");
            assert_eq!(check_linear_growth(&c, &plan).unwrap().passed, known.linear_growth, "growth {tag}");
            assert_eq!(check_nondegeneracy(&c, &plan).unwrap().passed, known.nondegeneracy, "nondeg {tag}");
            if let Some(strong) = known.nondegeneracy_strong {
                assert_eq!(check_nondegeneracy_strong(&c, &plan).unwrap().passed, strong, "strong {tag}");
            }
            let lip = family.lipschitz_constant(d, d1).unwrap_or(1.0);
            let r = check_lipschitz(&c, &plan, LipschitzVariant::DriftSigmaLocalY { constant: lip }).unwrap();
            assert_eq!(r.passed, known.lipschitz_x_local_y, "lipschitz {tag}: {r:?}");
            let sl = family.sigma_lipschitz_constant(d, d1);
            let r = check_lipschitz(&c, &plan, LipschitzVariant::SigmaGlobal { constant: sl }).unwrap();
            assert_eq!(r.passed, known.lipschitz_sigma_global, "sigma lipschitz {tag}: {r:?}");
        }
    }
}
