//! Radial time change, reflected comparison process and Gaussian sup
//! moments for the norm of a driftless diffusion.
//!
//! For `dX = sigma dW` in `d >= 2` the norm satisfies
//! `d|X| = row . dW + (drift) dt` with `row = x^T sigma / |x|`. Running the
//! clock `tau(t) = int |row|^2 ds` turns `W^ = int row . dW` into a Wiener
//! process in `tau`, which drives a reflected process `Z` on `[1, inf)`
//! with drift `C1` that dominates `|X|` pathwise.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{Builtin, KernelCoefficients};
use crate::error::{Error, Result};
use crate::rng::SeedLineage;
use crate::simulate::{csv_header, simulate, write_row, InitialLaw, SimConfig};
use crate::stats::{mean_se, ols_slope, MeanEstimate};

/// Paths closer than this to the origin are rejected.
pub const ORIGIN_GUARD: f64 = 1e-8;

/// Radial drift and diffusion row at every step of a path.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialParts {
    /// `B_k = (tr a - <a x^, x^>) / |x|`
    pub drift: Vec<f64>,
    /// `x^T sigma / |x|`, `steps x d1`.
    pub rows: Vec<f64>,
    pub noise_dim: usize,
}

/// Decomposes the norm of a path (`points x d`) with `sigma` along the
/// path (`points x d x d1`, row-major per point).
pub fn radial_decompose(path: &[f64], sigma: &[f64], d: usize, d1: usize) -> Result<RadialParts> {
    if d < 2 {
        return Err(Error::Config("radial decomposition needs d >= 2".into()));
    }
    let points = path.len() / d;
    if sigma.len() != points * d * d1 {
        return Err(Error::Dimension { context: "sigma along path", expected: points * d * d1, got: sigma.len() });
    }
    let mut drift = Vec::with_capacity(points);
    let mut rows = Vec::with_capacity(points * d1);
    for k in 0..points {
        let x = &path[k * d..(k + 1) * d];
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(r >= ORIGIN_GUARD) {
            return Err(Error::Domain { step: k, reason: format!("path within {ORIGIN_GUARD:e} of the origin (|x| = {r:e})") });
        }
        let s = &sigma[k * d * d1..(k + 1) * d * d1];
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        let row: Vec<f64> = (0..d1).map(|j| (0..d).map(|i| u[i] * s[i * d1 + j]).sum()).collect();
        let trace: f64 = s.iter().map(|v| v * v).sum();
        let quad: f64 = row.iter().map(|v| v * v).sum();
        let b = (trace - quad) / r;
        if !b.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "radial decomposition", step: Some(k), particle: 0 });
        }
        drift.push(b);
        rows.extend(row);
    }
    Ok(RadialParts { drift, rows, noise_dim: d1 })
}

/// Which integrand defines the clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockConvention {
    /// `tau = int |row|^2 ds`: the quadratic variation of `int row . dW`.
    QuadraticVariation,
    /// `tau = int |row|^{-2} ds`.
    InverseSquare,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeChange {
    pub dt: f64,
    /// `tau(t_k)`, `k = 0..=steps`.
    pub tau: Vec<f64>,
    /// Smallest and largest `|row|^2` seen.
    pub row_sq_range: (f64, f64),
    pub convention: ClockConvention,
}

impl TimeChange {
    pub fn steps(&self) -> usize {
        self.tau.len() - 1
    }

    /// `tau(t)` by linear interpolation on the grid.
    pub fn tau_at(&self, t: f64) -> f64 {
        let k = ((t / self.dt).floor().max(0.0) as usize).min(self.steps().saturating_sub(1));
        let w = (t - k as f64 * self.dt) / self.dt;
        self.tau[k] + w * (self.tau[k + 1] - self.tau[k])
    }

    /// `chi = tau^{-1}` by piecewise-linear inversion.
    pub fn chi(&self, u: f64) -> f64 {
        let k = self.tau.partition_point(|&v| v <= u).clamp(1, self.steps()) - 1;
        let (a, b) = (self.tau[k], self.tau[k + 1]);
        (k as f64 + (u - a) / (b - a)) * self.dt
    }

    /// Slope bounds of `tau` lie within `[1/C0, C0]`.
    pub fn certifies(&self, c0: f64) -> bool {
        let (lo, hi) = match self.convention {
            ClockConvention::QuadraticVariation => self.row_sq_range,
            ClockConvention::InverseSquare => (1.0 / self.row_sq_range.1, 1.0 / self.row_sq_range.0),
        };
        lo >= 1.0 / c0 * (1.0 - 1e-12) && hi <= c0 * (1.0 + 1e-12)
    }

    /// Time-changed increments `row_k . dW_k`.
    pub fn w_hat(&self, rows: &[f64], noise: &[f64], d1: usize) -> Vec<f64> {
        rows.chunks_exact(d1).zip(noise.chunks_exact(d1)).map(|(r, w)| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect()
    }

    /// Clock increments `tau_{k+1} - tau_k`.
    pub fn increments(&self) -> Vec<f64> {
        self.tau.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Builds the clock from per-step diffusion rows (`steps x d1`).
pub fn build_time_change(rows: &[f64], d1: usize, dt: f64, convention: ClockConvention) -> Result<TimeChange> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    let mut tau = Vec::with_capacity(rows.len() / d1 + 1);
    tau.push(0.0);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (k, r) in rows.chunks_exact(d1).enumerate() {
        let q: f64 = r.iter().map(|v| v * v).sum();
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::Domain { step: k, reason: format!("diffusion row has squared norm {q}") });
        }
        lo = lo.min(q);
        hi = hi.max(q);
        let rate = match convention {
            ClockConvention::QuadraticVariation => q,
            ClockConvention::InverseSquare => 1.0 / q,
        };
        tau.push(tau[k] + rate * dt);
    }
    if tau.len() < 2 {
        return Err(Error::Precondition("time change needs at least one step".into()));
    }
    Ok(TimeChange { dt, tau, row_sq_range: (lo, hi), convention })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReflectedPath {
    pub z: Vec<f64>,
    /// Skorokhod corrections per step; nonzero only when `z` sits on the barrier.
    pub local_time: Vec<f64>,
    pub barrier: f64,
    pub c1: f64,
}

impl ReflectedPath {
    pub fn cumulative_local_time(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.local_time.iter().map(|v| {
                acc += v;
                acc
            }))
            .collect()
    }
}

/// Projection Skorokhod scheme `z_{k+1} = max(barrier, z_k + dW_k + C1 dt_k)`.
pub fn reflect_simulate(w_hat: &[f64], dt: &[f64], c1: f64, z0: f64, barrier: f64) -> Result<ReflectedPath> {
    if z0 < barrier {
        return Err(Error::Precondition(format!("z0 = {z0} lies below the barrier {barrier}")));
    }
    if w_hat.len() != dt.len() {
        return Err(Error::Dimension { context: "reflection increments", expected: w_hat.len(), got: dt.len() });
    }
    let mut z = Vec::with_capacity(w_hat.len() + 1);
    let mut local_time = Vec::with_capacity(w_hat.len());
    let mut cur = z0;
    z.push(cur);
    for (dw, h) in w_hat.iter().zip(dt) {
        let free = cur + dw + c1 * h;
        let next = free.max(barrier);
        local_time.push(next - free);
        cur = next;
        z.push(cur);
    }
    Ok(ReflectedPath { z, local_time, barrier, c1 })
}

/// Fraction of grid points with `Z < X^ - tolerance`.
pub fn comparison_test(hat_x: &[f64], reflected: &ReflectedPath, tolerance: f64) -> Result<f64> {
    if hat_x.len() != reflected.z.len() {
        return Err(Error::Dimension { context: "comparison paths", expected: reflected.z.len(), got: hat_x.len() });
    }
    if hat_x.is_empty() {
        return Ok(0.0);
    }
    let bad = hat_x.iter().zip(&reflected.z).filter(|(x, z)| **z < **x - tolerance).count();
    Ok(bad as f64 / hat_x.len() as f64)
}

/// `|V|` with its discrete Tanaka local time at zero:
/// `d psi = |V_{k+1}| - |V_k| - sign(V_k) dV_k`, `sign(0) = 0`.
pub fn sign_sde_reduce(v0: f64, increments: &[f64]) -> ReflectedPath {
    let mut v = v0;
    let mut z = vec![v0.abs()];
    let mut local_time = Vec::with_capacity(increments.len());
    for &dv in increments {
        let next = v + dv;
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        // no crossing, no correction; avoids rounding residue off zero
        let psi = if s != 0.0 && next * s >= 0.0 { 0.0 } else { (next.abs() - v.abs() - s * dv).max(0.0) };
        local_time.push(psi);
        v = next;
        z.push(v.abs());
    }
    ReflectedPath { z, local_time, barrier: 0.0, c1: 0.0 }
}

/// `E exp(r M^2)` for `M` with density `2 (2 pi T)^{-1/2} exp(-x^2 / 2T)` on
/// `x >= 0` (the running maximum of a Wiener process): `(1 - 2 r T)^{-1/2}`,
/// or `+inf` once `2 r T >= 1`.
pub fn sup_wiener_exp_moment(r: f64, t: f64) -> f64 {
    let s = 1.0 - 2.0 * r * t;
    if s <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 / s).sqrt()
    }
}

/// Monte Carlo estimate of `E exp(r (sup_{s <= T} W_s)^2)` over random walks.
pub fn sup_wiener_exp_moment_mc(r: f64, t: f64, paths: usize, steps: usize, lineage: SeedLineage) -> MeanEstimate {
    let sd = (t / steps as f64).sqrt();
    let vals: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = lineage.stream(p);
            let (mut w, mut m) = (0.0f64, 0.0f64);
            for _ in 0..steps {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                w += sd * z;
                m = m.max(w);
            }
            (r * m * m).exp()
        })
        .collect();
    mean_se(&vals)
}

/// Driftless `d`-dimensional diffusion `sigma = diag(1 + eps sin x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonSetup {
    pub dim: usize,
    pub amplitude: f64,
    pub x0: Vec<f64>,
}

impl Default for ComparisonSetup {
    fn default() -> Self {
        Self { dim: 2, amplitude: 0.2, x0: vec![2.0, 0.0] }
    }
}

impl ComparisonSetup {
    pub fn coefficients(&self) -> Result<KernelCoefficients> {
        let d = self.dim;
        let base = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Builtin::Rectangular { kappa: 0.0, base, amplitude: self.amplitude }.coefficients(d, d)
    }

    /// Bound on the radial drift for `|x| >= 1`: `(d - 1)(1 + eps)^2`.
    pub fn k(&self) -> f64 {
        (self.dim as f64 - 1.0) * (1.0 + self.amplitude.abs()).powi(2)
    }

    /// Bound with `1/C0 <= |row|^2 <= C0`.
    pub fn c0(&self) -> f64 {
        let e = self.amplitude.abs();
        (1.0 + e).powi(2).max((1.0 - e).powi(-2))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub paths: usize,
    pub steps: usize,
    pub k: f64,
    pub c0: f64,
    pub c1: f64,
    pub tolerance: f64,
    pub violation_fraction: f64,
    /// Paths where `sup |X|` on `[0, T]` exceeds `sup X^` on `[0, C0 T]`.
    pub domination_violation_fraction: f64,
    /// Max `|chi(tau(t_k)) - t_k|` in units of `dt`.
    pub round_trip_cells: f64,
    /// Slope of cumulative `sum dW^2` against `tau`.
    pub qv_slope: f64,
    pub clock_certified: bool,
    #[serde(skip)]
    pub reflected: Vec<ReflectedPath>,
    #[serde(skip)]
    pub hat_x: Vec<Vec<f64>>,
    #[serde(skip)]
    pub tau: Vec<Vec<f64>>,
}

/// Simulates the driftless diffusion, time-changes each path's norm and
/// compares it with the reflected process driven by the same `W^`.
pub fn run_comparison(
    setup: &ComparisonSetup,
    paths: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    c1: f64,
    tolerance: f64,
) -> Result<ComparisonReport> {
    let coeffs = setup.coefficients()?;
    let d = setup.dim;
    let cfg = SimConfig::new(coeffs.clone(), paths, steps, dt, InitialLaw::Point { x0: setup.x0.clone() }, seed)
        .record_first(paths)
        .with_noise();
    let bundle = simulate(&cfg)?;
    let c0 = setup.c0();

    struct PathOut {
        reflected: ReflectedPath,
        hat_x: Vec<f64>,
        tau: Vec<f64>,
        violations: usize,
        dominated: bool,
        round_trip: f64,
        qv: Vec<f64>,
        certified: bool,
    }

    let per: Vec<PathOut> = (0..paths)
        .into_par_iter()
        .map(|p| -> Result<PathOut> {
            let path: Vec<f64> = (0..=steps).flat_map(|k| bundle.state(k, p).to_vec()).collect();
            let mut sig = vec![0.0; steps * d * d];
            for (k, out) in sig.chunks_exact_mut(d * d).enumerate() {
                let x = bundle.state(k, p);
                coeffs.diffusion.eval(k as f64 * dt, x, x, out);
            }
            let parts = radial_decompose(&path[..steps * d], &sig, d, d)?;
            let clock = build_time_change(&parts.rows, d, dt, ClockConvention::QuadraticVariation)?;
            let noise: Vec<f64> = (0..steps).flat_map(|k| bundle.noise_at(k, p).unwrap_or(&[]).to_vec()).collect();
            let w_hat = clock.w_hat(&parts.rows, &noise, d);
            let hat_x: Vec<f64> = path.chunks_exact(d).map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let reflected = reflect_simulate(&w_hat, &clock.increments(), c1, hat_x[0].max(1.0), 1.0)?;
            let violations = hat_x.iter().zip(&reflected.z).filter(|(x, z)| **z < **x - tolerance).count();
            let sup_x = hat_x.iter().copied().fold(0.0, f64::max);
            let limit = c0 * steps as f64 * dt * (1.0 + 1e-12);
            let sup_hat = hat_x.iter().zip(&clock.tau).filter(|(_, u)| **u <= limit).map(|(x, _)| *x).fold(0.0, f64::max);
            let round_trip = (0..=steps).map(|k| (clock.chi(clock.tau[k]) - k as f64 * dt).abs() / dt).fold(0.0, f64::max);
            let mut acc = 0.0;
            let qv = std::iter::once(0.0)
                .chain(w_hat.iter().map(|w| {
                    acc += w * w;
                    acc
                }))
                .collect();
            Ok(PathOut {
                certified: clock.certifies(c0),
                reflected,
                hat_x,
                tau: clock.tau,
                violations,
                dominated: sup_x <= sup_hat,
                round_trip,
                qv,
            })
        })
        .collect::<Result<_>>()?;

    let points = paths * (steps + 1);
    let violations: usize = per.iter().map(|o| o.violations).sum();
    let undominated = per.iter().filter(|o| !o.dominated).count();
    // pooled regression of accumulated W^ squares on the clock
    let (xs, ys): (Vec<f64>, Vec<f64>) = per.iter().flat_map(|o| o.tau.iter().copied().zip(o.qv.iter().copied())).unzip();
    Ok(ComparisonReport {
        paths,
        steps,
        k: setup.k(),
        c0,
        c1,
        tolerance,
        violation_fraction: violations as f64 / points.max(1) as f64,
        domination_violation_fraction: undominated as f64 / paths.max(1) as f64,
        round_trip_cells: per.iter().map(|o| o.round_trip).fold(0.0, f64::max),
        qv_slope: ols_slope(&xs, &ys),
        clock_certified: per.iter().all(|o| o.certified),
        reflected: per.iter().map(|o| o.reflected.clone()).collect(),
        hat_x: per.iter().map(|o| o.hat_x.clone()).collect(),
        tau: per.into_iter().map(|o| o.tau).collect(),
    })
}

/// Writes reflected paths in the path CSV layout (`x_0` holds `Z`, `time`
/// the clock value) with the cumulative local time as an extra column.
pub fn write_reflected_csv<W: Write>(w: &mut W, paths: &[ReflectedPath], clocks: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "{}", csv_header(1, &["local_time"]))?;
    for (id, (p, tau)) in paths.iter().zip(clocks).enumerate() {
        for (k, (z, l)) in p.z.iter().zip(p.cumulative_local_time()).enumerate() {
            write_row(w, k, tau[k], id, &[*z], &[l])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_threshold, ks_two_sample};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn identity_sigma(points: usize, d: usize) -> Vec<f64> {
        (0..points).flat_map(|_| (0..d * d).map(move |i| if i % (d + 1) == 0 { 1.0 } else { 0.0 })).collect()
    }

    #[test]
    fn identity_radial_drift() {
        let path = [3.0, 4.0, 0.0, 2.0];
        let r = radial_decompose(&path, &identity_sigma(2, 2), 2, 2).unwrap();
        assert!((r.drift[0] - 0.2).abs() < 1e-15);
        assert!((r.drift[1] - 0.5).abs() < 1e-15);
        assert!((r.rows[0] - 0.6).abs() < 1e-15 && (r.rows[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn scaled_identity_in_three_dims() {
        let sig: Vec<f64> = identity_sigma(1, 3).iter().map(|v| 2.0 * v).collect();
        let r = radial_decompose(&[0.0, 1.0, 0.0], &sig, 3, 3).unwrap();
        assert!((r.drift[0] - 8.0).abs() < 1e-14);
        let ray = radial_decompose(&[0.5, 0.5, 0.5], &identity_sigma(1, 3), 3, 3).unwrap();
        assert!((ray.rows.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clock_slope_bounds() {
        let rows: Vec<f64> = (0..200).map(|k| 1.0 + k as f64 / 199.0).collect();
        let c = build_time_change(&rows, 1, 0.01, ClockConvention::InverseSquare).unwrap();
        assert!(c.tau.windows(2).all(|w| {
            let s = (w[1] - w[0]) / 0.01;
            (0.25 - 1e-12..=1.0 + 1e-12).contains(&s)
        }));
        assert!(c.certifies(4.0));
    }

    #[test]
    fn time_changed_integral_has_unit_rate() {
        let steps = 100_000;
        let dt = 1.0 / steps as f64;
        let mut rng = SeedLineage::new(5).stream(0);
        let mut noise = vec![0.0; 2 * steps];
        crate::rng::fill_normal(&mut rng, dt.sqrt(), &mut noise);
        // rows rotate and breathe in norm
        let rows: Vec<f64> = (0..steps)
            .flat_map(|k| {
                let t = k as f64 * dt;
                let n = 1.0 + 0.4 * (6.0 * t).sin();
                [n * (3.0 * t).cos(), n * (3.0 * t).sin()]
            })
            .collect();
        let c = build_time_change(&rows, 2, dt, ClockConvention::QuadraticVariation).unwrap();
        let qv: f64 = c.w_hat(&rows, &noise, 2).iter().map(|w| w * w).sum();
        let t = c.tau[steps];
        assert!((qv / t - 1.0).abs() < 0.05, "qv {qv} clock {t}");
    }

    #[test]
    fn origin_is_rejected() {
        let path = [1.0, 0.0, 1e-9, 0.0];
        match radial_decompose(&path, &identity_sigma(2, 2), 2, 2) {
            Err(Error::Domain { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_row_clock() {
        let c: f64 = 1.5;
        let rows = vec![c; 100];
        let inv = build_time_change(&rows, 1, 0.01, ClockConvention::InverseSquare).unwrap();
        assert!((inv.tau[100] - 1.0 / (c * c)).abs() < 1e-12);
        assert!((inv.chi(0.3) - 0.3 * c * c).abs() < 1e-12);
        let qv = build_time_change(&rows, 1, 0.01, ClockConvention::QuadraticVariation).unwrap();
        assert!((qv.tau[100] - c * c).abs() < 1e-12);
        assert!(qv.certifies(c * c) && !qv.certifies(c));
        assert!(inv.certifies(c * c));
    }

    #[test]
    fn zero_row_is_a_domain_error() {
        assert!(matches!(build_time_change(&[1.0, 0.0], 1, 0.1, ClockConvention::QuadraticVariation), Err(Error::Domain { step: 1, .. })));
    }

    #[test]
    fn reflection_examples() {
        let p = reflect_simulate(&[0.0; 5], &[0.1; 5], 0.0, 1.0, 1.0).unwrap();
        assert!(p.z.iter().all(|&z| z == 1.0));
        assert!(p.local_time.iter().all(|&l| l == 0.0));
        let p = reflect_simulate(&[-0.5, -0.5, 0.2], &[0.1; 3], 1.0, 1.2, 1.0).unwrap();
        assert!((p.z[1] - 1.0).abs() < 1e-15 && (p.local_time[0] - 0.2).abs() < 1e-12);
        assert!((p.local_time[1] - 0.4).abs() < 1e-12);
        assert!((p.z[3] - 1.3).abs() < 1e-12 && p.local_time[2] == 0.0);
        assert!(matches!(reflect_simulate(&[0.0], &[0.1], 0.0, 0.5, 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn tanaka_local_time() {
        let away = sign_sde_reduce(1.0, &[0.1, -0.2, 0.3]);
        assert!(away.local_time.iter().all(|&l| l == 0.0));
        let cross = sign_sde_reduce(0.5, &[-1.0, 0.2]);
        assert!((cross.local_time[0] - 1.0).abs() < 1e-15);
        assert_eq!(cross.z, vec![0.5, 0.5, 0.3]);
    }

    #[test]
    fn reduced_sign_sde_matches_reflected_walk() {
        let (paths, steps, v0) = (10_000, 4000, 0.3);
        let dt = 1.0 / steps as f64;
        let lin = SeedLineage::new(11);
        let (a, b): (Vec<f64>, Vec<f64>) = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut r1 = lin.stream(p);
                let mut r2 = lin.stream(paths + p);
                let mut w1 = vec![0.0; steps];
                let mut w2 = vec![0.0; steps];
                crate::rng::fill_normal(&mut r1, dt.sqrt(), &mut w1);
                crate::rng::fill_normal(&mut r2, dt.sqrt(), &mut w2);
                let s = sign_sde_reduce(v0, &w1);
                let z = reflect_simulate(&w2, &vec![dt; steps], 0.0, v0, 0.0).unwrap();
                (*s.z.last().unwrap(), *z.z.last().unwrap())
            })
            .unzip();
        let (ks, thr) = (ks_two_sample(&a, &b), ks_threshold(0.01, paths, paths));
        assert!(ks < thr, "ks {ks} threshold {thr}");
        // driftless terminal law |N(v0, 1)|
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let exact: Vec<f64> = (0..paths).map(|_| (v0 + rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)).abs()).collect();
        assert!(ks_two_sample(&a, &exact) < ks_threshold(0.01, paths, paths));
    }

    #[test]
    fn sup_moment_closed_form() {
        assert!((sup_wiener_exp_moment(0.25, 1.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sup_wiener_exp_moment(0.5, 1.0), f64::INFINITY);
        assert_eq!(sup_wiener_exp_moment(0.0, 3.0), 1.0);
        let mc = sup_wiener_exp_moment_mc(0.1, 1.0, 20_000, 500, SeedLineage::new(3));
        let exact = sup_wiener_exp_moment(0.1, 1.0);
        assert!((mc.mean / exact - 1.0).abs() < 0.02, "{mc:?} vs {exact}");
    }

    #[test]
    fn constants_for_default_setup() {
        let s = ComparisonSetup::default();
        assert!((s.k() - 1.44).abs() < 1e-12);
        assert!((s.c0() - 1.5625).abs() < 1e-12);
    }

    #[test]
    fn comparison_small_run() {
        let s = ComparisonSetup::default();
        let r = run_comparison(&s, 200, 500, 1.0 / 500.0, 21, s.k() * s.c0(), 0.0).unwrap();
        assert!(r.violation_fraction <= 1e-3, "{r:?}");
        assert_eq!(r.domination_violation_fraction, 0.0);
        assert!(r.round_trip_cells < 1.0 + 1e-9);
        assert!(r.clock_certified);
        assert!((r.qv_slope - 1.0).abs() < 0.05, "{}", r.qv_slope);
        let mut buf = Vec::new();
        write_reflected_csv(&mut buf, &r.reflected[..2], &r.tau[..2]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,time,particle_id,x_0,local_time\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 501);
    }

    proptest! {
        #[test]
        fn reflected_stays_above_barrier(incs in proptest::collection::vec(-1.0f64..1.0, 1..50), c1 in 0.0f64..3.0, z0 in 1.0f64..3.0) {
            let dt = vec![0.01; incs.len()];
            let p = reflect_simulate(&incs, &dt, c1, z0, 1.0).unwrap();
            prop_assert!(p.z.iter().all(|&z| z >= 1.0));
            prop_assert!(p.local_time.iter().zip(&p.z[1..]).all(|(&l, &z)| l >= 0.0 && (l == 0.0 || z == 1.0)));
        }

        #[test]
        fn clock_round_trip(rows in proptest::collection::vec(0.5f64..2.0, 2..80), t in 0.0f64..1.0) {
            let dt = 0.05;
            let c = build_time_change(&rows, 1, dt, ClockConvention::QuadraticVariation).unwrap();
            let t = t * c.steps() as f64 * dt;
            prop_assert!((c.chi(c.tau_at(t)) - t).abs() <= dt);
        }

        #[test]
        fn tanaka_increments_nonnegative(v0 in -2.0f64..2.0, incs in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            let p = sign_sde_reduce(v0, &incs);
            prop_assert!(p.local_time.iter().all(|&l| l >= 0.0));
        }
    }
}
