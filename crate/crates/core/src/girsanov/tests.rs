use super::*;
use crate::coeffs::{Builtin, Term};
use crate::simulate::{simulate, simulate_with_observer, InitialLaw, SimConfig};
use crate::stats::binned_tv;

fn constant_drift(c: f64) -> KernelCoefficients {
    Builtin::Constant { drift: vec![c], diffusion: vec![vec![1.0]] }.coefficients(1, 1).unwrap()
}

fn brownian_config(n: usize, steps: usize, seed: u64) -> SimConfig {
    let c = Builtin::Brownian { scale: 1.0 }.coefficients(1, 1).unwrap();
    SimConfig::new(c, n, steps, 1.0 / steps as f64, InitialLaw::Point { x0: vec![0.0] }, seed)
}

#[test]
fn zero_drift_gives_unit_weights() {
    let cfg = brownian_config(100, 10, 1).record_first(100).with_noise();
    let b = simulate(&cfg).unwrap();
    let mut acc = LogWeightAccumulator::new(100);
    accumulate_logweight(&mut acc, &b, &constant_drift(0.0)).unwrap();
    assert!((0..100).all(|i| acc.log_weight(i) == 0.0));
    assert_eq!(acc.steps, 10);
}

#[test]
fn constant_drift_lognormal_moments() {
    let n = 40_000;
    let cfg = brownian_config(n, 50, 2).record_first(0);
    let drift = constant_drift(0.5);
    let mut obs = LogWeightObserver::new(&drift, n);
    simulate_with_observer(&cfg, &mut obs).unwrap();
    let g1 = obs.acc.gamma_moment(1.0);
    assert!((g1.mean - 1.0).abs() < 3.0 * g1.se, "{g1:?}");
    let g2 = obs.acc.gamma_moment(2.0);
    assert!((g2.mean / 0.25f64.exp() - 1.0).abs() < 0.05, "{g2:?}");
    assert!(obs.acc.q.iter().all(|&q| (q - 0.25).abs() < 1e-12));
}

#[test]
fn bundle_and_streaming_routes_agree() {
    let n = 300;
    let cfg = brownian_config(n, 20, 3).record_first(n).with_noise();
    let drift = Builtin::MeanReverting { kappa: 1.0, sigma: 1.0 }.coefficients(1, 1).unwrap();
    let mut obs = LogWeightObserver::new(&drift, n);
    let b = simulate_with_observer(&cfg, &mut obs).unwrap();
    let mut acc = LogWeightAccumulator::new(n);
    accumulate_logweight(&mut acc, &b, &drift).unwrap();
    assert_eq!(acc, obs.acc);
}

#[test]
fn supermartingale_guard_with_state_dependent_drift() {
    let n = 20_000;
    let cfg = brownian_config(n, 50, 4).record_first(0);
    let drift = Builtin::Linear { a: -1.0, beta: 0.5, sigma: 1.0 }.coefficients(1, 1).unwrap();
    let mut obs = LogWeightObserver::new(&drift, n);
    simulate_with_observer(&cfg, &mut obs).unwrap();
    let g = obs.acc.gamma_moment(1.0);
    assert!(g.mean <= 1.0 + 3.0 * g.se, "{g:?}");
}

#[test]
fn singular_sigma_reports_location() {
    let cfg = brownian_config(5, 3, 5).record_first(5).with_noise();
    let b = simulate(&cfg).unwrap();
    let bad = Builtin::Constant { drift: vec![1.0], diffusion: vec![vec![0.0]] }.coefficients(1, 1).unwrap();
    let mut acc = LogWeightAccumulator::new(5);
    match accumulate_logweight(&mut acc, &b, &bad) {
        Err(Error::Degenerate { location, .. }) => assert_eq!(location, Some((0, 0))),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn tv_bound_arithmetic() {
    assert_eq!(tv_upper_bound(1.0).unwrap(), 0.0);
    assert!((tv_upper_bound(1.04).unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(tv_upper_bound(2.0).unwrap(), 1.0);
    assert_eq!(tv_upper_bound(1.0 - 1e-12).unwrap(), 0.0);
    assert!(tv_upper_bound(0.9).is_err());
    assert!(tv_upper_bound(1.5).unwrap() < tv_upper_bound(1.6).unwrap());
}

#[test]
fn rho2_examples() {
    let cfg = brownian_config(500, 20, 6).record_first(500);
    let b = simulate(&cfg).unwrap();
    let zero = constant_drift(0.0);
    let same = estimate_rho2(&b, DriftModel { coeffs: &zero, measure: None }, DriftModel { coeffs: &zero, measure: None }, 6.0).unwrap();
    assert_eq!(same.raw, 1.0);
    assert_eq!(same.tv_bound, 0.0);

    let delta = 0.3;
    let shifted = constant_drift(delta);
    let r = estimate_rho2(&b, DriftModel { coeffs: &zero, measure: None }, DriftModel { coeffs: &shifted, measure: None }, 6.0).unwrap();
    let exact = (3.0 * delta * delta).exp();
    assert!((r.bound - exact).abs() < 1e-12 * exact, "{r:?}");

    // differs only far outside the visited region
    let far = Kernel::separable(1, 1, vec![Term::new(|_, x, s, o| if x[0] > 100.0 { o[0] += s })]);
    let far = KernelCoefficients::new(far, zero.diffusion.clone(), 1.0).unwrap();
    let r = estimate_rho2(&b, DriftModel { coeffs: &zero, measure: None }, DriftModel { coeffs: &far, measure: None }, 6.0).unwrap();
    assert_eq!(r.bound, 1.0);
}

#[test]
fn kernel_gap_examples() {
    let k = Kernel::general(1, 1, |_, x, y, o| o[0] = (x[0] - y[0]).tanh());
    let mu = [0.1, 0.5, -0.3];
    let g = kernel_tv_gap(&k, 0.0, &[0.2], &mu, &mu).unwrap();
    assert_eq!(g.gap, 0.0);
    assert_eq!(g.tv_hat, 0.0);

    let g = kernel_tv_gap(&k, 0.0, &[0.2], &[1.0], &[-1.0]).unwrap();
    assert!((g.gap - ((0.2f64 - 1.0).tanh() - (0.2f64 + 1.0).tanh()).abs()).abs() < 1e-15);
    assert_eq!(g.tv_hat, 2.0);
    assert!(g.holds && g.gap <= 2.0 * g.sup_kernel);
}

#[test]
fn atom_tv_merges_repeated_atoms() {
    assert_eq!(atom_tv(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0], 1), 0.5);
    assert_eq!(atom_tv(&[0.0, 1.0], &[1.0, 0.0], 2), 2.0);
    assert_eq!(atom_tv(&[0.0, 1.0, 1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2), 0.0);
}

#[test]
fn linear_growth_surrogate_dominates_rho2() {
    // b~(x, y) = 0.5 (1 + |x|) tanh(y): sup_y |b~| <= 0.5 (1 + |x|)
    let drift = Kernel::separable(
        1,
        1,
        vec![Term::new(|_, x, s, o| o[0] += s * 0.5 * (1.0 + x[0].abs())).with_measure(|_, y| y[0].tanh())],
    )
    .time_independent();
    let coeffs = KernelCoefficients::new(drift, Kernel::constant(1, 1, vec![1.0]), 2.0).unwrap();
    let n = 4000;
    let base = SimConfig::new(coeffs.clone(), n, 40, 0.025, InitialLaw::Gaussian { mean: vec![0.0], cov: vec![vec![1.0]] }, 7)
        .record_first(n);
    let mut shifted = base.clone();
    shifted.initial = InitialLaw::Gaussian { mean: vec![0.3], cov: vec![vec![1.0]] };
    shifted.lineage = base.lineage.with_offset(n as u64);
    let (a, b) = (simulate(&base).unwrap(), simulate(&shifted).unwrap());
    let v = (0..=a.steps)
        .map(|k| binned_tv(a.states_at(k), b.states_at(k)).tv)
        .fold(0.0, f64::max);
    let rho = estimate_rho2(&a, DriftModel { coeffs: &coeffs, measure: None }, DriftModel { coeffs: &coeffs, measure: Some(&b) }, 6.0)
        .unwrap();
    let sur = linear_growth_surrogate(&a, 0.5, v, 6.0);
    assert!(rho.raw <= sur.mean + 3.0 * sur.se, "rho {rho:?} surrogate {sur:?} v {v}");
}

#[test]
fn probe_identical_and_mismatched() {
    let cfg = brownian_config(5000, 20, 8);
    let same = empirical_uniqueness_probe(&cfg, &cfg, 0.01).unwrap();
    assert_eq!(same.tv_hat, 0.0);
    assert_eq!(same.ks_stat, 0.0);
    let mut other = cfg.clone();
    other.coeffs = Builtin::Constant { drift: vec![1.0], diffusion: vec![vec![1.0]] }.coefficients(1, 1).unwrap();
    other.lineage = cfg.lineage.with_offset(5000);
    let r = empirical_uniqueness_probe(&cfg, &other, 0.01).unwrap();
    assert!(r.rejected && r.tv_hat > r.tv_threshold);
}
