//! Config-driven experiments with reproducible file outputs.
//!
//! A run writes one JSON report named after the experiment, optional CSV
//! files, and `manifest.json`. Everything except the manifest's wall time
//! is a deterministic function of the config, whatever the worker count.

mod config;
mod mollify;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{
    ContractionSection, ExperimentConfig, ExperimentKind, GirsanovSection, MollifySection, ProbeSection, SqrtLiftSection,
    SupMomentSection, TimechangeSection, Tolerances, SCHEMA_VERSION,
};
pub use mollify::{mollify_converge, LevelDistance, MollifyReport};

use crate::error::{Error, Result};
use crate::girsanov::{
    contraction_iterate, empirical_uniqueness_probe, estimate_rho2, interval_induction, DriftModel, LogWeightObserver,
};
use crate::coeffs::{Kernel, KernelCoefficients};
use crate::simulate::{moment_report, simulate, simulate_with_observer, PathBundle};
use crate::sqrtlift::{build_lift, draw_lift_increments, levy_check, reconstruction_check, synthesize_w0, LiftDiagnostics};
use crate::stats::{binned_tv, ks_threshold, ks_two_sample, moment_summary};
use crate::timechange::{run_comparison, sup_wiener_exp_moment, sup_wiener_exp_moment_mc, write_reflected_csv, ComparisonSetup};
use crate::rng::SeedLineage;

/// Record of one run, written as `manifest.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    /// SHA-256 of the canonical config, output directory excluded.
    pub config_hash: String,
    pub version: String,
    pub experiment: String,
    pub wall_time_s: f64,
    pub report: PathBuf,
    pub csv: Vec<PathBuf>,
    pub passed: bool,
    pub failures: Vec<String>,
}

struct Outcome {
    report: Value,
    csv: Vec<PathBuf>,
    failures: Vec<String>,
}

impl Outcome {
    fn new(report: impl Serialize) -> Result<Self> {
        Ok(Self { report: serde_json::to_value(report)?, csv: Vec::new(), failures: Vec::new() })
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
}

/// Runs the experiment on `workers` threads (all cores when `None`) and
/// writes the report, CSVs and manifest into `config.output_dir`.
pub fn run(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunManifest> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out)?;
    let started = Instant::now();
    log::info!("running {} into {}", config.experiment.name(), out.display());
    let outcome = pool.install(|| dispatch(config, &out))?;
    let report = PathBuf::from(format!("{}.json", config.experiment.name()));
    write_json(&out.join(&report), &outcome.report)?;
    for f in &outcome.failures {
        log::warn!("check failed: {f}");
    }
    let manifest = RunManifest {
        config_hash: config_hash(config)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: config.experiment.name().to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        report,
        csv: outcome.csv,
        passed: outcome.failures.is_empty(),
        failures: outcome.failures,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_paths(bundle: &PathBundle, dir: &Path, name: &str) -> Result<PathBuf> {
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
    bundle.write_csv(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(PathBuf::from(name))
}

fn dispatch(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    match config.experiment {
        ExperimentKind::Simulate => run_simulate(config, out),
        ExperimentKind::Moments => run_moments(config, out),
        ExperimentKind::MollifyConverge => run_mollify(config),
        ExperimentKind::SqrtLift => run_sqrt_lift(config),
        ExperimentKind::Girsanov => run_girsanov(config),
        ExperimentKind::UniquenessProbe => run_probe(config),
        ExperimentKind::Contraction => {
            let s = config.contraction.as_ref().expect("validated");
            contraction_outcome(s.c, s.t, s.horizon)
        }
        ExperimentKind::Timechange => run_timechange(config, out),
        ExperimentKind::SupMoment => run_sup_moment(config),
    }
}

fn run_simulate(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let bundle = simulate(&config.sim_config()?)?;
    let terminal = moment_summary(bundle.terminal.states(), config.d);
    let mut o = Outcome::new(json!({
        "particles": config.particles,
        "steps": bundle.steps,
        "dt": bundle.dt,
        "recorded": bundle.recorded(),
        "terminal": terminal,
        "exit_fraction": bundle.stopping.as_ref().map(|s| s.exit_fraction),
    }))?;
    o.csv.push(write_paths(&bundle, out, "paths.csv")?);
    Ok(o)
}

fn run_moments(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let kind = config.experiment;
    let [lo, hi] = config.tolerances.need(config.tolerances.increment_exponent, "increment_exponent", kind)?;
    let bundle = simulate(&config.sim_config()?)?;
    let report = moment_report(&bundle);
    let exponent = report.increment_exponent;
    let mut o = Outcome::new(&report)?;
    o.check(exponent.is_some_and(|e| (lo..=hi).contains(&e)), || format!("increment exponent {exponent:?} outside [{lo}, {hi}]"));
    o.csv.push(write_paths(&bundle, out, "paths.csv")?);
    Ok(o)
}

fn run_mollify(config: &ExperimentConfig) -> Result<Outcome> {
    let s = config.mollify.as_ref().expect("validated");
    let k = config.tolerances.need(config.tolerances.se_multiplier, "se_multiplier", config.experiment)?;
    let report = mollify_converge(config, &s.levels, s.nodes, k)?;
    let mut o = Outcome::new(&report)?;
    if report.warning.is_none() {
        o.check(report.nonincreasing, || "inter-level distances increase beyond level 8".into());
    }
    Ok(o)
}

fn run_sqrt_lift(config: &ExperimentConfig) -> Result<Outcome> {
    let t = &config.tolerances;
    let kind = config.experiment;
    let (defect_tol, diag_tol, off_tol) = (
        t.need(t.lift_defect, "lift_defect", kind)?,
        t.need(t.levy_diag, "levy_diag", kind)?,
        t.need(t.levy_offdiag, "levy_offdiag", kind)?,
    );
    let floor = config.sqrt_lift.as_ref().expect("validated").floor;
    let lifted = config.sim_config()?.record_first(1).with_noise().lifted(floor);
    let bundle = simulate(&lifted)?;
    let (d, d1, steps, dt) = (config.d, config.d1, config.steps, config.dt);
    // driving noise of particle 0
    let w0: Vec<f64> = (0..steps).flat_map(|k| bundle.noise_at(k, 0).unwrap_or(&[]).to_vec()).collect();
    let levy = levy_check(&w0, d1, config.horizon);
    // algebra along the same path with fresh auxiliary increments
    let coeffs = &lifted.coeffs;
    let sigmas: Vec<nalgebra::DMatrix<f64>> = (0..steps)
        .map(|k| {
            let x = bundle.state(k, 0);
            nalgebra::DMatrix::from_row_slice(d, d1, &coeffs.diffusion.eval_vec(k as f64 * dt, x, x))
        })
        .collect();
    let lifts = sigmas.iter().map(|s| build_lift(s, floor)).collect::<Result<Vec<_>>>()?;
    let tilde = SeedLineage::new(config.seed).with_offset(4 * config.particles as u64);
    let bar = tilde.with_offset(5 * config.particles as u64);
    let (dw_t, dw_b) = draw_lift_increments(&tilde, &bar, config.particles, 0, steps, d, d1, dt)?;
    let dw0 = synthesize_w0(&lifts, &dw_t, &dw_b)?;
    let recon = reconstruction_check(&sigmas, &lifts, &dw_t, &dw0)?;
    let diag = LiftDiagnostics::new(&levy, &recon);
    let mut o = Outcome::new(diag)?;
    o.check(diag.max_defect <= defect_tol, || format!("reconstruction defect {} > {defect_tol}", diag.max_defect));
    o.check(diag.max_diag_reldev <= diag_tol, || format!("covariation diagonal deviation {} > {diag_tol}", diag.max_diag_reldev));
    let off_bound = off_tol * config.horizon / (steps.max(1) as f64).sqrt();
    o.check(diag.max_offdiag <= off_bound, || format!("covariation off-diagonal {} > {off_bound}", diag.max_offdiag));
    Ok(o)
}

fn zero_drift(c: &KernelCoefficients) -> Result<KernelCoefficients> {
    KernelCoefficients::new(Kernel::constant(c.dim_state, 1, vec![0.0; c.dim_state]), c.diffusion.clone(), c.growth_constant)
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct GirsanovReport {
    E_gamma: f64,
    E_gamma_se: f64,
    E_rho2: f64,
    tv_bound: f64,
    tv_hat: f64,
    ks_stat: f64,
    ks_threshold: f64,
    contraction_trace: Vec<f64>,
}

fn run_girsanov(config: &ExperimentConfig) -> Result<Outcome> {
    let s = config.girsanov.as_ref().expect("validated");
    let k = config.tolerances.need(config.tolerances.se_multiplier, "se_multiplier", config.experiment)?;
    let alpha = config.tolerances.need(config.tolerances.alpha, "alpha", config.experiment)?;
    let n = config.particles;
    let model = config.sim_config()?;
    let alt_coeffs = match &s.alternative {
        Some(b) => b.coefficients(config.d, config.d1)?,
        None => model.coeffs.clone(),
    };
    // driftless reference carrying the weights; streams 0..N
    let mut reference = model.clone().with_noise();
    reference.coeffs = zero_drift(&model.coeffs)?;
    let mut obs = LogWeightObserver::new(&model.coeffs, n);
    let ref_bundle = simulate_with_observer(&reference, &mut obs)?;
    let gamma = obs.acc.gamma_moment(1.0);
    // the two laws: streams N..2N and 2N..3N
    let mut first = model.clone();
    first.lineage = model.lineage.with_offset(n as u64);
    let mut second = first.clone();
    second.coeffs = alt_coeffs.clone();
    second.lineage = model.lineage.with_offset(2 * n as u64);
    let (b1, b2) = rayon::join(|| simulate(&first), || simulate(&second));
    let (b1, b2) = (b1?, b2?);
    let rho = estimate_rho2(
        &ref_bundle,
        DriftModel { coeffs: &model.coeffs, measure: Some(&b1) },
        DriftModel { coeffs: &alt_coeffs, measure: Some(&b2) },
        s.rho_constant,
    )?;
    let d = config.d;
    let (mut ks_stat, mut ks_thr, mut tv_hat) = (0.0f64, 0.0, 0.0f64);
    for axis in 0..d {
        let (a, b) = (b1.terminal.coordinate(axis), b2.terminal.coordinate(axis));
        let stat = ks_two_sample(&a, &b);
        let thr = ks_threshold(alpha / d as f64, a.len(), b.len());
        if axis == 0 || stat / thr > ks_stat / ks_thr {
            ks_stat = stat;
            ks_thr = thr;
        }
        tv_hat = tv_hat.max(binned_tv(&a, &b).tv);
    }
    let trace = contraction_iterate(s.contraction_c, s.contraction_t, 2.0, 10_000)?;
    let report = GirsanovReport {
        E_gamma: gamma.mean,
        E_gamma_se: gamma.se,
        E_rho2: rho.bound,
        tv_bound: rho.tv_bound,
        tv_hat,
        ks_stat,
        ks_threshold: ks_thr,
        contraction_trace: trace.iterates,
    };
    let mut o = Outcome::new(&report)?;
    // a nonnegative local martingale is a supermartingale
    o.check(gamma.mean <= 1.0 + k * gamma.se, || format!("E gamma = {} exceeds 1 + {k} SE", gamma.mean));
    o.check(obs.acc.clamped() == 0, || format!("{} log-weights hit the guard", obs.acc.clamped()));
    Ok(o)
}

fn run_probe(config: &ExperimentConfig) -> Result<Outcome> {
    let s = config.probe.as_ref().expect("validated");
    let alpha = config.tolerances.need(config.tolerances.alpha, "alpha", config.experiment)?;
    let a = config.sim_config()?.record_first(0);
    // different master seed, half the step
    let mut b = a.clone();
    b.lineage = SeedLineage::new(config.seed.wrapping_add(1));
    b.dt = a.dt / 2.0;
    b.steps = 2 * a.steps;
    let same = empirical_uniqueness_probe(&a, &b, alpha)?;
    let control = if s.control {
        let mut c = b.clone();
        c.coeffs = KernelCoefficients::new(
            a.coeffs.drift.shifted(vec![1.0; config.d])?,
            a.coeffs.diffusion.clone(),
            a.coeffs.growth_constant + (config.d as f64).sqrt(),
        )?;
        Some(empirical_uniqueness_probe(&a, &c, alpha)?)
    } else {
        None
    };
    let mut o = Outcome::new(json!({ "probe": &same, "control": &control }))?;
    o.check(!same.rejected, || format!("equal laws rejected: KS {} > {}", same.ks_stat, same.ks_threshold));
    if let Some(c) = &control {
        o.check(c.rejected, || format!("shifted-drift control not rejected: KS {} <= {}", c.ks_stat, c.ks_threshold));
    }
    Ok(o)
}

/// Trace from `v0 = 2` plus the interval induction when its
/// preconditions hold.
pub fn contraction_report(c: f64, t: f64, horizon: f64) -> Result<Value> {
    let trace = contraction_iterate(c, t, 2.0, 10_000)?;
    let induction = match interval_induction(c, t, horizon) {
        Ok(l) => Some(l),
        Err(Error::Precondition(why)) => {
            log::info!("interval induction skipped: {why}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(json!({
        "C": c,
        "T": t,
        "horizon": horizon,
        "converged": trace.converged,
        "diverged": trace.diverged,
        "monotone": trace.monotone,
        "contraction_trace": trace.iterates,
        "induction": induction,
        "all_zero": induction.as_ref().map(|l| l.all_zero()),
    }))
}

fn contraction_outcome(c: f64, t: f64, horizon: f64) -> Result<Outcome> {
    let report = contraction_report(c, t, horizon)?;
    let mut o = Outcome::new(&report)?;
    // inside the smallness regime every interval must close at zero
    o.check(report["all_zero"] != json!(false), || "interval induction left a nonzero verdict".into());
    Ok(o)
}

fn run_timechange(config: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let s = config.timechange.as_ref().expect("validated");
    let t = &config.tolerances;
    let kind = config.experiment;
    let frac = t.need(t.violation_fraction, "violation_fraction", kind)?;
    let slack = t.need(t.comparison_slack, "comparison_slack", kind)?;
    let slope_tol = t.need(t.qv_slope, "qv_slope", kind)?;
    let setup = ComparisonSetup { dim: s.x0.len(), amplitude: s.amplitude, x0: s.x0.clone() };
    let c1 = s.c1.unwrap_or(setup.k() * setup.c0());
    let r = run_comparison(&setup, config.particles, config.steps, config.dt, config.seed, c1, slack)?;
    let mut o = Outcome::new(&r)?;
    o.check(r.violation_fraction <= frac || c1 < r.k * r.c0, || format!("comparison violations {} > {frac}", r.violation_fraction));
    o.check(r.domination_violation_fraction <= frac, || format!("moment domination violations {}", r.domination_violation_fraction));
    o.check(r.round_trip_cells <= 1.0, || format!("time-change round trip off by {} cells", r.round_trip_cells));
    o.check((r.qv_slope - 1.0).abs() <= slope_tol, || format!("quadratic variation slope {}", r.qv_slope));
    o.check(r.clock_certified, || "clock slope left [1/C0, C0]".into());
    let keep = config.record.unwrap_or(1000).min(r.reflected.len());
    let name = PathBuf::from("timechange.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(out.join(&name))?);
    write_reflected_csv(&mut w, &r.reflected[..keep], &r.tau[..keep])?;
    std::io::Write::flush(&mut w)?;
    o.csv.push(name);
    Ok(o)
}

/// Closed form and, optionally, the MC estimate of `E exp(r sup W^2)`.
pub fn sup_moment_report(r: f64, t: f64, mc: Option<(usize, usize, u64)>) -> Value {
    let value = sup_wiener_exp_moment(r, t);
    let mc = mc.map(|(paths, steps, seed)| {
        let e = sup_wiener_exp_moment_mc(r, t, paths, steps, SeedLineage::new(seed));
        json!({ "paths": paths, "steps": steps, "mean": e.mean, "se": e.se, "relative_error": e.mean / value - 1.0 })
    });
    // JSON has no infinity; the divergent case is reported as null
    json!({ "r": r, "T": t, "value": value.is_finite().then_some(value), "finite": value.is_finite(), "mc": mc })
}

fn run_sup_moment(config: &ExperimentConfig) -> Result<Outcome> {
    let s = config.sup_moment.as_ref().expect("validated");
    let mc = if s.mc { Some((s.paths.unwrap_or(0), s.steps.unwrap_or(0), config.seed)) } else { None };
    let tol = if s.mc { Some(config.tolerances.need(config.tolerances.mc_relative, "mc_relative", config.experiment)?) } else { None };
    let report = sup_moment_report(s.r, s.t, mc);
    let mut o = Outcome::new(&report)?;
    if let (Some(tol), Some(rel)) = (tol, report["mc"]["relative_error"].as_f64()) {
        o.check(rel.abs() <= tol, || format!("MC sup moment off by {rel}"));
    }
    Ok(o)
}
