//! Interacting-particle Euler-Maruyama integration.
//!
//! Each step first summarizes the pre-step empirical measure (all N
//! particles, stopped ones frozen in place), then updates particles in
//! parallel. Every particle draws its noise from its own counter-based
//! stream, so results do not depend on the worker count.

mod bundle;
mod moments;

pub use bundle::{apply_stopping, PathBundle, StoppingRecord};
pub(crate) use bundle::{csv_header, write_row};
pub use moments::{moment_report, ConstantsWitness, IncrementPoint, MomentReport};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{KernelCoefficients, MeasureSummary};
use crate::error::{Error, Result};
use crate::rng::{fill_normal, SeedLineage};
use crate::sqrtlift::build_lift;

/// N particle states in R^d at a common time.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    states: Vec<f64>,
    dim: usize,
    time: f64,
    step: usize,
    alive: Vec<bool>,
    lineage: SeedLineage,
}

impl ParticleEnsemble {
    /// Ensemble at time 0 from row-major states; all particles alive.
    pub fn new(states: Vec<f64>, dim: usize, lineage: SeedLineage) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if !states.len().is_multiple_of(dim) {
            return Err(Error::Dimension { context: "ensemble states", expected: dim, got: states.len() % dim });
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "initial ensemble", step: Some(0), particle: i / dim });
        }
        let n = states.len() / dim;
        Ok(Self { states, dim, time: 0.0, step: 0, alive: vec![true; n], lineage })
    }

    pub fn empty(dim: usize, lineage: SeedLineage) -> Self {
        Self { states: Vec::new(), dim, time: 0.0, step: 0, alive: Vec::new(), lineage }
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of steps taken so far.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn lineage(&self) -> SeedLineage {
        self.lineage
    }

    /// Values of coordinate `axis` across particles.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.states.chunks_exact(self.dim).map(|x| x[axis]).collect()
    }
}

/// Law of the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    Point { x0: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { x0 } => x0.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// `E|x0|^2` and `E|x0|^4`.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            InitialLaw::Point { x0 } => {
                let r2: f64 = x0.iter().map(|v| v * v).sum();
                (r2, r2 * r2)
            }
            InitialLaw::Gaussian { mean, cov } => {
                // |x|^2 = |m|^2 + 2 m.z + |z|^2 with z ~ N(0, S)
                let m2: f64 = mean.iter().map(|v| v * v).sum();
                let d = mean.len();
                let tr: f64 = (0..d).map(|i| cov[i][i]).sum();
                let tr2: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| cov[i][j] * cov[j][i]).sum();
                let msm: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| mean[i] * cov[i][j] * mean[j]).sum();
                let e2 = m2 + tr;
                let var = 2.0 * tr2 + 4.0 * msm;
                (e2, var + e2 * e2)
            }
        }
    }

    fn sampler(&self) -> Result<InitialSampler> {
        match self {
            InitialLaw::Point { x0 } => Ok(InitialSampler { mean: x0.clone(), chol: None }),
            InitialLaw::Gaussian { mean, cov } => {
                let d = mean.len();
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension { context: "initial covariance", expected: d, got: cov.len() });
                }
                let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
                let chol = m
                    .cholesky()
                    .ok_or_else(|| Error::Config("initial covariance is not positive definite".into()))?;
                Ok(InitialSampler { mean: mean.clone(), chol: Some(chol.l()) })
            }
        }
    }
}

struct InitialSampler {
    mean: Vec<f64>,
    chol: Option<DMatrix<f64>>,
}

impl InitialSampler {
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.copy_from_slice(&self.mean);
        if let Some(l) = &self.chol {
            let d = self.mean.len();
            let mut z = vec![0.0; d];
            fill_normal(rng, 1.0, &mut z);
            for i in 0..d {
                out[i] += (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
            }
        }
    }
}

/// How the diffusion enters the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiffusionMode {
    /// `sigma dW` with `dW` in R^{d1}.
    Direct,
    /// `a^{1/2} dW~` with `dW~` in R^d.
    SymmetricRoot { floor: f64 },
    /// `sigma dW0`, `dW0 = p^T dW~ + (I - p^T p) dW_bar`; `dW_bar` comes from `bar`.
    Lifted { bar: SeedLineage, floor: f64 },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub coeffs: KernelCoefficients,
    pub particles: usize,
    pub steps: usize,
    pub dt: f64,
    pub initial: InitialLaw,
    pub lineage: SeedLineage,
    pub stopping_radius: Option<f64>,
    /// Particle indices whose trajectories (and noise) are recorded.
    pub record: Vec<usize>,
    pub retain_noise: bool,
    pub mode: DiffusionMode,
}

impl SimConfig {
    /// Direct-mode config recording the first `min(N, 1000)` particles.
    pub fn new(coeffs: KernelCoefficients, particles: usize, steps: usize, dt: f64, initial: InitialLaw, seed: u64) -> Self {
        Self {
            coeffs,
            particles,
            steps,
            dt,
            initial,
            lineage: SeedLineage::new(seed),
            stopping_radius: None,
            record: (0..particles.min(1000)).collect(),
            retain_noise: false,
            mode: DiffusionMode::Direct,
        }
    }

    pub fn record_first(mut self, n: usize) -> Self {
        self.record = (0..n.min(self.particles)).collect();
        self
    }

    pub fn with_noise(mut self) -> Self {
        self.retain_noise = true;
        self
    }

    pub fn with_mode(mut self, mode: DiffusionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_stopping(mut self, radius: f64) -> Self {
        self.stopping_radius = Some(radius);
        self
    }

    /// Lifted mode with the auxiliary stream at offset `2N`.
    pub fn lifted(self, floor: f64) -> Self {
        let bar = self.lineage.with_offset(self.lineage.stream_offset + 2 * self.particles as u64);
        self.with_mode(DiffusionMode::Lifted { bar, floor })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Dimension of the recorded driving noise.
    pub fn noise_dim(&self) -> usize {
        match self.mode {
            DiffusionMode::SymmetricRoot { .. } => self.coeffs.dim_state,
            _ => self.coeffs.dim_noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.coeffs.dim_state;
        if self.particles == 0 {
            return Err(Error::Config("particle count N must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.initial.dim() != d {
            return Err(Error::Dimension { context: "initial law", expected: d, got: self.initial.dim() });
        }
        if let Some(&bad) = self.record.iter().find(|&&i| i >= self.particles) {
            return Err(Error::Config(format!("recorded particle {bad} out of range for N = {}", self.particles)));
        }
        if let Some(r) = self.stopping_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("stopping radius must be positive, got {r}")));
            }
        }
        if let DiffusionMode::Lifted { bar, .. } = &self.mode {
            self.lineage.ensure_disjoint(bar, self.particles)?;
            if self.coeffs.dim_noise < d {
                return Err(Error::Config("lifted mode needs d1 >= d".into()));
            }
        }
        Ok(())
    }
}

/// Called once per step with the pre-step state and the step's driving noise.
pub trait StepObserver {
    fn observe(&mut self, view: &StepView<'_>) -> Result<()>;
}

pub struct StepView<'a> {
    pub step: usize,
    /// Time at the start of the step.
    pub time: f64,
    pub dt: f64,
    /// Pre-step states, `N x d`.
    pub states: &'a [f64],
    /// Driving noise of this step, `N x noise_dim`.
    pub noise: &'a [f64],
    pub noise_dim: usize,
    pub alive: &'a [bool],
}

struct NoObserver;

impl StepObserver for NoObserver {
    fn observe(&mut self, _: &StepView<'_>) -> Result<()> {
        Ok(())
    }
}

/// One explicit step with caller-supplied noise (`N x d1`, direct mode).
pub fn euler_step(ensemble: &ParticleEnsemble, coeffs: &KernelCoefficients, dt: f64, noise: &[f64]) -> Result<ParticleEnsemble> {
    let (d, d1) = (coeffs.dim_state, coeffs.dim_noise);
    let n = ensemble.len();
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    if ensemble.dim() != d {
        return Err(Error::Dimension { context: "ensemble state dimension", expected: d, got: ensemble.dim() });
    }
    if noise.len() != n * d1 {
        return Err(Error::Dimension { context: "noise matrix", expected: n * d1, got: noise.len() });
    }
    let mut next = ensemble.clone();
    let summaries = Summaries::new(coeffs, ensemble.time, &ensemble.states, ensemble.step)?;
    next.states
        .par_chunks_mut(d)
        .zip(ensemble.states.par_chunks(d))
        .zip(noise.par_chunks(d1))
        .zip(ensemble.alive.par_iter())
        .for_each_init(
            || Scratch::new(d, d1),
            |s, (((out, x), w), &alive)| {
                if alive {
                    s.direct_update(coeffs, &summaries, ensemble.time, dt, x, w, out);
                }
            },
        );
    next.time += dt;
    next.step += 1;
    first_non_finite(&next.states, d, next.step)?;
    Ok(next)
}

struct Summaries {
    drift: MeasureSummary,
    diffusion: MeasureSummary,
}

impl Summaries {
    fn new(coeffs: &KernelCoefficients, t: f64, states: &[f64], step: usize) -> Result<Self> {
        let with_step = |e: Error| match e {
            Error::NonFinite { context, step: None, particle } => Error::NonFinite { context, step: Some(step), particle },
            other => other,
        };
        Ok(Self {
            drift: coeffs.drift.summarize(t, states).map_err(with_step)?,
            diffusion: coeffs.diffusion.summarize(t, states).map_err(with_step)?,
        })
    }
}

struct Scratch {
    b: Vec<f64>,
    s: Vec<f64>,
    w0: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, d1: usize) -> Self {
        Self { b: vec![0.0; d], s: vec![0.0; d * d1], w0: vec![0.0; d1] }
    }

    /// Fills `b` and `s`; on failure writes NaN so the post-step scan reports it.
    fn coefficients(&mut self, coeffs: &KernelCoefficients, sum: &Summaries, t: f64, x: &[f64]) -> bool {
        let ok = coeffs.drift.average(t, x, &sum.drift, &mut self.b).is_ok()
            && coeffs.diffusion.average(t, x, &sum.diffusion, &mut self.s).is_ok();
        if !ok {
            self.b.iter_mut().for_each(|v| *v = f64::NAN);
        }
        ok
    }

    fn direct_update(&mut self, coeffs: &KernelCoefficients, sum: &Summaries, t: f64, dt: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        self.coefficients(coeffs, sum, t, x);
        let d1 = w.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.s[i * d1..(i + 1) * d1];
            *o = x[i] + self.b[i] * dt + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn first_non_finite(states: &[f64], d: usize, step: usize) -> Result<()> {
    match states.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite { context: "euler step", step: Some(step), particle: i / d }),
        None => Ok(()),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs the configured simulation.
pub fn simulate(config: &SimConfig) -> Result<PathBundle> {
    simulate_with_observer(config, &mut NoObserver)
}

/// Runs the simulation, handing every step to `observer` before the update.
pub fn simulate_with_observer(config: &SimConfig, observer: &mut dyn StepObserver) -> Result<PathBundle> {
    config.validate()?;
    let coeffs = &config.coeffs;
    let (d, d1) = (coeffs.dim_state, coeffs.dim_noise);
    let n = config.particles;
    let nd = config.noise_dim();
    let dt = config.dt;
    let sqrt_dt = dt.sqrt();

    let mut rngs = config.lineage.streams(n);
    let mut bar_rngs = match &config.mode {
        DiffusionMode::Lifted { bar, .. } => bar.streams(n),
        _ => Vec::new(),
    };
    let sampler = config.initial.sampler()?;
    let mut states = vec![0.0; n * d];
    states.par_chunks_mut(d).zip(rngs.par_iter_mut()).for_each(|(x, rng)| sampler.draw(rng, x));
    let mut ensemble = ParticleEnsemble::new(states, d, config.lineage)?;

    let mut bundle = PathBundle::start(config, &ensemble);
    let mut exit_step: Vec<Option<usize>> = vec![None; n];
    if let Some(r) = config.stopping_radius {
        for i in 0..n {
            if norm(ensemble.state(i)) > r {
                exit_step[i] = Some(0);
                ensemble.alive[i] = false;
            }
        }
    }

    let mut noise = vec![0.0; n * nd];
    let mut tilde = match config.mode {
        DiffusionMode::Lifted { .. } => vec![0.0; n * d],
        _ => Vec::new(),
    };
    let mut next = ensemble.states.clone();

    for k in 0..config.steps {
        let t = ensemble.time;
        // noise first: every particle draws, alive or not, to keep streams aligned
        match config.mode {
            DiffusionMode::Direct | DiffusionMode::SymmetricRoot { .. } => {
                noise.par_chunks_mut(nd).zip(rngs.par_iter_mut()).for_each(|(w, rng)| fill_normal(rng, sqrt_dt, w));
            }
            DiffusionMode::Lifted { .. } => {
                tilde.par_chunks_mut(d).zip(rngs.par_iter_mut()).for_each(|(w, rng)| fill_normal(rng, sqrt_dt, w));
                noise.par_chunks_mut(d1).zip(bar_rngs.par_iter_mut()).for_each(|(w, rng)| fill_normal(rng, sqrt_dt, w));
            }
        }
        let summaries = Summaries::new(coeffs, t, &ensemble.states, k)?;
        let snapshot = &ensemble.states;
        let alive = &ensemble.alive;
        let mode = config.mode;
        let lift_failure: Option<(usize, Error)> = match mode {
            DiffusionMode::Direct => {
                next.par_chunks_mut(d)
                    .zip(snapshot.par_chunks(d))
                    .zip(noise.par_chunks(d1))
                    .zip(alive.par_iter())
                    .for_each_init(
                        || Scratch::new(d, d1),
                        |s, (((out, x), w), &a)| {
                            if a {
                                s.direct_update(coeffs, &summaries, t, dt, x, w, out);
                            } else {
                                out.copy_from_slice(x);
                            }
                        },
                    );
                None
            }
            DiffusionMode::SymmetricRoot { floor } => {
                let fails: Vec<Option<Error>> = next
                    .par_chunks_mut(d)
                    .zip(snapshot.par_chunks(d))
                    .zip(noise.par_chunks(d))
                    .zip(alive.par_iter())
                    .map_init(
                        || Scratch::new(d, d1),
                        |s, (((out, x), w), &a)| {
                            if !a {
                                out.copy_from_slice(x);
                                return None;
                            }
                            s.coefficients(coeffs, &summaries, t, x);
                            let sig = DMatrix::from_row_slice(d, d1, &s.s);
                            let root = match crate::sqrtlift::sym_sqrt(&(&sig * sig.transpose()), floor) {
                                Ok(r) => r,
                                Err(e) => return Some(e),
                            };
                            let dw = root * DVector::from_column_slice(w);
                            for i in 0..d {
                                out[i] = x[i] + s.b[i] * dt + dw[i];
                            }
                            None
                        },
                    )
                    .collect();
                fails.into_iter().enumerate().find_map(|(i, e)| e.map(|e| (i, e)))
            }
            DiffusionMode::Lifted { floor, .. } => {
                let fails: Vec<Option<Error>> = next
                    .par_chunks_mut(d)
                    .zip(snapshot.par_chunks(d))
                    .zip(tilde.par_chunks(d))
                    .zip(noise.par_chunks_mut(d1))
                    .zip(alive.par_iter())
                    .map_init(
                        || Scratch::new(d, d1),
                        |s, ((((out, x), wt), wbar), &a)| {
                            s.coefficients(coeffs, &summaries, t, x);
                            let sig = DMatrix::from_row_slice(d, d1, &s.s);
                            let lift = match build_lift(&sig, floor) {
                                Ok(l) => l,
                                Err(e) if a => return Some(e),
                                Err(_) => {
                                    out.copy_from_slice(x);
                                    return None;
                                }
                            };
                            lift.apply(wt, wbar, &mut s.w0);
                            // the slot now holds dW0, the recorded driving noise
                            wbar.copy_from_slice(&s.w0);
                            if !a {
                                out.copy_from_slice(x);
                                return None;
                            }
                            for i in 0..d {
                                let row = &s.s[i * d1..(i + 1) * d1];
                                out[i] = x[i] + s.b[i] * dt + row.iter().zip(&s.w0).map(|(p, q)| p * q).sum::<f64>();
                            }
                            None
                        },
                    )
                    .collect();
                fails.into_iter().enumerate().find_map(|(i, e)| e.map(|e| (i, e)))
            }
        };
        if let Some((particle, e)) = lift_failure {
            return Err(match e {
                Error::Degenerate { eigenvalue, floor, .. } => Error::Degenerate { eigenvalue, floor, location: Some((k, particle)) },
                other => other,
            });
        }
        first_non_finite(&next, d, k + 1)?;
        observer.observe(&StepView { step: k, time: t, dt, states: &ensemble.states, noise: &noise, noise_dim: nd, alive: &ensemble.alive })?;
        bundle.push_noise(&noise, nd);

        std::mem::swap(&mut ensemble.states, &mut next);
        ensemble.time = (k + 1) as f64 * dt;
        ensemble.step = k + 1;
        if let Some(r) = config.stopping_radius {
            for i in 0..n {
                if ensemble.alive[i] && norm(ensemble.state(i)) > r {
                    ensemble.alive[i] = false;
                    exit_step[i] = Some(k + 1);
                }
            }
        }
        bundle.push_states(&ensemble);
    }
    if let Some(r) = config.stopping_radius {
        bundle.stopping = Some(StoppingRecord::new(r, exit_step, dt));
    }
    bundle.terminal = ensemble;
    Ok(bundle)
}

/// The same configuration on a disjoint stream range. Defaults to offset
/// `base + N`; an explicit lineage must not overlap the primary's streams.
pub fn spawn_independent_copy(config: &SimConfig, lineage: Option<SeedLineage>) -> Result<PathBundle> {
    let n = config.particles;
    let copy_lineage = lineage.unwrap_or_else(|| config.lineage.with_offset(config.lineage.stream_offset + n as u64));
    config.lineage.ensure_disjoint(&copy_lineage, n)?;
    let mut copy = config.clone();
    copy.lineage = copy_lineage;
    if let DiffusionMode::Lifted { bar, floor } = config.mode {
        let copy_bar = copy_lineage.with_offset(copy_lineage.stream_offset + 2 * n as u64);
        for (a, b) in [(&config.lineage, &copy_bar), (&bar, &copy_lineage), (&bar, &copy_bar)] {
            a.ensure_disjoint(b, n)?;
        }
        copy.mode = DiffusionMode::Lifted { bar: copy_bar, floor };
    }
    simulate(&copy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Builtin;
    use crate::stats::{mean_se, variance};

    fn attraction(sigma: f64) -> KernelCoefficients {
        Builtin::MeanReverting { kappa: 1.0, sigma }.coefficients(1, 1).unwrap()
    }

    #[test]
    fn zero_coefficients_only_advance_time() {
        let c = Builtin::Brownian { scale: 0.0 }.coefficients(2, 2).unwrap();
        let e = ParticleEnsemble::new(vec![1.0, 2.0, 3.0, 4.0], 2, SeedLineage::new(0)).unwrap();
        let next = euler_step(&e, &c, 0.1, &[0.5; 4]).unwrap();
        assert_eq!(next.states(), e.states());
        assert_eq!(next.time(), 0.1);
    }

    #[test]
    fn constant_drift_shift() {
        let c = Builtin::Constant { drift: vec![2.0], diffusion: vec![vec![0.0]] }.coefficients(1, 1).unwrap();
        let e = ParticleEnsemble::new(vec![0.0, 1.0], 1, SeedLineage::new(0)).unwrap();
        let next = euler_step(&e, &c, 0.25, &[0.3, -0.3]).unwrap();
        assert_eq!(next.states(), &[0.5, 1.5]);
    }

    #[test]
    fn hand_step_attraction() {
        let e = ParticleEnsemble::new(vec![0.0, 2.0], 1, SeedLineage::new(0)).unwrap();
        let next = euler_step(&e, &attraction(0.0), 0.5, &[0.0, 0.0]).unwrap();
        assert_eq!(next.states(), &[0.5, 1.5]);
    }

    #[test]
    fn non_finite_step_reports_particle() {
        let c = KernelCoefficients::from_fns(
            1,
            1,
            1.0,
            |_, x, _, o| o[0] = if x[0] > 1.5 { f64::INFINITY } else { 0.0 },
            |_, _, _, o| o[0] = 0.0,
        )
        .unwrap();
        let e = ParticleEnsemble::new(vec![0.0, 1.0, 2.0], 1, SeedLineage::new(0)).unwrap();
        match euler_step(&e, &c, 0.1, &[0.0; 3]) {
            Err(Error::NonFinite { step, particle, .. }) => {
                assert_eq!(step, Some(1));
                assert_eq!(particle, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_steps_keeps_initial() {
        let cfg = SimConfig::new(attraction(1.0), 5, 0, 0.1, InitialLaw::Point { x0: vec![0.5] }, 1);
        let b = simulate(&cfg).unwrap();
        assert_eq!(b.steps, 0);
        assert_eq!(b.terminal.states(), &[0.5; 5]);
        assert_eq!(b.time_grid(), vec![0.0]);
    }

    #[test]
    fn brownian_terminal_variance() {
        let c = Builtin::Brownian { scale: 1.0 }.coefficients(1, 1).unwrap();
        let n = 100_000;
        let cfg = SimConfig::new(c, n, 20, 0.05, InitialLaw::Point { x0: vec![0.0] }, 42).record_first(0);
        let b = simulate(&cfg).unwrap();
        let xs = b.terminal.coordinate(0);
        let v = variance(&xs);
        // sd of the sample variance of N(0, 1): sqrt(2 / N)
        assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "variance {v}");
    }

    #[test]
    fn independent_copy_is_independent() {
        let n = 20_000;
        let cfg = SimConfig::new(attraction(0.5), n, 10, 0.1, InitialLaw::Gaussian { mean: vec![1.0], cov: vec![vec![0.25]] }, 9);
        let a = simulate(&cfg).unwrap().terminal.coordinate(0);
        let b = spawn_independent_copy(&cfg, None).unwrap().terminal.coordinate(0);
        let (ma, mb) = (mean_se(&a), mean_se(&b));
        assert!((ma.mean - mb.mean).abs() < 3.0 * (ma.se.powi(2) + mb.se.powi(2)).sqrt());
        let (va, vb) = (variance(&a).sqrt(), variance(&b).sqrt());
        let corr = a.iter().zip(&b).map(|(x, y)| (x - ma.mean) * (y - mb.mean)).sum::<f64>() / ((n - 1) as f64 * va * vb);
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
        assert!(matches!(spawn_independent_copy(&cfg, Some(cfg.lineage)), Err(Error::StreamCollision { .. })));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = SimConfig::new(attraction(0.3), 3000, 15, 0.05, InitialLaw::Point { x0: vec![1.0] }, 5)
            .with_noise()
            .with_stopping(1.6);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| simulate(&cfg).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.noise, b.noise);
        assert_eq!(a.stopping, b.stopping);
    }

    #[test]
    fn n_equals_one_is_a_plain_sde() {
        let cfg = SimConfig::new(attraction(0.0), 1, 10, 0.1, InitialLaw::Point { x0: vec![3.0] }, 0);
        // b(x, x) = 0 for the attraction kernel
        assert_eq!(simulate(&cfg).unwrap().terminal.states(), &[3.0]);
    }

    #[test]
    fn zero_noise_first_order_convergence() {
        // dm/dt = (a + beta) m for the linear kernel with a point-mass start
        let c = Builtin::Linear { a: -1.0, beta: 0.5, sigma: 0.0 }.coefficients(1, 1).unwrap();
        let exact = (-0.5f64).exp();
        let errs: Vec<f64> = [10usize, 20, 40, 80]
            .iter()
            .map(|&k| {
                let cfg = SimConfig::new(c.clone(), 4, k, 1.0 / k as f64, InitialLaw::Point { x0: vec![1.0] }, 0);
                (simulate(&cfg).unwrap().terminal.state(0)[0] - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 0.9, "{errs:?}");
        }
    }

    #[test]
    fn symmetric_root_matches_lift_pathwise() {
        let base = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.5]];
        let c = Builtin::Rectangular { kappa: 1.0, base, amplitude: 0.2 }.coefficients(2, 3).unwrap();
        let cfg = SimConfig::new(c, 200, 50, 0.02, InitialLaw::Point { x0: vec![0.5, -0.5] }, 3);
        let lifted = simulate(&cfg.clone().lifted(1e-8)).unwrap();
        let square = simulate(&cfg.with_mode(DiffusionMode::SymmetricRoot { floor: 1e-8 })).unwrap();
        let gap = lifted
            .terminal
            .states()
            .iter()
            .zip(square.terminal.states())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-10, "gap {gap}");
    }
}
