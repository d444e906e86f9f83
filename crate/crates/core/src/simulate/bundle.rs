use std::io::Write;

use serde::Serialize;

use super::{norm, ParticleEnsemble, SimConfig};
use crate::error::{Error, Result};
use crate::stats::ordered_sum;

/// Exit bookkeeping for radius-R stopping.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StoppingRecord {
    pub radius: f64,
    /// First grid step at which `|X| > R`, per tracked particle.
    pub exit_step: Vec<Option<usize>>,
    pub exit_fraction: f64,
    dt: f64,
}

impl StoppingRecord {
    pub(crate) fn new(radius: f64, exit_step: Vec<Option<usize>>, dt: f64) -> Self {
        let exited = exit_step.iter().filter(|e| e.is_some()).count();
        let exit_fraction = if exit_step.is_empty() { 0.0 } else { exited as f64 / exit_step.len() as f64 };
        Self { radius, exit_step, exit_fraction, dt }
    }

    /// Alive mask at grid step `k`; monotone in `k`.
    pub fn alive_at(&self, k: usize) -> Vec<bool> {
        self.exit_step.iter().map(|e| e.is_none_or(|s| k < s)).collect()
    }

    pub fn exit_times(&self) -> Vec<Option<f64>> {
        self.exit_step.iter().map(|e| e.map(|s| s as f64 * self.dt)).collect()
    }
}

/// Recorded trajectories on the uniform grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub dim: usize,
    pub noise_dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub particle_ids: Vec<usize>,
    /// `(steps + 1) x particles x dim`.
    pub trajectories: Vec<f64>,
    /// `steps x particles x noise_dim` when noise retention is on.
    pub noise: Option<Vec<f64>>,
    /// `(E|X_t|^2, E|X_t|^4)` over the full ensemble at every grid time.
    pub ensemble_moments: Vec<(f64, f64)>,
    /// `(E|x0|^2, E|x0|^4)` of the configured initial law.
    pub initial_moments: (f64, f64),
    pub stopping: Option<StoppingRecord>,
    pub terminal: ParticleEnsemble,
}

fn power_moments(states: &[f64], d: usize) -> (f64, f64) {
    let n = states.len() / d;
    let r2 = |i: usize| states[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>();
    let m2 = ordered_sum(n, r2) / n as f64;
    let m4 = ordered_sum(n, |i| r2(i).powi(2)) / n as f64;
    (m2, m4)
}

impl PathBundle {
    pub(crate) fn start(config: &SimConfig, initial: &ParticleEnsemble) -> Self {
        let d = initial.dim();
        let k = config.steps;
        let n_rec = config.record.len();
        let mut b = Self {
            dim: d,
            noise_dim: config.noise_dim(),
            dt: config.dt,
            steps: k,
            particle_ids: config.record.clone(),
            trajectories: Vec::with_capacity((k + 1) * n_rec * d),
            noise: config.retain_noise.then(|| Vec::with_capacity(k * n_rec * config.noise_dim())),
            ensemble_moments: Vec::with_capacity(k + 1),
            initial_moments: config.initial.moments(),
            stopping: None,
            terminal: initial.clone(),
        };
        b.push_states(initial);
        b
    }

    pub(crate) fn push_states(&mut self, e: &ParticleEnsemble) {
        for &i in &self.particle_ids {
            self.trajectories.extend_from_slice(e.state(i));
        }
        self.ensemble_moments.push(power_moments(e.states(), self.dim));
    }

    pub(crate) fn push_noise(&mut self, noise: &[f64], nd: usize) {
        if let Some(buf) = &mut self.noise {
            for &i in &self.particle_ids {
                buf.extend_from_slice(&noise[i * nd..(i + 1) * nd]);
            }
        }
    }

    pub fn recorded(&self) -> usize {
        self.particle_ids.len()
    }

    pub fn time_grid(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt).collect()
    }

    /// States of all recorded particles at grid step `k`.
    pub fn states_at(&self, k: usize) -> &[f64] {
        let w = self.recorded() * self.dim;
        &self.trajectories[k * w..(k + 1) * w]
    }

    /// State of recorded slot `p` at grid step `k`.
    pub fn state(&self, k: usize, p: usize) -> &[f64] {
        let off = (k * self.recorded() + p) * self.dim;
        &self.trajectories[off..off + self.dim]
    }

    /// Noise increment of recorded slot `p` over step `k`.
    pub fn noise_at(&self, k: usize, p: usize) -> Option<&[f64]> {
        let nd = self.noise_dim;
        let off = (k * self.recorded() + p) * nd;
        self.noise.as_ref().map(|n| &n[off..off + nd])
    }

    /// Writes `step,time,particle_id,x_0..x_{d-1}`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", csv_header(self.dim, &[]))?;
        for k in 0..=self.steps {
            let t = k as f64 * self.dt;
            for (p, id) in self.particle_ids.iter().enumerate() {
                write_row(w, k, t, *id, self.state(k, p), &[])?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
    }
}

pub(crate) fn csv_header(dim: usize, extra: &[&str]) -> String {
    let mut cols = vec!["step".to_string(), "time".into(), "particle_id".into()];
    cols.extend((0..dim).map(|i| format!("x_{i}")));
    cols.extend(extra.iter().map(|s| s.to_string()));
    cols.join(",")
}

pub(crate) fn write_row<W: Write>(w: &mut W, step: usize, t: f64, id: usize, x: &[f64], extra: &[f64]) -> Result<()> {
    write!(w, "{step},{t},{id}")?;
    for v in x.iter().chain(extra) {
        write!(w, ",{v}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Freezes every recorded particle at the first grid time its norm exceeds
/// `radius`; terminal states of recorded particles are frozen as well.
pub fn apply_stopping(bundle: &PathBundle, radius: f64) -> Result<PathBundle> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::Config(format!("stopping radius must be positive, got {radius}")));
    }
    let mut out = bundle.clone();
    let (d, n_rec) = (bundle.dim, bundle.recorded());
    let mut exit_step = vec![None; n_rec];
    for (p, exit) in exit_step.iter_mut().enumerate() {
        let Some(k0) = (0..=bundle.steps).find(|&k| norm(bundle.state(k, p)) > radius) else {
            continue;
        };
        *exit = Some(k0);
        let frozen = bundle.state(k0, p).to_vec();
        for k in k0 + 1..=bundle.steps {
            let off = (k * n_rec + p) * d;
            out.trajectories[off..off + d].copy_from_slice(&frozen);
        }
        let id = bundle.particle_ids[p];
        out.terminal.states[id * d..(id + 1) * d].copy_from_slice(&frozen);
        out.terminal.alive[id] = false;
    }
    out.stopping = Some(StoppingRecord::new(radius, exit_step, bundle.dt));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Builtin;
    use crate::simulate::{simulate, InitialLaw};

    fn drift_one(steps: usize) -> PathBundle {
        let c = Builtin::Constant { drift: vec![1.0], diffusion: vec![vec![0.0]] }.coefficients(1, 1).unwrap();
        simulate(&SimConfig::new(c, 3, steps, 1.0 / steps as f64, InitialLaw::Point { x0: vec![0.0] }, 0)).unwrap()
    }

    #[test]
    fn infinite_radius_never_exits() {
        let s = apply_stopping(&drift_one(10), f64::INFINITY).unwrap();
        assert_eq!(s.stopping.unwrap().exit_fraction, 0.0);
    }

    #[test]
    fn deterministic_exit_time() {
        let s = apply_stopping(&drift_one(1000), 0.5).unwrap();
        let rec = s.stopping.as_ref().unwrap();
        assert_eq!(rec.exit_fraction, 1.0);
        let t = rec.exit_times()[0].unwrap();
        assert!((t - 0.5).abs() <= 1.5e-3, "exit time {t}");
        let last = s.state(1000, 0)[0];
        assert!(last > 0.5 && last < 0.5 + 2e-3);
        assert!(!rec.alive_at(1000)[0] && rec.alive_at(0)[0]);
    }

    #[test]
    fn exit_fraction_monotone_in_radius() {
        let c = Builtin::Brownian { scale: 1.0 }.coefficients(1, 1).unwrap();
        let b = simulate(&SimConfig::new(c, 500, 100, 0.01, InitialLaw::Point { x0: vec![0.0] }, 8)).unwrap();
        let fr: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0]
            .iter()
            .map(|&r| apply_stopping(&b, r).unwrap().stopping.unwrap().exit_fraction)
            .collect();
        assert!(fr.windows(2).all(|w| w[1] <= w[0]), "{fr:?}");
    }

    #[test]
    fn csv_layout() {
        let b = drift_one(2);
        let csv = b.to_csv_string().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,time,particle_id,x_0");
        assert_eq!(lines.len(), 1 + 3 * 3);
        assert_eq!(lines[4], "1,0.5,0,0.5");
    }
}
