//! Smoothing of kernel coefficients by convolution with compactly
//! supported bumps in `t`, `x` and `y`.
//!
//! The bump is `exp(-1/(1-u^2))` on `(-1, 1)`, scaled to bandwidth
//! `h = 1/level` on every axis. Convolutions are evaluated with a
//! tensor-product Gauss-Legendre rule whose weights are renormalised to
//! sum to one, so constants are reproduced exactly. For `t < 0` the base
//! coefficients are replaced by the zero drift and the unit diffusion
//! matrix.

use std::sync::Arc;

use serde::Serialize;

use super::kernel::{Kernel, MeasureFactorFn, Repr, Term};
use super::{rect_identity, KernelCoefficients};
use crate::error::{Error, Result};

/// Largest state dimension supported by mollified kernels (stack buffers).
pub const MAX_MOLLIFY_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bandwidths {
    pub h_t: f64,
    pub h_x: f64,
    pub h_y: f64,
}

impl Bandwidths {
    pub fn total(&self) -> f64 {
        self.h_t + self.h_x + self.h_y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mollifier {
    pub level: u32,
    pub quadrature_nodes: usize,
}

impl Mollifier {
    pub fn new(level: u32, quadrature_nodes: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::Precondition("mollifier level must be positive".into()));
        }
        if quadrature_nodes < 3 {
            return Err(Error::Precondition(format!(
                "mollifier needs at least 3 quadrature nodes, got {quadrature_nodes}"
            )));
        }
        Ok(Self { level, quadrature_nodes })
    }

    pub fn bandwidths(&self) -> Bandwidths {
        let h = 1.0 / self.level as f64;
        Bandwidths { h_t: h, h_x: h, h_y: h }
    }

    /// One-dimensional rule on (-1, 1) for the normalised bump.
    pub fn rule(&self) -> BumpRule {
        BumpRule::new(self.quadrature_nodes)
    }
}

/// Gauss-Legendre nodes on (-1, 1) and weights for `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Discrete probability measure approximating the normalised bump.
#[derive(Clone, Debug)]
pub struct BumpRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BumpRule {
    pub fn new(n: usize) -> Self {
        let (nodes, gl) = gauss_legendre(n);
        let raw: Vec<f64> = nodes.iter().zip(&gl).map(|(&u, &w)| w * bump(u)).collect();
        let total: f64 = raw.iter().sum();
        Self { nodes, weights: raw.into_iter().map(|w| w / total).collect() }
    }
}

/// Tensor-product offsets `h * u` over `dim` axes with product weights.
#[derive(Debug)]
struct TensorRule {
    dim: usize,
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

impl TensorRule {
    fn new(rule: &BumpRule, dim: usize, h: f64) -> Self {
        let q = rule.nodes.len();
        let count = q.pow(dim as u32);
        let mut offsets = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut w = 1.0;
            for &k in &idx {
                offsets.push(h * rule.nodes[k]);
                w *= rule.weights[k];
            }
            weights.push(w);
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < q {
                    break;
                }
                *slot = 0;
            }
        }
        Self { dim, offsets, weights }
    }

    fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.offsets.chunks_exact(self.dim.max(1)).zip(self.weights.iter().copied())
    }
}

/// Time nodes `s_i = h_t u_i` with weights; `t - s_i < 0` falls in the extension.
#[derive(Debug)]
struct TimeRule {
    shifts: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeRule {
    fn new(rule: &BumpRule, h: f64) -> Self {
        Self { shifts: rule.nodes.iter().map(|u| h * u).collect(), weights: rule.weights.clone() }
    }

    /// Total weight of nodes that land at nonnegative time.
    fn forward_weight(&self, t: f64) -> f64 {
        self.shifts
            .iter()
            .zip(&self.weights)
            .filter(|(s, _)| t - *s >= 0.0)
            .map(|(_, w)| w)
            .sum()
    }
}

#[inline]
fn shifted<'a>(buf: &'a mut [f64; MAX_MOLLIFY_DIM], x: &[f64], off: &[f64]) -> &'a [f64] {
    let d = x.len();
    for k in 0..d {
        buf[k] = x[k] - off[k];
    }
    &buf[..d]
}

fn smooth_measure_factor(g: MeasureFactorFn, yr: Arc<TensorRule>, time_shift: Option<f64>) -> MeasureFactorFn {
    Arc::new(move |t: f64, y: &[f64]| {
        let tt = match time_shift {
            Some(s) => {
                if t - s < 0.0 {
                    return 0.0;
                }
                t - s
            }
            None => t,
        };
        let mut buf = [0.0; MAX_MOLLIFY_DIM];
        yr.iter().map(|(off, w)| w * g(tt, shifted(&mut buf, y, off))).sum()
    })
}

/// Convolves one kernel with the bump in all three variables; `extension`
/// is the value used for negative times.
pub fn mollify_kernel(kernel: &Kernel, moll: &Mollifier, extension: Vec<f64>) -> Result<Kernel> {
    let dim = kernel.rows();
    if dim > MAX_MOLLIFY_DIM {
        return Err(Error::Config(format!(
            "mollification supports state dimension up to {MAX_MOLLIFY_DIM}, got {dim}"
        )));
    }
    if extension.len() != kernel.len() {
        return Err(Error::Dimension { context: "mollifier extension", expected: kernel.len(), got: extension.len() });
    }
    let bw = moll.bandwidths();
    let rule = moll.rule();
    let xr = Arc::new(TensorRule::new(&rule, dim, bw.h_x));
    let yr = Arc::new(TensorRule::new(&rule, dim, bw.h_y));
    let tr = Arc::new(TimeRule::new(&rule, bw.h_t));
    let ext: Arc<[f64]> = extension.into();
    let (rows, cols) = (kernel.rows(), kernel.cols());

    let out = match &kernel.repr {
        Repr::Separable(terms) => {
            let mut new_terms = Vec::new();
            if kernel.is_time_dependent() {
                for (&s, &ws) in tr.shifts.iter().zip(&tr.weights) {
                    for term in terms.iter() {
                        let a = term.state.clone();
                        let xr = xr.clone();
                        let state = move |t: f64, x: &[f64], scale: f64, out: &mut [f64]| {
                            if t - s < 0.0 {
                                return;
                            }
                            let mut buf = [0.0; MAX_MOLLIFY_DIM];
                            for (off, w) in xr.iter() {
                                a(t - s, shifted(&mut buf, x, off), scale * ws * w, out);
                            }
                        };
                        let measure = term.measure.clone().map(|g| smooth_measure_factor(g, yr.clone(), Some(s)));
                        new_terms.push(Term { state: Arc::new(state), measure });
                    }
                }
            } else {
                for term in terms.iter() {
                    let a = term.state.clone();
                    let (xr, tr) = (xr.clone(), tr.clone());
                    let state = move |t: f64, x: &[f64], scale: f64, out: &mut [f64]| {
                        let wp = tr.forward_weight(t);
                        if wp == 0.0 {
                            return;
                        }
                        let mut buf = [0.0; MAX_MOLLIFY_DIM];
                        for (off, w) in xr.iter() {
                            a(t, shifted(&mut buf, x, off), scale * wp * w, out);
                        }
                    };
                    let measure = term.measure.clone().map(|g| smooth_measure_factor(g, yr.clone(), None));
                    new_terms.push(Term { state: Arc::new(state), measure });
                }
            }
            if ext.iter().any(|&v| v != 0.0) {
                let (tr, ext) = (tr.clone(), ext.clone());
                new_terms.push(Term::new(move |t, _, scale, out| {
                    let wn = 1.0 - tr.forward_weight(t);
                    if wn > 0.0 {
                        for (o, e) in out.iter_mut().zip(ext.iter()) {
                            *o += scale * wn * e;
                        }
                    }
                }));
            }
            Kernel::separable(rows, cols, new_terms)
        }
        Repr::General(f) => {
            let f = f.clone();
            let len = rows * cols;
            Kernel::general(rows, cols, move |t, x, y, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut buf = vec![0.0; len];
                let mut bx = [0.0; MAX_MOLLIFY_DIM];
                let mut by = [0.0; MAX_MOLLIFY_DIM];
                for (&s, &ws) in tr.shifts.iter().zip(&tr.weights) {
                    if t - s < 0.0 {
                        for (o, e) in out.iter_mut().zip(ext.iter()) {
                            *o += ws * e;
                        }
                        continue;
                    }
                    for (ox, wx) in xr.iter() {
                        let xs = shifted(&mut bx, x, ox);
                        for (oy, wy) in yr.iter() {
                            let ys = shifted(&mut by, y, oy);
                            f(t - s, xs, ys, &mut buf);
                            let w = ws * wx * wy;
                            out.iter_mut().zip(&buf).for_each(|(o, b)| *o += w * b);
                        }
                    }
                }
            })
        }
    };
    Ok(out.with_time_dependence(true))
}

/// Mollifies both coefficients. The result carries a growth constant that
/// stays valid after smoothing: `max(C (1 + h_x), ||I||_F)`.
pub fn mollify(coeffs: &KernelCoefficients, moll: &Mollifier) -> Result<KernelCoefficients> {
    let (d, d1) = (coeffs.dim_state, coeffs.dim_noise);
    let drift = mollify_kernel(&coeffs.drift, moll, vec![0.0; d])?;
    let diffusion = mollify_kernel(&coeffs.diffusion, moll, rect_identity(d, d1))?;
    let bw = moll.bandwidths();
    let id_norm = (d.min(d1) as f64).sqrt();
    Ok(KernelCoefficients {
        dim_state: d,
        dim_noise: d1,
        drift,
        diffusion,
        growth_constant: (coeffs.growth_constant * (1.0 + bw.h_x)).max(id_norm),
        builtin: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let int = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((int(0) - 2.0).abs() < 1e-14);
        assert!(int(3).abs() < 1e-14);
        assert!((int(8) - 2.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn bump_rule_is_symmetric_probability() {
        let r = BumpRule::new(8);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let m1: f64 = r.nodes.iter().zip(&r.weights).map(|(u, w)| u * w).sum();
        assert!(m1.abs() < 1e-15);
        assert!(r.nodes.iter().all(|u| u.abs() < 1.0));
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(Mollifier::new(4, 2).is_err());
        assert!(Mollifier::new(0, 5).is_err());
    }

    #[test]
    fn bandwidths_decrease_with_level() {
        let a = Mollifier::new(4, 5).unwrap().bandwidths();
        let b = Mollifier::new(5, 5).unwrap().bandwidths();
        assert!(b.h_t < a.h_t && b.h_x < a.h_x && b.h_y < a.h_y);
    }

    #[test]
    fn negative_time_uses_extension() {
        let k = Kernel::constant(1, 1, vec![3.0]).time_independent();
        let m = Mollifier::new(2, 6).unwrap();
        let mk = mollify_kernel(&k, &m, vec![0.0]).unwrap();
        // at t = 0 exactly half the time nodes are negative
        let v = mk.eval_vec(0.0, &[0.0], &[0.0])[0];
        assert!((v - 1.5).abs() < 1e-14, "{v}");
        let v = mk.eval_vec(1.0, &[0.0], &[0.0])[0];
        assert!((v - 3.0).abs() < 1e-14);
    }

    #[test]
    fn constant_coefficients_survive() {
        let c = crate::coeffs::Builtin::Constant { drift: vec![0.7, -2.0], diffusion: vec![vec![1.0, 0.0], vec![0.0, 1.0]] }
            .coefficients(2, 2)
            .unwrap();
        let m = mollify(&c, &Mollifier::new(8, 5).unwrap()).unwrap();
        let b = m.drift.eval_vec(0.5, &[1.0, 2.0], &[-1.0, 0.0]);
        assert!((b[0] - 0.7).abs() < 1e-13 && (b[1] + 2.0).abs() < 1e-13);
        // identity diffusion matches its own negative-time extension at every t
        let s = m.diffusion.eval_vec(0.0, &[1.0, 2.0], &[0.0, 0.0]);
        assert!(s.iter().zip([1.0, 0.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn step_sign_preserved_off_the_jump() {
        let c = crate::coeffs::Builtin::StepDrift { sigma: 1.0 }.coefficients(1, 1).unwrap();
        for level in [4, 8, 16] {
            let m = Mollifier::new(level, 12).unwrap();
            let h = m.bandwidths().h_x;
            let mc = mollify(&c, &m).unwrap();
            let v = mc.drift.eval_vec(0.5, &[3.0 * h], &[0.0])[0];
            assert!((v - 1.0).abs() < 1e-6, "level {level}: {v}");
            let v = mc.drift.eval_vec(0.5, &[-3.0 * h], &[0.0])[0];
            assert!((v + 1.0).abs() < 1e-6);
        }
    }

    fn smooth_kernel(separable: bool) -> Kernel {
        // b = sin(x) + 0.5 cos(y) + 0.3 t: Lipschitz with constant 1 in each variable
        if separable {
            Kernel::separable(
                1,
                1,
                vec![
                    Term::new(|t, x, s, o| o[0] += s * (x[0].sin() + 0.3 * t)),
                    Term::new(|_, _, s, o| o[0] += s * 0.5).with_measure(|_, y| y[0].cos()),
                ],
            )
        } else {
            Kernel::general(1, 1, |t, x, y, o| o[0] = x[0].sin() + 0.5 * y[0].cos() + 0.3 * t)
        }
    }

    #[test]
    fn lipschitz_kernels_move_at_most_l_times_bandwidth() {
        for separable in [true, false] {
            let k = smooth_kernel(separable);
            let mut last = f64::INFINITY;
            for level in [4, 8, 16, 32] {
                let m = Mollifier::new(level, 5).unwrap();
                let mk = mollify_kernel(&k, &m, vec![0.0]).unwrap();
                let mut worst: f64 = 0.0;
                for i in 0..9 {
                    for j in 0..9 {
                        let (t, x, y) = (0.5 + 0.05 * i as f64, -2.0 + 0.5 * i as f64, -2.0 + 0.5 * j as f64);
                        let raw = k.eval_vec(t, &[x], &[y])[0];
                        let sm = mk.eval_vec(t, &[x], &[y])[0];
                        worst = worst.max((raw - sm).abs());
                    }
                }
                assert!(worst <= m.bandwidths().total() + 1e-10, "level {level}: {worst}");
                assert!(worst < last, "not decreasing at level {level}");
                last = worst;
            }
        }
    }
}
