use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::REDUCE_CHUNK;

/// Pointwise kernel `(t, x, y, out)`; overwrites `out`.
pub type PointFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// State factor `(t, x, scale, out)`; adds `scale * A(t, x)` into `out`.
pub type StateFactorFn = Arc<dyn Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync>;
/// Measure factor `(t, y) -> g(t, y)`.
pub type MeasureFactorFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One product term `A(t, x) g(t, y)` of a separable kernel. A missing
/// measure factor means `g = 1`.
#[derive(Clone)]
pub struct Term {
    pub state: StateFactorFn,
    pub measure: Option<MeasureFactorFn>,
}

impl Term {
    pub fn new<A>(state: A) -> Self
    where
        A: Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self { state: Arc::new(state), measure: None }
    }

    pub fn with_measure<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.measure = Some(Arc::new(g));
        self
    }
}

#[derive(Clone)]
pub(crate) enum Repr {
    General(PointFn),
    Separable(Arc<[Term]>),
}

/// A matrix-valued kernel `k(t, x, y)` with `rows x cols` output
/// (row-major) and state dimension `rows`.
///
/// Separable kernels `sum_m A_m(t, x) g_m(t, y)` average against an
/// empirical measure in O(N) per step; general kernels cost O(N) per
/// evaluation point.
#[derive(Clone)]
pub struct Kernel {
    rows: usize,
    cols: usize,
    time_dependent: bool,
    pub(crate) repr: Repr,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::General(_) => "general".to_string(),
            Repr::Separable(t) => format!("separable({} terms)", t.len()),
        };
        f.debug_struct("Kernel")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("kind", &kind)
            .finish()
    }
}

/// What a kernel needs to know about an empirical measure to average against it.
#[derive(Clone, Debug)]
pub enum MeasureSummary {
    /// Sample means of each measure factor, in term order.
    Averages(Vec<f64>),
    /// A copy of the atoms (row-major, `dim` columns).
    Atoms { states: Arc<[f64]>, dim: usize },
}

impl Kernel {
    pub fn general<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { rows, cols, time_dependent: true, repr: Repr::General(Arc::new(f)) }
    }

    pub fn separable(rows: usize, cols: usize, terms: Vec<Term>) -> Self {
        Self { rows, cols, time_dependent: true, repr: Repr::Separable(terms.into()) }
    }

    /// Declares that the kernel ignores `t`. Used to collapse the time
    /// axis of mollification.
    pub fn time_independent(mut self) -> Self {
        self.time_dependent = false;
        self
    }

    pub(crate) fn with_time_dependence(mut self, dependent: bool) -> Self {
        self.time_dependent = dependent;
        self
    }

    /// Constant kernel with value `c` (row-major, `rows * cols` entries).
    pub fn constant(rows: usize, cols: usize, c: Vec<f64>) -> Self {
        assert_eq!(c.len(), rows * cols);
        Self::separable(
            rows,
            cols,
            vec![Term::new(move |_, _, s, out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(&c) {
                    *o += s * v;
                }
            })],
        )
        .time_independent()
    }

    /// `k + c` for a constant `c` (row-major). Separable kernels stay separable.
    pub fn shifted(&self, c: Vec<f64>) -> Result<Kernel> {
        if c.len() != self.len() {
            return Err(Error::Dimension { context: "kernel shift", expected: self.len(), got: c.len() });
        }
        let repr = match &self.repr {
            Repr::Separable(terms) => {
                let mut terms = terms.to_vec();
                terms.push(Term::new(move |_, _, s, out: &mut [f64]| {
                    for (o, v) in out.iter_mut().zip(&c) {
                        *o += s * v;
                    }
                }));
                Repr::Separable(terms.into())
            }
            Repr::General(f) => {
                let f = f.clone();
                Repr::General(Arc::new(move |t, x, y, out: &mut [f64]| {
                    f(t, x, y, out);
                    out.iter_mut().zip(&c).for_each(|(o, v)| *o += v);
                }))
            }
        };
        Ok(Kernel { rows: self.rows, cols: self.cols, time_dependent: self.time_dependent, repr })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.repr, Repr::Separable(_))
    }

    /// Pointwise evaluation `k(t, x, y)`.
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        match &self.repr {
            Repr::General(f) => f(t, x, y, out),
            Repr::Separable(terms) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for term in terms.iter() {
                    let g = term.measure.as_ref().map_or(1.0, |g| g(t, y));
                    if g != 0.0 {
                        (term.state)(t, x, g, out);
                    }
                }
            }
        }
    }

    pub fn eval_vec(&self, t: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval(t, x, y, &mut out);
        out
    }

    /// Prepares the averages needed by [`Kernel::average`] for the measure
    /// with atoms `states` (row-major, `rows` columns).
    pub fn summarize(&self, t: f64, states: &[f64]) -> Result<MeasureSummary> {
        let dim = self.rows;
        if states.is_empty() {
            return Err(Error::Precondition("empirical measure has no atoms".into()));
        }
        if !states.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                context: "empirical measure",
                expected: dim,
                got: states.len() % dim,
            });
        }
        let n = states.len() / dim;
        match &self.repr {
            Repr::General(_) => Ok(MeasureSummary::Atoms { states: states.into(), dim }),
            Repr::Separable(terms) => {
                let mut avgs = Vec::with_capacity(terms.len());
                for term in terms.iter() {
                    let Some(g) = &term.measure else {
                        avgs.push(1.0);
                        continue;
                    };
                    let partial: Vec<(f64, Option<usize>)> = states
                        .par_chunks(REDUCE_CHUNK * dim)
                        .enumerate()
                        .map(|(c, chunk)| {
                            let mut s = 0.0;
                            for (k, y) in chunk.chunks_exact(dim).enumerate() {
                                let v = g(t, y);
                                if !v.is_finite() {
                                    return (f64::NAN, Some(c * REDUCE_CHUNK + k));
                                }
                                s += v;
                            }
                            (s, None)
                        })
                        .collect();
                    let mut sum = 0.0;
                    for (s, bad) in partial {
                        if let Some(particle) = bad {
                            return Err(Error::NonFinite { context: "kernel measure factor", step: None, particle });
                        }
                        sum += s;
                    }
                    avgs.push(sum / n as f64);
                }
                Ok(MeasureSummary::Averages(avgs))
            }
        }
    }

    /// Mean-field value `(1/N) sum_j k(t, x, Y_j)` given a summary from
    /// [`Kernel::summarize`]. Overwrites `out`.
    pub fn average(&self, t: f64, x: &[f64], summary: &MeasureSummary, out: &mut [f64]) -> Result<()> {
        if x.len() != self.rows {
            return Err(Error::Dimension { context: "kernel state argument", expected: self.rows, got: x.len() });
        }
        match (&self.repr, summary) {
            (Repr::Separable(terms), MeasureSummary::Averages(avgs)) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (term, &a) in terms.iter().zip(avgs) {
                    if a != 0.0 {
                        (term.state)(t, x, a, out);
                    }
                }
                Ok(())
            }
            (Repr::General(f), MeasureSummary::Atoms { states, dim }) => {
                let n = states.len() / dim;
                let mut acc = vec![0.0; self.len()];
                let mut buf = vec![0.0; self.len()];
                for (j, y) in states.chunks_exact(*dim).enumerate() {
                    f(t, x, y, &mut buf);
                    if buf.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { context: "kernel evaluation", step: None, particle: j });
                    }
                    acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                }
                out.iter_mut().zip(&acc).for_each(|(o, a)| *o = a / n as f64);
                Ok(())
            }
            _ => Err(Error::Precondition("measure summary does not belong to this kernel".into())),
        }
    }
}

/// The `rows x cols` matrix with ones on the main diagonal.
pub fn rect_identity(rows: usize, cols: usize) -> Vec<f64> {
    let mut m = vec![0.0; rows * cols];
    for i in 0..rows.min(cols) {
        m[i * cols + i] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attraction() -> Kernel {
        // b(t, x, y) = -(x - y)
        Kernel::separable(
            1,
            1,
            vec![
                Term::new(|_, x, s, out| out[0] -= s * x[0]),
                Term::new(|_, _, s, out| out[0] += s).with_measure(|_, y| y[0]),
            ],
        )
    }

    #[test]
    fn separable_matches_general_average() {
        let sep = attraction();
        let gen = Kernel::general(1, 1, |_, x, y, out| out[0] = -(x[0] - y[0]));
        let ys = [1.0, 3.0, -0.5, 2.25];
        for k in [&sep, &gen] {
            let s = k.summarize(0.0, &ys).unwrap();
            let mut out = [0.0];
            k.average(0.0, &[0.7], &s, &mut out).unwrap();
            let direct: f64 = ys.iter().map(|y| -(0.7 - y)).sum::<f64>() / 4.0;
            assert!((out[0] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_measure_rejected() {
        assert!(attraction().summarize(0.0, &[]).is_err());
    }

    #[test]
    fn non_finite_names_particle() {
        let k = Kernel::separable(1, 1, vec![Term::new(|_, _, s, o| o[0] += s).with_measure(|_, y| 1.0 / y[0])]);
        match k.summarize(0.0, &[1.0, 2.0, 0.0, 4.0]) {
            Err(Error::NonFinite { particle, .. }) => assert_eq!(particle, 2),
            other => panic!("unexpected {other:?}"),
        }
        let g = Kernel::general(1, 1, |_, _, y, o| o[0] = 1.0 / y[0]);
        let s = g.summarize(0.0, &[1.0, 0.0]).unwrap();
        match g.average(0.0, &[0.0], &s, &mut [0.0]) {
            Err(Error::NonFinite { particle, .. }) => assert_eq!(particle, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rect_identity_layout() {
        assert_eq!(rect_identity(2, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn shift_adds_constant_both_reprs() {
        let sep = attraction().shifted(vec![1.0]).unwrap();
        assert!(sep.is_separable());
        assert_eq!(sep.eval_vec(0.0, &[2.0], &[0.5]), vec![-0.5]);
        let gen = Kernel::general(1, 1, |_, x, y, o| o[0] = x[0] * y[0]).shifted(vec![1.0]).unwrap();
        assert_eq!(gen.eval_vec(0.0, &[2.0], &[3.0]), vec![7.0]);
        assert!(attraction().shifted(vec![1.0, 2.0]).is_err());
    }
}
