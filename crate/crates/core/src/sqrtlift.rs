//! Reduction of a rectangular diffusion `sigma` (d x d1, d1 >= d) to the
//! symmetric square root of `a = sigma sigma^T`, plus the synthesized noise
//! `dW0 = p^T dW~ + (I - p^T p) dW_bar` with `p = a^{-1/2} sigma`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{fill_normal, SeedLineage};

/// Tolerance for the symmetry assertion on `p^T p`.
const SYMMETRY_TOL: f64 = 1e-10;

fn from_row_major(m: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, m)
}

/// Smallest eigenvalue of `sigma sigma^T` for a row-major `d x d1` matrix.
pub fn min_eigenvalue_aat(sigma: &[f64], d: usize, d1: usize) -> f64 {
    let s = from_row_major(sigma, d, d1);
    let a = &s * s.transpose();
    SymmetricEigen::new(a).eigenvalues.min()
}

/// Smallest eigenvalue of `(sigma + sigma^T) / 2`, i.e. `inf_{|l|=1} l^T sigma l`.
pub fn min_eigenvalue_sym_part(sigma: &[f64], d: usize) -> f64 {
    let s = from_row_major(sigma, d, d);
    let sym = (&s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Default eigenvalue floor `1e-8 tr(a) / d`.
pub fn default_floor(a: &DMatrix<f64>) -> f64 {
    1e-8 * a.trace() / a.nrows() as f64
}

/// Symmetric positive square root by eigendecomposition.
pub fn sym_sqrt(a: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let (sqrt, _, _) = sqrt_and_inverse(a, floor)?;
    Ok(sqrt)
}

/// `(a^{1/2}, a^{-1/2}, lambda_min)`.
fn sqrt_and_inverse(a: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    if !a.is_square() {
        return Err(Error::Dimension { context: "square root of a non-square matrix", expected: a.nrows(), got: a.ncols() });
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > SYMMETRY_TOL * a.abs().max().max(1.0) {
        return Err(Error::Precondition(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(a.clone());
    let lmin = eig.eigenvalues.min();
    if !(lmin >= floor) || !lmin.is_finite() {
        return Err(Error::Degenerate { eigenvalue: lmin, floor, location: None });
    }
    let v = &eig.eigenvectors;
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let sqrt = v * DMatrix::from_diagonal(&root) * v.transpose();
    let inv = v * DMatrix::from_diagonal(&root.map(|r| 1.0 / r)) * v.transpose();
    Ok(((&sqrt + sqrt.transpose()) * 0.5, (&inv + inv.transpose()) * 0.5, lmin))
}

#[derive(Clone, Debug)]
pub struct LiftOperators {
    pub a: DMatrix<f64>,
    pub sqrt_a: DMatrix<f64>,
    /// `a^{-1/2} sigma`, d x d1.
    pub p: DMatrix<f64>,
    /// `p^T p`, d1 x d1.
    pub projector: DMatrix<f64>,
    /// `I - p^T p`.
    pub complement: DMatrix<f64>,
    pub min_eig_a: f64,
}

/// Builds the lift for `sigma`. Fails when `lambda_min(sigma sigma^T) < floor`
/// or when `p^T p` comes out asymmetric.
pub fn build_lift(sigma: &DMatrix<f64>, floor: f64) -> Result<LiftOperators> {
    let (d, d1) = sigma.shape();
    if d1 < d {
        return Err(Error::Dimension { context: "lift needs d1 >= d", expected: d, got: d1 });
    }
    let a = sigma * sigma.transpose();
    let (sqrt_a, inv_sqrt, min_eig_a) = sqrt_and_inverse(&a, floor)?;
    let p = &inv_sqrt * sigma;
    let projector = p.transpose() * &p;
    let asym = (&projector - projector.transpose()).abs().max();
    if asym > SYMMETRY_TOL {
        return Err(Error::Assertion(format!("p^T p not symmetric (defect {asym:e})")));
    }
    let complement = DMatrix::identity(d1, d1) - &projector;
    Ok(LiftOperators { a, sqrt_a, p, projector, complement, min_eig_a })
}

impl LiftOperators {
    /// `|(p^T p)^2 - p^T p|_F`.
    pub fn idempotence_defect(&self) -> f64 {
        (&self.projector * &self.projector - &self.projector).norm()
    }

    /// `|sigma p^T - a^{1/2}|_F / |a|_F`.
    pub fn root_identity_defect(&self, sigma: &DMatrix<f64>) -> f64 {
        (sigma * self.p.transpose() - &self.sqrt_a).norm() / self.a.norm().max(f64::MIN_POSITIVE)
    }

    /// `p^T dw_tilde + (I - p^T p) dw_bar` written into `out` (length d1).
    pub fn apply(&self, dw_tilde: &[f64], dw_bar: &[f64], out: &mut [f64]) {
        let (d, d1) = self.p.shape();
        for (j, o) in out.iter_mut().enumerate().take(d1) {
            let mut v = 0.0;
            for i in 0..d {
                v += self.p[(i, j)] * dw_tilde[i];
            }
            for k in 0..d1 {
                v += self.complement[(j, k)] * dw_bar[k];
            }
            *o = v;
        }
    }
}

/// Per-step synthesis of `dW0` from increments stored row-wise
/// (`dw_tilde`: steps x d, `dw_bar`: steps x d1).
pub fn synthesize_w0(lifts: &[LiftOperators], dw_tilde: &[f64], dw_bar: &[f64]) -> Result<Vec<f64>> {
    let steps = lifts.len();
    let Some(first) = lifts.first() else {
        return Ok(Vec::new());
    };
    let (d, d1) = first.p.shape();
    if dw_tilde.len() != steps * d {
        return Err(Error::Dimension { context: "dW~ increments", expected: steps * d, got: dw_tilde.len() });
    }
    if dw_bar.len() != steps * d1 {
        return Err(Error::Dimension { context: "dW_bar increments", expected: steps * d1, got: dw_bar.len() });
    }
    let mut out = vec![0.0; steps * d1];
    out.par_chunks_mut(d1).enumerate().for_each(|(k, o)| {
        lifts[k].apply(&dw_tilde[k * d..(k + 1) * d], &dw_bar[k * d1..(k + 1) * d1], o);
    });
    Ok(out)
}

/// Draws `dW~` (steps x d) and `dW_bar` (steps x d1) for one path from
/// the two lineages, refusing overlapping streams.
pub fn draw_lift_increments(
    tilde: &SeedLineage,
    bar: &SeedLineage,
    width: usize,
    path: usize,
    steps: usize,
    d: usize,
    d1: usize,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    tilde.ensure_disjoint(bar, width)?;
    let mut a = vec![0.0; steps * d];
    let mut b = vec![0.0; steps * d1];
    fill_normal(&mut tilde.stream(path), dt.sqrt(), &mut a);
    fill_normal(&mut bar.stream(path), dt.sqrt(), &mut b);
    Ok((a, b))
}

#[derive(Clone, Debug, Serialize)]
pub struct LevyReport {
    /// `sum_k dW0 dW0^T`, row-major d1 x d1.
    pub covariation: Vec<f64>,
    pub dim: usize,
    pub horizon: f64,
    /// Max off-diagonal `|[W0]_ij|`.
    pub max_offdiag: f64,
    /// Max `|[W0]_ii - T| / T`.
    pub max_diag_reldev: f64,
    /// Max entrywise `|[W0] - T I|`.
    pub max_deviation: f64,
    pub steps: usize,
}

/// Empirical quadratic covariation of increments stored row-wise (`dim` columns).
pub fn levy_check(w0: &[f64], dim: usize, horizon: f64) -> LevyReport {
    let steps = w0.len() / dim;
    let chunks: Vec<Vec<f64>> = w0
        .par_chunks(crate::stats::REDUCE_CHUNK * dim)
        .map(|c| {
            let mut acc = vec![0.0; dim * dim];
            for row in c.chunks_exact(dim) {
                for i in 0..dim {
                    for j in 0..dim {
                        acc[i * dim + j] += row[i] * row[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for c in chunks {
        cov.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    let (mut max_offdiag, mut max_diag_reldev, mut max_deviation) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..dim {
        for j in 0..dim {
            let v = cov[i * dim + j];
            if i == j {
                max_diag_reldev = max_diag_reldev.max((v - horizon).abs() / horizon);
                max_deviation = max_deviation.max((v - horizon).abs());
            } else {
                max_offdiag = max_offdiag.max(v.abs());
                max_deviation = max_deviation.max(v.abs());
            }
        }
    }
    LevyReport { covariation: cov, dim, horizon, max_offdiag, max_diag_reldev, max_deviation, steps }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReconstructionReport {
    /// Max `|sigma dW0 - a^{1/2} dW~|`.
    pub max_defect: f64,
    /// `max_defect` divided by the largest `|sigma|_F (|dW0| + |dW~|)` seen.
    pub max_rel_defect: f64,
    pub steps: usize,
}

/// Per-step check of `sigma dW0 = a^{1/2} dW~`.
pub fn reconstruction_check(
    sigmas: &[DMatrix<f64>],
    lifts: &[LiftOperators],
    dw_tilde: &[f64],
    dw0: &[f64],
) -> Result<ReconstructionReport> {
    let steps = sigmas.len();
    if lifts.len() != steps {
        return Err(Error::Dimension { context: "lift per step", expected: steps, got: lifts.len() });
    }
    if steps == 0 {
        return Ok(ReconstructionReport { max_defect: 0.0, max_rel_defect: 0.0, steps });
    }
    let (d, d1) = sigmas[0].shape();
    if dw_tilde.len() != steps * d || dw0.len() != steps * d1 {
        return Err(Error::Dimension { context: "reconstruction increments", expected: steps * d1, got: dw0.len() });
    }
    let per: Vec<(f64, f64)> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let w0 = DVector::from_column_slice(&dw0[k * d1..(k + 1) * d1]);
            let wt = DVector::from_column_slice(&dw_tilde[k * d..(k + 1) * d]);
            let defect = (&sigmas[k] * &w0 - &lifts[k].sqrt_a * &wt).norm();
            let scale = sigmas[k].norm() * (w0.norm() + wt.norm());
            (defect, scale)
        })
        .collect();
    let max_defect = per.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_scale = per.iter().map(|p| p.1).fold(0.0, f64::max);
    let max_rel_defect = if max_defect == 0.0 { 0.0 } else { max_defect / max_scale };
    Ok(ReconstructionReport { max_defect, max_rel_defect, steps })
}

/// JSON diagnostics block emitted by the lift experiment.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LiftDiagnostics {
    pub max_offdiag: f64,
    pub max_diag_reldev: f64,
    pub max_defect: f64,
    pub steps: usize,
}

impl LiftDiagnostics {
    pub fn new(levy: &LevyReport, recon: &ReconstructionReport) -> Self {
        Self {
            max_offdiag: levy.max_offdiag,
            max_diag_reldev: levy.max_diag_reldev,
            max_defect: recon.max_rel_defect,
            steps: levy.steps,
        }
    }
}
