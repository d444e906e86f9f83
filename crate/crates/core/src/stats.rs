//! Sample statistics shared by the diagnostics: moments with standard
//! errors, two-sample Kolmogorov-Smirnov, binned total variation, OLS
//! slopes and Halton points.

use rayon::prelude::*;
use serde::Serialize;

/// Chunk size for parallel reductions. Fixed so the summation tree does
/// not depend on the number of worker threads.
pub const REDUCE_CHUNK: usize = 4096;

/// Sum of `f(i)` over `0..n`, evaluated in parallel and reduced in index order.
pub fn ordered_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(n);
            (lo..hi).map(&f).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanEstimate { mean, se: 0.0, n };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanEstimate { mean, se: (var / n as f64).sqrt(), n }
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Mean vector and covariance matrix (row-major, unbiased) of `n` points
/// stored row-wise in `data` with `dim` columns, plus standard errors of
/// every mean and covariance entry.
#[derive(Clone, Debug, Serialize)]
pub struct MomentSummary {
    pub dim: usize,
    pub n: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub cov: Vec<f64>,
    pub cov_se: Vec<f64>,
}

pub fn moment_summary(data: &[f64], dim: usize) -> MomentSummary {
    let n = data.len() / dim.max(1);
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut cov = vec![0.0; dim * dim];
    let mut prod_sq = vec![0.0; dim * dim];
    for row in data.chunks_exact(dim) {
        for i in 0..dim {
            for j in 0..dim {
                let p = (row[i] - mean[i]) * (row[j] - mean[j]);
                cov[i * dim + j] += p;
                prod_sq[i * dim + j] += p * p;
            }
        }
    }
    let denom = (nf - 1.0).max(1.0);
    let mut cov_se = vec![0.0; dim * dim];
    for k in 0..dim * dim {
        let m_prod = cov[k] / nf;
        let var_prod = (prod_sq[k] / nf - m_prod * m_prod).max(0.0);
        cov[k] /= denom;
        cov_se[k] = (var_prod / nf).sqrt();
    }
    let mean_se = (0..dim).map(|i| (cov[i * dim + i] / nf).sqrt()).collect();
    MomentSummary { dim, n, mean, mean_se, cov, cov_se }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample rejection threshold c(alpha) * sqrt((n+m)/(nm)),
/// c(alpha) = sqrt(-ln(alpha/2)/2).
pub fn ks_threshold(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Histogram total variation in the L1 convention (range [0, 2]).
#[derive(Clone, Debug, Serialize)]
pub struct BinnedTv {
    pub tv: f64,
    pub bins: usize,
    pub bin_width: f64,
    /// Approximate mean and standard deviation of the estimator when both
    /// samples come from the same law (multinomial noise only).
    pub null_mean: f64,
    pub null_sd: f64,
}

impl BinnedTv {
    /// Rejection level for the null of equal laws: null mean plus four null sd.
    pub fn threshold(&self) -> f64 {
        self.null_mean + 4.0 * self.null_sd
    }
}

/// Freedman-Diaconis width 2 IQR n^{-1/3} on an already sorted sample.
pub fn freedman_diaconis_width(sorted_pool: &[f64]) -> f64 {
    let n = sorted_pool.len();
    if n < 2 {
        return 1.0;
    }
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted_pool[lo] * (1.0 - w) + sorted_pool[hi] * w
    };
    let iqr = q(0.75) - q(0.25);
    let mut width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) {
        let span = sorted_pool[n - 1] - sorted_pool[0];
        width = if span > 0.0 { span / (n as f64).sqrt() } else { 1.0 };
    }
    width
}

/// Binned TV between two samples on a common grid with Freedman-Diaconis
/// width computed on the pooled sample.
pub fn binned_tv(a: &[f64], b: &[f64]) -> BinnedTv {
    if a.is_empty() || b.is_empty() {
        return BinnedTv { tv: 0.0, bins: 0, bin_width: 0.0, null_mean: 0.0, null_sd: 0.0 };
    }
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    pool.sort_by(f64::total_cmp);
    let width = freedman_diaconis_width(&pool);
    let lo = pool[0];
    let hi = pool[pool.len() - 1];
    let bins = (((hi - lo) / width).floor() as usize + 1).max(1);
    let idx = |x: f64| (((x - lo) / width).floor() as usize).min(bins - 1);
    let mut ca = vec![0usize; bins];
    let mut cb = vec![0usize; bins];
    a.iter().for_each(|&x| ca[idx(x)] += 1);
    b.iter().for_each(|&x| cb[idx(x)] += 1);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let inv = 1.0 / na + 1.0 / nb;
    let mut tv = 0.0;
    let mut null_mean = 0.0;
    let mut null_var = 0.0;
    let half_normal_mean = (2.0 / std::f64::consts::PI).sqrt();
    for k in 0..bins {
        let pa = ca[k] as f64 / na;
        let pb = cb[k] as f64 / nb;
        tv += (pa - pb).abs();
        let p = (ca[k] + cb[k]) as f64 / (na + nb);
        let s2 = p * (1.0 - p) * inv;
        null_mean += half_normal_mean * s2.sqrt();
        null_var += (1.0 - 2.0 / std::f64::consts::PI) * s2;
    }
    BinnedTv { tv, bins, bin_width: width, null_mean, null_sd: null_var.sqrt() }
}

/// Least-squares slope of y on x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Coordinate `axis` of the Halton point with the given index, in [0, 1).
pub fn halton(index: u64, axis: usize) -> f64 {
    let base = PRIMES[axis % PRIMES.len()];
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}
