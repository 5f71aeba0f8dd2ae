//! Hypothesis tests for comparing sampled policy performance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Default significance level.
pub const DEFAULT_ZETA: f64 = 0.05;

/// Sample size above which the U test uses the normal approximation.
pub const MANN_WHITNEY_EXACT_MAX: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// The first sample is smaller.
    Less,
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: Option<f64>,
    pub p_two_sided: f64,
    pub p_less: f64,
    pub p_greater: f64,
}

impl TestResult {
    pub fn p(&self, alt: Alternative) -> f64 {
        match alt {
            Alternative::TwoSided => self.p_two_sided,
            Alternative::Less => self.p_less,
            Alternative::Greater => self.p_greater,
        }
    }

    pub fn reject_at(&self, zeta: f64, alt: Alternative) -> bool {
        self.p(alt) <= zeta
    }

    fn from_tails(statistic: f64, df: Option<f64>, p_less: f64, p_greater: f64) -> Self {
        let (p_less, p_greater) = (p_less.clamp(0.0, 1.0), p_greater.clamp(0.0, 1.0));
        TestResult { statistic, df, p_two_sided: (2.0 * p_less.min(p_greater)).min(1.0), p_less, p_greater }
    }
}

/// Moments and range of a sample; `kurtosis` is excess kurtosis, both shape values are the biased estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn central_moments(x: &[f64]) -> (f64, f64, f64) {
    let m = mean(x);
    let n = x.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

pub fn summarize(x: &[f64]) -> Result<Summary> {
    need(x, 2)?;
    let (m2, m3, m4) = central_moments(x);
    Ok(Summary {
        n: x.len(),
        mean: mean(x),
        std: variance(x).sqrt(),
        min: x.iter().copied().fold(f64::INFINITY, f64::min),
        max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
        kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 },
    })
}

fn need(x: &[f64], n: usize) -> Result<()> {
    if x.len() < n {
        return Err(Error::TooFewSamples { needed: n, got: x.len() });
    }
    Ok(())
}

fn t_tails(t: f64, df: f64) -> (f64, f64) {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (dist.cdf(t), dist.sf(t))
}

fn normal_tails(z: f64) -> (f64, f64) {
    let dist = Normal::standard();
    (dist.cdf(z), dist.sf(z))
}

pub fn t_test_one_sample(x: &[f64], mu0: f64) -> Result<TestResult> {
    need(x, 2)?;
    let sd = variance(x).sqrt();
    if sd == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let n = x.len() as f64;
    let t = (mean(x) - mu0) * n.sqrt() / sd;
    let (lo, hi) = t_tails(t, n - 1.0);
    Ok(TestResult::from_tails(t, Some(n - 1.0), lo, hi))
}

/// One-sample t test of the pairwise differences `x - y` against zero.
pub fn t_test_paired(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    t_test_one_sample(&d, 0.0)
}

pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<TestResult> {
    need(x, 2)?;
    need(y, 2)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (sx, sy) = (variance(x) / nx, variance(y) / ny);
    if sx + sy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = (mean(x) - mean(y)) / (sx + sy).sqrt();
    let df = (sx + sy).powi(2) / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    let (lo, hi) = t_tails(t, df);
    Ok(TestResult::from_tails(t, Some(df), lo, hi))
}

/// Classic two-sample t test with pooled variance.
pub fn pooled_t_test(x: &[f64], y: &[f64]) -> Result<TestResult> {
    need(x, 2)?;
    need(y, 2)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let df = nx + ny - 2.0;
    let pooled = ((nx - 1.0) * variance(x) + (ny - 1.0) * variance(y)) / df;
    if pooled == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = (mean(x) - mean(y)) / (pooled * (1.0 / nx + 1.0 / ny)).sqrt();
    let (lo, hi) = t_tails(t, df);
    Ok(TestResult::from_tails(t, Some(df), lo, hi))
}

/// `U(X, Y)`: pairs with `x > y`, ties counted one half. Sorting keeps this `O((n + m) log(n + m))`.
pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    x.iter()
        .map(|&v| {
            let below = ys.partition_point(|&w| w < v);
            let upto = ys.partition_point(|&w| w <= v);
            below as f64 + 0.5 * (upto - below) as f64
        })
        .sum()
}

/// Ranks (1-based, ties averaged) and the tie term `sum(t^3 - t)`.
fn ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            r[k] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (r, ties)
}

/// Null distribution of `U` for tie-free samples of sizes `n` and `m`, as probabilities indexed by `U`.
fn exact_u_distribution(n: usize, m: usize) -> Vec<f64> {
    // counts[j][u]: arrangements of i x's and j y's with statistic u, built up over i
    let max = n * m;
    let mut prev: Vec<Vec<f64>> = (0..=m).map(|_| {
        let mut v = vec![0.0; max + 1];
        v[0] = 1.0;
        v
    }).collect();
    for i in 1..=n {
        let mut cur = vec![vec![0.0; max + 1]; m + 1];
        cur[0][0] = 1.0;
        for j in 1..=m {
            for u in 0..=i * j {
                // the largest value is either an x (beating all j y's) or a y
                let from_x = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_x + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    let counts = &prev[m];
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

/// Mann-Whitney U test. `statistic` is `min(U(X,Y), U(Y,X))`; one-sided tails refer to `X` relative to `Y`.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    need(x, 1)?;
    need(y, 1)?;
    let (n, m) = (x.len(), y.len());
    let nm = (n * m) as f64;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (r, ties) = ranks(&pooled);
    let u_x = r[..n].iter().sum::<f64>() - (n * (n + 1)) as f64 / 2.0;
    let statistic = u_x.min(nm - u_x);

    if n + m <= MANN_WHITNEY_EXACT_MAX && ties == 0.0 {
        let pmf = exact_u_distribution(n, m);
        let u = u_x.round() as usize;
        let lo: f64 = pmf[..=u].iter().sum();
        let hi: f64 = pmf[u..].iter().sum();
        return Ok(TestResult::from_tails(statistic, None, lo, hi));
    }
    let total = (n + m) as f64;
    let var = nm / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    let centre = nm / 2.0;
    let lo = normal_tails((u_x - centre + 0.5) / sd).0;
    let hi = normal_tails((u_x - centre - 0.5) / sd).1;
    Ok(TestResult::from_tails(statistic, None, lo, hi))
}

/// Normal score of the sample skewness.
fn skew_score(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (m2, m3, _) = central_moments(x);
    let g1 = m3 / m2.powf(1.5);
    let mut y = g1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let b2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (b2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    if y == 0.0 {
        y = 1.0;
    }
    let r = y / alpha;
    delta * (r + (r * r + 1.0).sqrt()).ln()
}

/// Normal score of the sample kurtosis.
fn kurtosis_score(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (m2, _, m4) = central_moments(x);
    let b2 = m4 / (m2 * m2);
    let expected = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let z = (b2 - expected) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + z * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// D'Agostino-Pearson omnibus normality test; `p_two_sided` is the chi-square(2) upper tail.
pub fn dagostino_k2(x: &[f64]) -> Result<TestResult> {
    need(x, 20)?;
    let (m2, _, _) = central_moments(x);
    if m2 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let (zs, zk) = (skew_score(x), kurtosis_score(x));
    let k2 = zs * zs + zk * zk;
    let p = ChiSquared::new(2.0).expect("two degrees of freedom").sf(k2);
    Ok(TestResult { statistic: k2, df: Some(2.0), p_two_sided: p, p_less: 1.0 - p, p_greater: p })
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    need(x, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
