//! Estimators, power-law fits and goodness-of-fit tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("power-law fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("power-law fit needs positive data; got x = {x}, y = {y}")]
    NonPositive { x: f64, y: f64 },
    #[error("degenerate fit: all abscissae coincide")]
    Degenerate,
    #[error("mismatched input lengths {0} and {1}")]
    LengthMismatch(usize, usize),
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub method: String,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64, replicas: usize, method: &str) -> Self {
        debug_assert!(stderr >= 0.0 || stderr.is_nan());
        Self {
            value,
            stderr,
            replicas,
            method: method.to_string(),
        }
    }

    /// Sample mean with standard error `s / sqrt(m)`.
    pub fn mean_of(samples: &[f64]) -> Self {
        let m = samples.len();
        let mean = mean(samples);
        let se = if m > 1 {
            (sample_variance(samples) / m as f64).sqrt()
        } else {
            f64::NAN
        };
        Self::new(mean, se, m, "mean")
    }

    /// Mean of squares, the natural estimator of a second moment.
    pub fn second_moment_of(samples: &[f64]) -> Self {
        let sq: Vec<f64> = samples.iter().map(|v| v * v).collect();
        Self {
            method: "second-moment".into(),
            ..Self::mean_of(&sq)
        }
    }

    /// Unbiased sample variance; the error uses the fourth central moment.
    pub fn variance_of(samples: &[f64]) -> Self {
        let m = samples.len();
        let mu = mean(samples);
        let s2 = sample_variance(samples);
        let m4 = samples.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / m as f64;
        let se = ((m4 - s2 * s2 * (m as f64 - 3.0) / (m as f64 - 1.0)) / m as f64)
            .max(0.0)
            .sqrt();
        Self::new(s2, se, m, "variance")
    }

    /// `|value - target| <= k * stderr`.
    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    pub fn relative_error(&self, target: f64) -> f64 {
        ((self.value - target) / target).abs()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 {
        return f64::NAN;
    }
    let mu = mean(xs);
    xs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m as f64 - 1.0)
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len();
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (m as f64 - 1.0)
}

/// Result of a log-log regression `y = C x^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    /// `ln C`.
    pub intercept: f64,
    pub exponent_stderr: f64,
    /// Two-sided 95% interval for the exponent.
    pub ci: (f64, f64),
    pub method: String,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// Least squares on `(ln x, ln y)`.
///
/// With `weights` (inverse variances of `ln y`) the fit is weighted and the
/// interval uses the normal quantile with the known variances; without weights
/// it is ordinary least squares with a Student-t interval on `m - 2` degrees of
/// freedom.
pub fn fit_power_law(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<PowerFit, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if let Some(w) = weights {
        if w.len() != xs.len() {
            return Err(StatsError::LengthMismatch(xs.len(), w.len()));
        }
    }
    let m = xs.len();
    if m < 3 {
        return Err(StatsError::TooFewPoints(m));
    }
    for (&x, &y) in xs.iter().zip(ys) {
        if !(x > 0.0 && y > 0.0) {
            return Err(StatsError::NonPositive { x, y });
        }
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; m], |w| w.to_vec());
    let sw: f64 = w.iter().sum();
    let xbar = lx.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ybar = ly.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = lx.iter().zip(&w).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(StatsError::Degenerate);
    }
    let sxy: f64 = lx
        .iter()
        .zip(&ly)
        .zip(&w)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    let exponent = sxy / sxx;
    let intercept = ybar - exponent * xbar;
    let (se, q, method) = if weights.is_some() {
        ((1.0 / sxx).sqrt(), Z_975, "wls-known-variance")
    } else {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - exponent * x).powi(2))
            .sum();
        let dof = (m - 2) as f64;
        let se = (rss / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .expect("valid t distribution")
            .inverse_cdf(0.975);
        (se, t, "ols-student-t")
    };
    Ok(PowerFit {
        exponent,
        intercept,
        exponent_stderr: se,
        ci: (exponent - q * se, exponent + q * se),
        method: method.into(),
    })
}

/// Inverse variances of `ln y` from estimates (delta method).
pub fn log_weights(estimates: &[Estimate]) -> Vec<f64> {
    estimates
        .iter()
        .map(|e| (e.value / e.stderr).powi(2))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Default minimum sample size for [`chi_square_geometric`].
pub const CHI_SQUARE_MIN_SAMPLES: usize = 1000;

/// Upper tail of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").sf(stat)
}

/// Largest `k` such that bins `0..=k` and the tail `>= k+1` all expect at least 5 counts.
fn geometric_bins(m: usize, lambda: f64) -> Option<usize> {
    let m = m as f64;
    let mut k_max = None;
    let mut k = 0usize;
    loop {
        let bin = m * (1.0 - lambda) * lambda.powi(k as i32);
        let tail = m * lambda.powi(k as i32 + 1);
        if bin < 5.0 || tail < 5.0 {
            break;
        }
        k_max = Some(k);
        k += 1;
    }
    k_max
}

/// Chi-square goodness of fit against geometric(`lambda`), requiring 1000 samples.
pub fn chi_square_geometric(samples: &[u64], lambda: f64) -> Result<ChiSquareResult, StatsError> {
    chi_square_geometric_with_min(samples, lambda, CHI_SQUARE_MIN_SAMPLES)
}

/// As [`chi_square_geometric`] with a caller-chosen minimum sample size.
pub fn chi_square_geometric_with_min(
    samples: &[u64],
    lambda: f64,
    min_samples: usize,
) -> Result<ChiSquareResult, StatsError> {
    let m = samples.len();
    if m < min_samples.max(1) {
        return Err(StatsError::InsufficientSamples {
            needed: min_samples,
            got: m,
        });
    }
    let k_max = geometric_bins(m, lambda).ok_or(StatsError::InsufficientSamples {
        needed: (5.0 / lambda.min(1.0 - lambda)).ceil() as usize,
        got: m,
    })?;
    let mut counts = vec![0usize; k_max + 2];
    for &s in samples {
        let b = (s as usize).min(k_max + 1);
        counts[b] += 1;
    }
    let mf = m as f64;
    let mut stat = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let expected = if k <= k_max {
            mf * (1.0 - lambda) * lambda.powi(k as i32)
        } else {
            mf * lambda.powi(k_max as i32 + 1)
        };
        stat += (c as f64 - expected).powi(2) / expected;
    }
    let dof = counts.len() - 1;
    Ok(ChiSquareResult {
        statistic: stat,
        dof,
        p_value: chi_square_sf(stat, dof),
    })
}

/// Chi-square test that pairs `(a, b)` follow the product of two geometric(`lambda`) laws.
pub fn chi_square_geometric_pairs(pairs: &[(u64, u64)], lambda: f64) -> Result<ChiSquareResult, StatsError> {
    let m = pairs.len();
    // bins per coordinate chosen so that every product cell expects at least 5
    let marginal = |k: usize, k_max: usize| -> f64 {
        if k <= k_max {
            (1.0 - lambda) * lambda.powi(k as i32)
        } else {
            lambda.powi(k_max as i32 + 1)
        }
    };
    let mut k_max = None;
    for k in 0.. {
        let smallest = (0..=k + 1)
            .map(|j| marginal(j, k))
            .fold(f64::INFINITY, f64::min);
        if m as f64 * smallest * smallest < 5.0 {
            break;
        }
        k_max = Some(k);
    }
    let k_max = k_max.ok_or(StatsError::InsufficientSamples { needed: 100, got: m })?;
    let nb = k_max + 2;
    let mut counts = vec![0usize; nb * nb];
    for &(a, b) in pairs {
        let ia = (a as usize).min(k_max + 1);
        let ib = (b as usize).min(k_max + 1);
        counts[ia * nb + ib] += 1;
    }
    let mut stat = 0.0;
    for i in 0..nb {
        for j in 0..nb {
            let e = m as f64 * marginal(i, k_max) * marginal(j, k_max);
            stat += (counts[i * nb + j] as f64 - e).powi(2) / e;
        }
    }
    let dof = nb * nb - 1;
    Ok(ChiSquareResult {
        statistic: stat,
        dof,
        p_value: chi_square_sf(stat, dof),
    })
}

/// Fisher's method: `-2 sum ln p_i` against chi-square with `2k` degrees of freedom.
pub fn fisher_combine(p_values: &[f64]) -> f64 {
    let stat: f64 = p_values
        .iter()
        .map(|&p| -2.0 * p.max(f64::MIN_POSITIVE).ln())
        .sum();
    chi_square_sf(stat, 2 * p_values.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Jarque-Bera normality test.
pub fn jarque_bera(xs: &[f64]) -> NormalityResult {
    let m = xs.len() as f64;
    let mu = mean(xs);
    let m2 = xs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
    let m3 = xs.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / m;
    let m4 = xs.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / m;
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    let statistic = m / 6.0 * (skewness * skewness + excess_kurtosis * excess_kurtosis / 4.0);
    NormalityResult {
        skewness,
        excess_kurtosis,
        statistic,
        p_value: chi_square_sf(statistic, 2),
    }
}

/// One-sample Kolmogorov-Smirnov test against the uniform law on `[0, 1]`.
///
/// Returns `(D, p)` with the asymptotic Kolmogorov distribution and the
/// Stephens small-sample correction.
pub fn ks_uniform(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / m;
            let hi = (i + 1) as f64 / m - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let sq = m.sqrt();
    let lam = (sq + 0.12 + 0.11 / sq) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lam * lam).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::sample_geometric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_square_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let fit = fit_power_law(&xs, &ys, None).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!(fit.exponent_stderr < 1e-12);
    }

    #[test]
    fn noisy_square_root_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..20).map(|i| 1.2f64.powi(i)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                5.0 * x.sqrt() * (1.0 + 0.01 * z)
            })
            .collect();
        let fit = fit_power_law(&xs, &ys, None).unwrap();
        assert!((fit.exponent - 0.5).abs() < 0.02);
        assert!(fit.ci.0 < 0.5 && 0.5 < fit.ci.1);
    }

    #[test]
    fn fit_preconditions() {
        assert!(matches!(
            fit_power_law(&[1.0, 2.0], &[1.0, 2.0], None),
            Err(StatsError::TooFewPoints(2))
        ));
        assert!(matches!(
            fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0], None),
            Err(StatsError::NonPositive { .. })
        ));
    }

    #[test]
    fn weighted_fit_uses_known_variances() {
        let xs = [4.0, 8.0, 16.0];
        let ys = [1.0, 0.5, 0.25];
        let fit = fit_power_law(&xs, &ys, Some(&[100.0, 100.0, 100.0])).unwrap();
        assert!((fit.exponent + 1.0).abs() < 1e-12);
        let sxx: f64 = {
            let l: Vec<f64> = xs.iter().map(|x: &f64| x.ln()).collect();
            let m = l.iter().sum::<f64>() / 3.0;
            l.iter().map(|v| 100.0 * (v - m).powi(2)).sum()
        };
        assert!((fit.exponent_stderr - (1.0 / sxx).sqrt()).abs() < 1e-12);
    }

    fn geometric_samples(seed: u64, lambda: f64, m: usize) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| sample_geometric(&mut rng, lambda)).collect()
    }

    #[test]
    fn chi_square_p_values_are_uniform_under_the_null() {
        let ps: Vec<f64> = (0..400)
            .map(|s| chi_square_geometric(&geometric_samples(s, 0.8, 2000), 0.8).unwrap().p_value)
            .collect();
        let (_, p) = ks_uniform(&ps);
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn chi_square_has_power() {
        let s = geometric_samples(1, 0.85, 100_000);
        assert!(chi_square_geometric(&s, 0.8).unwrap().p_value < 1e-6);
        let constant = vec![3u64; 5000];
        assert!(chi_square_geometric(&constant, 0.8).unwrap().p_value < 1e-12);
    }

    #[test]
    fn chi_square_sample_size_guard() {
        assert!(matches!(
            chi_square_geometric(&[1, 2, 3], 0.5),
            Err(StatsError::InsufficientSamples { .. })
        ));
        assert!(chi_square_geometric_with_min(&geometric_samples(2, 0.5, 200), 0.5, 200).is_ok());
    }

    #[test]
    fn pair_test_accepts_independent_geometrics() {
        let a = geometric_samples(5, 0.7, 20_000);
        let b = geometric_samples(6, 0.7, 20_000);
        let pairs: Vec<(u64, u64)> = a.into_iter().zip(b).collect();
        assert!(chi_square_geometric_pairs(&pairs, 0.7).unwrap().p_value > 0.001);
        let dependent: Vec<(u64, u64)> = pairs.iter().map(|&(x, _)| (x, x)).collect();
        assert!(chi_square_geometric_pairs(&dependent, 0.7).unwrap().p_value < 1e-12);
    }

    #[test]
    fn fisher_combination() {
        assert!((fisher_combine(&[1.0]) - 1.0).abs() < 1e-12);
        // a single p-value maps to itself
        assert!((fisher_combine(&[0.3]) - 0.3).abs() < 1e-9);
        assert!(fisher_combine(&[1e-5, 0.5, 0.5]) < 0.01);
    }

    #[test]
    fn jarque_bera_detects_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal: Vec<f64> = (0..10_000).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        assert!(jarque_bera(&normal).p_value > 0.001);
        let expo: Vec<f64> = (0..10_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        assert!(jarque_bera(&expo).p_value < 1e-10);
    }

    #[test]
    fn variance_estimate_of_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..20_000)
            .map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        let v = Estimate::variance_of(&xs);
        assert!(v.within_sigmas(9.0, 4.0));
        // sd of s^2 for normals is sigma^2 sqrt(2/m)
        assert!((v.stderr / (9.0 * (2.0f64 / 20_000.0).sqrt()) - 1.0).abs() < 0.1);
    }
}
