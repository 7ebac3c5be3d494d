//! Ensemble statistics: batch-means errors, cumulants, normality, regression
//! and a two-sample energy-distance test.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};
use crate::rng::{stream, tag};

/// Default number of batches for standard errors.
pub const DEFAULT_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Signed distance to `target` in standard errors. A zero error with an
    /// exact match gives zero.
    pub fn z(&self, target: f64) -> f64 {
        let d = self.value - target;
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }
}

/// Full-sample statistic with a standard error from the spread of the same
/// statistic over `n_batches` contiguous batches.
pub fn batch_statistic<T, F>(data: &[T], n_batches: usize, stat: F) -> Result<Estimate>
where
    F: Fn(&[T]) -> f64,
{
    if n_batches < 2 {
        return invalid("at least two batches are required");
    }
    if data.len() < 2 * n_batches {
        return invalid(format!("{} samples are too few for {n_batches} batches", data.len()));
    }
    let size = data.len() / n_batches;
    let values: Vec<f64> = (0..n_batches).map(|b| stat(&data[b * size..(b + 1) * size])).collect();
    let m = mean(&values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok(Estimate {
        value: stat(data),
        stderr: (var / n_batches as f64).sqrt(),
    })
}

pub fn batch_mean(data: &[f64], n_batches: usize) -> Result<Estimate> {
    batch_statistic(data, n_batches, mean)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    k_statistics(x)[1]
}

/// Unbiased covariance of paired samples.
pub fn covariance(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// Fisher's k-statistics `[k1, k2, k3, k4]`, unbiased for the first four
/// cumulants.
pub fn k_statistics(x: &[f64]) -> [f64; 4] {
    let n = x.len() as f64;
    let m = mean(x);
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    let (m2, m3, m4) = (s2 / n, s3 / n, s4 / n);
    let k2 = n / (n - 1.0) * m2;
    let k3 = n * n / ((n - 1.0) * (n - 2.0)) * m3;
    let k4 = n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2) / ((n - 1.0) * (n - 2.0) * (n - 3.0));
    [m, k2, k3, k4]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalityTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Jarque–Bera test of skewness and excess kurtosis.
pub fn jarque_bera(x: &[f64]) -> Result<NormalityTest> {
    if x.len() < 8 {
        return invalid("Jarque-Bera needs at least 8 samples");
    }
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return invalid("degenerate sample");
    }
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let statistic = n / 6.0 * (skew * skew + kurt * kurt / 4.0);
    let chi = ChiSquared::new(2.0).expect("two degrees of freedom");
    Ok(NormalityTest {
        statistic,
        p_value: 1.0 - chi.cdf(statistic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares `y = a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("linear fit needs two or more paired points");
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("abscissae are all equal");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Log-log slope of `y` against `x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return invalid("log-log fit needs positive data");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// `sum_{i<j} |z_i - z_j|` for sorted input.
fn pair_distance_sum(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * i as f64 - n + 1.0) * v)
        .sum()
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` of two one-dimensional
/// samples, in `O(n log n)`.
pub fn energy_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return invalid("energy distance needs two nonempty samples");
    }
    let sx = pair_distance_sum(&sorted(x));
    let sy = pair_distance_sum(&sorted(y));
    let mut all = x.to_vec();
    all.extend_from_slice(y);
    let cross = pair_distance_sum(&sorted(&all)) - sx - sy;
    let (n, m) = (x.len() as f64, y.len() as f64);
    Ok(2.0 * cross / (n * m) - 2.0 * sx / (n * n) - 2.0 * sy / (m * m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

/// Permutation p-value of the energy distance, with the usual `+1`
/// correction so the p-value is never zero.
pub fn energy_permutation_test(x: &[f64], y: &[f64], n_permutations: usize, seed: u64) -> Result<PermutationTest> {
    let statistic = energy_distance(x, y)?;
    let mut pooled = x.to_vec();
    pooled.extend_from_slice(y);
    let mut rng = stream(&[tag::PERMUTATION, seed]);
    let mut exceed = 0usize;
    for _ in 0..n_permutations {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(x.len());
        if energy_distance(a, b)? >= statistic {
            exceed += 1;
        }
    }
    Ok(PermutationTest {
        statistic,
        p_value: (exceed + 1) as f64 / (n_permutations + 1) as f64,
        n_permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;
    use proptest::prelude::*;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut r = stream(&[seed]);
        (0..n).map(|_| normal(&mut r)).collect()
    }

    #[test]
    fn k_statistics_of_small_sample() {
        // Reference values from the closed-form unbiased estimators.
        let x = [1.0, 2.0, 4.0, 7.0, 11.0];
        let k = k_statistics(&x);
        assert!((k[0] - 5.0).abs() < 1e-12);
        assert!((k[1] - 16.5).abs() < 1e-12);
        let n = 5.0;
        let m3: f64 = x.iter().map(|v| (v - 5.0f64).powi(3)).sum::<f64>() / n;
        assert!((k[2] - n * n * m3 / (4.0 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn normal_sample_cumulants() {
        let x = normals(40_000, 1);
        let k = k_statistics(&x);
        assert!((k[1] - 1.0).abs() < 0.03);
        assert!(k[2].abs() < 0.06);
        assert!(k[3].abs() < 0.15);
        assert!(jarque_bera(&x).unwrap().p_value > 0.001);
    }

    #[test]
    fn jarque_bera_rejects_uniform() {
        let mut r = stream(&[2]);
        use rand::Rng;
        let x: Vec<f64> = (0..5000).map(|_| r.random::<f64>()).collect();
        assert!(jarque_bera(&x).unwrap().p_value < 1e-6);
    }

    #[test]
    fn batch_error_matches_iid_error() {
        let x = normals(20_000, 3);
        let e = batch_mean(&x, 20).unwrap();
        let iid = (variance(&x) / x.len() as f64).sqrt();
        assert!((e.stderr / iid - 1.0).abs() < 0.5);
        assert!(batch_mean(&x[..30], 20).is_err());
    }

    #[test]
    fn exact_linear_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 3.0).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-14);
        let g = log_log_slope(&[1.0, 10.0, 100.0], &[1.0, 0.1, 0.01]).unwrap();
        assert!((g.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_distance_brute_force() {
        let x = [0.1, -1.0, 2.5, 0.7];
        let y = [1.0, 3.0, -0.5];
        let e = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for u in a {
                for v in b {
                    s += (u - v).abs();
                }
            }
            s / (a.len() * b.len()) as f64
        };
        let direct = 2.0 * e(&x, &y) - e(&x, &x) - e(&y, &y);
        assert!((energy_distance(&x, &y).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn permutation_test_power_and_size() {
        let x = normals(300, 4);
        let y = normals(300, 5);
        let same = energy_permutation_test(&x, &y, 199, 0).unwrap();
        assert!(same.p_value > 0.01);
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.5).collect();
        let diff = energy_permutation_test(&x, &shifted, 199, 0).unwrap();
        assert!(diff.p_value <= 0.01);
        assert_eq!(same, energy_permutation_test(&x, &y, 199, 0).unwrap());
    }

    proptest! {
        #[test]
        fn energy_distance_nonnegative_and_symmetric(
            x in prop::collection::vec(-10.0f64..10.0, 1..30),
            y in prop::collection::vec(-10.0f64..10.0, 1..30),
        ) {
            let a = energy_distance(&x, &y).unwrap();
            let b = energy_distance(&y, &x).unwrap();
            prop_assert!(a >= -1e-9);
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(energy_distance(&x, &x).unwrap().abs() < 1e-9);
        }

        #[test]
        fn variance_shift_invariant(x in prop::collection::vec(-5.0f64..5.0, 3..40), c in -100.0f64..100.0) {
            let y: Vec<f64> = x.iter().map(|v| v + c).collect();
            prop_assert!((variance(&x) - variance(&y)).abs() < 1e-8);
        }
    }
}
