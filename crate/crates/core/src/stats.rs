//! Descriptive statistics and the hypothesis tests used by the experiment
//! harness: Kolmogorov-Smirnov, Welch's t, Mann-Whitney U, rank correlation
//! and ROC AUC.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(xs), p)
}

pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    match v.len() {
        0 => f64::NAN,
        1 => v[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = h - lo as f64;
            if w == 0.0 {
                v[lo]
            } else {
                v[lo] + w * (v[hi] - v[lo])
            }
        }
    }
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    if lambda < 1.18 {
        // Small-argument series converges fast here.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let odd = (2 * k - 1) as f64;
            s += (-odd * odd * c).exp();
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-16 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Below this size of the smaller sample the two-sample KS p-value is
/// computed exactly by lattice-path counting.
const KS_EXACT_BELOW: usize = 10;

/// Two-sample Kolmogorov-Smirnov test (two-sided).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined(
            "KS test needs two nonempty samples".into(),
        ));
    }
    let sa = sorted(a);
    let sb = sorted(b);
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] <= x {
            i += 1;
        }
        while j < m && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let p = if n.min(m) < KS_EXACT_BELOW {
        ks_exact_p(n, m, d)
    } else {
        let en = ((n * m) as f64 / (n + m) as f64).sqrt();
        kolmogorov_sf((en + 0.12 + 0.11 / en) * d)
    };
    Ok(TestResult {
        statistic: d,
        p_value: p,
    })
}

/// `P(D >= d)` under the null for continuous samples of sizes `n`, `m`.
fn ks_exact_p(n: usize, m: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| (i as f64 / n as f64 - j as f64 / m as f64).abs() < d - 1e-12;
    // w[j] = fraction of lattice paths to (i, j) staying strictly inside the band.
    let mut w = vec![0.0f64; m + 1];
    for j in 0..=m {
        w[j] = if j == 0 || (w[j - 1] > 0.0 && inside(0, j)) {
            1.0
        } else {
            0.0
        };
    }
    for i in 1..=n {
        w[0] = if inside(i, 0) { w[0] } else { 0.0 };
        for j in 1..=m {
            if inside(i, j) {
                let tot = (i + j) as f64;
                w[j] = w[j] * i as f64 / tot + w[j - 1] * j as f64 / tot;
            } else {
                w[j] = 0.0;
            }
        }
    }
    (1.0 - w[m]).clamp(0.0, 1.0)
}

/// One-sample KS test against a continuous CDF; returns the asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let v = sorted(xs);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    kolmogorov_sf((en + 0.12 + 0.11 / en) * d)
}

/// Welch's unequal-variance t-test (two-sided).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Undefined(
            "Welch test needs at least two values per sample".into(),
        ));
    }
    let va = variance(a) / a.len() as f64;
    let vb = variance(b) / b.len() as f64;
    welch_from_moments(mean(a), va, a.len(), mean(b), vb, b.len())
}

/// Welch statistic from means and squared standard errors.
pub fn welch_from_moments(
    mean_a: f64,
    se2_a: f64,
    n_a: usize,
    mean_b: f64,
    se2_b: f64,
    n_b: usize,
) -> Result<TestResult> {
    let se2 = se2_a + se2_b;
    let diff = mean_a - mean_b;
    if !(se2 > 0.0) {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        return Ok(TestResult {
            statistic: t,
            p_value: p,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (se2_a * se2_a / (n_a as f64 - 1.0) + se2_b * se2_b / (n_b as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df.max(1.0))
        .map_err(|e| Error::Undefined(format!("Student t: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TestResult {
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
    })
}

fn std_normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
}

/// One-sided Mann-Whitney U test of `H1: a tends to be smaller than b`.
/// Normal approximation with tie and continuity corrections.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined(
            "Mann-Whitney needs two nonempty samples".into(),
        ));
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let r = ranks(&pooled);
    let r1: f64 = r[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    // tie correction
    let mut counts = std::collections::HashMap::<u64, f64>::new();
    for x in &pooled {
        *counts.entry(x.to_bits()).or_default() += 1.0;
    }
    let tie: f64 = counts.values().map(|t| t * t * t - t).sum();
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie / (n * (n - 1.0)));
    if !(var > 0.0) {
        return Ok(TestResult {
            statistic: u1,
            p_value: 1.0,
        });
    }
    let z = (u1 - mu + 0.5) / var.sqrt();
    Ok(TestResult {
        statistic: u1,
        p_value: std_normal_cdf(z),
    })
}

pub fn mann_whitney_greater(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_less(b, a)
}

/// Area under the ROC curve of `scores` against binary `labels`, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(
            "AUC undefined: labels contain a single class".into(),
        ));
    }
    let r = ranks(scores);
    let rank_sum: f64 = r
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantiles_interpolate() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.35) - 2.05).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // Both series are valid near the switch point.
        let l = 1.18;
        let small = {
            let c = std::f64::consts::PI.powi(2) / (8.0 * l * l);
            let s: f64 = (1..=20)
                .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
                .sum();
            1.0 - (2.0 * std::f64::consts::PI).sqrt() / l * s
        };
        assert!((small - kolmogorov_sf(l)).abs() < 1e-10);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn identical_samples_have_unit_p() {
        let xs = [0.3, 1.2, 2.2, 0.1, 5.0, 0.7, 1.1, 3.3, 2.9, 0.05, 4.4];
        let r = ks_two_sample(&xs, &xs).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let small = &xs[..4];
        assert_eq!(ks_two_sample(small, small).unwrap().p_value, 1.0);
    }

    #[test]
    fn exact_small_sample_values() {
        // Completely separated samples of size 3 and 3: D = 1, p = 2 / C(6,3) = 0.1.
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!((r.p_value - 0.1).abs() < 1e-12);
        // n = m = 5, full separation: p = 2 / C(10,5) = 2/252.
        let r = ks_two_sample(&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        assert!((r.p_value - 2.0 / 252.0).abs() < 1e-12);
    }

    #[test]
    fn ks_two_sample_null_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 1000;
        let mut rejections = 0;
        for _ in 0..trials {
            let a: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
            if ks_two_sample(&a, &b).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!((rate - 0.05).abs() <= 0.02, "rejection rate {rate}");
    }

    #[test]
    fn welch_reference_value() {
        // Reference values from scipy.stats.ttest_ind(equal_var=False).
        let a = [
            27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7,
            21.4,
        ];
        let b = [
            27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5,
            24.4,
        ];
        let r = welch_t_test(&a, &b).unwrap();
        assert!(
            (r.statistic - -2.455356).abs() < 1e-5,
            "t = {}",
            r.statistic
        );
        assert!((r.p_value - 0.021378).abs() < 1e-5, "p = {}", r.p_value);
    }

    #[test]
    fn mann_whitney_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 + 30.0).collect();
        assert!(mann_whitney_less(&a, &b).unwrap().p_value < 1e-6);
        assert!(mann_whitney_greater(&a, &b).unwrap().p_value > 0.99);
        let same = mann_whitney_less(&a, &a).unwrap().p_value;
        assert!(same > 0.4 && same < 0.6);
    }

    #[test]
    fn auc_extremes() {
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert!(roc_auc(&[0.5; 2], &[true, true]).is_err());
    }

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let x: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
    }
}
