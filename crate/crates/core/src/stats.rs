//! Goodness-of-fit tests and replication summaries.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::special::chi2_sf;

/// Minimum expected count per χ² bin.
pub const MIN_EXPECTED: f64 = 5.0;

/// χ² goodness-of-fit p-value of `counts` against Poisson(`lambda`).
///
/// Consecutive values are pooled into bins until each bin's expected count is at
/// least [`MIN_EXPECTED`]; the last bin is open-ended.
pub fn chi2_poisson_test(counts: &[u64], lambda: f64) -> Result<f64> {
    if counts.is_empty() || !(lambda > 0.0) {
        return Err(Error::TestInvalid("need samples and a positive rate".into()));
    }
    let n = counts.len() as f64;
    // (first value, expected count); bin i spans [lo_i, lo_{i+1})
    let mut bins: Vec<(u64, f64)> = Vec::new();
    let mut lo = 0u64;
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        let pk = (k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)).exp();
        acc += n * pk;
        let tail = n * gamma_lr(k as f64 + 1.0, lambda);
        if tail < MIN_EXPECTED {
            let last = acc + tail;
            match bins.last_mut() {
                Some(prev) if last < MIN_EXPECTED => prev.1 += last,
                _ => bins.push((lo, last)),
            }
            break;
        }
        if acc >= MIN_EXPECTED {
            bins.push((lo, acc));
            lo = k + 1;
            acc = 0.0;
        }
        k += 1;
    }
    if bins.len() < 2 {
        return Err(Error::TestInvalid(format!(
            "only {} bin(s) after pooling {} samples",
            bins.len(),
            counts.len()
        )));
    }
    let mut observed = vec![0.0; bins.len()];
    for &c in counts {
        let b = bins.partition_point(|&(start, _)| start <= c) - 1;
        observed[b] += 1.0;
    }
    let stat: f64 = observed
        .iter()
        .zip(&bins)
        .map(|(o, &(_, e))| (o - e).powi(2) / e)
        .sum();
    Ok(chi2_sf(stat, (bins.len() - 1) as f64))
}

/// Kolmogorov survival function `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=10)
            .map(|j| {
                let k = (2 * j - 1) as f64;
                (-k * k * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let jf = j as f64;
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * jf * jf * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample Kolmogorov-Smirnov p-value against a continuous cdf.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TestInvalid("no samples".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(ks_pvalue(d, n))
}

/// Two-sample Kolmogorov-Smirnov p-value.
pub fn ks2_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TestInvalid("empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(ks_pvalue(d, na * nb / (na + nb)))
}

/// Jarque-Bera normality p-value.
pub fn jarque_bera(samples: &[f64]) -> Result<f64> {
    if samples.len() < 8 {
        return Err(Error::TestInvalid("need at least 8 samples".into()));
    }
    let n = samples.len() as f64;
    let m = mean(samples);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let c = x - m;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::TestInvalid("zero variance".into()));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    Ok(chi2_sf(jb, 2.0))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Boxplot of replicated estimates; whiskers extend to the extreme values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub estimates: Vec<f64>,
    pub quartiles: (f64, f64, f64),
    pub whiskers: (f64, f64),
    pub per_rep_calls: Vec<u64>,
}

pub fn boxplot_summary(estimates: &[f64], per_rep_calls: &[u64]) -> Result<ReplicationSummary> {
    if estimates.is_empty() {
        return Err(Error::TestInvalid("no estimates".into()));
    }
    let mut s = estimates.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(ReplicationSummary {
        estimates: estimates.to_vec(),
        quartiles: (
            quantile_sorted(&s, 0.25),
            quantile_sorted(&s, 0.5),
            quantile_sorted(&s, 0.75),
        ),
        whiskers: (s[0], s[s.len() - 1]),
        per_rep_calls: per_rep_calls.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson, StandardNormal};

    #[test]
    fn chi2_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pois = Poisson::new(9.21).unwrap();
        let reps = 200;
        let low = (0..reps)
            .filter(|_| {
                let c: Vec<u64> = (0..10_000).map(|_| pois.sample(&mut rng) as u64).collect();
                chi2_poisson_test(&c, 9.21).unwrap() < 0.05
            })
            .count();
        let frac = low as f64 / reps as f64;
        assert!((0.02..=0.09).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn chi2_rejects_gross_mismatch() {
        let c = vec![0u64; 1000];
        assert!(chi2_poisson_test(&c, 10.0).unwrap() < 1e-12);
    }

    #[test]
    fn chi2_too_few_samples() {
        assert!(matches!(chi2_poisson_test(&[3, 4], 4.0), Err(Error::TestInvalid(_))));
    }

    #[test]
    fn ks_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 200;
        let low = (0..reps)
            .filter(|_| {
                let x: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
                ks_test(&x, normal_cdf).unwrap() < 0.05
            })
            .count();
        let frac = low as f64 / reps as f64;
        assert!((0.02..=0.09).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn ks_detects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2000).map(|_| 0.3 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        assert!(ks_test(&x, normal_cdf).unwrap() < 1e-6);
        let y: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks2_test(&x, &y).unwrap() < 1e-4);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both series are valid near the switch point
        let l = 1.18;
        let a = kolmogorov_sf(l - 1e-9);
        let b = kolmogorov_sf(l + 1e-9);
        assert!((a - b).abs() < 1e-8);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn jarque_bera_normal_vs_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(jarque_bera(&x).unwrap() > 0.001);
        let e: Vec<f64> = (0..5000).map(|_| rand_distr::Exp1.sample(&mut rng)).collect();
        assert!(jarque_bera(&e).unwrap() < 1e-10);
    }

    #[test]
    fn boxplot_constant_and_ordered() {
        let s = boxplot_summary(&[2.0; 7], &[]).unwrap();
        assert_eq!(s.quartiles, (2.0, 2.0, 2.0));
        assert_eq!(s.whiskers, (2.0, 2.0));
        let s = boxplot_summary(&[5.0, 1.0, 3.0, 2.0, 4.0], &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(s.quartiles, (2.0, 3.0, 4.0));
        assert_eq!(s.whiskers, (1.0, 5.0));
    }
}
