//! Thin wrappers over `statrs` special functions.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use statrs::function::{beta, erf, gamma};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x * FRAC_1_SQRT_2)
}

/// `1 - Φ(x)` without cancellation in the upper tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile of order `p`.
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Two-sided critical value `Z_{1-α/2}`.
pub fn z_two_sided(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

/// Regularized lower incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    beta::beta_reg(a, b, x.clamp(0.0, 1.0))
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    beta::ln_beta(a, b)
}

/// Upper tail of a χ² law with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma::gamma_ur(dof / 2.0, x / 2.0)
}

/// Solves `f(x) = 0` on `[lo, hi]` by bisection, assuming a sign change.
pub fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_for_five_percent() {
        assert!((z_two_sided(0.05) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn normal_tails_are_consistent() {
        for &x in &[-3.0, -0.5, 0.0, 1.0, 4.0] {
            assert!((normal_cdf(x) + normal_sf(x) - 1.0).abs() < 1e-15);
            assert!((normal_quantile(normal_cdf(x)) - x).abs() < 1e-9);
        }
        // deep tail keeps relative precision
        assert!((normal_sf(8.0) / 6.220_960_574_271_785e-16 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chi2_sf_matches_exponential_case() {
        // χ²(2) is Exp(1/2)
        assert!((chi2_sf(3.0, 2.0) - (-1.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(0.0, 2.0, 1e-14, |x| x * x - 2.0).unwrap();
        assert!((r - SQRT_2).abs() < 1e-12);
        assert!(bisect(0.0, 1.0, 1e-9, |x| x + 1.0).is_none());
    }
}
