//! Scalar helpers shared by the networks, the densities and the metrics.

use alloc::vec::Vec;

/// Transcendentals on the hot paths. With `std` these are the platform
/// implementations, which are several times faster than `libm`; results may
/// differ in the last ulp between the two builds but are fixed within one.
pub mod fm {
    #[cfg(feature = "std")]
    mod imp {
        #[inline]
        pub fn exp(x: f64) -> f64 {
            x.exp()
        }
        #[inline]
        pub fn expm1(x: f64) -> f64 {
            x.exp_m1()
        }
        #[inline]
        pub fn log(x: f64) -> f64 {
            x.ln()
        }
        #[inline]
        pub fn log1p(x: f64) -> f64 {
            x.ln_1p()
        }
    }
    #[cfg(not(feature = "std"))]
    mod imp {
        pub use libm::{exp, expm1, log, log1p};
    }
    pub use imp::*;
}

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Exponential linear unit with unit scale.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        fm::expm1(x)
    }
}

/// `ln(1 + e^x)` without overflow for large `x` or underflow to zero for
/// moderately negative `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + fm::log1p(fm::exp(-x))
    } else {
        fm::log1p(fm::exp(x))
    }
}

/// Derivative of [`softplus`], the logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fm::exp(-x))
    } else {
        let e = fm::exp(x);
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + fm::log(-fm::expm1(-y))
}

/// Log-density of `N(mean, sd²)` at `x`.
#[inline]
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    -0.5 * u * u - fm::log(sd) - HALF_LN_2PI
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    fm::exp(normal_log_pdf(x, mean, sd))
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// `ln Σ exp(v_i)`, shifted by the maximum. Empty input gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| fm::exp(v - max)).sum();
    max + fm::log(sum)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (divisor `n - 1`). `NaN` for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(values: &[f64]) -> f64 {
    libm::sqrt(sample_variance(values))
}

/// Median of a copy of `values`; `NaN` values sort last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Composite trapezoidal rule over (possibly uneven) nodes.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elu_examples() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (libm::exp(-1.0) - 1.0)).abs() < 1e-15);
        assert!((elu(-1.0) + 0.632_120_558_828_557_7).abs() < 1e-12);
    }

    #[test]
    fn elu_derivative_is_one_at_origin() {
        let h = 1e-7;
        let left = (elu(0.0) - elu(-h)) / h;
        let right = (elu(h) - elu(0.0)) / h;
        assert!((left - 1.0).abs() < 1e-6);
        assert!((right - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_examples() {
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        let tiny = softplus(-50.0);
        assert!(tiny > 0.0);
        assert!((tiny / libm::exp(-50.0) - 1.0).abs() < 1e-12);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-6, 0.01, 0.5, 1.0, 3.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn logsumexp_is_stable() {
        let v = [1234.0, 1232.0];
        let expected = 1232.0 + libm::log(libm::exp(2.0) + 1.0);
        assert!((logsumexp(&v) - expected).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn normal_log_pdf_at_mode() {
        assert!((normal_log_pdf(0.0, 0.0, 1.0) + HALF_LN_2PI).abs() < 1e-15);
        assert!((normal_log_pdf(2.0, 2.0, 0.5) - (-libm::log(0.5) - HALF_LN_2PI)).abs() < 1e-15);
    }

    #[test]
    fn cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let xs = linspace(0.0, 2.0, 7);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&xs, &ys) - 8.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn activations_are_monotone(a in -30.0f64..30.0, d in 0.0f64..5.0) {
            prop_assert!(elu(a + d) >= elu(a));
            prop_assert!(softplus(a + d) >= softplus(a));
            prop_assert!(softplus(a) > 0.0);
        }
    }
}
