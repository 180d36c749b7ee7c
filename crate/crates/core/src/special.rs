//! Standard normal special functions, generic over [`Scalar`].

use crate::scalar::{c, Scalar};

// Chebyshev coefficients for erfc on [0, inf), mapped through t = 2/(2+z).
const ERFC_COF: [f64; 28] = [
    -1.3026537197817094,
    6.4196979235649026e-1,
    1.9476473204185836e-2,
    -9.561514786808631e-3,
    -9.46595344482036e-4,
    3.66839497852761e-4,
    4.2523324806907e-5,
    -2.0278578112534e-5,
    -1.624290004647e-6,
    1.303655835580e-6,
    1.5626441722e-8,
    -8.5238095915e-8,
    6.529054439e-9,
    5.059343495e-9,
    -9.91364156e-10,
    -2.27365122e-10,
    9.6467911e-11,
    2.394038e-12,
    -6.886027e-12,
    8.94487e-13,
    3.13092e-13,
    -1.12708e-13,
    3.81e-16,
    7.106e-15,
    -1.523e-15,
    -9.4e-17,
    1.21e-16,
    -2.8e-17,
];

fn erf_series<T: Scalar>(x: T) -> T {
    // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1)), used for |x| < 0.5
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..40 {
        let nf = T::from_usize_lossy(n);
        term = -term * x2 / nf;
        let add = term / (c::<T>(2.0) * nf + T::one());
        sum = sum + add;
        if add.abs() < T::epsilon() * sum.abs() {
            break;
        }
    }
    sum * c::<T>(2.0) / T::PI().sqrt()
}

fn erfc_cheb<T: Scalar>(z: T) -> T {
    debug_assert!(z >= T::zero());
    let t = c::<T>(2.0) / (c::<T>(2.0) + z);
    let ty = c::<T>(4.0) * t - c::<T>(2.0);
    let mut d = T::zero();
    let mut dd = T::zero();
    for &cof in ERFC_COF.iter().skip(1).rev() {
        let tmp = d;
        d = ty * d - dd + c(cof);
        dd = tmp;
    }
    t * (-z * z + c::<T>(0.5) * (c::<T>(ERFC_COF[0]) + ty * d) - dd).exp()
}

/// Complementary error function.
pub fn erfc<T: Scalar>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x.abs() < c(0.5) {
        T::one() - erf_series(x)
    } else if x > T::zero() {
        erfc_cheb(x)
    } else {
        c::<T>(2.0) - erfc_cheb(-x)
    }
}

/// Error function.
pub fn erf<T: Scalar>(x: T) -> T {
    if x.abs() < c(0.5) {
        erf_series(x)
    } else {
        T::one() - erfc(x)
    }
}

/// Standard normal density.
#[inline]
pub fn norm_pdf<T: Scalar>(z: T) -> T {
    (-c::<T>(0.5) * z * z).exp() / (c::<T>(2.0) * T::PI()).sqrt()
}

/// Log of the standard normal density.
#[inline]
pub fn norm_log_pdf<T: Scalar>(z: T) -> T {
    -c::<T>(0.5) * z * z - c::<T>(0.5) * (c::<T>(2.0) * T::PI()).ln()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn norm_cdf<T: Scalar>(z: T) -> T {
    c::<T>(0.5) * erfc(-z / T::SQRT_2())
}

/// `ln Phi(z)`, finite far into the lower tail.
pub fn norm_log_cdf<T: Scalar>(z: T) -> T {
    if z > c(-20.0) {
        return norm_cdf(z).ln();
    }
    // Asymptotic expansion of the Mills ratio.
    let z2 = z * z;
    let series = T::one() - T::one() / z2 + c::<T>(3.0) / (z2 * z2) - c::<T>(15.0) / (z2 * z2 * z2);
    norm_log_pdf(z) - (-z).ln() + series.ln()
}

const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn horner<T: Scalar>(coefs: &[f64], x: T) -> T {
    coefs.iter().fold(T::zero(), |acc, &k| acc * x + c(k))
}

/// Standard normal quantile: rational initial guess refined by Halley steps.
///
/// Returns `-inf` / `+inf` at `p = 0` / `p = 1` and NaN outside `[0, 1]`.
pub fn norm_quantile<T: Scalar>(p: T) -> T {
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    let p_low = c::<T>(0.02425);
    let mut x = if p < p_low {
        let q = (c::<T>(-2.0) * p.ln()).sqrt();
        horner(&ACKLAM_C, q) / (horner(&ACKLAM_D, q) * q + T::one())
    } else if p <= T::one() - p_low {
        let q = p - c(0.5);
        let r = q * q;
        horner(&ACKLAM_A, r) * q / (horner(&ACKLAM_B, r) * r + T::one())
    } else {
        let q = (c::<T>(-2.0) * (T::one() - p).ln()).sqrt();
        -horner(&ACKLAM_C, q) / (horner(&ACKLAM_D, q) * q + T::one())
    };
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let u = e * (c::<T>(2.0) * T::PI()).sqrt() * (x * x / c(2.0)).exp();
        let step = u / (T::one() + x * u / c(2.0));
        if !step.is_finite() {
            break;
        }
        x = x - step;
    }
    x
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    const G: f64 = 7.0;
    const COF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < c(0.5) {
        // reflection
        return (T::PI() / (T::PI() * x).sin()).abs().ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut a = c::<T>(COF[0]);
    let t = x + c(G + 0.5);
    for (i, &k) in COF.iter().enumerate().skip(1) {
        a = a + c::<T>(k) / (x + T::from_usize_lossy(i));
    }
    c::<T>(0.5) * (c::<T>(2.0) * T::PI()).ln() + (x + c(0.5)) * t.ln() - t + a.ln()
}
