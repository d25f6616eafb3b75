//! Scalar activations and the error-function machinery behind GELU.
//!
//! GELU is evaluated through the exact Gaussian CDF, `gelu(s) = s * Phi(s)`,
//! not the tanh shortcut. `Phi` is computed from a rational-approximation
//! `erf`/`erfc` pair (Cody's coefficients) whose absolute error is far below
//! the 1e-12 budget the rest of the crate assumes.

use std::f64::consts::PI;

const THRESH: f64 = 0.46875;
const SQRPI: f64 = 5.641_895_835_477_562_9e-1; // 1/sqrt(pi)

// erf on [0, 0.46875]
const A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];

// erfc on (0.46875, 4]
const C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];

// erfc on (4, inf)
const P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

/// Pieces shared by `erf` and `erfc`: returns `erf(x)` for `|x| <= THRESH`
/// and `erfc(|x|)` otherwise, with a flag saying which one it is.
fn erf_core(x: f64) -> (f64, bool) {
    let y = x.abs();
    if y <= THRESH {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        (x * (num + A[3]) / (den + B[3]), true)
    } else if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        // split exp(-y^2) to preserve accuracy for large y
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        ((-ysq * ysq).exp() * (-del).exp() * r, false)
    } else {
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let mut r = z * (num + P[4]) / (den + Q[4]);
        r = (SQRPI - r) / y;
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        ((-ysq * ysq).exp() * (-del).exp() * r, false)
    }
}

/// Error function, absolute error below 1e-15.
pub fn erf(x: f64) -> f64 {
    let (v, is_erf) = erf_core(x);
    if is_erf {
        v
    } else if x < 0.0 {
        v - 1.0 // -(1 - erfc(|x|))
    } else {
        1.0 - v
    }
}

/// Complementary error function `1 - erf(x)`, accurate for large positive `x`.
pub fn erfc(x: f64) -> f64 {
    let (v, is_erf) = erf_core(x);
    if is_erf {
        1.0 - v
    } else if x < 0.0 {
        2.0 - v
    } else {
        v
    }
}

/// Standard normal CDF `P(X <= s)`.
pub fn std_normal_cdf(s: f64) -> f64 {
    0.5 * erfc(-s / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(s: f64) -> f64 {
    (-0.5 * s * s).exp() / (2.0 * PI).sqrt()
}

/// `gelu(s) = s * Phi(s)` with the exact Gaussian CDF.
pub fn gelu(s: f64) -> f64 {
    s * std_normal_cdf(s)
}

/// Derivative of `gelu`: `Phi(s) + s * phi(s)`.
pub fn gelu_prime(s: f64) -> f64 {
    std_normal_cdf(s) + s * std_normal_pdf(s)
}

pub fn relu(s: f64) -> f64 {
    s.max(0.0)
}

/// ReLU derivative; the kink at 0 is assigned derivative 0.
pub fn relu_prime(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}
