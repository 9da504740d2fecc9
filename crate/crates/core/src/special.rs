//! Standard-normal CDF, quantile and density.
//!
//! The quantile uses Wichura's AS 241 (PPND16) rational approximations,
//! accurate to roughly 1e-15 relative — the finite-difference gradient tests
//! need full double precision here, which rules out the common single-float
//! approximations.

use statrs::function::erf::erfc;

pub const SQRT_2PI: f64 = 2.5066282746310002;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal density φ(x).
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
pub fn norm_inv_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0,1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

// AS 241 PPND16 coefficients (Wichura, 1988), central region.
const A: [f64; 8] = [
    3.3871328727963666080,
    133.14166789178437745,
    1971.5909503065514427,
    13731.693765509461125,
    45921.953931549871457,
    67265.770927008700853,
    33430.575583588128105,
    2509.0809287301226727,
];
const B: [f64; 8] = [
    1.0,
    42.313330701600911252,
    687.18700749205790830,
    5394.1960214247511077,
    21213.794301586595867,
    39307.895800092710610,
    28729.085735721942674,
    5226.4952788528545610,
];
// Intermediate region, 0.425 < |q|, r <= 5.
const C: [f64; 8] = [
    1.42343711074968357734,
    4.63033784615654529590,
    5.76949722146069140550,
    3.64784832476320460504,
    1.27045825245236838258,
    0.24178072517745061177,
    0.0227238449892691845833,
    7.7454501427834140764e-4,
];
const D: [f64; 8] = [
    1.0,
    2.05319162663775882187,
    1.67638483018380384940,
    0.68976733498510000455,
    0.14810397642748007459,
    0.0151986665636164571966,
    5.475938084995344946e-4,
    1.05075007164441684324e-9,
];
// Far tail, r > 5.
const E: [f64; 8] = [
    6.65790464350110377720,
    5.46378491116411436990,
    1.78482653991729133580,
    0.29656057182850489123,
    0.026532189526576123093,
    0.0012426609473880784386,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
];
const F: [f64; 8] = [
    1.0,
    0.59983220655588793769,
    0.13692988092273580531,
    0.0148753612908506148525,
    7.868691311456132591e-4,
    1.8463183175100546818e-5,
    1.4215117583164458887e-7,
    2.04426310338993978564e-15,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_known_values() {
        assert_eq!(norm_inv_cdf(0.5), 0.0);
        // Classic two-sided 95% point.
        assert!((norm_inv_cdf(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((norm_inv_cdf(0.025) + 1.959963984540054).abs() < 1e-12);
        assert!((norm_inv_cdf(0.8413447460685429) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_quantile_roundtrip() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let x = norm_inv_cdf(p);
            let back = norm_cdf(x);
            assert!(
                (back - p).abs() < 1e-13,
                "p={p}, x={x}, roundtrip={back}"
            );
        }
        // Deep tails.
        for &p in &[1e-12, 1e-9, 1e-6, 1.0 - 1e-6, 1.0 - 1e-9] {
            let x = norm_inv_cdf(p);
            let back = norm_cdf(x);
            assert!((back - p).abs() / p.min(1.0 - p) < 1e-8, "p={p} back={back}");
        }
    }

    #[test]
    fn pdf_is_derivative_of_cdf() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (norm_cdf(x + h) - norm_cdf(x - h)) / (2.0 * h);
            assert!((fd - norm_pdf(x)).abs() < 1e-9);
        }
    }
}
