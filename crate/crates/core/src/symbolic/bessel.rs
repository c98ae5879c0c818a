//! Bessel function of the first kind, order zero.

const SMALL_NUM: [f64; 6] = [
    57568490574.0,
    -13362590354.0,
    651619640.7,
    -11214424.18,
    77392.33017,
    -184.9052456,
];
const SMALL_DEN: [f64; 6] = [
    57568490411.0,
    1029532985.0,
    9494680.718,
    59272.64853,
    267.8532712,
    1.0,
];
const LARGE_P: [f64; 5] = [
    1.0,
    -0.1098628627e-2,
    0.2734510407e-4,
    -0.2073370639e-5,
    0.2093887211e-6,
];
const LARGE_Q: [f64; 5] = [
    -0.1562499995e-1,
    0.1430488765e-3,
    -0.6911147651e-5,
    0.7621095161e-6,
    -0.934935152e-7,
];

fn horner(coeffs: &[f64], y: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
}

/// `J0(x)`, absolute error below `1e-7` on `|x| <= 25`.
///
/// A rational approximation in `x^2` covers `|x| < 8`; beyond that the
/// Hankel asymptotic form with polynomial corrections in `(8/x)^2` is used.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        let y = x * x;
        horner(&SMALL_NUM, y) / horner(&SMALL_DEN, y)
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let xx = ax - 0.785398164;
        let p = horner(&LARGE_P, y);
        let q = horner(&LARGE_Q, y);
        (std::f64::consts::FRAC_2_PI / ax).sqrt() * (xx.cos() * p - z * xx.sin() * q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-8);
        assert!((bessel_j0(1.0) - 0.7651976865579666).abs() < 1e-7);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-7);
        assert!((bessel_j0(10.0) - -0.2459357644513483).abs() < 1e-7);
        assert_eq!(bessel_j0(-3.5), bessel_j0(3.5));
    }

    #[test]
    fn continuous_across_branch() {
        let below = bessel_j0(8.0 - 1e-12);
        let above = bessel_j0(8.0);
        assert!((below - above).abs() < 1e-7);
    }
}
