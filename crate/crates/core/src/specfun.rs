//! Sine and cosine integrals Si(x), Ci(x).
//!
//! Needed for the analytic tail of Fourier inversions: integrals of
//! e^{i b theta}/theta^2 over [Theta, infinity) reduce to Si/Ci at b*Theta.
//! Power series for small arguments; for large arguments the continued
//! fraction of E1(ix) (modified Lentz), using
//! E1(ix) = -Ci(x) + i (Si(x) - pi/2) for x > 0.

use num_complex::Complex64;

const EULER_GAMMA: f64 = 0.577215664901532860606512090082;

/// Returns (Si(x), Ci(x)) for x > 0.
pub fn si_ci(x: f64) -> (f64, f64) {
    assert!(x > 0.0, "si_ci requires x > 0, got {x}");
    if x <= 2.0 {
        si_ci_series(x)
    } else {
        let e1 = e1_imag_axis(x);
        let ci = -e1.re;
        let si = std::f64::consts::FRAC_PI_2 + e1.im;
        (si, ci)
    }
}

fn si_ci_series(x: f64) -> (f64, f64) {
    // Si = sum (-1)^k x^(2k+1) / ((2k+1)(2k+1)!),  Ci = gamma + ln x + sum ...
    let x2 = x * x;
    let mut si = x;
    let mut term = x;
    let mut k = 0u32;
    loop {
        k += 1;
        let n = 2 * k + 1;
        term *= -x2 / ((n - 1) as f64 * n as f64);
        let add = term / n as f64;
        si += add;
        if add.abs() < 1e-18 * si.abs().max(1.0) {
            break;
        }
    }
    let mut ci = EULER_GAMMA + x.ln();
    let mut term = 1.0;
    let mut k = 0u32;
    loop {
        k += 1;
        let n = 2 * k;
        term *= -x2 / (((n - 1) as f64) * n as f64);
        let add = term / n as f64;
        ci += add;
        if add.abs() < 1e-18 * ci.abs().max(1.0) {
            break;
        }
    }
    (si, ci)
}

/// E1(z) for z = i x via the continued fraction
/// E1(z) = e^{-z} / (z + 1 - 1/(z + 3 - 4/(z + 5 - 9/(...)))).
fn e1_imag_axis(x: f64) -> Complex64 {
    let z = Complex64::new(0.0, x);
    let tiny = Complex64::new(1e-300, 0.0);
    let mut f = z + 1.0;
    if f.norm() < 1e-300 {
        f = tiny;
    }
    let mut c = f;
    let mut d = Complex64::new(0.0, 0.0);
    for k in 1..400 {
        let a = Complex64::new(-((k * k) as f64), 0.0);
        let b = z + (2 * k + 1) as f64;
        d = b + a * d;
        if d.norm() < 1e-300 {
            d = tiny;
        }
        c = b + a / c;
        if c.norm() < 1e-300 {
            c = tiny;
        }
        d = d.inv();
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).norm() < 1e-16 {
            break;
        }
    }
    (-z).exp() / f
}

/// The one-sided tail integral T2(b) = \int_Theta^infty e^{i b t} / t^2 dt,
/// valid for any real b.
pub fn tail_inv_square(b: f64, theta: f64) -> Complex64 {
    assert!(theta > 0.0);
    if b == 0.0 {
        return Complex64::new(1.0 / theta, 0.0);
    }
    if b < 0.0 {
        return tail_inv_square(-b, theta).conj();
    }
    // integration by parts: T2 = e^{ib Theta}/Theta + i b * T1,
    // T1 = \int_{b Theta}^infty e^{iu}/u du = -Ci(bT) + i(pi/2 - Si(bT))
    let bt = b * theta;
    let (si, ci) = si_ci(bt);
    let t1 = Complex64::new(-ci, std::f64::consts::FRAC_PI_2 - si);
    Complex64::new(0.0, bt).exp() / theta + Complex64::new(0.0, b) * t1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, QuadParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_values() {
        // Abramowitz & Stegun tabulated values
        let (si, ci) = si_ci(1.0);
        assert_abs_diff_eq!(si, 0.9460830703671830, epsilon = 1e-12);
        assert_abs_diff_eq!(ci, 0.3374039229009681, epsilon = 1e-12);
        let (si, ci) = si_ci(2.0);
        assert_abs_diff_eq!(si, 1.6054129768026948, epsilon = 1e-12);
        assert_abs_diff_eq!(ci, 0.4229808287748650, epsilon = 1e-12);
        let (si, ci) = si_ci(10.0);
        assert_abs_diff_eq!(si, 1.6583475942188740, epsilon = 1e-11);
        assert_abs_diff_eq!(ci, -0.0454564330044554, epsilon = 1e-11);
        let (si, _) = si_ci(500.0);
        assert!((si - std::f64::consts::FRAC_PI_2).abs() < 0.01);
    }

    #[test]
    fn series_and_fraction_agree_at_crossover() {
        let (s1, c1) = si_ci_series(2.0);
        let e1 = e1_imag_axis(2.0);
        let s2 = std::f64::consts::FRAC_PI_2 + e1.im;
        let c2 = -e1.re;
        assert_abs_diff_eq!(s1, s2, epsilon = 1e-13);
        assert_abs_diff_eq!(c1, c2, epsilon = 1e-13);
    }

    #[test]
    fn tail_integral_matches_quadrature() {
        // T2(b, theta) - T2(b, m) must equal the quadrature over [theta, m]
        let p = QuadParams { tol: 1e-12, max_panels: 20000 };
        for (b, theta) in [(0.7, 3.0), (-2.3, 5.0), (12.0, 2.0), (0.0, 4.0)] {
            let m = theta + 25.0;
            let window = tail_inv_square(b, theta) - tail_inv_square(b, m);
            let (re, _) =
                integrate(|u| (b * u).cos() / (u * u), theta, m, &p).unwrap();
            let (im, _) =
                integrate(|u| (b * u).sin() / (u * u), theta, m, &p).unwrap();
            assert_abs_diff_eq!(window.re, re, epsilon = 1e-10);
            assert_abs_diff_eq!(window.im, im, epsilon = 1e-10);
        }
    }
}
