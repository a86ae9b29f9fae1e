//! Adaptive Gauss–Kronrod (7–15) quadrature on finite intervals.
//!
//! Globally adaptive: panels are kept in a max-heap keyed by their error
//! estimate |K15 - G7| and the worst panel is bisected until the summed error
//! meets the tolerance or the panel budget runs out.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod nodes (positive half) and weights; the embedded 7-point
// Gauss rule uses the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One G7/K15 evaluation on [a, b]: returns (kronrod value, error estimate).
fn qk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut result_gauss = WG[3] * fc;
    let mut result_kronrod = WGK[7] * fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let fsum = f(center - x) + f(center + x);
        result_kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            result_gauss += WG[j / 2] * fsum;
        }
    }
    let value = result_kronrod * half;
    let err = ((result_kronrod - result_gauss) * half).abs();
    (value, err)
}

#[derive(Clone, Copy, Debug)]
pub struct QuadParams {
    pub tol: f64,
    pub max_panels: usize,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams { tol: 1e-10, max_panels: 4000 }
    }
}

impl QuadParams {
    pub fn with_tol(tol: f64) -> Self {
        QuadParams { tol, ..Default::default() }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Integrate f over [a, b] to absolute tolerance `params.tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, params: &QuadParams) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let mut heap = BinaryHeap::new();
    let (v, e) = qk15(&f, a, b);
    heap.push(Panel { a, b, value: v, err: e });
    let mut total_err = e;
    let mut panels = 1usize;
    while total_err > params.tol {
        if panels >= params.max_panels {
            return Err(Error::QuadratureFailure { err: total_err, tol: params.tol });
        }
        let worst = heap.pop().expect("heap nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval at floating-point resolution; accept as converged
            total_err -= worst.err;
            heap.push(Panel { err: 0.0, ..worst });
            continue;
        }
        let (v1, e1) = qk15(&f, worst.a, mid);
        let (v2, e2) = qk15(&f, mid, worst.b);
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
        panels += 1;
    }
    let value = heap.iter().map(|p| p.value).sum();
    Ok((value, total_err))
}

/// Fixed-panel composite Simpson rule (for smooth tabulation tasks where a
/// panel count is part of the contract).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels.max(1);
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_exact() {
        let p = QuadParams::with_tol(1e-12);
        let (v, _) = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, &p).unwrap();
        // antiderivative x^4/4 - x^2 + x
        assert_abs_diff_eq!(v, (81.0 / 4.0 - 9.0 + 3.0) - (0.25 - 1.0 - 1.0), epsilon = 1e-10);
    }

    #[test]
    fn oscillatory() {
        let p = QuadParams::with_tol(1e-10);
        let (v, _) = integrate(|x| (50.0 * x).cos(), 0.0, 1.0, &p).unwrap();
        assert_abs_diff_eq!(v, 50.0f64.sin() / 50.0, epsilon = 1e-9);
    }

    #[test]
    fn near_singular_peak() {
        // 1/(x^2 + 1e-6) over [-1, 1] = 2*atan(1e3)/1e-3
        let p = QuadParams { tol: 1e-8, max_panels: 20000 };
        let (v, _) = integrate(|x| 1.0 / (x * x + 1e-6), -1.0, 1.0, &p).unwrap();
        let exact = 2.0 * 1000.0 * (1000.0f64).atan();
        assert!((v - exact).abs() / exact < 1e-9);
    }

    #[test]
    fn budget_exhaustion_reported() {
        let p = QuadParams { tol: 1e-14, max_panels: 4 };
        let r = integrate(|x| (200.0 * x).sin().abs(), 0.0, 1.0, &p);
        assert!(matches!(r, Err(Error::QuadratureFailure { .. })));
    }

    #[test]
    fn simpson_smooth() {
        let v = simpson(|x| x.exp(), 0.0, 1.0, 200);
        assert_abs_diff_eq!(v, 1.0f64.exp() - 1.0, epsilon = 1e-10);
    }
}
