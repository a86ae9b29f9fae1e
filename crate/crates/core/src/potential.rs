//! The recurrent potential kernel of the centered walk mu-bar.
//!
//! For psi in the class F(mu-bar) (transform psi_hat = J + i theta K + O(theta^2)
//! near 0, psi_hat/(1 - mu_hat) integrable away from 0):
//!
//!   A^lambda psi = c_lambda J(psi) - G^lambda * psi,  A psi = lim_{lambda -> 1}
//!
//! solves the Poisson equation mu-bar * f = f + psi, grows like
//! +-sigma^-2 J(psi) x, and for J = 0 converges to -+ sigma^-2 K(psi).
//!
//! Numerics: for J = 0 the limit is evaluated directly at lambda = 1 as a
//! singular Fourier inversion. Pairing +-theta makes the integrand
//! 2 Re(e^{i theta x} psi_hat(-theta)/(1-mu_hat)) bounded at the origin (the
//! i theta K part cancels in the real pairing), so adaptive Gauss-Kronrod
//! panels apply; the 1/theta^2 high-frequency tail is integrated analytically
//! with sine/cosine integrals. For J > 0 the lambda ladder {1 - 2^-k} is
//! extrapolated (Richardson with empirically estimated order).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ALaw, MuSpec};
use crate::quad::{integrate, QuadParams};
use crate::specfun::tail_inv_square;

// ---------------------------------------------------------------------------
// GridFn
// ---------------------------------------------------------------------------

/// A real function tabulated on a uniform grid, with optional (J, K) tags.
#[derive(Clone, Debug, Serialize)]
pub struct GridFn {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub j_tag: Option<f64>,
    pub k_tag: Option<f64>,
}

impl GridFn {
    pub fn from_fn<F: Fn(f64) -> f64>(x0: f64, dx: f64, n: usize, f: F) -> Self {
        let values = (0..n).map(|i| f(x0 + i as f64 * dx)).collect();
        GridFn { x0, dx, values, j_tag: None, k_tag: None }
    }

    /// Symmetric grid on [-xmax, xmax].
    pub fn symmetric<F: Fn(f64) -> f64>(xmax: f64, dx: f64, f: F) -> Self {
        let n = (2.0 * xmax / dx).round() as usize + 1;
        Self::from_fn(-xmax, dx, n, f)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn x_last(&self) -> f64 {
        self.x(self.len() - 1)
    }

    /// Linear interpolation; zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let t = (x - self.x0) / self.dx;
        if t < 0.0 || t > (self.len() - 1) as f64 {
            return 0.0;
        }
        let i = (t as usize).min(self.len() - 2);
        let frac = t - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        let sum: f64 = self.values.iter().sum();
        self.dx * (sum - 0.5 * (self.values[0] + self.values[self.len() - 1]))
    }

    /// Trapezoid integral of x * f(x).
    pub fn first_moment(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..self.len() {
            let w = if i == 0 || i == self.len() - 1 { 0.5 } else { 1.0 };
            sum += w * self.x(i) * self.values[i];
        }
        self.dx * sum
    }

    /// Write as CSV (x, value) with a JSON header line as a comment.
    pub fn write_csv(&self, path: &std::path::Path, header: &str) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# {header}")?;
        writeln!(f, "x,value")?;
        for i in 0..self.len() {
            writeln!(f, "{:.17e},{:.17e}", self.x(i), self.values[i])?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// psi specifications and the kernel r
// ---------------------------------------------------------------------------

/// Test functions whose transform is available.
#[derive(Clone, Debug)]
pub enum PsiSpec {
    /// sum_j c_j r(. - t_j): the workhorse family (transform proportional to
    /// (1 - mu_hat)/theta^2, so the potential integrand is exact).
    Combo(Vec<(f64, f64)>),
    /// Gaussian density with the given sigma (J = 1, K = 0).
    Gauss { sigma: f64 },
    /// Tabulated function; transform by numeric quadrature over the grid.
    Grid(GridFn),
}

/// psi = r.
pub fn psi_r() -> PsiSpec {
    PsiSpec::Combo(vec![(1.0, 0.0)])
}

/// psi = r(.) - r(. - c).
pub fn psi_rshift(c: f64) -> PsiSpec {
    PsiSpec::Combo(vec![(1.0, 0.0), (-1.0, c)])
}

impl PsiSpec {
    pub fn eval(&self, spec: &MuSpec, x: f64) -> f64 {
        match self {
            PsiSpec::Combo(terms) => {
                terms.iter().map(|(c, t)| c * spec.a_law.r_fn(x - t)).sum()
            }
            PsiSpec::Gauss { sigma } => {
                (-0.5 * (x / sigma).powi(2)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            PsiSpec::Grid(g) => g.value_at(x),
        }
    }

    /// psi_hat(-theta) = integral of e^{-i theta x} psi(x) dx.
    pub fn hat_neg(&self, spec: &MuSpec, theta: f64) -> Complex64 {
        match self {
            PsiSpec::Combo(terms) => {
                let shift: Complex64 = terms
                    .iter()
                    .map(|(c, t)| Complex64::new(0.0, -theta * t).exp() * *c)
                    .sum();
                r_hat_neg(spec, theta) * shift
            }
            PsiSpec::Gauss { sigma } => {
                Complex64::new((-0.5 * (sigma * theta).powi(2)).exp(), 0.0)
            }
            PsiSpec::Grid(g) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..g.len() {
                    let w = if i == 0 || i == g.len() - 1 { 0.5 } else { 1.0 };
                    acc += Complex64::new(0.0, -theta * g.x(i)).exp() * (w * g.values[i]);
                }
                acc * g.dx
            }
        }
    }
}

/// r_hat(-theta) = 2 (1 - mu_hat(-theta)) / theta^2 (exact; the constant 2
/// is pinned by the triangle-function case of the two-point family). At
/// theta = 0 this is sigma^2.
pub fn r_hat_neg(spec: &MuSpec, theta: f64) -> Complex64 {
    if theta.abs() < 1e-12 {
        return Complex64::new(
            spec.sigma2(),
            -theta * spec.a_law.r_first_moment(),
        );
    }
    spec.a_law.one_minus_mu_hat(-theta) * (2.0 / (theta * theta))
}

// ---------------------------------------------------------------------------
// Class certification
// ---------------------------------------------------------------------------

/// High-frequency model of psi_hat(-theta)/(1 - mu_hat) beyond theta_max.
#[derive(Clone, Debug)]
pub enum TailModel {
    /// 2 sum_j c_j e^{-i theta t_j} / theta^2 (exact for Combo psi at
    /// lambda = 1; for the lambda path valid once mu_hat(theta) ~ 0).
    ComboInvSq(Vec<(f64, f64)>),
    /// |integrand| below `bound` beyond theta_max; the tail is dropped.
    Negligible { bound: f64 },
}

#[derive(Clone, Debug)]
pub struct FClassCert {
    pub psi: PsiSpec,
    pub j: f64,
    pub k: f64,
    /// Split radius: |1 - mu_hat - sigma^2 theta^2/2| < 1e-3 of the quadratic
    /// term inside [-a, a].
    pub a_split: f64,
    pub theta_max: f64,
    /// Certified numeric bound of the off-origin integrability condition:
    /// integral of |psi_hat(-theta)/(1-mu_hat)| over a_split < |theta| < theta_max
    /// plus the analytic tail bound.
    pub offorigin_integral: f64,
    pub tail: TailModel,
    pub lattice_span: f64,
}

fn split_radius(spec: &MuSpec) -> f64 {
    let sigma2 = spec.sigma2();
    let mut a = 1.0;
    for _ in 0..40 {
        let quad = 0.5 * sigma2 * a * a;
        let dev = (spec.a_law.one_minus_mu_hat(a).re - quad).abs()
            + spec.a_law.one_minus_mu_hat(a).im.abs();
        if dev <= 1e-3 * quad {
            return a;
        }
        a *= 0.5;
    }
    a
}

fn theta_cutoff(spec: &MuSpec) -> f64 {
    match spec.a_law {
        ALaw::TwoPoint { .. } => 40.0,
        ALaw::Lognormal { s } => (16.0 / s).max(16.0),
        ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
            200.0 / lambda_plus.min(lambda_minus).min(1.0)
        }
        ALaw::ConstA { .. } => 40.0,
    }
}

/// Verify the two F(mu-bar) conditions numerically and extract (J, K).
pub fn certify_f(spec: &MuSpec, psi: &PsiSpec) -> Result<FClassCert> {
    let sigma2 = spec.sigma2();
    let p = spec.lattice_span();
    let (j, k) = match psi {
        PsiSpec::Combo(terms) => {
            let kr = spec.a_law.r_first_moment();
            let j = sigma2 * terms.iter().map(|(c, _)| c).sum::<f64>();
            let k = terms.iter().map(|(c, t)| c * (kr + t * sigma2)).sum();
            (j, k)
        }
        PsiSpec::Gauss { .. } => (1.0, 0.0),
        PsiSpec::Grid(g) => (g.integral(), g.first_moment()),
    };

    // Lattice condition: psi_hat must vanish at the zeros of 1 - mu_hat
    // (theta = 2 pi k / p). Combo psi vanishes there to second order by
    // construction; anything else must demonstrate it.
    if p > 0.0 {
        if let PsiSpec::Combo(_) = psi {
            // exact: the r_hat factor carries (1 - mu_hat) itself
        } else {
            let scale = psi.hat_neg(spec, 0.0).norm().max(1.0);
            for kk in 1..=5 {
                let theta0 = 2.0 * std::f64::consts::PI * kk as f64 / p;
                let v = psi.hat_neg(spec, theta0).norm();
                if v > 1e-10 * scale {
                    return Err(Error::LatticeZeroMismatch { theta: theta0, value: v });
                }
            }
        }
    }

    let a_split = split_radius(spec);
    let theta_max = theta_cutoff(spec);

    // Off-origin integrability: numeric integral of the modulus plus an
    // analytic tail bound.
    let qp = QuadParams { tol: 1e-6, max_panels: 40_000 };
    let modulus = |theta: f64| -> f64 {
        match psi {
            PsiSpec::Combo(terms) => {
                let s: Complex64 = terms
                    .iter()
                    .map(|(c, t)| Complex64::new(0.0, -theta * t).exp() * *c)
                    .sum();
                2.0 * s.norm() / (theta * theta)
            }
            _ => {
                let denom = spec.a_law.one_minus_mu_hat(theta).norm();
                psi.hat_neg(spec, theta).norm() / denom
            }
        }
    };
    let (body, _) = integrate(modulus, a_split, theta_max, &qp)
        .map_err(|_| Error::NotInClass("off-origin modulus integral did not converge".into()))?;
    let (tail, tail_bound) = match psi {
        PsiSpec::Combo(terms) => {
            let csum: f64 = terms.iter().map(|(c, _)| c.abs()).sum();
            (TailModel::ComboInvSq(terms.clone()), 2.0 * csum / theta_max)
        }
        PsiSpec::Gauss { sigma } => {
            let denom = if p > 0.0 {
                // unreachable: lattice Gauss was rejected above
                1.0
            } else {
                spec.a_law.one_minus_mu_hat(theta_max).norm().max(1e-3)
            };
            let b = (-0.5 * (sigma * theta_max).powi(2)).exp() / (sigma * denom);
            (TailModel::Negligible { bound: b }, b)
        }
        PsiSpec::Grid(g) => {
            // piecewise-linear tabulation: |psi_hat| <= c_pl / theta^2 with
            // c_pl = total curvature mass / dx
            let mut curve = 0.0;
            for i in 1..g.len().saturating_sub(1) {
                curve += (g.values[i + 1] - 2.0 * g.values[i] + g.values[i - 1]).abs();
            }
            let c_pl = curve / g.dx + g.values.first().copied().unwrap_or(0.0).abs()
                + g.values.last().copied().unwrap_or(0.0).abs();
            let b = c_pl / theta_max;
            (TailModel::Negligible { bound: b }, b)
        }
    };
    let total = body + tail_bound;
    if !total.is_finite() {
        return Err(Error::NotInClass("off-origin integral diverges".into()));
    }
    Ok(FClassCert {
        psi: psi.clone(),
        j,
        k,
        a_split,
        theta_max,
        offorigin_integral: total,
        tail,
        lattice_span: p,
    })
}

// ---------------------------------------------------------------------------
// The potential A psi
// ---------------------------------------------------------------------------

/// Numerical controls for the potential evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PotentialParams {
    pub tol: f64,
    pub max_panels: usize,
}

impl Default for PotentialParams {
    fn default() -> Self {
        PotentialParams { tol: 1e-6, max_panels: 60_000 }
    }
}

/// The paired central integrand 2 Re(e^{i theta x} h(theta)) for the J = 0
/// direct (lambda = 1) evaluation.
fn central_integrand_j0(spec: &MuSpec, cert: &FClassCert, x: f64, theta: f64) -> f64 {
    let (h_re, h_im) = match &cert.psi {
        PsiSpec::Combo(terms) => {
            // h = [2 sum c_j e^{-i theta t_j} / theta^2] * ratio where
            // ratio = (1 - mu_hat(-theta))/(1 - mu_hat(theta)) has modulus 1
            // (identically 1 for symmetric mu-bar). The bracket is evaluated
            // in the subtracted form when sum c_j = 0 so theta -> 0 is stable.
            let csum: f64 = terms.iter().map(|(c, _)| c).sum();
            let inv_t2 = 1.0 / (theta * theta);
            let mut re = 0.0;
            let mut im = 0.0;
            if csum.abs() < 1e-14 {
                for (c, t) in terms {
                    let s = (0.5 * theta * t).sin();
                    re += c * (-2.0 * s * s); // cos(theta t) - 1
                    im += c * -(theta * t).sin();
                }
            } else {
                for (c, t) in terms {
                    re += c * (theta * t).cos();
                    im += c * -(theta * t).sin();
                }
            }
            let base = Complex64::new(2.0 * re * inv_t2, 2.0 * im * inv_t2);
            let h = if spec.a_law.is_symmetric() {
                base
            } else {
                base * (spec.a_law.one_minus_mu_hat(-theta)
                    / spec.a_law.one_minus_mu_hat(theta))
            };
            (h.re, h.im)
        }
        _ => {
            // h = (psi_hat(-theta) - J g_hat)/(1 - mu_hat); the certified J
            // subtraction keeps the real part bounded at the origin
            let g_hat = (-0.5 * theta * theta).exp();
            let num = cert.psi.hat_neg(spec, theta) - Complex64::new(cert.j * g_hat, 0.0);
            let h = num / spec.a_law.one_minus_mu_hat(theta);
            (h.re, h.im)
        }
    };
    let (s, c) = (theta * x).sin_cos();
    2.0 * (c * h_re - s * h_im)
}

/// Analytic tail contribution of integral over |theta| > theta_max of
/// e^{i theta x} * 2 sum c_j e^{-i theta t_j}/theta^2.
fn combo_tail_integral(terms: &[(f64, f64)], x: f64, theta_max: f64) -> f64 {
    let mut acc = 0.0;
    for (c, t) in terms {
        acc += 2.0 * c * 2.0 * tail_inv_square(x - t, theta_max).re;
    }
    acc
}

/// A psi(x) for a certified psi with J(psi) = 0: direct lambda = 1 inversion
/// -(1/2pi) integral e^{i theta x} psi_hat(-theta)/(1 - mu_hat) d theta.
fn a_psi_j0(spec: &MuSpec, cert: &FClassCert, x: f64, qp: &QuadParams) -> Result<f64> {
    let (central, _) = integrate(
        |theta| central_integrand_j0(spec, cert, x, theta),
        0.0,
        cert.theta_max,
        qp,
    )?;
    let tail = match &cert.tail {
        TailModel::ComboInvSq(terms) => combo_tail_integral(terms, x, cert.theta_max),
        TailModel::Negligible { bound } => {
            if *bound > qp.tol * 10.0 {
                return Err(Error::NotInClass(format!(
                    "uncertified high-frequency tail (bound {bound:e})"
                )));
            }
            0.0
        }
    };
    Ok(-(central + tail) / (2.0 * std::f64::consts::PI))
}

/// A^lambda psi(x) = (1/2pi) integral [J g_hat - e^{i theta x} psi_hat(-theta)]
/// / (1 - lambda mu_hat) d theta with reference g = standard Gaussian density.
pub fn a_lambda_psi(
    spec: &MuSpec,
    cert: &FClassCert,
    x: f64,
    lambda: f64,
    params: &PotentialParams,
) -> Result<f64> {
    if cert.lattice_span > 0.0 && cert.j.abs() > 1e-9 {
        return Err(Error::UnsupportedLattice(
            "the lambda ladder needs mu_hat -> 0 at high frequency (aperiodic families only)"
                .into(),
        ));
    }
    let qp = QuadParams { tol: params.tol * 0.1, max_panels: params.max_panels };
    let integrand = |theta: f64| -> f64 {
        let g_hat = (-0.5 * theta * theta).exp();
        let num = Complex64::new(cert.j * g_hat, 0.0)
            - Complex64::new(0.0, theta * x).exp() * cert.psi.hat_neg(spec, theta);
        let denom = Complex64::new(1.0, 0.0) - spec.a_law.mu_hat(theta) * lambda;
        2.0 * (num / denom).re
    };
    let (central, _) = integrate(integrand, 0.0, cert.theta_max, &qp)?;
    let tail = match &cert.tail {
        TailModel::ComboInvSq(terms) => -combo_tail_integral(terms, x, cert.theta_max),
        TailModel::Negligible { bound } => {
            if *bound > params.tol * 10.0 {
                return Err(Error::NotInClass(format!(
                    "uncertified high-frequency tail (bound {bound:e})"
                )));
            }
            0.0
        }
    };
    Ok((central + tail) / (2.0 * std::f64::consts::PI))
}

/// Richardson (Neville) extrapolation of the lambda ladder a_k = A^{lambda_k}
/// psi(x), lambda_k = 1 - 2^-k. The leading error scale is the resolvent
/// decay kappa = sqrt(2(1 - lambda))/sigma, which halves every other rung;
/// successive tableau columns cancel powers kappa^j (node ratio sqrt(2)).
/// Returns (limit, empirical order, error estimate).
fn richardson(a: &[f64]) -> Result<(f64, f64, f64)> {
    assert!(a.len() >= 4);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let last_diff = (a[a.len() - 1] - a[a.len() - 2]).abs();
    if last_diff < 1e-12 * scale {
        return Ok((a[a.len() - 1], f64::INFINITY, last_diff));
    }
    // empirical order from the first-column difference contraction
    let n = a.len();
    let mut ratios = Vec::new();
    for i in n - 3..n - 1 {
        let d0 = a[i] - a[i - 1];
        let d1 = a[i + 1] - a[i];
        if d1.abs() > 1e-300 {
            ratios.push(d0 / d1);
        }
    }
    let order = if ratios.is_empty() {
        f64::NAN
    } else {
        (ratios.iter().sum::<f64>() / ratios.len() as f64).abs().log2()
    };
    // Neville tableau toward kappa = 0; track the diagonal
    let mut row = a.to_vec();
    let mut diag = vec![row[row.len() - 1]];
    for j in 1..n {
        let fac = 2.0f64.powf(j as f64 / 2.0) - 1.0;
        let mut next = Vec::with_capacity(row.len() - 1);
        for m in 1..row.len() {
            next.push(row[m] + (row[m] - row[m - 1]) / fac);
        }
        row = next;
        diag.push(row[row.len() - 1]);
    }
    let value = *diag.last().unwrap();
    if !value.is_finite() {
        return Err(Error::ExtrapolationDivergence("non-finite extrapolant".into()));
    }
    // the diagonal increments must settle; if the last step grew relative to
    // its predecessors the ladder is not converging
    let d_last = (diag[n - 1] - diag[n - 2]).abs();
    let d_prev = (diag[n - 2] - diag[n - 3]).abs();
    if d_last > 2.0 * d_prev && d_last > 1e-8 * scale {
        return Err(Error::ExtrapolationDivergence(format!(
            "tableau diagonal not settling (last increments {d_prev:e}, {d_last:e})"
        )));
    }
    // the diagonal contracts roughly geometrically; bound the remaining sum
    let err = if d_prev > d_last && d_last > 0.0 {
        let r = d_last / d_prev;
        d_last * r / (1.0 - r)
    } else {
        d_last
    };
    Ok((value, order, err))
}

/// Diagnostics of a potential evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct PotentialDiagnostics {
    /// Empirical lambda-convergence order (J > 0 path only).
    pub order: Option<f64>,
    pub max_extrapolation_err: f64,
}

/// Evaluate A psi on the symmetric grid [-xmax, xmax].
pub fn potential_a(
    spec: &MuSpec,
    cert: &FClassCert,
    xmax: f64,
    dx: f64,
    params: &PotentialParams,
) -> Result<GridFn> {
    Ok(potential_a_diag(spec, cert, xmax, dx, params)?.0)
}

pub fn potential_a_diag(
    spec: &MuSpec,
    cert: &FClassCert,
    xmax: f64,
    dx: f64,
    params: &PotentialParams,
) -> Result<(GridFn, PotentialDiagnostics)> {
    let n = (2.0 * xmax / dx).round() as usize + 1;
    let j_zero = cert.j.abs() <= 1e-9 * spec.sigma2();
    let mut max_err = 0.0f64;
    let mut order_acc = Vec::new();
    let values: Vec<f64>;
    if j_zero {
        let qp = QuadParams { tol: params.tol * 0.5, max_panels: params.max_panels };
        values = (0..n)
            .into_par_iter()
            .map(|i| a_psi_j0(spec, cert, -xmax + i as f64 * dx, &qp))
            .collect::<Result<_>>()?;
    } else {
        let per_x: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = -xmax + i as f64 * dx;
                let ladder: Vec<f64> = (4..=12)
                    .map(|k| a_lambda_psi(spec, cert, x, 1.0 - 2.0f64.powi(-k), params))
                    .collect::<Result<_>>()?;
                richardson(&ladder)
            })
            .collect::<Result<_>>()?;
        values = per_x.iter().map(|(v, _, _)| *v).collect();
        for (_, order, err) in &per_x {
            max_err = max_err.max(*err);
            if order.is_finite() {
                order_acc.push(*order);
            }
        }
    }
    let grid = GridFn {
        x0: -xmax,
        dx,
        values,
        j_tag: Some(cert.j),
        k_tag: Some(cert.k),
    };
    let order = if order_acc.is_empty() {
        None
    } else {
        Some(order_acc.iter().sum::<f64>() / order_acc.len() as f64)
    };
    Ok((grid, PotentialDiagnostics { order, max_extrapolation_err: max_err }))
}

// ---------------------------------------------------------------------------
// Poisson residual and solution decomposition
// ---------------------------------------------------------------------------

/// Gauss-Hermite nodes/weights (physicists' convention), by Newton iteration.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    let mut z_prev = 0.0f64;
    let mut z_prev2 = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => {
                let t = (2 * n + 1) as f64;
                t.sqrt() - 1.85575 * t.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * z_prev2,
            3 => 1.91 * z - 0.91 * z_prev2,
            _ => 2.0 * z - z_prev2,
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
        z_prev2 = z_prev;
        z_prev = z;
    }
    (nodes, weights)
}

/// mu-bar * f(x) for a function evaluated by the supplied closure.
pub fn mu_bar_convolve<F: FnMut(f64) -> Result<f64>>(
    spec: &MuSpec,
    x: f64,
    mut f: F,
) -> Result<f64> {
    match spec.a_law {
        ALaw::TwoPoint { p } => Ok(0.5 * (f(x + p)? + f(x - p)?)),
        ALaw::Lognormal { s } => {
            // adaptive rather than Gauss-Hermite: the potentials being
            // convolved have kinks, which fixed-node rules resolve poorly
            let qp = QuadParams { tol: 1e-9, max_panels: 20_000 };
            let state = std::cell::RefCell::new((f, None::<Error>));
            let eval = |y: f64| -> f64 {
                let mut st = state.borrow_mut();
                match (st.0)(y) {
                    Ok(v) => v,
                    Err(e) => {
                        st.1 = Some(e);
                        0.0
                    }
                }
            };
            let (v, _) = integrate(
                |u| crate::model::normal_pdf(u / s) / s * eval(x + u),
                -9.0 * s,
                9.0 * s,
                &qp,
            )?;
            if let Some(e) = state.into_inner().1 {
                return Err(e);
            }
            Ok(v)
        }
        ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
            // E f(x + Y): Y = +Exp(lp) w.p. q, -Exp(lm) w.p. 1-q
            let q = lambda_plus / (lambda_plus + lambda_minus);
            let qp = QuadParams { tol: 1e-9, max_panels: 20_000 };
            let state = std::cell::RefCell::new((f, None::<Error>));
            let eval = |y: f64| -> f64 {
                let mut s = state.borrow_mut();
                match (s.0)(y) {
                    Ok(v) => v,
                    Err(e) => {
                        s.1 = Some(e);
                        0.0
                    }
                }
            };
            let hi = 40.0 / lambda_plus;
            let (pos, _) = integrate(
                |u| lambda_plus * (-lambda_plus * u).exp() * eval(x + u),
                0.0,
                hi,
                &qp,
            )?;
            let hi = 40.0 / lambda_minus;
            let (neg, _) = integrate(
                |u| lambda_minus * (-lambda_minus * u).exp() * eval(x - u),
                0.0,
                hi,
                &qp,
            )?;
            if let Some(e) = state.into_inner().1 {
                return Err(e);
            }
            Ok(q * pos + (1.0 - q) * neg)
        }
        ALaw::ConstA { a } => f(x - a.ln()),
    }
}

/// Poisson residual mu-bar * A psi(x) - A psi(x) - psi(x) on interior grid
/// points, using exact grid shifts for lattice mu-bar (p must be a multiple
/// of dx).
pub fn poisson_residual_grid(
    spec: &MuSpec,
    apsi: &GridFn,
    cert: &FClassCert,
) -> Result<f64> {
    let p = spec.lattice_span();
    if p <= 0.0 {
        return Err(Error::InvalidSpec(
            "grid-shift residual needs a lattice family; use mu_bar_convolve".into(),
        ));
    }
    let shift = (p / apsi.dx).round() as usize;
    if ((shift as f64) * apsi.dx - p).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!(
            "lattice span {p} is not a multiple of dx = {}",
            apsi.dx
        )));
    }
    let mut sup = 0.0f64;
    for i in shift..apsi.len() - shift {
        let conv = 0.5 * (apsi.values[i + shift] + apsi.values[i - shift]);
        let x = apsi.x(i);
        let res = conv - apsi.values[i] - cert.psi.eval(spec, x);
        sup = sup.max(res.abs());
    }
    Ok(sup)
}

/// Least-squares fit f = A psi + C1 J x + C2 (+ residual). For J = 0 the C1
/// term is absent. For lattice mu-bar the fit is restricted to grid points on
/// the lattice p Z.
pub fn solution_decomposition(
    f: &GridFn,
    apsi: &GridFn,
    j: f64,
    lattice_p: f64,
) -> (f64, f64, f64) {
    assert_eq!(f.len(), apsi.len(), "grids must match");
    let mut idx: Vec<usize> = (0..f.len()).collect();
    if lattice_p > 0.0 {
        idx.retain(|&i| {
            let t = f.x(i) / lattice_p;
            (t - t.round()).abs() < 1e-9
        });
    }
    let h: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (f.x(i), f.values[i] - apsi.values[i]))
        .collect();
    if j.abs() < 1e-12 {
        let c2 = h.iter().map(|(_, v)| v).sum::<f64>() / h.len() as f64;
        let res = h.iter().map(|(_, v)| (v - c2).abs()).fold(0.0, f64::max);
        return (0.0, c2, res);
    }
    // fit v = c1 j x + c2
    let n = h.len() as f64;
    let sx: f64 = h.iter().map(|(x, _)| x).sum();
    let sxx: f64 = h.iter().map(|(x, _)| x * x).sum();
    let sv: f64 = h.iter().map(|(_, v)| v).sum();
    let sxv: f64 = h.iter().map(|(x, v)| x * v).sum();
    let det = n * sxx - sx * sx;
    let slope = (n * sxv - sx * sv) / det;
    let c2 = (sv - slope * sx) / n;
    let c1 = slope / j;
    let res = h
        .iter()
        .map(|(x, v)| (v - slope * x - c2).abs())
        .fold(0.0, f64::max);
    (c1, c2, res)
}
