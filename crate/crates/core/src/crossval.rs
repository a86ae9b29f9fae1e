//! Cross-validation of the tail constant: the Monte Carlo annulus estimate
//! against the potential-theory route.
//!
//! Test functions phi(u) = integral of r(t) zeta(e^t u) dt with radial
//! zeta(u) = e^{-gamma |log|u||} depend on u only through v = log|u| (and
//! optionally the direction), so everything reduces to a tabulated profile
//! Phi_gamma(v) = integral of r(t) e^{-gamma|t + v|} dt. The two estimators
//! of T(phi):
//!
//!   - the plateau of f_phi(x) = nu(phi(e^{-x} .)) as x -> infinity,
//!   - -2 sigma^-2 K(psi_phi) with psi_phi the paired one-step difference,
//!
//! must agree, and C_+ = T(Phi_gamma) / integral of Phi_gamma(a) da/a must
//! match the annulus-mass estimate.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariant::PointCloudMeasure;
use crate::model::MuSpec;
use crate::potential::GridFn;
use crate::quad::simpson;
use crate::rng::RandomStream;
use crate::tail::{estimate_cplus, exp_grid};

/// A test function of the form phi(u) = P(log|u|) * zeta0(u/|u|).
pub struct RadialTestFn {
    pub gamma: f64,
    /// Tabulated radial profile P(v); P = Phi_gamma when smoothed by r,
    /// P(v) = e^{-gamma|v|} for the raw zeta.
    pub profile: GridFn,
    /// Whether the profile carries the r-smoothing (phi) or not (zeta).
    pub smoothed: bool,
    /// Optional angular factor on the unit sphere.
    pub zeta0: Option<fn(&[f64]) -> f64>,
}

impl RadialTestFn {
    /// Profile value at log-radius v.
    pub fn at_logr(&self, v: f64) -> f64 {
        self.profile.value_at(v)
    }

    /// phi(u); zero at u = 0 (both profiles vanish at v = -infinity).
    pub fn eval(&self, u: &[f64]) -> f64 {
        let norm2: f64 = u.iter().map(|c| c * c).sum();
        if norm2 == 0.0 {
            return 0.0;
        }
        let norm = norm2.sqrt();
        let base = self.at_logr(norm.ln());
        match self.zeta0 {
            None => base,
            Some(z0) => {
                let dir: Vec<f64> = u.iter().map(|c| c / norm).collect();
                base * z0(&dir)
            }
        }
    }

    /// integral of phi(a) da/a over the radial part = integral of P(v) dv.
    pub fn radial_log_integral(&self) -> f64 {
        self.profile.integral()
    }
}

/// Extent of the profile table; beyond it P < e^{-gamma*PROFILE_V} ~ 1e-18
/// for gamma >= 1 and is treated as zero.
const PROFILE_V: f64 = 42.0;
const PROFILE_DV: f64 = 0.01;

/// Build phi(u) = integral of r(t) zeta(e^t u) dt for zeta = e^{-gamma|log|.||}
/// (times an optional angular factor, which passes through the t-integral
/// untouched). The profile is tabulated by fixed-panel quadrature split at
/// the kink t = -v.
pub fn build_phi(spec: &MuSpec, gamma: f64, zeta0: Option<fn(&[f64]) -> f64>) -> RadialTestFn {
    assert!(gamma > 0.0, "gamma must be positive");
    // effective r support: beyond t_max the kernel contributes < 1e-16
    let t_max = match spec.a_law {
        crate::model::ALaw::TwoPoint { p } => p,
        crate::model::ALaw::Lognormal { s } => 12.0 * s,
        _ => match spec.a_law.r_decay_rate() {
            Some(delta) => (40.0 / delta).max(10.0),
            None => 40.0,
        },
    };
    let r = |t: f64| spec.a_law.r_fn(t);
    let n = (2.0 * PROFILE_V / PROFILE_DV).round() as usize + 1;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = -PROFILE_V + i as f64 * PROFILE_DV;
            let kink = -v;
            let f = |t: f64| r(t) * (-gamma * (t + v).abs()).exp();
            if kink <= -t_max || kink >= t_max {
                simpson(&f, -t_max, t_max, 200)
            } else {
                simpson(&f, -t_max, kink, 100) + simpson(&f, kink, t_max, 100)
            }
        })
        .collect();
    RadialTestFn {
        gamma,
        profile: GridFn { x0: -PROFILE_V, dx: PROFILE_DV, values, j_tag: None, k_tag: None },
        smoothed: true,
        zeta0,
    }
}

/// The raw radial zeta profile e^{-gamma|v|} (no r-smoothing); used for the
/// psi_phi = r * psi_zeta identity check.
pub fn build_zeta(gamma: f64, zeta0: Option<fn(&[f64]) -> f64>) -> RadialTestFn {
    let n = (2.0 * PROFILE_V / PROFILE_DV).round() as usize + 1;
    let values = (0..n)
        .map(|i| {
            let v = -PROFILE_V + i as f64 * PROFILE_DV;
            (-gamma * v.abs()).exp()
        })
        .collect();
    RadialTestFn {
        gamma,
        profile: GridFn { x0: -PROFILE_V, dx: PROFILE_DV, values, j_tag: None, k_tag: None },
        smoothed: false,
        zeta0,
    }
}

/// A grid function with a per-point cluster standard error.
#[derive(Clone, Debug, Serialize)]
pub struct EstGridFn {
    pub grid: GridFn,
    pub stderr: Vec<f64>,
    pub n_excursions: usize,
}

impl EstGridFn {
    pub fn write_csv(&self, path: &std::path::Path, header: &str) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# {header}")?;
        writeln!(f, "x,value,stderr")?;
        for i in 0..self.grid.len() {
            writeln!(
                f,
                "{:.17e},{:.17e},{:.17e}",
                self.grid.x(i),
                self.grid.values[i],
                self.stderr[i]
            )?;
        }
        Ok(())
    }
}

/// Cached per-point data for radial integrands: log-radius, angular factor
/// and weight, grouped by excursion.
struct CloudRadialCache {
    /// (log|u|, zeta0(u/|u|) * weight) per point; log|u| = -inf marks u = 0.
    lnr: Vec<f64>,
    wang: Vec<f64>,
    offsets: Vec<u64>,
}

fn radial_cache(cloud: &PointCloudMeasure, phi: &RadialTestFn) -> CloudRadialCache {
    let n = cloud.n_points();
    let mut lnr = Vec::with_capacity(n);
    let mut wang = Vec::with_capacity(n);
    for i in 0..n {
        let u = cloud.point(i);
        let norm2: f64 = u.iter().map(|c| c * c).sum();
        lnr.push(0.5 * norm2.ln());
        let ang = match phi.zeta0 {
            None => 1.0,
            Some(z0) => {
                if norm2 == 0.0 {
                    0.0
                } else {
                    let norm = norm2.sqrt();
                    let dir: Vec<f64> = u.iter().map(|c| c / norm).collect();
                    z0(&dir)
                }
            }
        };
        wang.push(ang * cloud.weight(i));
    }
    CloudRadialCache { lnr, wang, offsets: cloud.excursion_offsets.clone() }
}

/// Reduce per-excursion totals (one row of per-x values each) into value and
/// cluster stderr per x. Excursions are processed in fixed-size blocks whose
/// partial sums are combined in index order, so the result is bit-identical
/// regardless of worker count.
fn cluster_reduce<F: Fn(usize, &mut [f64]) + Sync>(
    per_excursion: F,
    n_x: usize,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    const BLOCK: usize = 512;
    let n_blocks = m.div_ceil(BLOCK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let mut s = vec![0.0; n_x];
            let mut s2 = vec![0.0; n_x];
            let mut t = vec![0.0; n_x];
            for e in blk * BLOCK..((blk + 1) * BLOCK).min(m) {
                t.iter_mut().for_each(|v| *v = 0.0);
                per_excursion(e, &mut t);
                for k in 0..n_x {
                    s[k] += t[k];
                    s2[k] += t[k] * t[k];
                }
            }
            (s, s2)
        })
        .collect();
    let mut sum = vec![0.0; n_x];
    let mut sum_sq = vec![0.0; n_x];
    for (s, s2) in &partials {
        for k in 0..n_x {
            sum[k] += s[k];
            sum_sq[k] += s2[k];
        }
    }
    let mf = m as f64;
    let stderr = (0..n_x)
        .map(|k| {
            if m > 1 {
                let var = (sum_sq[k] - sum[k] * sum[k] / mf) / (mf - 1.0);
                (mf * var).max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    (sum, stderr)
}

/// f_phi(x) = nu(phi(e^{-x} .)) on a uniform x grid, with cluster stderr.
pub fn estimate_f_phi(
    cloud: &PointCloudMeasure,
    phi: &RadialTestFn,
    x0: f64,
    dx: f64,
    n_x: usize,
) -> EstGridFn {
    let cache = radial_cache(cloud, phi);
    let m = cloud.n_excursions();
    let per_excursion = |e: usize, t: &mut [f64]| {
        let lo = cache.offsets[e] as usize;
        let hi = cache.offsets[e + 1] as usize;
        for i in lo..hi {
            let (v, wa) = (cache.lnr[i], cache.wang[i]);
            if wa == 0.0 || v.is_infinite() {
                continue;
            }
            for (k, tk) in t.iter_mut().enumerate() {
                *tk += wa * phi.at_logr(v - (x0 + k as f64 * dx));
            }
        }
    };
    let (values, stderr) = cluster_reduce(per_excursion, n_x, m);
    EstGridFn {
        grid: GridFn { x0, dx, values, j_tag: None, k_tag: None },
        stderr,
        n_excursions: m,
    }
}

/// psi_phi(x) = integral of [phi(e^{-x} a u) - phi(e^{-x}(a u + b))] over
/// nu(du) mu(db da), estimated with one (B, A) draw per cloud point (derived
/// from (seed, point index)) reused across the whole x grid and across both
/// terms — the difference is small, so common random numbers are essential.
pub fn estimate_psi_phi(
    spec: &MuSpec,
    cloud: &PointCloudMeasure,
    phi: &RadialTestFn,
    x0: f64,
    dx: f64,
    n_x: usize,
    seed: u64,
) -> EstGridFn {
    let m = cloud.n_excursions();
    let root = RandomStream::from_seed(seed ^ 0x9D5C_1A2B_3E4F_5A6B);
    let dim = cloud.dim;
    let per_excursion = |e: usize, t: &mut [f64]| {
        let lo = cloud.excursion_offsets[e] as usize;
        let hi = cloud.excursion_offsets[e + 1] as usize;
        let mut au = vec![0.0; dim];
        let mut aub = vec![0.0; dim];
        for i in lo..hi {
            let u = cloud.point(i);
            let w = cloud.weight(i);
            let mut stream = root.substream(i as u64);
            let (b, log_a) = spec.sample_pair_log(&mut stream);
            let a = log_a.exp();
            let mut n1 = 0.0;
            let mut n2 = 0.0;
            for d in 0..dim {
                au[d] = a * u[d];
                aub[d] = au[d] + b[d];
                n1 += au[d] * au[d];
                n2 += aub[d] * aub[d];
            }
            let v1 = 0.5 * n1.ln();
            let v2 = 0.5 * n2.ln();
            let (ang1, ang2) = match phi.zeta0 {
                None => (1.0, 1.0),
                Some(z0) => {
                    let d1: Vec<f64> = au.iter().map(|c| c / n1.sqrt()).collect();
                    let d2: Vec<f64> = aub.iter().map(|c| c / n2.sqrt()).collect();
                    (if n1 > 0.0 { z0(&d1) } else { 0.0 }, if n2 > 0.0 { z0(&d2) } else { 0.0 })
                }
            };
            for (k, tk) in t.iter_mut().enumerate() {
                let x = x0 + k as f64 * dx;
                let p1 = if n1 > 0.0 { ang1 * phi.at_logr(v1 - x) } else { 0.0 };
                let p2 = if n2 > 0.0 { ang2 * phi.at_logr(v2 - x) } else { 0.0 };
                *tk += w * (p1 - p2);
            }
        }
    };
    let (values, stderr) = cluster_reduce(per_excursion, n_x, m);
    EstGridFn {
        grid: GridFn { x0, dx, values, j_tag: None, k_tag: None },
        stderr,
        n_excursions: m,
    }
}

/// Weighted least-squares line fit; returns (intercept at x_ref, slope,
/// se_intercept, se_slope).
fn weighted_linfit(xs: &[f64], ys: &[f64], ses: &[f64], x_ref: f64) -> (f64, f64, f64, f64) {
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swxx = 0.0;
    let mut swy = 0.0;
    let mut swxy = 0.0;
    for ((x, y), se) in xs.iter().zip(ys).zip(ses) {
        let w = 1.0 / se.max(1e-300).powi(2);
        let xc = x - x_ref;
        sw += w;
        swx += w * xc;
        swxx += w * xc * xc;
        swy += w * y;
        swxy += w * xc * y;
    }
    let det = sw * swxx - swx * swx;
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swy - slope * swx) / sw;
    let se_slope = (sw / det).sqrt();
    let se_intercept = (swxx / det).sqrt();
    (intercept, slope, se_intercept, se_slope)
}

/// Fitted plateau of f on the last 40% of its positive-x range.
pub fn plateau(f: &EstGridFn) -> Result<(f64, f64)> {
    let xs: Vec<usize> = (0..f.grid.len()).filter(|&i| f.grid.x(i) > 0.0).collect();
    if xs.len() < 5 {
        return Err(Error::NoPlateau { drift: f64::NAN, threshold: f64::NAN });
    }
    let start = xs[(xs.len() as f64 * 0.6) as usize];
    let idx: Vec<usize> = (start..f.grid.len()).collect();
    let x: Vec<f64> = idx.iter().map(|&i| f.grid.x(i)).collect();
    let y: Vec<f64> = idx.iter().map(|&i| f.grid.values[i]).collect();
    let se: Vec<f64> = idx.iter().map(|&i| f.stderr[i]).collect();
    let x_mid = 0.5 * (x[0] + x[x.len() - 1]);
    let (level, slope, se_level, se_slope) = weighted_linfit(&x, &y, &se, x_mid);
    let window = x[x.len() - 1] - x[0];
    let drift = slope.abs() * window;
    let threshold = (3.0 * se_slope * window).max(0.15 * level.abs());
    if drift > threshold {
        return Err(Error::NoPlateau { drift, threshold });
    }
    Ok((level, se_level))
}

/// K(psi) = integral of x psi(x) dx by trapezoid on the grid plus a fitted
/// exponential-tail completion. Returns (k, stderr, tail_correction).
pub fn k_psi(psi: &EstGridFn) -> (f64, f64, f64) {
    let g = &psi.grid;
    let n = g.len();
    let mut k = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * g.dx;
        k += w * g.x(i) * g.values[i];
        var += (w * g.x(i) * psi.stderr[i]).powi(2);
    }
    // tail completion: fit log|psi| ~ log C - zeta x on the outer 30% of each
    // side and integrate the model beyond the grid edge
    let mut tail = 0.0;
    for side in [1.0f64, -1.0] {
        let idx: Vec<usize> = (0..n)
            .filter(|&i| side * g.x(i) >= 0.7 * side * if side > 0.0 { g.x_last() } else { g.x0 })
            .filter(|&i| side * g.x(i) > 0.0)
            .collect();
        if idx.len() < 4 {
            continue;
        }
        let xs: Vec<f64> = idx.iter().map(|&i| side * g.x(i)).collect();
        let mag: Vec<f64> = idx.iter().map(|&i| g.values[i].abs().max(1e-300)).collect();
        if mag.iter().all(|&v| v < 1e-14) {
            continue;
        }
        let lys: Vec<f64> = mag.iter().map(|v| v.ln()).collect();
        let ses = vec![1.0; xs.len()];
        let x_ref = xs[xs.len() - 1];
        let (lc, neg_zeta, _, _) = weighted_linfit(&xs, &lys, &ses, x_ref);
        let zeta = -neg_zeta;
        if zeta <= 0.0 {
            continue; // no decay detected; leave the tail out
        }
        let sign = idx
            .iter()
            .rev()
            .take(4)
            .map(|&i| g.values[i])
            .sum::<f64>()
            .signum();
        let x_edge = x_ref;
        // integral of x C e^{-zeta(x - x_edge)} dx from x_edge to infinity
        let c = lc.exp();
        let t = sign * side * c * (x_edge / zeta + 1.0 / (zeta * zeta));
        tail += t;
    }
    (k + tail, var.sqrt(), tail)
}

/// Full cross-validation report (crossval.json payload).
#[derive(Clone, Debug, Serialize)]
pub struct CrossvalReport {
    pub gamma: f64,
    pub k_psi: f64,
    pub k_psi_stderr: f64,
    pub k_tail_correction: f64,
    pub t_potential: f64,
    pub t_potential_stderr: f64,
    pub t_plateau: f64,
    pub t_plateau_stderr: f64,
    /// integral of Phi_gamma(a) da/a (analytically 2 sigma^2 / gamma).
    pub denom: f64,
    pub cplus_pot: f64,
    pub cplus_pot_stderr: f64,
    pub cplus_mc: f64,
    pub cplus_mc_stderr: f64,
    pub rel_gap_cplus: f64,
    pub rel_gap_plateau: f64,
}

pub struct CrossvalOutput {
    pub report: CrossvalReport,
    pub f_phi: EstGridFn,
    pub psi_phi: EstGridFn,
}

/// Default crossval grid: x in [-6, 12].
pub const CROSSVAL_X0: f64 = -6.0;
pub const CROSSVAL_DX: f64 = 0.25;
pub const CROSSVAL_NX: usize = 73;

/// Estimators disagreeing by more than this factor fail hard; the acceptance
/// threshold (20%) is asserted by the caller on the reported gaps.
const INCONSISTENCY_HARD_LIMIT: f64 = 0.5;

pub fn cplus_crosscheck(
    spec: &MuSpec,
    cloud: &PointCloudMeasure,
    gamma: f64,
    seed: u64,
) -> Result<CrossvalOutput> {
    if spec.lattice_span() > 0.0 {
        return Err(Error::InvalidSpec(
            "crossval needs an aperiodic family; lattice cross-validation uses the annulus ratio"
                .into(),
        ));
    }
    let sigma2 = spec.sigma2();
    let phi = build_phi(spec, gamma, None);
    let f_phi = estimate_f_phi(cloud, &phi, CROSSVAL_X0, CROSSVAL_DX, CROSSVAL_NX);
    let psi_phi = estimate_psi_phi(spec, cloud, &phi, CROSSVAL_X0, CROSSVAL_DX, CROSSVAL_NX, seed);

    let (t_plateau, t_plateau_stderr) = plateau(&f_phi)?;
    let (k, k_stderr, k_tail) = k_psi(&psi_phi);
    let t_potential = -2.0 / sigma2 * k;
    let t_potential_stderr = 2.0 / sigma2 * (k_stderr + k_tail.abs());

    let denom = phi.radial_log_integral();
    let cplus_pot = t_potential / denom;
    let cplus_pot_stderr = t_potential_stderr / denom;

    let mc = estimate_cplus(cloud, &exp_grid(3, 7), spec.lattice_span())?;
    let cplus_mc = mc.c_plus;
    let cplus_mc_stderr = mc.c_plus_stderr;

    let rel_gap_cplus = (cplus_pot - cplus_mc).abs() / cplus_mc.abs().max(1e-300);
    let rel_gap_plateau =
        (t_plateau - t_potential).abs() / t_potential.abs().max(1e-300);
    if rel_gap_cplus > INCONSISTENCY_HARD_LIMIT || rel_gap_plateau > INCONSISTENCY_HARD_LIMIT {
        return Err(Error::InconsistentEstimates(format!(
            "cplus_pot {cplus_pot:.4} vs cplus_mc {cplus_mc:.4} (gap {rel_gap_cplus:.2}), \
             plateau {t_plateau:.4} vs T {t_potential:.4} (gap {rel_gap_plateau:.2})"
        )));
    }

    Ok(CrossvalOutput {
        report: CrossvalReport {
            gamma,
            k_psi: k,
            k_psi_stderr: k_stderr,
            k_tail_correction: k_tail,
            t_potential,
            t_potential_stderr,
            t_plateau,
            t_plateau_stderr,
            denom,
            cplus_pot,
            cplus_pot_stderr,
            cplus_mc,
            cplus_mc_stderr,
            rel_gap_cplus,
            rel_gap_plateau,
        },
        f_phi,
        psi_phi,
    })
}
