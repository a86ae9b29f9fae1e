//! Tail statistics of the cloud: dilated annulus masses, the constant C_+,
//! the angular measure, and the inequality/regularity diagnostics.
//!
//! Aperiodic case: nu(z < |u| <= e z) -> C_+ for every z (annulus flatness).
//! Lattice case (span p): nu(z < |u| <= e^{np} z) -> n C_+ p-proportionality.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::invariant::{IntegralEstimate, PointCloudMeasure};
use crate::model::MuSpec;

fn norm(u: &[f64]) -> f64 {
    if u.len() == 1 {
        u[0].abs()
    } else {
        u.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// nu-hat mass of the annulus lo < |u| <= hi, with cluster stderr.
pub fn annulus_mass(cloud: &PointCloudMeasure, lo: f64, hi: f64) -> IntegralEstimate {
    cloud.integrate(|u| {
        let r = norm(u);
        f64::from(r > lo && r <= hi)
    })
}

/// nu-hat{|u| < z}.
pub fn ball_mass(cloud: &PointCloudMeasure, z: f64) -> IntegralEstimate {
    cloud.integrate(|u| f64::from(norm(u) < z))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AnnulusRow {
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mass: f64,
    pub stderr: f64,
    pub n_excursions: u64,
    /// mass / log(beta/alpha): the per-row estimate of C_+.
    pub c_estimate: f64,
    pub reliable: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub annulus_table: Vec<AnnulusRow>,
    pub c_plus: f64,
    pub c_plus_stderr: f64,
    /// Flatness chi^2 of the reliable per-row estimates around c_plus.
    pub chi2: f64,
    pub chi2_dof: usize,
    pub chi2_pvalue: f64,
    pub lattice_span: f64,
}

/// Minimum number of distinct contributing excursions for an annulus to be
/// trusted (heavy-tailed excursion heights make sparse annuli unreliable).
pub const MIN_EXCURSIONS_PER_ANNULUS: u64 = 100;

/// Estimate C_+ over a geometric z-grid. Each row uses the annulus
/// (z, e^w z] with w = lattice span p (lattice) or 1 (aperiodic); the
/// aggregate is the inverse-variance-weighted mean of mass/w over reliable
/// rows, with a flatness chi-square.
pub fn estimate_cplus(
    cloud: &PointCloudMeasure,
    z_grid: &[f64],
    lattice_p: f64,
) -> Result<TailReport> {
    let w = if lattice_p > 0.0 { lattice_p } else { 1.0 };
    let ratio = w.exp();
    let mut rows = Vec::with_capacity(z_grid.len());
    for &z in z_grid {
        let est = annulus_mass(cloud, z, z * ratio);
        rows.push(AnnulusRow {
            z,
            alpha: z,
            beta: z * ratio,
            mass: est.value,
            stderr: est.stderr,
            n_excursions: est.n_excursions_hit,
            c_estimate: est.value / w,
            reliable: est.n_excursions_hit >= MIN_EXCURSIONS_PER_ANNULUS
                && est.stderr > 0.0,
        });
    }
    let reliable: Vec<&AnnulusRow> = rows.iter().filter(|r| r.reliable).collect();
    if reliable.len() < 2 {
        return Err(Error::InsufficientSupport(format!(
            "only {} of {} annuli have >= {} contributing excursions",
            reliable.len(),
            rows.len(),
            MIN_EXCURSIONS_PER_ANNULUS
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for r in &reliable {
        let se = r.stderr / w;
        let inv_var = 1.0 / (se * se);
        num += inv_var * r.c_estimate;
        den += inv_var;
    }
    let c_plus = num / den;
    let c_plus_stderr = (1.0 / den).sqrt();
    let chi2: f64 = reliable
        .iter()
        .map(|r| {
            let se = r.stderr / w;
            let d = (r.c_estimate - c_plus) / se;
            d * d
        })
        .sum();
    let dof = reliable.len() - 1;
    let chi2_pvalue = if dof > 0 {
        1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(chi2)
    } else {
        1.0
    };
    Ok(TailReport {
        annulus_table: rows,
        c_plus,
        c_plus_stderr,
        chi2,
        chi2_dof: dof,
        chi2_pvalue,
        lattice_span: lattice_p,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AngularHistogram {
    /// Bin centers: signs for d=1, angles (radians) for d=2.
    pub bin_centers: Vec<f64>,
    /// Normalized weights (sum to 1).
    pub weights: Vec<f64>,
    pub weights_stderr: Vec<f64>,
    pub n_points: u64,
    pub z_min: f64,
}

/// Normalized histogram of u/|u| over points with |u| > z_min.
/// d = 1: two bins {+1, -1}; d = 2: n_bins equal sectors of the circle.
pub fn angular_measure(
    cloud: &PointCloudMeasure,
    z_min: f64,
    n_bins: usize,
) -> Result<AngularHistogram> {
    let d = cloud.dim;
    let (bins, centers): (usize, Vec<f64>) = match d {
        1 => (2, vec![1.0, -1.0]),
        2 => {
            let n = n_bins.max(1);
            let centers = (0..n)
                .map(|k| -std::f64::consts::PI + (k as f64 + 0.5) * std::f64::consts::TAU / n as f64)
                .collect();
            (n, centers)
        }
        _ => {
            return Err(Error::InsufficientSupport(format!(
                "angular binning implemented for d in {{1, 2}}, got d = {d}"
            )))
        }
    };
    let bin_of = |u: &[f64]| -> usize {
        if d == 1 {
            usize::from(u[0] < 0.0)
        } else {
            let a = u[1].atan2(u[0]); // in (-pi, pi]
            let t = (a + std::f64::consts::PI) / std::f64::consts::TAU;
            ((t * bins as f64) as usize).min(bins - 1)
        }
    };
    let m = cloud.n_excursions();
    let mut sums = vec![0.0; bins];
    let mut sums_sq = vec![0.0; bins];
    let mut n_points = 0u64;
    let mut per_exc = vec![0.0; bins];
    for e in 0..m {
        per_exc.iter_mut().for_each(|v| *v = 0.0);
        let lo = cloud.excursion_offsets[e] as usize;
        let hi = cloud.excursion_offsets[e + 1] as usize;
        for i in lo..hi {
            let u = cloud.point(i);
            if norm(u) > z_min {
                per_exc[bin_of(u)] += cloud.weight(i);
                n_points += 1;
            }
        }
        for b in 0..bins {
            sums[b] += per_exc[b];
            sums_sq[b] += per_exc[b] * per_exc[b];
        }
    }
    let total: f64 = sums.iter().sum();
    if n_points == 0 || total <= 0.0 {
        return Err(Error::InsufficientSupport(format!(
            "no points with |u| > z_min = {z_min}"
        )));
    }
    let mf = m as f64;
    let weights: Vec<f64> = sums.iter().map(|s| s / total).collect();
    let weights_stderr = sums
        .iter()
        .zip(&sums_sq)
        .map(|(s, sq)| {
            let var = (sq - s * s / mf) / (mf - 1.0);
            (mf * var).max(0.0).sqrt() / total
        })
        .collect();
    Ok(AngularHistogram { bin_centers: centers, weights, weights_stderr, n_points, z_min })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundDiagnostics {
    /// (z, nu{|u|<z}/(2+log z)) over the grid — must stay bounded.
    pub log_bound: Vec<(f64, f64)>,
    pub log_bound_sup: f64,
    pub log_bound_max_over_min: f64,
    /// Smallest annulus mass on the grid with its stderr (positivity check:
    /// min - 3 stderr must stay above 0).
    pub min_annulus_mass: f64,
    pub min_annulus_stderr: f64,
    /// (z, L(2z)/L(z), L(z/2)/L(z)) with L(z) = nu(z<|u|<=ez) — the slowly
    /// varying diagnostic; ratios should sit near 1.
    pub sv_ratios: Vec<(f64, f64, f64)>,
}

impl BoundDiagnostics {
    /// Flat (name, value) rows for bounds.csv.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("log_bound_sup".to_string(), self.log_bound_sup),
            ("log_bound_max_over_min".to_string(), self.log_bound_max_over_min),
            ("min_annulus_mass".to_string(), self.min_annulus_mass),
            ("min_annulus_stderr".to_string(), self.min_annulus_stderr),
        ];
        for (z, r) in &self.log_bound {
            out.push((format!("log_bound_ratio_z={z:.6e}"), *r));
        }
        for (z, up, down) in &self.sv_ratios {
            out.push((format!("sv_ratio_2z_over_z_z={z:.6e}"), *up));
            out.push((format!("sv_ratio_halfz_over_z_z={z:.6e}"), *down));
        }
        out
    }
}

/// Inequality and regularity diagnostics over a z-grid. The half-space
/// dependent checks require d = 1 or a positive-orthant B.
pub fn bound_diagnostics(
    spec: &MuSpec,
    cloud: &PointCloudMeasure,
    z_grid: &[f64],
) -> Result<BoundDiagnostics> {
    if spec.dim != 1 && !spec.b_law.is_positive() {
        return Err(Error::ConfigNotCoveredByG);
    }
    let e = std::f64::consts::E;
    let mut log_bound = Vec::with_capacity(z_grid.len());
    let mut min_mass = f64::INFINITY;
    let mut min_stderr = 0.0;
    for &z in z_grid {
        let b = ball_mass(cloud, z);
        log_bound.push((z, b.value / (2.0 + z.ln())));
        let a = annulus_mass(cloud, z, z * e);
        if a.value < min_mass {
            min_mass = a.value;
            min_stderr = a.stderr;
        }
    }
    let sup = log_bound.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
    let inf = log_bound.iter().map(|(_, r)| *r).fold(f64::INFINITY, f64::min);
    let mut sv_ratios = Vec::new();
    for &z in z_grid {
        let l = annulus_mass(cloud, z, z * e).value;
        let l2 = annulus_mass(cloud, 2.0 * z, 2.0 * z * e).value;
        let lh = annulus_mass(cloud, 0.5 * z, 0.5 * z * e).value;
        if l > 0.0 {
            sv_ratios.push((z, l2 / l, lh / l));
        }
    }
    Ok(BoundDiagnostics {
        log_bound,
        log_bound_sup: sup,
        log_bound_max_over_min: if inf > 0.0 { sup / inf } else { f64::INFINITY },
        min_annulus_mass: min_mass,
        min_annulus_stderr: min_stderr,
        sv_ratios,
    })
}

/// Convenience: geometric grid {e^k : k in lo..=hi}.
pub fn exp_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| (k as f64).exp()).collect()
}
