//! Point-cloud approximation of the invariant Radon measure.
//!
//! nu(f) = E[ sum_{n=0}^{L-1} f(X_n^x) ] integrated over x ~ nu_L, with nu_L
//! the stationary law of the ladder chain X_{L_n} = M_n X_{L_{n-1}} + Q_n.
//! nu is normalized by taking nu_L as a probability measure.
//!
//! The estimator runs `m` excursions arranged in independent strands; within
//! a strand consecutive excursions are chained through the ladder chain (the
//! end state X_L of one excursion is exactly a ladder-chain step, so starts
//! stay nu_L-distributed). Each strand is seeded from an independent backward
//! -series nu_L sample.
//!
//! Memory control: E[L] is infinite, so the raw cloud for m = 10^6 excursions
//! does not fit. Points are thinned by a deterministic hash of
//! (seed, excursion, step) against a power-of-two threshold; the level rises
//! adaptively while merging, and since thresholds are nested the final kept
//! set is a pure function of (config, seed) — independent of worker count.
//! Thinned weights are scaled by 2^level, keeping the estimator unbiased.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MuSpec;
use crate::rng::{mix64, point_hash_unit, RandomStream};
use crate::walk::{ladder_pair, walk_excursion, Stopping};

const DOM_NUL: u64 = 1;
const DOM_EXC: u64 = 2;
const DOM_START: u64 = 3;
const DOM_RESTART: u64 = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CloudMeta {
    pub spec_hash: String,
    pub normalization: String,
    pub m_excursions: u64,
    pub n_max: u64,
    pub truncated_fraction: f64,
    /// Fraction of nu_L backward-series samples that hit a truncated inner
    /// ladder pair (their series is cut short and the sample flagged).
    pub nul_truncated_fraction: f64,
    pub seed: u64,
    /// Thinning level: points were kept with probability 2^-level and their
    /// weights scaled by 2^level.
    pub thin_level: u32,
}

#[derive(Clone, Debug)]
pub enum Weights {
    /// All points share one weight (the common case here).
    Uniform(f64),
    PerPoint(Vec<f64>),
}

/// Weighted samples approximating nu (or nu_L), grouped by excursion so that
/// cluster (per-excursion) standard errors are computable.
#[derive(Clone, Debug)]
pub struct PointCloudMeasure {
    pub dim: usize,
    /// Row-major point coordinates, grouped by excursion.
    pub coords: Vec<f64>,
    pub weights: Weights,
    /// Point-index boundaries per excursion: len = n_excursions + 1,
    /// excursion e owns points offsets[e]..offsets[e+1].
    pub excursion_offsets: Vec<u64>,
    pub meta: CloudMeta,
}

/// Result of a cloud integral with cluster statistics.
#[derive(Clone, Copy, Debug)]
pub struct IntegralEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Number of excursions with a nonzero contribution.
    pub n_excursions_hit: u64,
}

impl PointCloudMeasure {
    pub fn n_points(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_excursions(&self) -> usize {
        self.excursion_offsets.len() - 1
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Weights::Uniform(w) => *w,
            Weights::PerPoint(v) => v[i],
        }
    }

    pub fn total_mass(&self) -> f64 {
        match &self.weights {
            Weights::Uniform(w) => w * self.n_points() as f64,
            Weights::PerPoint(v) => v.iter().sum(),
        }
    }

    /// Weighted sum of phi over the cloud with a cluster standard error:
    /// points within one excursion are correlated, so the variance is taken
    /// across per-excursion totals.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, phi: F) -> IntegralEstimate {
        let m = self.n_excursions();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut hit = 0u64;
        for e in 0..m {
            let lo = self.excursion_offsets[e] as usize;
            let hi = self.excursion_offsets[e + 1] as usize;
            let mut t = 0.0;
            for i in lo..hi {
                t += self.weight(i) * phi(self.point(i));
            }
            if t != 0.0 {
                hit += 1;
            }
            sum += t;
            sum_sq += t * t;
        }
        let stderr = if m > 1 {
            let mf = m as f64;
            let var = (sum_sq - sum * sum / mf) / (mf - 1.0);
            (mf * var).max(0.0).sqrt()
        } else {
            0.0
        };
        IntegralEstimate { value: sum, stderr, n_excursions_hit: hit }
    }

    /// nu(phi(./z)): the dilation delta_{(0, 1/z)} * nu applied to phi.
    pub fn dilation<F: Fn(&[f64]) -> f64>(&self, z: f64, phi: F) -> IntegralEstimate {
        assert!(z > 0.0, "dilation scale must be positive");
        let dim = self.dim;
        let scaled = vec![0.0; dim];
        let phi_z = move |u: &[f64]| {
            let mut s = scaled.clone();
            for (si, ui) in s.iter_mut().zip(u) {
                *si = ui / z;
            }
            phi(&s)
        };
        self.integrate(phi_z)
    }

    /// Cluster bootstrap standard error for integrate(phi).
    pub fn bootstrap_stderr<F: Fn(&[f64]) -> f64>(
        &self,
        phi: F,
        n_boot: usize,
        stream: &mut RandomStream,
    ) -> f64 {
        let m = self.n_excursions();
        let mut totals = vec![0.0; m];
        for e in 0..m {
            let lo = self.excursion_offsets[e] as usize;
            let hi = self.excursion_offsets[e + 1] as usize;
            for i in lo..hi {
                totals[e] += self.weight(i) * phi(self.point(i));
            }
        }
        let mut reps = Vec::with_capacity(n_boot);
        for _ in 0..n_boot {
            let mut s = 0.0;
            for _ in 0..m {
                let j = (stream.next_u64() % m as u64) as usize;
                s += totals[j];
            }
            reps.push(s);
        }
        let mean = reps.iter().sum::<f64>() / n_boot as f64;
        (reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n_boot - 1) as f64)
            .sqrt()
    }

    /// View with every k-th excursion (weights scaled by k); preserves the
    /// cluster structure for cheap subsampled passes.
    pub fn excursion_stride(&self, k: usize) -> PointCloudMeasure {
        assert!(k >= 1);
        let mut coords = Vec::new();
        let mut offsets = vec![0u64];
        let mut weights = Vec::new();
        for e in (0..self.n_excursions()).step_by(k) {
            let lo = self.excursion_offsets[e] as usize;
            let hi = self.excursion_offsets[e + 1] as usize;
            coords.extend_from_slice(&self.coords[lo * self.dim..hi * self.dim]);
            for i in lo..hi {
                weights.push(self.weight(i) * k as f64);
            }
            offsets.push((coords.len() / self.dim) as u64);
        }
        let weights = match &self.weights {
            Weights::Uniform(w) => Weights::Uniform(w * k as f64),
            Weights::PerPoint(_) => Weights::PerPoint(weights),
        };
        PointCloudMeasure {
            dim: self.dim,
            coords,
            weights,
            excursion_offsets: offsets,
            meta: self.meta.clone(),
        }
    }
}

pub fn spec_hash(spec: &MuSpec) -> String {
    // FNV-1a over the canonical JSON encoding
    let json = serde_json::to_string(spec).expect("spec serializes");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NuLParams {
    pub n_samples: u64,
    /// Stop the backward series when the running product of M's drops below
    /// this.
    pub tol: f64,
    pub n_max: u64,
}

impl Default for NuLParams {
    fn default() -> Self {
        NuLParams { n_samples: 10_000, tol: 1e-12, n_max: 1_000_000 }
    }
}

/// One backward-series sample Q_1 + M_1 Q_2 + M_1 M_2 Q_3 + ...; returns the
/// value and whether any inner ladder pair was truncated. A truncated pair is
/// redrawn (conditioning each pair on L <= n_max); the flag records that the
/// sample carries this conditioning bias.
fn sample_nul_value(
    spec: &MuSpec,
    stream: &mut RandomStream,
    tol: f64,
    n_max: u64,
) -> (Vec<f64>, bool) {
    let zero = vec![0.0; spec.dim];
    let mut v = vec![0.0; spec.dim];
    let mut coef = 1.0;
    let mut truncated = false;
    let mut redraws = 0u32;
    loop {
        match ladder_pair(spec, &zero, n_max, stream) {
            Ok(lp) => {
                for (vi, qi) in v.iter_mut().zip(&lp.q) {
                    *vi += coef * qi;
                }
                coef *= lp.m;
                if coef < tol {
                    return (v, truncated);
                }
            }
            Err(Error::Truncated { .. }) => {
                truncated = true;
                redraws += 1;
                if redraws > 1000 {
                    // n_max is hopeless for this law; give up on this sample
                    return (v, true);
                }
            }
            Err(e) => unreachable!("ladder_pair: {e}"),
        }
    }
}

/// Independent samples from (approximately) nu_L, each a truncated backward
/// series of ladder pairs. Samples whose series hit a truncated inner pair
/// are kept but counted in `nul_truncated_fraction`; the sampler only fails
/// if a majority of samples are affected (n_max far too small).
pub fn sample_nu_l(
    spec: &MuSpec,
    params: &NuLParams,
    seed: u64,
) -> Result<PointCloudMeasure> {
    let root = RandomStream::from_seed(seed);
    let n = params.n_samples;
    let results: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut stream = root.substream2(DOM_NUL, i);
            sample_nul_value(spec, &mut stream, params.tol, params.n_max)
        })
        .collect();
    let truncated = results.iter().filter(|(_, t)| *t).count();
    let frac = truncated as f64 / n as f64;
    if frac > 0.5 {
        return Err(Error::Truncated { n_max: params.n_max });
    }
    let mut coords = Vec::with_capacity(n as usize * spec.dim);
    for (v, _) in &results {
        coords.extend_from_slice(v);
    }
    Ok(PointCloudMeasure {
        dim: spec.dim,
        coords,
        weights: Weights::Uniform(1.0 / n as f64),
        excursion_offsets: (0..=n).collect(),
        meta: CloudMeta {
            spec_hash: spec_hash(spec),
            normalization: "nuL_probability".into(),
            m_excursions: n,
            n_max: params.n_max,
            truncated_fraction: 0.0,
            nul_truncated_fraction: frac,
            seed,
            thin_level: 0,
        },
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NuParams {
    pub m_excursions: u64,
    pub n_max: u64,
    pub nul_tol: f64,
    /// Thinning kicks in when the kept cloud would exceed this.
    pub max_points: usize,
    /// Number of independent chained strands (fixed, not tied to workers, so
    /// results are reproducible under any thread count).
    pub n_strands: u64,
}

impl Default for NuParams {
    fn default() -> Self {
        NuParams {
            m_excursions: 1_000_000,
            n_max: 1_000_000,
            nul_tol: 1e-12,
            max_points: 20_000_000,
            n_strands: 256,
        }
    }
}

struct StrandOut {
    coords: Vec<f64>,
    hashes: Vec<f64>,
    exc_counts: Vec<u32>,
    exc_truncated: u64,
    nul_samples: u64,
    nul_truncated: u64,
}

fn thin_threshold(level: u32) -> f64 {
    0.5f64.powi(level as i32)
}

fn run_strand(
    spec: &MuSpec,
    params: &NuParams,
    root: &RandomStream,
    thin_key: u64,
    strand: u64,
    range: std::ops::Range<u64>,
    level0: u32,
) -> StrandOut {
    let thr = thin_threshold(level0);
    let mut out = StrandOut {
        coords: Vec::new(),
        hashes: Vec::new(),
        exc_counts: Vec::with_capacity((range.end - range.start) as usize),
        exc_truncated: 0,
        nul_samples: 1,
        nul_truncated: 0,
    };
    let mut start_stream = root.substream2(DOM_START, strand);
    let (mut start, t) = sample_nul_value(spec, &mut start_stream, params.nul_tol, params.n_max);
    out.nul_truncated += t as u64;
    for e in range {
        let mut stream = root.substream2(DOM_EXC, e);
        let mut kept = 0u32;
        let end = walk_excursion(spec, &start, params.n_max, &mut stream, |n, x| {
            let h = point_hash_unit(thin_key, e, n);
            if h < thr {
                out.coords.extend_from_slice(x);
                out.hashes.push(h);
                kept += 1;
            }
        });
        out.exc_counts.push(kept);
        match end.stopping {
            // the end state X_L is one step of the ladder chain: chain it
            Stopping::Ladder(_) => start = end.end,
            Stopping::Truncated(_) => {
                out.exc_truncated += 1;
                let mut rs = root.substream2(DOM_RESTART, e);
                let (s, t) = sample_nul_value(spec, &mut rs, params.nul_tol, params.n_max);
                out.nul_truncated += t as u64;
                out.nul_samples += 1;
                start = s;
            }
        }
    }
    out
}

/// Compact a (coords, hashes, counts) buffer in place to a tighter threshold.
fn refilter(
    dim: usize,
    coords: &mut Vec<f64>,
    hashes: &mut Vec<f64>,
    counts: &mut [u32],
    thr: f64,
) {
    let mut write = 0usize;
    let mut read = 0usize;
    for c in counts.iter_mut() {
        let mut kept = 0u32;
        for _ in 0..*c {
            if hashes[read] < thr {
                if write != read {
                    hashes[write] = hashes[read];
                    let (dst, src) = (write * dim, read * dim);
                    for k in 0..dim {
                        coords[dst + k] = coords[src + k];
                    }
                }
                write += 1;
                kept += 1;
            }
            read += 1;
        }
        *c = kept;
    }
    hashes.truncate(write);
    coords.truncate(write * dim);
}

/// Build the weighted excursion cloud approximating nu.
pub fn estimate_nu(spec: &MuSpec, params: &NuParams, seed: u64) -> Result<PointCloudMeasure> {
    let m = params.m_excursions;
    if m == 0 {
        return Err(Error::InvalidSpec("m_excursions must be >= 1".into()));
    }
    let root = RandomStream::from_seed(seed);
    let thin_key = mix64(seed ^ 0x7A11_5EED_C0FF_EE00);
    let n_strands = params.n_strands.clamp(1, m);

    // strand e-ranges: strand j owns a contiguous block of excursion indices
    let base = m / n_strands;
    let rem = m % n_strands;
    let mut ranges = Vec::with_capacity(n_strands as usize);
    let mut at = 0u64;
    for j in 0..n_strands {
        let len = base + u64::from(j < rem);
        ranges.push((j, at..at + len));
        at += len;
    }

    let level = AtomicU32::new(0);
    let mut coords: Vec<f64> = Vec::new();
    let mut hashes: Vec<f64> = Vec::new();
    let mut counts: Vec<u32> = Vec::with_capacity(m as usize);
    let mut exc_truncated = 0u64;
    let mut nul_samples = 0u64;
    let mut nul_truncated = 0u64;

    const BATCH: usize = 8;
    for batch in ranges.chunks(BATCH) {
        let level0 = level.load(Ordering::Relaxed);
        let outs: Vec<StrandOut> = batch
            .par_iter()
            .map(|(j, range)| {
                run_strand(spec, params, &root, thin_key, *j, range.clone(), level0)
            })
            .collect();
        for mut out in outs {
            exc_truncated += out.exc_truncated;
            nul_samples += out.nul_samples;
            nul_truncated += out.nul_truncated;
            // workers filtered at level0 <= current level; tighten first
            let cur = level.load(Ordering::Relaxed);
            if cur > level0 {
                refilter(
                    spec.dim,
                    &mut out.coords,
                    &mut out.hashes,
                    &mut out.exc_counts,
                    thin_threshold(cur),
                );
            }
            coords.extend_from_slice(&out.coords);
            hashes.extend_from_slice(&out.hashes);
            counts.extend_from_slice(&out.exc_counts);
            while coords.len() / spec.dim > params.max_points {
                let next = level.load(Ordering::Relaxed) + 1;
                level.store(next, Ordering::Relaxed);
                refilter(spec.dim, &mut coords, &mut hashes, &mut counts, thin_threshold(next));
            }
        }
    }
    drop(hashes);

    let final_level = level.load(Ordering::Relaxed);
    let weight = 2.0f64.powi(final_level as i32) / m as f64;
    let mut offsets = Vec::with_capacity(m as usize + 1);
    let mut acc = 0u64;
    offsets.push(0);
    for c in &counts {
        acc += *c as u64;
        offsets.push(acc);
    }
    Ok(PointCloudMeasure {
        dim: spec.dim,
        coords,
        weights: Weights::Uniform(weight),
        excursion_offsets: offsets,
        meta: CloudMeta {
            spec_hash: spec_hash(spec),
            normalization: "nuL_probability".into(),
            m_excursions: m,
            n_max: params.n_max,
            truncated_fraction: exc_truncated as f64 / m as f64,
            nul_truncated_fraction: if nul_samples > 0 {
                nul_truncated as f64 / nul_samples as f64
            } else {
                0.0
            },
            seed,
            thin_level: final_level,
        },
    })
}

// ---------------------------------------------------------------------------
// Persistence: binary columnar cloud ("NUPC1") + JSON sidecar + offsets file.
// Layout (little-endian): magic "NUPC1", u32 d, u64 n_points,
// weights f64[n_points], coords f64[n_points*d].
// The excursion boundaries live in a companion "<path>.idx" (u64 count, then
// u64 offsets) and the metadata in "<path>.meta.json".
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 5] = b"NUPC1";

pub fn write_cloud(path: &Path, cloud: &PointCloudMeasure) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(cloud.dim as u32).to_le_bytes())?;
    let n = cloud.n_points() as u64;
    w.write_all(&n.to_le_bytes())?;
    match &cloud.weights {
        Weights::Uniform(wt) => {
            let bytes = wt.to_le_bytes();
            for _ in 0..n {
                w.write_all(&bytes)?;
            }
        }
        Weights::PerPoint(v) => {
            for wt in v {
                w.write_all(&wt.to_le_bytes())?;
            }
        }
    }
    for c in &cloud.coords {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()?;

    let idx_path = companion(path, "idx");
    let mut w = BufWriter::new(std::fs::File::create(idx_path)?);
    w.write_all(&(cloud.excursion_offsets.len() as u64).to_le_bytes())?;
    for o in &cloud.excursion_offsets {
        w.write_all(&o.to_le_bytes())?;
    }
    w.flush()?;

    let meta_path = companion(path, "meta.json");
    let json = serde_json::to_string_pretty(&cloud.meta)
        .map_err(|e| Error::BadCloudFile(e.to_string()))?;
    std::fs::write(meta_path, json)?;
    Ok(())
}

fn companion(path: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    std::path::PathBuf::from(s)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn read_cloud(path: &Path) -> Result<PointCloudMeasure> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadCloudFile(format!("bad magic {magic:?}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::BadCloudFile("dimension 0".into()));
    }
    let weights_vec = read_f64_vec(&mut r, n)?;
    let coords = read_f64_vec(&mut r, n * dim)?;
    let uniform = weights_vec.windows(2).all(|w| w[0] == w[1]);
    let weights = if uniform && !weights_vec.is_empty() {
        Weights::Uniform(weights_vec[0])
    } else if weights_vec.is_empty() {
        Weights::Uniform(0.0)
    } else {
        Weights::PerPoint(weights_vec)
    };

    let idx_path = companion(path, "idx");
    let excursion_offsets = if idx_path.exists() {
        let mut r = BufReader::new(std::fs::File::open(idx_path)?);
        let len = read_u64(&mut r)? as usize;
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(read_u64(&mut r)?);
        }
        if v.first() != Some(&0) || v.last() != Some(&(n as u64)) {
            return Err(Error::BadCloudFile("offset index inconsistent with point count".into()));
        }
        v
    } else {
        // degrade gracefully: every point its own cluster
        (0..=n as u64).collect()
    };

    let meta_path = companion(path, "meta.json");
    let meta = if meta_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(meta_path)?)
            .map_err(|e| Error::BadCloudFile(e.to_string()))?
    } else {
        CloudMeta {
            spec_hash: String::new(),
            normalization: "nuL_probability".into(),
            m_excursions: excursion_offsets.len() as u64 - 1,
            n_max: 0,
            truncated_fraction: 0.0,
            nul_truncated_fraction: 0.0,
            seed: 0,
            thin_level: 0,
        }
    };
    Ok(PointCloudMeasure { dim, coords, weights, excursion_offsets, meta })
}

/// CSV export: excursion_id, weight, then one column per coordinate.
pub fn export_csv(path: &Path, cloud: &PointCloudMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::BadCloudFile(e.to_string()))?;
    let mut header = vec!["excursion_id".to_string(), "weight".to_string()];
    for k in 0..cloud.dim {
        header.push(format!("u{k}"));
    }
    w.write_record(&header).map_err(|e| Error::BadCloudFile(e.to_string()))?;
    for e in 0..cloud.n_excursions() {
        let lo = cloud.excursion_offsets[e] as usize;
        let hi = cloud.excursion_offsets[e + 1] as usize;
        for i in lo..hi {
            let mut rec = vec![e.to_string(), format!("{:.17e}", cloud.weight(i))];
            for c in cloud.point(i) {
                rec.push(format!("{c:.17e}"));
            }
            w.write_record(&rec).map_err(|e| Error::BadCloudFile(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{spec_1d, ALaw};
    use approx::assert_abs_diff_eq;

    fn lognormal1() -> MuSpec {
        spec_1d(ALaw::Lognormal { s: 1.0 }, 1.0)
    }

    fn two_point1() -> MuSpec {
        spec_1d(ALaw::TwoPoint { p: 1.0 }, 1.0)
    }

    fn small_nu(spec: &MuSpec, seed: u64, m: u64) -> PointCloudMeasure {
        let params = NuParams {
            m_excursions: m,
            n_max: 100_000,
            max_points: 4_000_000,
            ..Default::default()
        };
        estimate_nu(spec, &params, seed).unwrap()
    }

    #[test]
    fn degenerate_ladder_geometric_fixed_point() {
        // ConstA(e^-1): every excursion has L=1, so (Q, M) = (B, e^-1)
        // deterministically and the backward series is geometric: q/(1-m).
        let q = 2.5;
        let spec = spec_1d(ALaw::ConstA { a: (-1.0f64).exp() }, q);
        let m = (-1.0f64).exp();
        let expect = q / (1.0 - m);
        let cloud = sample_nu_l(&spec, &NuLParams { n_samples: 50, ..Default::default() }, 3)
            .unwrap();
        let tol_abs = 1e-12 * q / (1.0 - m);
        for i in 0..cloud.n_points() {
            assert!((cloud.point(i)[0] - expect).abs() < tol_abs.max(1e-9));
        }
    }

    #[test]
    fn nul_positive_and_normalized() {
        let cloud = sample_nu_l(
            &two_point1(),
            &NuLParams { n_samples: 2000, ..Default::default() },
            5,
        )
        .unwrap();
        assert_abs_diff_eq!(cloud.total_mass(), 1.0, epsilon = 1e-12);
        for i in 0..cloud.n_points() {
            assert!(cloud.point(i)[0] > 0.0);
        }
    }

    #[test]
    fn nul_stationarity_ks() {
        // Independent oracle: the forward ladder chain run long, thinned.
        let spec = lognormal1();
        let params = NuLParams { n_samples: 3000, ..Default::default() };
        let cloud = sample_nu_l(&spec, &params, 11).unwrap();
        let mut a: Vec<f64> = (0..cloud.n_points()).map(|i| cloud.point(i)[0].abs()).collect();

        let root = RandomStream::from_seed(1234);
        let mut stream = root.substream(0);
        let zero = [0.0];
        let mut x = vec![0.0];
        let mut b = Vec::new();
        let mut step = 0usize;
        while b.len() < 3000 {
            let lp = match ladder_pair(&spec, &zero, 1_000_000, &mut stream) {
                Ok(lp) => lp,
                Err(Error::Truncated { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            x[0] = lp.m * x[0] + lp.q[0];
            step += 1;
            if step > 200 && step % 5 == 0 {
                b.push(x[0].abs());
            }
        }
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample KS
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let f1 = i as f64 / a.len() as f64;
            let f2 = j as f64 / b.len() as f64;
            d = d.max((f1 - f2).abs());
        }
        let crit = 1.628 * ((a.len() + b.len()) as f64 / (a.len() * b.len()) as f64).sqrt();
        assert!(d < crit, "KS statistic {d} exceeds 1% critical value {crit}");
    }

    #[test]
    fn integrate_trivial_cases() {
        let cloud = small_nu(&two_point1(), 2, 2000);
        let zero = cloud.integrate(|_| 0.0);
        assert_eq!((zero.value, zero.stderr), (0.0, 0.0));
        // indicator of a set disjoint from the (positive) support
        let disjoint = cloud.integrate(|u| f64::from(u[0] < -1.0));
        assert_eq!((disjoint.value, disjoint.stderr), (0.0, 0.0));
        // linearity + monotonicity
        let f = cloud.integrate(|u| 1.0 / (1.0 + u[0].abs()));
        let g = cloud.integrate(|u| 2.0 / (1.0 + u[0].abs()));
        assert_abs_diff_eq!(2.0 * f.value, g.value, epsilon = 1e-9 * g.value.abs());
        assert!(g.value >= f.value);
    }

    #[test]
    fn positive_b_gives_positive_points() {
        let cloud = small_nu(&two_point1(), 7, 3000);
        for i in 0..cloud.n_points() {
            assert!(cloud.point(i)[0] > 0.0);
        }
        assert!(cloud.meta.truncated_fraction < 0.2);
    }

    #[test]
    fn split_sample_annulus_agreement() {
        let spec = lognormal1();
        let c1 = small_nu(&spec, 101, 30_000);
        let c2 = small_nu(&spec, 202, 30_000);
        let annulus = |u: &[f64]| f64::from(u[0].abs() > 1.0 && u[0].abs() <= std::f64::consts::E);
        let a = c1.integrate(annulus);
        let b = c2.integrate(annulus);
        let comb = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        assert!(
            (a.value - b.value).abs() <= 3.0 * comb,
            "{} vs {} (3se = {})",
            a.value,
            b.value,
            3.0 * comb
        );
    }

    #[test]
    fn one_step_invariance() {
        // |nu(phi) - (mu * nu)(phi)| <= 3 stderr for a smooth annulus bump
        let spec = lognormal1();
        let cloud = small_nu(&spec, 31, 40_000);
        let bump = |u: &[f64]| {
            let t = u[0].abs().ln();
            // smooth bump supported on log|u| in (0, 2)
            if t > 0.0 && t < 2.0 {
                let s = (t - 1.0) / 1.0;
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        };
        let direct = cloud.integrate(bump);
        // resample one step with a fresh pair per point (common stream root)
        let root = RandomStream::from_seed(909);
        let m = cloud.n_excursions();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for e in 0..m {
            let lo = cloud.excursion_offsets[e] as usize;
            let hi = cloud.excursion_offsets[e + 1] as usize;
            let mut t = 0.0;
            for i in lo..hi {
                let mut s = root.substream(i as u64);
                let g = spec.sample_pair(&mut s);
                let moved = g.act(cloud.point(i));
                t += cloud.weight(i) * bump(&moved);
            }
            sum += t;
            sum_sq += t * t;
        }
        let mf = m as f64;
        let stderr = (mf * (sum_sq - sum * sum / mf) / (mf - 1.0)).max(0.0).sqrt();
        let comb = (direct.stderr.powi(2) + stderr.powi(2)).sqrt();
        assert!(
            (direct.value - sum).abs() <= 3.0 * comb,
            "nu(phi) = {} vs mu*nu(phi) = {} (3se = {})",
            direct.value,
            sum,
            3.0 * comb
        );
    }

    #[test]
    fn integrability_diagnostics() {
        let cloud = small_nu(&lognormal1(), 17, 30_000);
        for gamma in [0.5, 1.0, 2.0] {
            let est = cloud.integrate(|u| (1.0 + u[0].abs()).powf(-gamma));
            assert!(est.value.is_finite() && est.value > 0.0);
            assert!(est.stderr < est.value, "gamma={gamma}: {est:?}");
        }
    }

    #[test]
    fn thinning_preserves_estimates() {
        // same seed, aggressive max_points: thinned cloud must agree with the
        // unthinned one within MC-thinning noise
        let spec = lognormal1();
        let full = estimate_nu(
            &spec,
            &NuParams {
                m_excursions: 10_000,
                n_max: 100_000,
                max_points: 50_000_000,
                ..Default::default()
            },
            77,
        )
        .unwrap();
        let thin = estimate_nu(
            &spec,
            &NuParams {
                m_excursions: 10_000,
                n_max: 100_000,
                max_points: 100_000,
                ..Default::default()
            },
            77,
        )
        .unwrap();
        assert_eq!(full.meta.thin_level, 0);
        assert!(thin.meta.thin_level >= 1);
        let phi = |u: &[f64]| f64::from(u[0].abs() > 1.0 && u[0].abs() < 20.0);
        let a = full.integrate(phi);
        let b = thin.integrate(phi);
        let comb = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        assert!((a.value - b.value).abs() <= 4.0 * comb);
    }

    #[test]
    fn dilation_identities() {
        let cloud = small_nu(&two_point1(), 3, 3000);
        let phi = |u: &[f64]| f64::from(u[0].abs() > 1.0 && u[0].abs() <= std::f64::consts::E);
        let d1 = cloud.dilation(1.0, phi);
        let direct = cloud.integrate(phi);
        assert_eq!(d1.value, direct.value);
        // covariance: dilation(z, phi(./w)) = dilation(zw, phi)
        let z = 2.0;
        let w = 3.0;
        let a = cloud.dilation(z, move |u: &[f64]| phi(&[u[0] / w]));
        let b = cloud.dilation(z * w, phi);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn roundtrip_cloud_file() {
        let cloud = small_nu(&two_point1(), 13, 500);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.nupc");
        write_cloud(&path, &cloud).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.dim, cloud.dim);
        assert_eq!(back.coords, cloud.coords);
        assert_eq!(back.excursion_offsets, cloud.excursion_offsets);
        assert_eq!(back.meta.m_excursions, cloud.meta.m_excursions);
        match (&back.weights, &cloud.weights) {
            (Weights::Uniform(a), Weights::Uniform(b)) => assert_eq!(a, b),
            _ => panic!("weights kind changed"),
        }
        export_csv(&dir.path().join("cloud.csv"), &back).unwrap();
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let spec = lognormal1();
        let params = NuParams {
            m_excursions: 4000,
            n_max: 100_000,
            max_points: 200_000,
            ..Default::default()
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let c1 = pool1.install(|| estimate_nu(&spec, &params, 55)).unwrap();
        let c4 = pool4.install(|| estimate_nu(&spec, &params, 55)).unwrap();
        assert_eq!(c1.coords, c4.coords);
        assert_eq!(c1.excursion_offsets, c4.excursion_offsets);
        assert_eq!(c1.meta.thin_level, c4.meta.thin_level);
    }
}
