//! The log-multiplier walk S_n = log(A_1...A_n), its strict downward ladder
//! epoch L = inf{n : S_n < 0}, and exact enumeration machinery for the
//! duality identity E[sum_{i<L} s^i] = E[sum_i s^{T_i}] over ascending ladder
//! epochs of the reversed walk.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::MuSpec;
use crate::rng::RandomStream;

/// How an excursion ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stopping {
    /// Ladder epoch L reached: S_L < 0 with S_k >= 0 for k < L.
    Ladder(u64),
    /// S stayed nonnegative through n_max steps.
    Truncated(u64),
}

/// One recorded excursion X_0..X_{n_stop-1} with the walk values alongside.
#[derive(Clone, Debug)]
pub struct Excursion {
    pub dim: usize,
    /// Visited points X_0..X_{n_stop-1}, flattened row-major.
    pub path: Vec<f64>,
    /// S_0 = 0, ..., S_{n_stop} (includes the final S_L < 0 when stopped).
    pub walk: Vec<f64>,
    /// Per-step log A_k, k = 1..n_stop (for path-consistency checks).
    pub log_steps: Vec<f64>,
    pub stopping: Stopping,
    /// Strict upward ladder epochs T_1 < T_2 < ... within the horizon.
    pub ladder_up: Vec<u64>,
    pub seed_tag: u64,
}

impl Excursion {
    pub fn len(&self) -> usize {
        self.path.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.path[i * self.dim..(i + 1) * self.dim]
    }
}

/// The ladder pair (Q, M) = (X_L, e^{S_L}); always m < 1.
#[derive(Clone, Debug)]
pub struct LadderPair {
    pub q: Vec<f64>,
    pub m: f64,
}

/// Terminal data of a streamed excursion.
pub struct ExcursionEnd {
    /// X_L when a ladder epoch was reached, else the last visited point.
    pub end: Vec<f64>,
    pub s_end: f64,
    pub stopping: Stopping,
}

/// Core excursion loop. Calls `visit(n, x)` for each visited point
/// X_0..X_{L-1} (or up to n_max-1 on truncation) without storing the path.
///
/// The state is tracked in the scaled form X_n = e^{S_n} W_n with
/// W_n = W_{n-1} + e^{-S_n} B_n: within an excursion S_n >= 0, so W stays
/// moderate even when S climbs past the f64 exponent range and X_n itself
/// overflows. Overflow then only affects the visited values (genuinely
/// astronomically large |u|), never the ladder state X_L = e^{S_L} W_L,
/// which is always of moderate size.
pub fn walk_excursion<F: FnMut(u64, &[f64])>(
    spec: &MuSpec,
    start: &[f64],
    n_max: u64,
    stream: &mut RandomStream,
    mut visit: F,
) -> ExcursionEnd {
    let dim = spec.dim;
    let mut w = start.to_vec();
    let mut x = vec![0.0; dim];
    let mut s = 0.0;
    visit(0, start);
    for n in 1..=n_max {
        let (b, log_a) = spec.sample_pair_log(stream);
        s += log_a;
        let scale_in = (-s).exp();
        let scale_out = s.exp();
        for (wi, bi) in w.iter_mut().zip(&b) {
            *wi += scale_in * bi;
        }
        if s < 0.0 {
            let end = w.iter().map(|wi| scale_out * wi).collect();
            return ExcursionEnd { end, s_end: s, stopping: Stopping::Ladder(n) };
        }
        if n < n_max {
            for (xi, wi) in x.iter_mut().zip(&w) {
                *xi = scale_out * wi;
            }
            visit(n, &x);
        } else {
            let end = w.iter().map(|wi| scale_out * wi).collect();
            return ExcursionEnd { end, s_end: s, stopping: Stopping::Truncated(n_max) };
        }
    }
    unreachable!("n_max >= 1 guarantees the loop returns");
}

/// Run one excursion, recording path, walk and ladder data.
pub fn run_excursion(
    spec: &MuSpec,
    start: &[f64],
    n_max: u64,
    stream: &mut RandomStream,
    seed_tag: u64,
) -> Excursion {
    let dim = spec.dim;
    let mut path = Vec::new();
    let mut walk = vec![0.0];
    let mut log_steps = Vec::new();
    let mut ladder_up = Vec::new();
    let mut x = start.to_vec();
    path.extend_from_slice(&x);
    let mut s = 0.0;
    let mut running_max = 0.0;
    let mut stopping = Stopping::Truncated(n_max);
    for n in 1..=n_max {
        let g = spec.sample_pair(stream);
        let step = g.a.ln();
        s += step;
        walk.push(s);
        log_steps.push(step);
        if s > running_max {
            ladder_up.push(n);
            running_max = s;
        }
        if s < 0.0 {
            stopping = Stopping::Ladder(n);
            break;
        }
        x = g.act(&x);
        if n < n_max {
            path.extend_from_slice(&x);
        }
    }
    Excursion { dim, path, walk, log_steps, stopping, ladder_up, seed_tag }
}

/// Run to the ladder epoch and return (X_L, e^{S_L}).
pub fn ladder_pair(
    spec: &MuSpec,
    start: &[f64],
    n_max: u64,
    stream: &mut RandomStream,
) -> Result<LadderPair> {
    let end = walk_excursion(spec, start, n_max, stream, |_, _| {});
    match end.stopping {
        Stopping::Ladder(_) => Ok(LadderPair { q: end.end, m: end.s_end.exp() }),
        Stopping::Truncated(n) => Err(Error::Truncated { n_max: n }),
    }
}

/// A finite-support lattice step law for exact enumeration: steps are
/// integers in units of `span`, probabilities sum to 1.
#[derive(Clone, Debug)]
pub struct StepLaw {
    pub steps: Vec<(i64, f64)>,
    pub span: f64,
}

impl StepLaw {
    pub fn new(steps: Vec<(i64, f64)>, span: f64) -> Result<Self> {
        let total: f64 = steps.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("step probabilities sum to {total}")));
        }
        let mean: f64 = steps.iter().map(|(k, p)| *k as f64 * p).sum();
        if mean.abs() > 1e-12 {
            return Err(Error::NonCritical { mean_log_a: mean * span });
        }
        Ok(StepLaw { steps, span })
    }

    /// The symmetric +-1 law of the two_point family.
    pub fn from_spec(spec: &MuSpec) -> Result<Self> {
        match spec.a_law {
            crate::model::ALaw::TwoPoint { p } => {
                StepLaw::new(vec![(1, 0.5), (-1, 0.5)], p)
            }
            _ => Err(Error::InvalidSpec(
                "duality enumeration needs a finite-support lattice step law".into(),
            )),
        }
    }
}

/// Result of the exact duality enumeration with weight alpha_i = s^i.
#[derive(Clone, Copy, Debug)]
pub struct DualityResult {
    /// E[sum_{i=0}^{L-1} s^i], direct side.
    pub lhs: f64,
    /// E[sum_i s^{T_i}] over WEAK ascending ladder epochs (S_i >= max_{j<i}).
    pub rhs_weak: f64,
    /// Same with strict epochs (S_i > max); differs on lattices.
    pub rhs_strict: f64,
    /// Truncation bound s^depth/(1-s) on each side.
    pub bound: f64,
}

pub const DUALITY_MAX_DEPTH: usize = 25;

/// Exact probability-weighted enumeration of both sides of the duality
/// identity up to `depth` steps. The direct side sums s^i over survival
/// probabilities P(S_1..S_i >= 0); the dual side sums s^i over ladder-epoch
/// probabilities, enumerated through the gap process G_i = max_{j<i} S_j - S_i.
pub fn duality_check(law: &StepLaw, s: f64, depth: usize) -> Result<DualityResult> {
    if depth > DUALITY_MAX_DEPTH {
        return Err(Error::DepthOverflow { depth, max: DUALITY_MAX_DEPTH });
    }
    if !(0.0 < s && s < 1.0) {
        return Err(Error::InvalidSpec(format!("weight s = {s} not in (0,1)")));
    }

    // lhs: survival DP over the walk value conditioned on staying >= 0.
    let mut alive: BTreeMap<i64, f64> = BTreeMap::from([(0, 1.0)]);
    let mut lhs = 0.0;
    let mut s_pow = 1.0;
    for _ in 0..depth {
        let q: f64 = alive.values().sum();
        lhs += s_pow * q;
        s_pow *= s;
        let mut next = BTreeMap::new();
        for (&v, &mass) in &alive {
            for &(k, p) in &law.steps {
                let w = v + k;
                if w >= 0 {
                    *next.entry(w).or_insert(0.0) += mass * p;
                }
            }
        }
        alive = next;
    }

    // rhs: DP over the gap to the running maximum; G_{i+1} = max(G_i,0) - y.
    // i = 0 is always a ladder epoch (both conventions).
    let mut gap: BTreeMap<i64, f64> = BTreeMap::from([(0, 1.0)]);
    let mut rhs_weak = 1.0;
    let mut rhs_strict = 1.0;
    let mut s_pow = s;
    for _ in 1..depth {
        let mut next = BTreeMap::new();
        for (&g, &mass) in &gap {
            let base = g.max(0);
            for &(k, p) in &law.steps {
                *next.entry(base - k).or_insert(0.0) += mass * p;
            }
        }
        gap = next;
        let p_weak: f64 = gap.iter().filter(|(g, _)| **g <= 0).map(|(_, m)| m).sum();
        let p_strict: f64 = gap.iter().filter(|(g, _)| **g < 0).map(|(_, m)| m).sum();
        rhs_weak += s_pow * p_weak;
        rhs_strict += s_pow * p_strict;
        s_pow *= s;
    }

    let bound = s.powi(depth as i32) / (1.0 - s);
    Ok(DualityResult { lhs, rhs_weak, rhs_strict, bound })
}

/// Exact P(L = n) for n = 1..depth by the same survival DP (test oracle).
pub fn ladder_epoch_pmf(law: &StepLaw, depth: usize) -> Result<Vec<f64>> {
    if depth > 40 {
        return Err(Error::DepthOverflow { depth, max: 40 });
    }
    let mut alive: BTreeMap<i64, f64> = BTreeMap::from([(0, 1.0)]);
    let mut q_prev = 1.0;
    let mut pmf = Vec::with_capacity(depth);
    for _ in 1..=depth {
        let mut next = BTreeMap::new();
        for (&v, &mass) in &alive {
            for &(k, p) in &law.steps {
                let w = v + k;
                if w >= 0 {
                    *next.entry(w).or_insert(0.0) += mass * p;
                }
            }
        }
        alive = next;
        let q: f64 = alive.values().sum();
        pmf.push(q_prev - q);
        q_prev = q;
    }
    Ok(pmf)
}
