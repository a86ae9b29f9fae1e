//! Input law of the affine recursion X_n = A_n X_{n-1} + B_n.
//!
//! The multiplier families are constructed so that E[log A] = 0 holds exactly
//! (criticality is a measure-zero condition, so it is enforced analytically,
//! never estimated). Lattice structure is likewise declarative: `two_point(p)`
//! is the lattice family with span p, everything else is aperiodic.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Law of log A. Y denotes -log A throughout (the driving walk steps on -S).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ALaw {
    /// log A ~ Normal(0, s^2); aperiodic, all exponential moments.
    Lognormal { s: f64 },
    /// log A in {+p, -p} each with probability 1/2; lattice with span p.
    TwoPoint { p: f64 },
    /// Y = -log A is a centered two-sided exponential mixture:
    /// Y = +Exp(lambda_plus) w.p. q, -Exp(lambda_minus) w.p. 1-q,
    /// with q = lambda_plus/(lambda_plus+lambda_minus) so that E Y = 0.
    /// Aperiodic, possibly asymmetric; exponential moments up to min(lambda).
    ShiftedExpMix { lambda_plus: f64, lambda_minus: f64 },
    /// A constant (for validation tests; never critical unless a = 1,
    /// and a = 1 is degenerate).
    ConstA { a: f64 },
}

/// Law of the additive term B (independent of A).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BLaw {
    Constant { value: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// Independent Gaussian coordinates.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// |B| lognormal(mu, sigma), direction uniform on the sphere.
    LognormalRadial { mu: f64, sigma: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MuSpec {
    pub dim: usize,
    pub a_law: ALaw,
    pub b_law: BLaw,
    /// Optional recentering x0: sampling applies the conjugation
    /// (x0,1)*(b,a)*(-x0,1), i.e. b -> b + (1-a) x0. Tail behavior is
    /// unchanged; defaults to 0.
    #[serde(default)]
    pub recenter_offset: Vec<f64>,
}

/// Group element (b, a) of the "ax+b" group.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePair {
    pub b: Vec<f64>,
    pub a: f64,
}

impl AffinePair {
    pub fn identity(dim: usize) -> Self {
        AffinePair { b: vec![0.0; dim], a: 1.0 }
    }

    /// (b,a)·(b',a') = (b + a b', a a').
    pub fn compose(&self, other: &AffinePair) -> AffinePair {
        let b = self
            .b
            .iter()
            .zip(&other.b)
            .map(|(bi, bpi)| bi + self.a * bpi)
            .collect();
        AffinePair { b, a: self.a * other.a }
    }

    /// (b,a)·x = a x + b.
    pub fn act(&self, x: &[f64]) -> Vec<f64> {
        self.b.iter().zip(x).map(|(bi, xi)| self.a * xi + bi).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub lattice_span: f64,
    pub sigma2: f64,
    pub moment_delta: f64,
    pub moment_epsilon: f64,
    pub ok: bool,
}

impl ALaw {
    fn exp_mix_q(lp: f64, lm: f64) -> f64 {
        lp / (lp + lm)
    }

    /// E[log A]; zero for all admissible critical families.
    pub fn mean_log_a(&self) -> f64 {
        match self {
            ALaw::Lognormal { .. } | ALaw::TwoPoint { .. } | ALaw::ShiftedExpMix { .. } => 0.0,
            ALaw::ConstA { a } => a.ln(),
        }
    }

    /// sigma^2 = Var(log A) = integral of x^2 d(mu-bar).
    pub fn sigma2(&self) -> f64 {
        match self {
            ALaw::Lognormal { s } => s * s,
            ALaw::TwoPoint { p } => p * p,
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                let q = Self::exp_mix_q(*lambda_plus, *lambda_minus);
                2.0 * (q / (lambda_plus * lambda_plus)
                    + (1.0 - q) / (lambda_minus * lambda_minus))
            }
            ALaw::ConstA { .. } => 0.0,
        }
    }

    /// Lattice span: p > 0 iff supp(mu_A) generates {e^{np}}, else 0.
    pub fn lattice_span(&self) -> f64 {
        match self {
            ALaw::TwoPoint { p } => *p,
            _ => 0.0,
        }
    }

    /// Small-moment exponent delta with E[A^delta + A^-delta] < infinity.
    pub fn moment_delta(&self) -> f64 {
        match self {
            ALaw::Lognormal { .. } | ALaw::TwoPoint { .. } => 1.0,
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                0.5 * lambda_plus.min(*lambda_minus)
            }
            ALaw::ConstA { .. } => 1.0,
        }
    }

    /// (2+epsilon)-moment margin of |log A|; all families here have all
    /// polynomial moments, so epsilon = 2 is declared uniformly.
    pub fn moment_epsilon(&self) -> f64 {
        2.0
    }

    /// Draw log A.
    pub fn sample_log_a(&self, stream: &mut RandomStream) -> f64 {
        match self {
            ALaw::Lognormal { s } => s * stream.next_normal(),
            ALaw::TwoPoint { p } => {
                if stream.next_bool(0.5) {
                    *p
                } else {
                    -*p
                }
            }
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                // log A = -Y
                let q = Self::exp_mix_q(*lambda_plus, *lambda_minus);
                let e = -stream.next_f64_open().ln();
                if stream.next_bool(q) {
                    -e / lambda_plus
                } else {
                    e / lambda_minus
                }
            }
            ALaw::ConstA { a } => a.ln(),
        }
    }

    /// Characteristic function of mu-bar (law of Y = -log A).
    pub fn mu_hat(&self, theta: f64) -> Complex64 {
        match self {
            ALaw::Lognormal { s } => Complex64::new((-0.5 * s * s * theta * theta).exp(), 0.0),
            ALaw::TwoPoint { p } => Complex64::new((p * theta).cos(), 0.0),
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                let q = Self::exp_mix_q(*lambda_plus, *lambda_minus);
                let pos = Complex64::new(*lambda_plus, 0.0)
                    / Complex64::new(*lambda_plus, -theta);
                let neg = Complex64::new(*lambda_minus, 0.0)
                    / Complex64::new(*lambda_minus, theta);
                q * pos + (1.0 - q) * neg
            }
            ALaw::ConstA { a } => {
                let y = -a.ln();
                Complex64::new(0.0, y * theta).exp()
            }
        }
    }

    /// Numerically stable 1 - Re mu_hat (the real part is what controls the
    /// removable singularity at theta = 0 for the symmetric families).
    pub fn one_minus_mu_hat(&self, theta: f64) -> Complex64 {
        match self {
            ALaw::Lognormal { s } => {
                Complex64::new(-(-0.5 * s * s * theta * theta).exp_m1(), 0.0)
            }
            ALaw::TwoPoint { p } => {
                let h = (0.5 * p * theta).sin();
                Complex64::new(2.0 * h * h, 0.0)
            }
            _ => Complex64::new(1.0, 0.0) - self.mu_hat(theta),
        }
    }

    /// The kernel r(x) = E[|Y - x| - |x|] in closed form.
    pub fn r_fn(&self, x: f64) -> f64 {
        match self {
            ALaw::Lognormal { s } => {
                // 2( s phi(x/s) - |x| Phi(-|x|/s) )
                let ax = x.abs();
                let t = ax / s;
                2.0 * (s * normal_pdf(t) - ax * normal_cdf(-t))
            }
            ALaw::TwoPoint { p } => (p - x.abs()).max(0.0),
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                // for x >= 0 only the positive branch of Y reaches past x:
                // r(x) = 2 E[(Y - x)^+] = 2 q e^{-lambda_+ x} / lambda_+
                let q = Self::exp_mix_q(*lambda_plus, *lambda_minus);
                if x >= 0.0 {
                    2.0 * q * (-lambda_plus * x).exp() / lambda_plus
                } else {
                    2.0 * (1.0 - q) * (lambda_minus * x).exp() / lambda_minus
                }
            }
            ALaw::ConstA { a } => {
                let y = -a.ln();
                (y - x).abs() - x.abs()
            }
        }
    }

    /// K(r) = integral of x r(x) dx; zero for symmetric mu-bar.
    pub fn r_first_moment(&self) -> f64 {
        match self {
            ALaw::Lognormal { .. } | ALaw::TwoPoint { .. } => 0.0,
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                let q = Self::exp_mix_q(*lambda_plus, *lambda_minus);
                let lm = *lambda_minus;
                let lp = *lambda_plus;
                2.0 * (q / (lp * lp * lp) - (1.0 - q) / (lm * lm * lm))
            }
            ALaw::ConstA { .. } => f64::NAN,
        }
    }

    /// Whether the step law of Y = log A is symmetric about 0 (so mu_hat is
    /// real and even).
    pub fn is_symmetric(&self) -> bool {
        match self {
            ALaw::Lognormal { .. } | ALaw::TwoPoint { .. } => true,
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => lambda_plus == lambda_minus,
            ALaw::ConstA { .. } => false,
        }
    }

    /// Exponential decay rate of r: r(x) <= C e^{-delta1 |x|}.
    pub fn r_decay_rate(&self) -> Option<f64> {
        match self {
            ALaw::Lognormal { .. } => None, // faster than exponential
            ALaw::TwoPoint { .. } => None,  // compact support
            ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
                Some(lambda_plus.min(*lambda_minus))
            }
            ALaw::ConstA { .. } => None,
        }
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_scalar(-x / std::f64::consts::SQRT_2)
}

fn erfc_scalar(x: f64) -> f64 {
    use statrs::function::erf::erfc;
    erfc(x)
}

impl BLaw {
    pub fn sample(&self, dim: usize, stream: &mut RandomStream) -> Vec<f64> {
        match self {
            BLaw::Constant { value } => value.clone(),
            BLaw::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * stream.next_f64())
                .collect(),
            BLaw::Gaussian { mean, sd } => mean
                .iter()
                .zip(sd)
                .map(|(m, s)| m + s * stream.next_normal())
                .collect(),
            BLaw::LognormalRadial { mu, sigma } => {
                let radius = (mu + sigma * stream.next_normal()).exp();
                let dir = sample_unit_vector(dim, stream);
                dir.into_iter().map(|d| radius * d).collect()
            }
        }
    }

    fn dim_ok(&self, dim: usize) -> bool {
        match self {
            BLaw::Constant { value } => value.len() == dim,
            BLaw::Uniform { lo, hi } => lo.len() == dim && hi.len() == dim,
            BLaw::Gaussian { mean, sd } => mean.len() == dim && sd.len() == dim,
            BLaw::LognormalRadial { .. } => true,
        }
    }

    /// True when B = 0 almost surely (then x = 0 is a fixed point).
    fn is_deterministic_zero(&self) -> bool {
        match self {
            BLaw::Constant { value } => value.iter().all(|v| *v == 0.0),
            BLaw::Uniform { lo, hi } => {
                lo.iter().zip(hi).all(|(l, h)| *l == 0.0 && *h == 0.0)
            }
            BLaw::Gaussian { mean, sd } => {
                mean.iter().all(|m| *m == 0.0) && sd.iter().all(|s| *s == 0.0)
            }
            BLaw::LognormalRadial { .. } => false,
        }
    }

    /// True when B is supported in the (strictly) positive orthant — the
    /// sufficient condition for the positive half-space to be invariant.
    pub fn is_positive(&self) -> bool {
        match self {
            BLaw::Constant { value } => value.iter().all(|v| *v > 0.0),
            BLaw::Uniform { lo, .. } => lo.iter().all(|l| *l > 0.0),
            BLaw::Gaussian { .. } => false,
            BLaw::LognormalRadial { .. } => false,
        }
    }
}

fn sample_unit_vector(dim: usize, stream: &mut RandomStream) -> Vec<f64> {
    if dim == 1 {
        return vec![if stream.next_bool(0.5) { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| stream.next_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl MuSpec {
    pub fn sigma2(&self) -> f64 {
        self.a_law.sigma2()
    }

    pub fn lattice_span(&self) -> f64 {
        self.a_law.lattice_span()
    }

    pub fn is_lattice(&self) -> bool {
        self.lattice_span() > 0.0
    }

    fn offset(&self) -> Option<&[f64]> {
        if self.recenter_offset.is_empty()
            || self.recenter_offset.iter().all(|v| *v == 0.0)
        {
            None
        } else {
            Some(&self.recenter_offset)
        }
    }

    /// Draw one (B, A) pair as (b, log a) — the walk works in log scale to
    /// avoid overflow during long excursions. With a recenter offset x0 the
    /// pair is conjugated: (b, a) -> (b + (1-a) x0, a).
    pub fn sample_pair_log(&self, stream: &mut RandomStream) -> (Vec<f64>, f64) {
        let log_a = self.a_law.sample_log_a(stream);
        let mut b = self.b_law.sample(self.dim, stream);
        if let Some(x0) = self.offset() {
            let a = log_a.exp();
            for (bi, x0i) in b.iter_mut().zip(x0) {
                *bi += (1.0 - a) * x0i;
            }
        }
        (b, log_a)
    }

    /// Draw one (B, A) pair.
    pub fn sample_pair(&self, stream: &mut RandomStream) -> AffinePair {
        let (b, log_a) = self.sample_pair_log(stream);
        AffinePair { b, a: log_a.exp() }
    }
}

/// Run all hypothesis checks and collect a report (never errors).
pub fn validation_report(spec: &MuSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(CheckResult { name: name.to_string(), passed, detail });
    };

    let mean_log_a = spec.a_law.mean_log_a();
    push(
        "criticality",
        mean_log_a == 0.0,
        format!("E[log A] = {mean_log_a} (analytic)"),
    );

    let a_degenerate = matches!(spec.a_law, ALaw::ConstA { a } if a == 1.0);
    push(
        "a_nondegenerate",
        !a_degenerate,
        if a_degenerate { "A = 1 a.s.".into() } else { "P[A = 1] < 1".into() },
    );

    let fixed_point = spec.b_law.is_deterministic_zero() && spec.offset().is_none();
    push(
        "no_fixed_point",
        !fixed_point,
        if fixed_point {
            "B = 0 a.s., so x = 0 is a fixed point".into()
        } else {
            "P[A x + B = x] < 1 for all x".into()
        },
    );

    let dim_ok = spec.dim >= 1 && spec.b_law.dim_ok(spec.dim);
    push("dimensions", dim_ok, format!("d = {}", spec.dim));

    let params_ok = match &spec.a_law {
        ALaw::Lognormal { s } => *s > 0.0,
        ALaw::TwoPoint { p } => *p > 0.0,
        ALaw::ShiftedExpMix { lambda_plus, lambda_minus } => {
            *lambda_plus > 0.0 && *lambda_minus > 0.0
        }
        ALaw::ConstA { a } => *a > 0.0,
    };
    push("a_law_parameters", params_ok, "family parameters positive".into());

    let sigma2 = spec.a_law.sigma2();
    push(
        "sigma2_finite_positive",
        sigma2.is_finite() && sigma2 > 0.0,
        format!("sigma^2 = {sigma2}"),
    );

    let eps = spec.a_law.moment_epsilon();
    push(
        "moments_2_plus_eps",
        eps > 0.0,
        format!("(|log A| + log+|B|)^(2+{eps}) integrable (family-declared)"),
    );

    let ok = checks.iter().all(|c| c.passed);
    ValidationReport {
        checks,
        lattice_span: spec.lattice_span(),
        sigma2,
        moment_delta: spec.a_law.moment_delta(),
        moment_epsilon: eps,
        ok,
    }
}

/// Validate and return the report, or the first failing condition as an error.
pub fn validate_spec(spec: &MuSpec) -> Result<ValidationReport> {
    let report = validation_report(spec);
    if report.ok {
        return Ok(report);
    }
    let first = report.checks.iter().find(|c| !c.passed).unwrap();
    Err(match first.name.as_str() {
        "criticality" => Error::NonCritical { mean_log_a: spec.a_law.mean_log_a() },
        "a_nondegenerate" | "no_fixed_point" => Error::Degenerate(first.detail.clone()),
        "moments_2_plus_eps" | "sigma2_finite_positive" => {
            Error::MomentFailure(first.detail.clone())
        }
        _ => Error::InvalidSpec(format!("{}: {}", first.name, first.detail)),
    })
}

/// Convenience constructor for the common 1-D case with constant B.
pub fn spec_1d(a_law: ALaw, b: f64) -> MuSpec {
    MuSpec {
        dim: 1,
        a_law,
        b_law: BLaw::Constant { value: vec![b] },
        recenter_offset: vec![],
    }
}
