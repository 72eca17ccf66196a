//! Numerical checks of the expectation and variance statements for the
//! rank-product similarity on one-dimensional patch distributions.
//!
//! For a pair `(pᵢ, q_j)` with `d = |pᵢ − q_j|` the statistic is
//! `x = c_p · c_q`, where `c_p` counts the other points of `P` at distance
//! `≤ d` from `q_j` and `c_q` the other points of `Q` at distance `≤ d` from
//! `pᵢ`. The pair score is approximated by the quadratic surrogate
//! `1 − x/σ + x²/(2σ²)`, its square by `1 − 2x/σ + 2x²/σ²`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalSampler};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Result, Tm3Error};
use crate::quadrature::Integrator;
use crate::scalar::CompensatedSum;

/// Fewest Monte Carlo trials accepted by [`mc_estimate`].
pub const MIN_TRIALS: usize = 10_000;

/// Truncation of Gaussian tails, in standard deviations.
const TAIL_SIGMAS: f64 = 9.0;

/// One-dimensional patch value distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionSpec {
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    /// `weight · N(mean1, std1) + (1 − weight) · N(mean2, std2)`.
    Mixture { weight: f64, mean1: f64, std1: f64, mean2: f64, std2: f64 },
}

impl DistributionSpec {
    pub fn standard_normal() -> Self {
        Self::Gaussian { mean: 0.0, std: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && high > low,
            Self::Mixture { weight, mean1, std1, mean2, std2 } => {
                weight > 0.0
                    && weight < 1.0
                    && [mean1, std1, mean2, std2].iter().all(|v| v.is_finite())
                    && std1 > 0.0
                    && std2 > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Tm3Error::InvalidParameter(format!("degenerate distribution {self:?}")))
        }
    }

    fn normal(mean: f64, std: f64) -> Normal {
        Normal::new(mean, std).expect("validated normal parameters")
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, std } => Self::normal(mean, std).pdf(x),
            Self::Uniform { low, high } => {
                if (low..=high).contains(&x) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            Self::Mixture { weight, mean1, std1, mean2, std2 } => {
                weight * Self::normal(mean1, std1).pdf(x) + (1.0 - weight) * Self::normal(mean2, std2).pdf(x)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, std } => Self::normal(mean, std).cdf(x),
            Self::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            Self::Mixture { weight, mean1, std1, mean2, std2 } => {
                weight * Self::normal(mean1, std1).cdf(x) + (1.0 - weight) * Self::normal(mean2, std2).cdf(x)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mean, std } => NormalSampler::new(mean, std).expect("validated").sample(rng),
            Self::Uniform { low, high } => rng.gen_range(low..high),
            Self::Mixture { weight, mean1, std1, mean2, std2 } => {
                let (m, s) = if rng.gen::<f64>() < weight { (mean1, std1) } else { (mean2, std2) };
                NormalSampler::new(m, s).expect("validated").sample(rng)
            }
        }
    }

    /// Interval holding all but a negligible part of the mass, with interior
    /// points where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Self::Gaussian { mean, std } => vec![mean - TAIL_SIGMAS * std, mean, mean + TAIL_SIGMAS * std],
            Self::Uniform { low, high } => vec![low, high],
            Self::Mixture { mean1, std1, mean2, std2, .. } => {
                let mut pts = vec![
                    mean1 - TAIL_SIGMAS * std1,
                    mean1,
                    mean1 + TAIL_SIGMAS * std1,
                    mean2 - TAIL_SIGMAS * std2,
                    mean2,
                    mean2 + TAIL_SIGMAS * std2,
                ];
                pts.sort_by(|a, b| a.total_cmp(b));
                let (lo, hi) = (pts[0], pts[5]);
                pts.retain(|&v| v >= lo && v <= hi);
                pts.dedup();
                pts
            }
        }
    }

    /// Total mass by quadrature; `1` up to truncation and tolerance.
    pub fn total_mass(&self) -> f64 {
        let q = Integrator::new(20, 1e-10);
        q.integrate(|x| [self.pdf(x)], &self.breakpoints()).value[0]
    }
}

/// Quadratic surrogate of `exp(−x/σ)`.
pub fn surrogate_mbp(x: f64, sigma1: f64) -> f64 {
    1.0 - x / sigma1 + x * x / (2.0 * sigma1 * sigma1)
}

/// Quadratic surrogate of `exp(−2x/σ)`.
pub fn surrogate_mbp_sq(x: f64, sigma1: f64) -> f64 {
    1.0 - 2.0 * x / sigma1 + 2.0 * x * x / (sigma1 * sigma1)
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let mut n = 0usize;
        let mut sum = CompensatedSum::default();
        for v in values.clone() {
            sum.add(v);
            n += 1;
        }
        let mean = sum.value() / n as f64;
        let mut sq = CompensatedSum::default();
        for v in values {
            sq.add((v - mean) * (v - mean));
        }
        let var = if n > 1 { sq.value() / (n - 1) as f64 } else { 0.0 };
        Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
        }
    }

    /// `value > k · std_error`.
    pub fn positive_beyond(&self, k: f64) -> bool {
        self.value > k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub n: usize,
    pub m: usize,
    pub sigma1: f64,
    pub trials: usize,
    pub seed: u64,
    /// Surrogate score mean.
    pub e_mbs: Estimate,
    /// Surrogate squared-score mean.
    pub e_mbs2: Estimate,
    pub e_bbs: Estimate,
    /// Mean of the squared indicator; equals `e_bbs` exactly.
    pub e_bbs2: Estimate,
    /// `(E[x²] − E[x]²) / σ²`.
    pub v_mbs: Estimate,
    pub v_bbs: Estimate,
    /// `e_mbs2 − e_mbs`.
    pub lemma3_margin: Estimate,
    /// Variance gap of recentred surrogate scores and indicator scores.
    pub theorem1_margin: Estimate,
    /// `|(V' − V_BBS) − (E[m'²] − E[m'])|` after recentring.
    pub theorem1_identity_gap: f64,
    pub mean_x: Estimate,
    pub mean_x2: Estimate,
    /// Exact `exp(−rs/σ)` scores with the neighbour cap.
    pub exact_e_mbs: Estimate,
    pub exact_e_mbs2: Estimate,
    /// `exact_e_mbs2 − exact_e_mbs`; never positive since the score is in `[0, 1]`.
    pub exact_margin: Estimate,
    pub lemma3_holds: bool,
    pub theorem1_holds: bool,
}

/// Neighbour cap used for the exact score in reports.
pub const EXACT_CAP_C: usize = 4;

/// Monte Carlo over `trials` independent draws of `N` points from `spec_p` and
/// `M` from `spec_q`, one uniformly chosen pair per draw.
pub fn mc_estimate(
    spec_p: &DistributionSpec,
    spec_q: &DistributionSpec,
    n: usize,
    m: usize,
    sigma1: f64,
    trials: usize,
    seed: u64,
) -> Result<TheoryReport> {
    spec_p.validate()?;
    spec_q.validate()?;
    if n == 0 || m == 0 {
        return Err(Tm3Error::InvalidParameter("N and M must be >= 1".into()));
    }
    if trials < MIN_TRIALS {
        return Err(Tm3Error::InvalidParameter(format!("trials must be >= {MIN_TRIALS}")));
    }
    if !(sigma1 > 0.0 && sigma1.is_finite()) {
        return Err(Tm3Error::InvalidParameter("sigma1 must be > 0".into()));
    }

    let mut xs = Vec::with_capacity(trials);
    let mut bbp = Vec::with_capacity(trials);
    let mut exact = Vec::with_capacity(trials);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; m];
    const BLOCK: usize = 4096;
    for block in 0..trials.div_ceil(BLOCK) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block as u64);
        for _ in 0..BLOCK.min(trials - block * BLOCK) {
            p.iter_mut().for_each(|v| *v = spec_p.sample(&mut rng));
            q.iter_mut().for_each(|v| *v = spec_q.sample(&mut rng));
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..m);
            let d = (p[i] - q[j]).abs();
            let cp = p.iter().enumerate().filter(|&(k, &v)| k != i && (v - q[j]).abs() <= d).count();
            let cq = q.iter().enumerate().filter(|&(l, &v)| l != j && (v - p[i]).abs() <= d).count();
            xs.push((cp * cq) as f64);
            bbp.push(if cp == 0 && cq == 0 { 1.0 } else { 0.0 });
            let (r, s) = (cq + 1, cp + 1);
            exact.push(if r <= EXACT_CAP_C && s <= EXACT_CAP_C {
                (-((r * s) as f64) / sigma1).exp()
            } else {
                0.0
            });
        }
    }

    let sur: Vec<f64> = xs.iter().map(|&x| surrogate_mbp(x, sigma1)).collect();
    let sur2: Vec<f64> = xs.iter().map(|&x| surrogate_mbp_sq(x, sigma1)).collect();
    let e_mbs = Estimate::of(sur.iter().copied());
    let e_mbs2 = Estimate::of(sur2.iter().copied());
    let lemma3_margin = Estimate::of(sur.iter().zip(&sur2).map(|(a, b)| b - a));
    let e_bbs = Estimate::of(bbp.iter().copied());
    let e_bbs2 = Estimate::of(bbp.iter().map(|b| b * b));
    let v_bbs = Estimate {
        value: e_bbs.value * (1.0 - e_bbs.value),
        std_error: (1.0 - 2.0 * e_bbs.value).abs() * e_bbs.std_error,
    };

    let mean_x = Estimate::of(xs.iter().copied());
    let mean_x2 = Estimate::of(xs.iter().map(|x| x * x));
    let s2 = sigma1 * sigma1;
    let mx = mean_x.value;
    let v_mbs_se = Estimate::of(xs.iter().map(|&x| (x * x - 2.0 * mx * x) / s2)).std_error;
    let v_mbs = Estimate {
        value: (mean_x2.value - mx * mx) / s2,
        std_error: v_mbs_se,
    };

    // recentre surrogate scores so their mean equals the indicator mean
    let shift = e_mbs.value - e_bbs.value;
    let recentred: Vec<f64> = sur.iter().map(|v| v - shift).collect();
    let pop_var = |v: &[f64]| {
        let mean = mean_of(v);
        mean_of(&v.iter().map(|x| (x - mean) * (x - mean)).collect::<Vec<_>>())
    };
    let lhs = pop_var(&recentred) - pop_var(&bbp);
    let rhs_terms: Vec<f64> = recentred.iter().map(|v| v * v - v).collect();
    let rhs = mean_of(&rhs_terms);
    let theorem1_margin = Estimate {
        value: lhs,
        std_error: Estimate::of(rhs_terms.iter().copied()).std_error,
    };
    let theorem1_identity_gap = (lhs - rhs).abs();

    let exact_e_mbs = Estimate::of(exact.iter().copied());
    let exact_e_mbs2 = Estimate::of(exact.iter().map(|v| v * v));
    let exact_margin = Estimate::of(exact.iter().map(|v| v * v - v));

    let mut report = TheoryReport {
        n,
        m,
        sigma1,
        trials,
        seed,
        e_mbs,
        e_mbs2,
        e_bbs,
        e_bbs2,
        v_mbs,
        v_bbs,
        lemma3_margin,
        theorem1_margin,
        theorem1_identity_gap,
        mean_x,
        mean_x2,
        exact_e_mbs,
        exact_e_mbs2,
        exact_margin,
        lemma3_holds: false,
        theorem1_holds: false,
    };
    report.lemma3_holds = verify_lemma3(&report).holds;
    report.theorem1_holds = verify_theorem1(&report).holds;
    Ok(report)
}

fn mean_of(v: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    s.extend(v.iter().copied());
    s.value() / v.len() as f64
}

/// Expectations by double integration over the patch value densities.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    pub e_mbs: f64,
    pub e_mbs2: f64,
    pub e_bbs: f64,
    /// `(E[x²] − E[x]²) / σ²`.
    pub v_mbs: f64,
    pub mean_x: f64,
    pub mean_x2: f64,
    /// `−E[x]/σ + 3E[x²]/(2σ²)`, the margin `e_mbs2 − e_mbs` in closed form.
    pub closed_form_margin: f64,
    /// `∫∫ a·b f_P f_Q` with `a = F_P(q⁺) − F_P(q⁻)`, `b = F_Q(p⁺) − F_Q(p⁻)`.
    pub mean_field_i1: f64,
    /// `∫∫ a²·b² f_P f_Q`.
    pub mean_field_i2: f64,
    /// `1 − MN·I₁/σ + M²N²·I₂/(2σ²)`.
    pub mean_field_e_mbs: f64,
    /// `M²N²(I₂ − I₁²)/σ²`.
    pub mean_field_v_mbs: f64,
    /// `3M²N²·I₂/(2σ²)`.
    pub mean_field_margin: f64,
    pub achieved_tol: f64,
    pub converged: bool,
}

/// Default relative tolerance of [`quadrature_expectation`].
pub const QUADRATURE_TOL: f64 = 1e-5;

/// Integrates the conditional moments of `x` given `(p, q)`.
///
/// Given the pair values, `c_p ~ Bin(N − 1, a)` and `c_q ~ Bin(M − 1, b)`
/// independently, so `E[x | p, q]` and `E[x² | p, q]` are products of binomial
/// moments and the mutual-nearest indicator has probability
/// `(1 − a)^{N−1} (1 − b)^{M−1}`.
pub fn quadrature_expectation(
    spec_p: &DistributionSpec,
    spec_q: &DistributionSpec,
    n: usize,
    m: usize,
    sigma1: f64,
) -> Result<QuadratureResult> {
    quadrature_expectation_tol(spec_p, spec_q, n, m, sigma1, QUADRATURE_TOL)
}

pub fn quadrature_expectation_tol(
    spec_p: &DistributionSpec,
    spec_q: &DistributionSpec,
    n: usize,
    m: usize,
    sigma1: f64,
    rel_tol: f64,
) -> Result<QuadratureResult> {
    spec_p.validate()?;
    spec_q.validate()?;
    if n == 0 || m == 0 {
        return Err(Tm3Error::InvalidParameter("N and M must be >= 1".into()));
    }
    if !(sigma1 > 0.0) {
        return Err(Tm3Error::InvalidParameter("sigma1 must be > 0".into()));
    }
    let (n1, m1) = ((n - 1) as f64, (m - 1) as f64);
    let integrator = Integrator::new(20, rel_tol);
    let p_breaks = spec_p.breakpoints();
    let q_support = spec_q.breakpoints();
    let mut inner_tol: f64 = 0.0;
    let mut inner_ok = true;

    let outer = integrator.integrate(
        |p| {
            let fp = spec_p.pdf(p);
            if fp == 0.0 {
                return [0.0; 5];
            }
            let mut breaks = q_support.clone();
            if p > breaks[0] && p < *breaks.last().unwrap() {
                breaks.push(p);
                breaks.sort_by(|a, b| a.total_cmp(b));
                breaks.dedup();
            }
            let inner = integrator.integrate(
                |q| {
                    let fq = spec_q.pdf(q);
                    if fq == 0.0 {
                        return [0.0; 5];
                    }
                    let d = (p - q).abs();
                    let a = spec_p.cdf(q + d) - spec_p.cdf(q - d);
                    let b = spec_q.cdf(p + d) - spec_q.cdf(p - d);
                    let ecp = n1 * a;
                    let ecq = m1 * b;
                    let ecp2 = n1 * a * (1.0 - a) + ecp * ecp;
                    let ecq2 = m1 * b * (1.0 - b) + ecq * ecq;
                    let bbp = (1.0 - a).powf(n1) * (1.0 - b).powf(m1);
                    [ecp * ecq * fq, ecp2 * ecq2 * fq, bbp * fq, a * b * fq, a * a * b * b * fq]
                },
                &breaks,
            );
            inner_tol = inner_tol.max(inner.achieved_tol);
            inner_ok &= inner.converged;
            inner.value.map(|v| v * fp)
        },
        &p_breaks,
    );

    let [ex, ex2, ebbs, i1, i2] = outer.value;
    let s = sigma1;
    let nm = (n * m) as f64;
    Ok(QuadratureResult {
        e_mbs: 1.0 - ex / s + ex2 / (2.0 * s * s),
        e_mbs2: 1.0 - 2.0 * ex / s + 2.0 * ex2 / (s * s),
        e_bbs: ebbs,
        v_mbs: (ex2 - ex * ex) / (s * s),
        mean_x: ex,
        mean_x2: ex2,
        closed_form_margin: -ex / s + 3.0 * ex2 / (2.0 * s * s),
        mean_field_i1: i1,
        mean_field_i2: i2,
        mean_field_e_mbs: 1.0 - nm * i1 / s + nm * nm * i2 / (2.0 * s * s),
        mean_field_v_mbs: nm * nm * (i2 - i1 * i1) / (s * s),
        mean_field_margin: 3.0 * nm * nm * i2 / (2.0 * s * s),
        achieved_tol: outer.achieved_tol.max(inner_tol),
        converged: outer.converged && inner_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma3Verdict {
    pub margin: Estimate,
    /// Margin exceeds three standard errors.
    pub holds: bool,
    /// Exact-score margin is negative beyond three standard errors.
    pub exact_counterexample: bool,
}

pub fn verify_lemma3(report: &TheoryReport) -> Lemma3Verdict {
    Lemma3Verdict {
        margin: report.lemma3_margin,
        holds: report.lemma3_margin.positive_beyond(3.0),
        exact_counterexample: report.exact_margin.value < -3.0 * report.exact_margin.std_error,
    }
}

/// Compares the Monte Carlo margin with the closed-form quadrature margin,
/// allowing three standard errors plus the quadrature tolerance.
pub fn lemma3_closed_form_agrees(report: &TheoryReport, quad: &QuadratureResult) -> bool {
    let allowed = 3.0 * report.lemma3_margin.std_error + quad.achieved_tol.max(QUADRATURE_TOL) * quad.closed_form_margin.abs();
    (report.lemma3_margin.value - quad.closed_form_margin).abs() <= allowed
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Verdict {
    pub margin: Estimate,
    pub identity_gap: f64,
    /// Identity holds within three standard errors and the margin is positive.
    pub holds: bool,
}

pub fn verify_theorem1(report: &TheoryReport) -> Theorem1Verdict {
    let m = report.theorem1_margin;
    let identity = report.theorem1_identity_gap <= 3.0 * m.std_error + 1e-9 * m.value.abs().max(1.0);
    Theorem1Verdict {
        margin: m,
        identity_gap: report.theorem1_identity_gap,
        holds: identity && m.value > 0.0,
    }
}
