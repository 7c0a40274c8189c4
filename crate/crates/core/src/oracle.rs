//! Closed forms and Monte-Carlo checks for the perturbation theory of
//! interaction terms, plus the concept-regression solution.
//!
//! A Taylor term of concept `S` with degree vector `pi` evaluated at
//! `x + eps` is `J = prod_{i in S} (1 + delta_i eps_i / tau)^{pi_i}`, where
//! `delta_i = sign(x_i - r_i)` and `|x_i - r_i| = tau` on `S`. Each factor's
//! base is `N(1, (sigma / tau)^2)`, so its moments come from the Gaussian
//! moment recurrence. Draws with any `|eps_i| >= tau` are rejected and
//! resampled; rejection counts are reported.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::interaction;
use crate::linalg;
use crate::math;
use crate::par;
use crate::rng::{self, SeededRng};
use crate::stats::ScalarMoments;
use crate::{Error, Result};

/// Monte-Carlo runs are split into this many independently seeded chunks.
pub const MC_CHUNKS: usize = 64;

/// One line of an oracle report.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub parameters: String,
    pub analytic: f64,
    pub mc: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error of `value` against a nonzero `reference`, absolute otherwise.
pub fn relative_error(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        (value - reference).abs()
    } else {
        ((value - reference) / reference).abs()
    }
}

/// A Taylor term: degrees `pi_i` (zero outside the concept) and signs `delta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorTermSpec {
    degrees: Vec<u32>,
    signs: Vec<f64>,
    tau: f64,
}

impl TaylorTermSpec {
    pub fn new(degrees: Vec<u32>, signs: Vec<f64>, tau: f64) -> Result<Self> {
        if degrees.len() != signs.len() {
            return Err(Error::shape("TaylorTermSpec signs", degrees.len(), signs.len()));
        }
        if degrees.len() > interaction::MAX_ACTIVE {
            return Err(Error::arg("too many variables"));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::arg("signs must be +1 or -1"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::arg("tau must be positive"));
        }
        Ok(Self { degrees, signs, tau })
    }

    /// Degree one on the first `order` of `n` variables, all signs positive.
    pub fn lowest_degree(n: usize, order: usize, tau: f64) -> Result<Self> {
        if order > n {
            return Err(Error::arg("order exceeds the variable count"));
        }
        let degrees = (0..n).map(|i| u32::from(i < order)).collect();
        Self::new(degrees, vec![1.0; n], tau)
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    /// Bitmask of the concept `S`.
    pub fn mask(&self) -> usize {
        self.degrees
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    pub fn order(&self) -> usize {
        self.degrees.iter().filter(|&&p| p > 0).count()
    }

    /// `m = sum pi_i`.
    pub fn total_degree(&self) -> u32 {
        self.degrees.iter().sum()
    }
}

/// `J(S, pi | x + eps)`, or `None` when some `|eps_i| >= tau` on `S`.
pub fn j_term_value(spec: &TaylorTermSpec, eps: &[f64]) -> Option<f64> {
    let mut out = 1.0;
    for ((&p, &d), &e) in spec.degrees.iter().zip(&spec.signs).zip(eps) {
        if p == 0 {
            continue;
        }
        if e.abs() >= spec.tau {
            return None;
        }
        out *= math::powi(1.0 + d * e / spec.tau, p);
    }
    Some(out)
}

/// `eps ~ N(0, sigma^2 I)` conditioned on `|eps_i| < tau` for the variables in
/// `mask`; returns the draw and the number of rejected attempts.
fn draw_small_noise(r: &mut SeededRng, n: usize, mask: usize, sigma: f64, tau: f64) -> (Vec<f64>, u64) {
    let mut eps = vec![0.0; n];
    let mut rejected = 0;
    loop {
        for e in &mut eps {
            *e = sigma * rng::standard_normal(r);
        }
        if (0..n).all(|i| mask >> i & 1 == 0 || eps[i].abs() < tau) {
            return (eps, rejected);
        }
        rejected += 1;
    }
}

/// Moments accumulated over `draws` evaluations of `f`, chunked over
/// [`MC_CHUNKS`] seeds. `f` returns one value per tracked quantity and its
/// rejection count. Also returns per-chunk moments for batch-means errors.
fn mc_run<F>(draws: usize, seed: u64, width: usize, f: F) -> (Vec<ScalarMoments>, Vec<Vec<ScalarMoments>>, u64)
where
    F: Fn(&mut SeededRng) -> (Vec<f64>, u64) + Sync + Send,
{
    let chunks = par::map_indexed(MC_CHUNKS, |c| {
        let n = draws / MC_CHUNKS + usize::from(c < draws % MC_CHUNKS);
        let mut r = rng::seeded(rng::derive(seed, c as u64));
        let mut acc = vec![ScalarMoments::default(); width];
        let mut rejected = 0;
        for _ in 0..n {
            let (vals, rej) = f(&mut r);
            rejected += rej;
            for (a, v) in acc.iter_mut().zip(vals) {
                a.push(v);
            }
        }
        (acc, rejected)
    });
    let mut total = vec![ScalarMoments::default(); width];
    let mut rejected = 0;
    let mut per_chunk = Vec::with_capacity(MC_CHUNKS);
    for (acc, rej) in chunks {
        for (t, a) in total.iter_mut().zip(&acc) {
            t.merge(a);
        }
        rejected += rej;
        per_chunk.push(acc);
    }
    (total, per_chunk, rejected)
}

/// `(mean, variance)` of `U * J(S, all-ones)` under `eps ~ N(0, sigma^2 I)`:
/// `U` and `U^2 ((1 + (sigma/tau)^2)^|S| - 1)`.
pub fn theorem1_closed_form(u: f64, order: usize, sigma_over_tau: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&sigma_over_tau) {
        return Err(Error::arg("sigma / tau must lie in [0, 1)"));
    }
    let r2 = sigma_over_tau * sigma_over_tau;
    Ok((u, u * u * (math::powi(1.0 + r2, order as u32) - 1.0)))
}

/// `E[X^k]` for `X ~ N(mu, sigma^2)` via
/// `E[X^{k+1}] = mu E[X^k] + k sigma^2 E[X^{k-1}]`.
pub fn gaussian_moment(k: i64, mu: f64, sigma: f64) -> Result<f64> {
    if k < 0 {
        return Err(Error::arg("moment order must be nonnegative"));
    }
    let s2 = sigma * sigma;
    let (mut prev, mut cur) = (1.0, mu);
    if k == 0 {
        return Ok(1.0);
    }
    for j in 1..k {
        let next = mu * cur + j as f64 * s2 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Analytic `(mean, variance)` of `J`: product of per-factor moments, each factor
/// `(1 + delta eps / tau)^pi` having base `N(1, (sigma/tau)^2)`.
pub fn analytic_j_moments(spec: &TaylorTermSpec, sigma_over_tau: f64) -> (f64, f64) {
    let mut mean = 1.0;
    let mut second = 1.0;
    for &p in spec.degrees.iter().filter(|&&p| p > 0) {
        mean *= gaussian_moment(i64::from(p), 1.0, sigma_over_tau).expect("nonnegative");
        second *= gaussian_moment(2 * i64::from(p), 1.0, sigma_over_tau).expect("nonnegative");
    }
    (mean, second - mean * mean)
}

/// Analytic against Monte-Carlo moments of one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub analytic_mean: f64,
    pub analytic_variance: f64,
    pub mc_mean: f64,
    pub mc_variance: f64,
    pub draws: usize,
    pub rejections: u64,
    pub tolerance: f64,
    pub pass: bool,
}

impl MomentReport {
    fn new(analytic: (f64, f64), mc: &ScalarMoments, draws: usize, rejections: u64, tolerance: f64) -> Self {
        let var_ok = if analytic.1 == 0.0 {
            mc.variance() <= 1e-24
        } else {
            relative_error(mc.variance(), analytic.1) <= tolerance
        };
        Self {
            analytic_mean: analytic.0,
            analytic_variance: analytic.1,
            mc_mean: mc.mean(),
            mc_variance: mc.variance(),
            draws,
            rejections,
            tolerance,
            pass: relative_error(mc.mean(), analytic.0) <= tolerance && var_ok,
        }
    }

    pub fn rows(&self, name: &str, parameters: &str) -> [OracleCheck; 2] {
        [
            OracleCheck {
                name: format!("{name}.mean"),
                parameters: parameters.into(),
                analytic: self.analytic_mean,
                mc: self.mc_mean,
                tolerance: self.tolerance,
                pass: relative_error(self.mc_mean, self.analytic_mean) <= self.tolerance,
            },
            OracleCheck {
                name: format!("{name}.variance"),
                parameters: parameters.into(),
                analytic: self.analytic_variance,
                mc: self.mc_variance,
                tolerance: self.tolerance,
                pass: self.pass,
            },
        ]
    }
}

/// Monte-Carlo mean and variance of `J` against the product formulas.
pub fn theorem2_mc_check(
    spec: &TaylorTermSpec,
    sigma_over_tau: f64,
    draws: usize,
    tolerance: f64,
    seed: u64,
) -> Result<MomentReport> {
    check_ratio(sigma_over_tau)?;
    let sigma = sigma_over_tau * spec.tau;
    let mask = spec.mask();
    let (m, _, rej) = mc_run(draws, seed, 1, |r| {
        let (eps, rej) = draw_small_noise(r, spec.n(), mask, sigma, spec.tau);
        (vec![j_term_value(spec, &eps).expect("accepted draw")], rej)
    });
    Ok(MomentReport::new(
        analytic_j_moments(spec, sigma_over_tau),
        &m[0],
        draws,
        rej,
        tolerance,
    ))
}

fn check_ratio(sigma_over_tau: f64) -> Result<()> {
    if !(sigma_over_tau > 0.0 && sigma_over_tau < 1.0) {
        return Err(Error::arg("sigma / tau must lie in (0, 1)"));
    }
    Ok(())
}

/// Moments of the dividend `I(S0 | x + eps)` of the monomial set function
/// `v(T) = U prod_{i in S0} (x'_i - r_i) / tau`, where `x'_i = x_i + eps_i`
/// if `i` is present and `r_i` otherwise, and `x_i - r_i = tau`. The dividend
/// is computed by the Möbius transform of all `2^|S0|` outputs.
pub fn theorem1_monomial_check(
    u: f64,
    order: usize,
    sigma_over_tau: f64,
    draws: usize,
    tolerance: f64,
    seed: u64,
) -> Result<MomentReport> {
    check_ratio(sigma_over_tau)?;
    if order == 0 || order > 12 {
        return Err(Error::arg("order must lie in 1..=12"));
    }
    let tau = 1.0;
    let sigma = sigma_over_tau * tau;
    let full = (1usize << order) - 1;
    let (m, _, rej) = mc_run(draws, seed, 1, |r| {
        let (eps, rej) = draw_small_noise(r, order, full, sigma, tau);
        // Reference 0, sample tau on every variable.
        let mut raw: Vec<f64> = (0..=full)
            .map(|mask| {
                (0..order).fold(u, |acc, i| {
                    let xi = if mask >> i & 1 == 1 { tau + eps[i] } else { 0.0 };
                    acc * xi / tau
                })
            })
            .collect();
        interaction::mobius_in_place(&mut raw);
        (vec![raw[full]], rej)
    });
    Ok(MomentReport::new(
        theorem1_closed_form(u, order, sigma_over_tau)?,
        &m[0],
        draws,
        rej,
        tolerance,
    ))
}

/// Product rule for independent factors, checked against Monte Carlo with
/// batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMomentReport {
    pub analytic_mean: f64,
    pub analytic_variance: f64,
    pub mc_mean: f64,
    pub mc_variance: f64,
    pub mean_standard_error: f64,
    pub variance_standard_error: f64,
    /// Allowed deviation in standard errors.
    pub z_tolerance: f64,
    pub pass: bool,
}

fn batch_standard_error(chunks: &[Vec<ScalarMoments>], idx: usize, pick: impl Fn(&ScalarMoments) -> f64) -> f64 {
    let mut m = ScalarMoments::default();
    for c in chunks {
        m.push(pick(&c[idx]));
    }
    m.standard_error()
}

/// Checks `E[prod X_i] = prod E[X_i]` and
/// `Var[prod X_i] = prod(E[X_i]^2 + Var[X_i]) - prod E[X_i]^2` for the
/// independent factors `X_i = (1 + delta_i eps_i / tau)^{pi_i}`, within
/// `z_tolerance` batch-means standard errors.
pub fn proposition1_check(
    spec: &TaylorTermSpec,
    sigma_over_tau: f64,
    draws: usize,
    z_tolerance: f64,
    seed: u64,
) -> Result<ProductMomentReport> {
    check_ratio(sigma_over_tau)?;
    let sigma = sigma_over_tau * spec.tau;
    let mask = spec.mask();
    let vars: Vec<usize> = (0..spec.n()).filter(|&i| mask >> i & 1 == 1).collect();
    let width = vars.len() + 1;
    let (m, chunks, _) = mc_run(draws, seed, width, |r| {
        let (eps, rej) = draw_small_noise(r, spec.n(), mask, sigma, spec.tau);
        let mut vals: Vec<f64> = vars
            .iter()
            .map(|&i| math::powi(1.0 + spec.signs[i] * eps[i] / spec.tau, spec.degrees[i]))
            .collect();
        vals.push(vals.iter().product());
        (vals, rej)
    });
    // The rule is applied to the factors' own Monte-Carlo moments.
    let mut mean = 1.0;
    let mut second = 1.0;
    for f in &m[..vars.len()] {
        mean *= f.mean();
        second *= f.mean() * f.mean() + f.variance();
    }
    let analytic = (mean, second - mean * mean);
    let prod = &m[vars.len()];
    let se_mean = batch_standard_error(&chunks, vars.len(), ScalarMoments::mean);
    let se_var = batch_standard_error(&chunks, vars.len(), ScalarMoments::variance);
    let pass = (prod.mean() - analytic.0).abs() <= z_tolerance * se_mean
        && (prod.variance() - analytic.1).abs() <= z_tolerance * se_var;
    Ok(ProductMomentReport {
        analytic_mean: analytic.0,
        analytic_variance: analytic.1,
        mc_mean: prod.mean(),
        mc_variance: prod.variance(),
        mean_standard_error: se_mean,
        variance_standard_error: se_var,
        z_tolerance,
        pass,
    })
}

/// Both ratio inequalities for a nested pair of terms, analytic and Monte Carlo.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem3Report {
    /// `Var[J(S')] / Var[J(S)]`.
    pub variance_ratio: f64,
    /// `prod_{S' \ S} E^2[(1 + eps/tau)^{pi'}]`.
    pub variance_bound: f64,
    /// `(E[J(S')]/Var[J(S')]) / (E[J(S)]/Var[J(S)])`.
    pub stability_ratio: f64,
    /// `1 / prod_{S' \ S} E[(1 + eps/tau)^{pi'}]`.
    pub stability_bound: f64,
    pub mc_variance_ratio: f64,
    pub mc_stability_ratio: f64,
    /// Every added factor has mean at least one.
    pub factor_means_at_least_one: bool,
    /// `S = S'`: both ratios are one and the bounds are vacuous.
    pub degenerate: bool,
    pub pass: bool,
}

impl Theorem3Report {
    pub fn variance_margin(&self) -> f64 {
        self.variance_ratio - self.variance_bound
    }

    pub fn stability_margin(&self) -> f64 {
        self.stability_bound - self.stability_ratio
    }

    pub fn mc_variance_margin(&self) -> f64 {
        self.mc_variance_ratio - self.variance_bound
    }

    pub fn mc_stability_margin(&self) -> f64 {
        self.stability_bound - self.mc_stability_ratio
    }
}

/// Checks the growth of variance and the decay of relative stability when a
/// term is extended from `small = (S, pi)` to `large = (S', pi')`.
pub fn theorem3_ratio_check(
    small: &TaylorTermSpec,
    large: &TaylorTermSpec,
    sigma_over_tau: f64,
    draws: usize,
    seed: u64,
) -> Result<Theorem3Report> {
    check_ratio(sigma_over_tau)?;
    if small.n() != large.n() || small.tau != large.tau || small.signs != large.signs {
        return Err(Error::arg("terms must share variables, tau and signs"));
    }
    let (s, l) = (small.mask(), large.mask());
    if s & !l != 0 {
        return Err(Error::arg("S must be a subset of S'"));
    }
    if (0..small.n()).any(|i| s >> i & 1 == 1 && small.degrees[i] != large.degrees[i]) {
        return Err(Error::arg("pi' must extend pi"));
    }
    if s == 0 {
        return Err(Error::arg("S must be nonempty"));
    }
    let degenerate = s == l;
    let mut bound_mean = 1.0;
    let mut factor_ok = true;
    for i in (0..large.n()).filter(|&i| l >> i & 1 == 1 && s >> i & 1 == 0) {
        let e = gaussian_moment(i64::from(large.degrees[i]), 1.0, sigma_over_tau)?;
        factor_ok &= e >= 1.0;
        bound_mean *= e;
    }
    let (em, vm) = analytic_j_moments(small, sigma_over_tau);
    let (el, vl) = analytic_j_moments(large, sigma_over_tau);
    let variance_ratio = vl / vm;
    let stability_ratio = (el / vl) / (em / vm);
    let sigma = sigma_over_tau * large.tau;
    let (m, _, _) = mc_run(draws, seed, 2, |r| {
        let (eps, rej) = draw_small_noise(r, large.n(), l, sigma, large.tau);
        (
            vec![
                j_term_value(small, &eps).expect("accepted draw"),
                j_term_value(large, &eps).expect("accepted draw"),
            ],
            rej,
        )
    });
    let mc_variance_ratio = m[1].variance() / m[0].variance();
    let mc_stability_ratio = (m[1].mean() / m[1].variance()) / (m[0].mean() / m[0].variance());
    let mut report = Theorem3Report {
        variance_ratio,
        variance_bound: bound_mean * bound_mean,
        stability_ratio,
        stability_bound: 1.0 / bound_mean,
        mc_variance_ratio,
        mc_stability_ratio,
        factor_means_at_least_one: factor_ok,
        degenerate,
        pass: false,
    };
    report.pass = factor_ok
        && (degenerate
            || (report.variance_margin() > 0.0
                && report.stability_margin() > 0.0
                && report.mc_variance_margin() > 0.0
                && report.mc_stability_margin() > 0.0));
    Ok(report)
}

/// Least squares over independent concept activations with means `alpha`,
/// variances `beta_sq` and target `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRegressionProblem {
    pub alpha: Vec<f64>,
    pub beta_sq: Vec<f64>,
    pub target: f64,
}

impl ConceptRegressionProblem {
    fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.beta_sq.len() {
            return Err(Error::shape("concept regression", self.alpha.len(), self.beta_sq.len()));
        }
        if self.alpha.is_empty() {
            return Err(Error::arg("no concepts"));
        }
        if self.beta_sq.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(Error::arg("activation variances must be finite and nonnegative"));
        }
        Ok(())
    }

    /// `E[C] E[C]^T + diag(beta^2)`, row-major.
    pub fn normal_matrix(&self) -> Vec<f64> {
        let p = self.alpha.len();
        let mut a = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                a[i * p + j] = self.alpha[i] * self.alpha[j];
            }
            a[i * p + i] += self.beta_sq[i];
        }
        a
    }

    /// `E[(y - U . C)^2] = y^2 - 2 y alpha.U + U^T M U`.
    pub fn loss(&self, u: &[f64]) -> f64 {
        let p = self.alpha.len();
        let a = self.normal_matrix();
        let mut quad = 0.0;
        for i in 0..p {
            for j in 0..p {
                quad += u[i] * a[i * p + j] * u[j];
            }
        }
        let lin: f64 = self.alpha.iter().zip(u).map(|(a, u)| a * u).sum();
        self.target * self.target - 2.0 * self.target * lin + quad
    }

    /// `max_i |(M U - y alpha)_i|`.
    pub fn residual(&self, u: &[f64]) -> f64 {
        let p = self.alpha.len();
        let a = self.normal_matrix();
        (0..p)
            .map(|i| {
                let mu: f64 = (0..p).map(|j| a[i * p + j] * u[j]).sum();
                (mu - self.target * self.alpha[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRegressionSolution {
    /// Dense LU solution of the normal equations.
    pub coefficients: Vec<f64>,
    /// Plain gradient descent on the quadratic loss.
    pub gradient_descent: Vec<f64>,
    pub iterations: usize,
    /// `max_i |dense_i - gd_i|`.
    pub disagreement: f64,
    pub residual: f64,
}

/// Solves the normal equations of the concept regression by LU and
/// independently by gradient descent with step `1 / L`, `L` the Gershgorin
/// bound on the Hessian.
pub fn solve_concept_regression(problem: &ConceptRegressionProblem) -> Result<ConceptRegressionSolution> {
    problem.validate()?;
    let p = problem.alpha.len();
    if p > 12 {
        return Err(Error::arg("dense solve is limited to 12 concepts"));
    }
    let a = problem.normal_matrix();
    let rhs: Vec<f64> = problem.alpha.iter().map(|&x| problem.target * x).collect();
    let coefficients = linalg::solve(&a, &rhs)?;
    let lipschitz = (0..p)
        .map(|i| 2.0 * (0..p).map(|j| a[i * p + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut u = vec![0.0; p];
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut iterations = 0;
    const MAX_ITERATIONS: usize = 5_000_000;
    while iterations < MAX_ITERATIONS {
        let grad: Vec<f64> = (0..p)
            .map(|i| 2.0 * ((0..p).map(|j| a[i * p + j] * u[j]).sum::<f64>() - rhs[i]))
            .collect();
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= 1e-13 * scale {
            break;
        }
        for (x, g) in u.iter_mut().zip(&grad) {
            *x -= step * g;
        }
        iterations += 1;
    }
    let disagreement = coefficients
        .iter()
        .zip(&u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ConceptRegressionSolution {
        residual: problem.residual(&coefficients),
        coefficients,
        gradient_descent: u,
        iterations,
        disagreement,
    })
}

/// Largest relative spread of `|U_i| / |alpha_i / beta_i^2|` across concepts;
/// zero means exact proportionality.
pub fn proportionality_error(problem: &ConceptRegressionProblem, u: &[f64]) -> f64 {
    let ratios: Vec<f64> = u
        .iter()
        .zip(problem.alpha.iter().zip(&problem.beta_sq))
        .filter(|(_, (a, _))| **a != 0.0)
        .map(|(u, (a, b))| u.abs() / (a / b).abs())
        .collect();
    let Some(&first) = ratios.first() else {
        return 0.0;
    };
    if first == 0.0 {
        return ratios.iter().fold(0.0, |m, r| m.max(r.abs()));
    }
    ratios.iter().map(|r| relative_error(*r, first)).fold(0.0, f64::max)
}

/// Mean and variance of a dividend `I` and of its activation state `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConceptStats {
    pub mean_i: f64,
    pub var_i: f64,
    pub mean_c: f64,
    pub var_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem5Row {
    pub lower: f64,
    pub stability_c: f64,
    pub upper: f64,
    pub holds: bool,
    /// Zero variance; the row is not checked.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem5Report {
    pub rows: Vec<Theorem5Row>,
    pub all_hold: bool,
    /// Largest relative gap of a row to its nearer bound.
    pub max_gap: f64,
}

/// Checks `A_min |E I| / Var I <= |E C| / Var C <= A_max |E I| / Var I`
/// for each concept, allowing `rel_slack` relative rounding slack.
pub fn theorem5_bound_check(stats: &[ConceptStats], a_min: f64, a_max: f64, rel_slack: f64) -> Result<Theorem5Report> {
    if !(a_min > 0.0 && a_min <= a_max) {
        return Err(Error::arg("need 0 < A_min <= A_max"));
    }
    let mut rows = Vec::with_capacity(stats.len());
    let mut max_gap = 0.0f64;
    for s in stats {
        if s.var_i <= 0.0 || s.var_c <= 0.0 {
            rows.push(Theorem5Row {
                lower: 0.0,
                stability_c: 0.0,
                upper: 0.0,
                holds: true,
                skipped: true,
            });
            continue;
        }
        let k = s.mean_i.abs() / s.var_i;
        let (lower, upper) = (a_min * k, a_max * k);
        let c = s.mean_c.abs() / s.var_c;
        let holds = lower <= c * (1.0 + rel_slack) && c <= upper * (1.0 + rel_slack);
        let gap = relative_error(c, lower).min(relative_error(c, upper));
        max_gap = max_gap.max(gap);
        rows.push(Theorem5Row {
            lower,
            stability_c: c,
            upper,
            holds,
            skipped: false,
        });
    }
    Ok(Theorem5Report {
        all_hold: rows.iter().all(|r| r.holds),
        rows,
        max_gap,
    })
}

/// Sampled statistics for concepts with `I = U_k C_k`, where `C_k` is the
/// lowest-degree term of a concept of order `1 + k mod 4` under
/// `eps ~ N(0, sigma^2)`, `tau = 1`.
pub fn theorem5_construct(us: &[f64], sigma_over_tau: f64, draws: usize, seed: u64) -> Result<Vec<ConceptStats>> {
    check_ratio(sigma_over_tau)?;
    if us.iter().any(|&u| u == 0.0 || !u.is_finite()) {
        return Err(Error::arg("coefficients must be finite and nonzero"));
    }
    par::map_indexed(us.len(), |k| -> Result<ConceptStats> {
        let order = 1 + k % 4;
        let spec = TaylorTermSpec::lowest_degree(order, order, 1.0)?;
        let mut r = rng::seeded(rng::derive(seed, k as u64));
        let (mut c, mut i) = (ScalarMoments::default(), ScalarMoments::default());
        for _ in 0..draws {
            let (eps, _) = draw_small_noise(&mut r, order, spec.mask(), sigma_over_tau, 1.0);
            let cv = j_term_value(&spec, &eps).expect("accepted draw");
            c.push(cv);
            i.push(us[k] * cv);
        }
        Ok(ConceptStats {
            mean_i: i.mean(),
            var_i: i.variance(),
            mean_c: c.mean(),
            var_c: c.variance(),
        })
    })
    .into_iter()
    .collect()
}

/// Uniform draw in `[lo, hi)` from a seeded stream, for building random cases.
pub fn uniform_in(r: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

/// Monte-Carlo estimate of `E[X^k]` for `X ~ N(mu, sigma^2)`.
pub fn gaussian_moment_mc(k: u32, mu: f64, sigma: f64, draws: usize, seed: u64) -> f64 {
    let (m, _, _) = mc_run(draws, seed, 1, |r| {
        (vec![math::powi(mu + sigma * rng::standard_normal(r), k)], 0)
    });
    m[0].mean()
}

fn check(name: &str, parameters: String, analytic: f64, mc: f64, tolerance: f64, pass: bool) -> OracleCheck {
    OracleCheck {
        name: name.into(),
        parameters,
        analytic,
        mc,
        tolerance,
        pass,
    }
}

/// A random nested pair `(S, pi) < (S', pi')` over six variables, `S` a
/// nonempty strict subset of `S'` and `pi'` extending `pi`.
fn random_nested_pair(r: &mut SeededRng) -> Result<(TaylorTermSpec, TaylorTermSpec)> {
    const N: usize = 6;
    loop {
        let large: usize = r.random_range(1..1 << N);
        let small = large & r.random_range(1..1 << N);
        if small == 0 || small == large {
            continue;
        }
        let degrees: Vec<u32> = (0..N)
            .map(|i| if large >> i & 1 == 1 { r.random_range(1..=3) } else { 0 })
            .collect();
        let signs: Vec<f64> = (0..N).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let restricted = (0..N).map(|i| if small >> i & 1 == 1 { degrees[i] } else { 0 }).collect();
        return Ok((
            TaylorTermSpec::new(restricted, signs.clone(), 1.0)?,
            TaylorTermSpec::new(degrees, signs, 1.0)?,
        ));
    }
}

/// Every closed-form and Monte-Carlo check of the perturbation theory and
/// the concept regression. `draws` Monte-Carlo draws are used per check.
pub fn oracle_suite(draws: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    let mut next = 0u64;
    let mut sub = || {
        next += 1;
        rng::derive(seed, next)
    };
    for ratio in [0.05, 0.1] {
        for order in 1..=6 {
            let r = theorem1_monomial_check(1.5, order, ratio, draws, 0.01, sub())?;
            out.extend(r.rows("theorem1.monomial", &format!("order={order} sigma_over_tau={ratio} u=1.5")));
        }
    }
    let terms: [(&[u32], &[f64]); 4] = [
        (&[1, 1], &[1.0, 1.0]),
        (&[2], &[1.0]),
        (&[2, 1, 3], &[1.0, -1.0, 1.0]),
        (&[1, 2, 1, 2], &[-1.0, 1.0, 1.0, -1.0]),
    ];
    for (degrees, signs) in terms {
        for ratio in [0.05, 0.1] {
            let spec = TaylorTermSpec::new(degrees.to_vec(), signs.to_vec(), 1.0)?;
            let params = format!("degrees={degrees:?} signs={signs:?} sigma_over_tau={ratio}");
            out.extend(theorem2_mc_check(&spec, ratio, draws, 0.01, sub())?.rows("theorem2.product", &params));
            let p = proposition1_check(&spec, ratio, draws, 3.0, sub())?;
            out.push(check(
                "proposition1.mean",
                params.clone(),
                p.analytic_mean,
                p.mc_mean,
                3.0 * p.mean_standard_error,
                (p.mc_mean - p.analytic_mean).abs() <= 3.0 * p.mean_standard_error,
            ));
            out.push(check(
                "proposition1.variance",
                params,
                p.analytic_variance,
                p.mc_variance,
                3.0 * p.variance_standard_error,
                p.pass,
            ));
        }
    }
    let mut r = rng::seeded(sub());
    for case in 0..20 {
        let (small, large) = random_nested_pair(&mut r)?;
        let ratio = [0.05, 0.1][case % 2];
        let t = theorem3_ratio_check(&small, &large, ratio, draws, sub())?;
        let params = format!(
            "case={case} small={:?} large={:?} sigma_over_tau={ratio}",
            small.degrees(),
            large.degrees()
        );
        out.push(check(
            "theorem3.variance_margin",
            params.clone(),
            t.variance_margin(),
            t.mc_variance_margin(),
            0.0,
            t.factor_means_at_least_one && t.variance_margin() > 0.0 && t.mc_variance_margin() > 0.0,
        ));
        out.push(check(
            "theorem3.stability_margin",
            params,
            t.stability_margin(),
            t.mc_stability_margin(),
            0.0,
            t.factor_means_at_least_one && t.stability_margin() > 0.0 && t.mc_stability_margin() > 0.0,
        ));
    }
    for sigma in [0.05, 0.1, 0.5] {
        let mut previous = 1.0;
        let mut monotone = true;
        for k in 1..=6u32 {
            let exact = gaussian_moment(i64::from(k), 1.0, sigma)?;
            monotone &= exact >= previous;
            previous = exact;
            let mc = gaussian_moment_mc(k, 1.0, sigma, draws, sub());
            out.push(check(
                "gaussian_moment",
                format!("k={k} mu=1 sigma={sigma}"),
                exact,
                mc,
                0.01,
                relative_error(mc, exact) <= 0.01,
            ));
        }
        out.push(check(
            "gaussian_moment.monotone",
            format!("k=1..=6 mu=1 sigma={sigma}"),
            previous,
            previous,
            0.0,
            monotone,
        ));
    }
    for p in 1..=8usize {
        let alpha: Vec<f64> = (0..p).map(|_| uniform_in(&mut r, 0.2, 2.0) * if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let beta_sq: Vec<f64> = (0..p).map(|_| uniform_in(&mut r, 0.05, 1.0)).collect();
        let problem = ConceptRegressionProblem {
            alpha,
            beta_sq,
            target: uniform_in(&mut r, 0.5, 3.0),
        };
        let s = solve_concept_regression(&problem)?;
        let prop = proportionality_error(&problem, &s.coefficients);
        out.push(check("theorem4.proportionality", format!("p={p}"), 0.0, prop, 1e-6, prop <= 1e-6));
        out.push(check(
            "theorem4.gradient_descent",
            format!("p={p} iterations={}", s.iterations),
            0.0,
            s.disagreement,
            1e-6,
            s.disagreement <= 1e-6,
        ));
    }
    let us: Vec<f64> = (0..100).map(|_| uniform_in(&mut r, 0.5, 2.0)).collect();
    let stats = theorem5_construct(&us, 0.1, (draws / 100).max(1000), sub())?;
    let lo = us.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = us.iter().copied().fold(0.0, f64::max);
    let report = theorem5_bound_check(&stats, lo, hi, 1e-12)?;
    out.push(check(
        "theorem5.bounds",
        format!("concepts=100 a_min={lo} a_max={hi}"),
        0.0,
        report.max_gap,
        0.0,
        report.all_hold,
    ));
    let single = theorem5_construct(&[1.3], 0.1, (draws / 100).max(1000), sub())?;
    let tight = theorem5_bound_check(&single, 1.3, 1.3, 1e-12)?;
    let row = tight.rows[0];
    let gap = relative_error(row.lower, row.stability_c).max(relative_error(row.upper, row.stability_c));
    out.push(check(
        "theorem5.tight",
        "concepts=1 a_min=a_max=1.3".into(),
        row.lower,
        row.stability_c,
        1e-9,
        tight.all_hold && gap <= 1e-9,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_term_examples() {
        let s = TaylorTermSpec::lowest_degree(1, 1, 0.5).unwrap();
        assert_eq!(j_term_value(&s, &[0.0]), Some(1.0));
        assert_eq!(j_term_value(&s, &[0.25]), Some(1.5));
        assert_eq!(j_term_value(&s, &[0.5]), None);
    }

    #[test]
    fn closed_forms() {
        let (m, v) = theorem1_closed_form(1.0, 1, 0.1).unwrap();
        assert_eq!(m, 1.0);
        assert!((v - 0.01).abs() < 1e-15);
        let (_, v3) = theorem1_closed_form(2.0, 3, 0.1).unwrap();
        assert!((v3 - 0.121204).abs() < 1e-12);
        assert_eq!(theorem1_closed_form(1.0, 4, 0.0).unwrap().1, 0.0);
    }

    #[test]
    fn moment_recurrence() {
        let s = 0.3;
        assert!((gaussian_moment(2, 1.0, s).unwrap() - (1.0 + s * s)).abs() < 1e-15);
        assert!((gaussian_moment(3, 1.0, s).unwrap() - (1.0 + 3.0 * s * s)).abs() < 1e-15);
        assert_eq!(gaussian_moment(0, 5.0, 2.0).unwrap(), 1.0);
        assert!(gaussian_moment(-1, 1.0, 1.0).is_err());
    }

    #[test]
    fn scalar_regression() {
        let p = ConceptRegressionProblem {
            alpha: vec![0.8],
            beta_sq: vec![0.3],
            target: 2.0,
        };
        let s = solve_concept_regression(&p).unwrap();
        assert!((s.coefficients[0] - 2.0 * 0.8 / (0.64 + 0.3)).abs() < 1e-12);
        assert!(s.disagreement <= 1e-9);
        let zero = ConceptRegressionProblem { target: 0.0, ..p };
        assert_eq!(solve_concept_regression(&zero).unwrap().coefficients, vec![0.0]);
    }

    #[test]
    fn singular_regression_flagged() {
        let p = ConceptRegressionProblem {
            alpha: vec![1.0, 1.0],
            beta_sq: vec![0.0, 0.0],
            target: 1.0,
        };
        assert!(matches!(solve_concept_regression(&p), Err(Error::Singular(_))));
    }
}
