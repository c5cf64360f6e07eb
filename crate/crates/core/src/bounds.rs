//! Uniform-convergence confidence calculators for linear classifiers over
//! the weight ball `W_M = { w : ||w||_2 <= M }` with features in the unit ball.
//!
//! Two bounds are provided. The Lipschitz-in-the-small bound
//! ([`theorem2_confidence`]) depends on the risk's local slope `L_R(eps)`;
//! the classical bound ([`theorem3_confidence`]) depends on the loss's
//! global Lipschitz constant `L_l`. Both use a volumetric covering number
//! for `W_M`, handled in the log domain.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::losses::{margin_loss, BaseLoss, LossSpec};
use crate::rng::{self, streams, Rng};
use crate::{Error, Result};

/// `ln C` with `C = (1 + 2M/r)^d`, the volumetric covering number of the
/// radius-`M` ball in `d` dimensions by balls of radius `r`; `0` when `r >= M`.
pub fn covering_number_ball(m: f64, r: f64, d: usize) -> f64 {
    if r >= m {
        return 0.0;
    }
    d as f64 * (2.0 * m / r).ln_1p()
}

/// `ln(exp(a) + 1)` for `a >= 0`.
fn log_plus_one(a: f64) -> f64 {
    a + (-a).exp().ln_1p()
}

/// Derivative of the transformed margin loss `l(sigma(delta))` in `delta`.
fn margin_slope(loss: &LossSpec, delta: f64) -> f64 {
    let t = &loss.transform;
    margin_loss(loss.base, t.sigma_unchecked(delta)).1 * t.sigma_deriv_unchecked(delta)
}

/// Trapezoid nodes on `[a, b]`. Segments away from the origin get
/// geometrically graded nodes, which keeps the relative spacing constant for
/// the power-law integrand of the transformed branch.
fn nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    let graded = a * b > 0.0;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            if graded {
                (a.abs() * (b.abs() / a.abs()).powf(t)).copysign(a)
            } else {
                a + (b - a) * t
            }
        })
        .collect()
}

/// Lower bound on the number of quadrature points used by
/// [`lipschitz_small_uniform`].
pub const MIN_QUADRATURE_POINTS: usize = 100_000;

/// `|E_{delta ~ U[-M, M]} d/d delta l(sigma(delta))|` for a binary margin
/// loss, by composite trapezoid quadrature split at the non-smooth points
/// `±c` and the hinge point so that no panel straddles a kink.
pub fn lipschitz_small_uniform(loss: &LossSpec, m: f64, points: usize) -> Result<f64> {
    if !loss.base.is_binary() {
        return Err(Error::domain(
            "uniform-margin estimator needs a binary margin loss",
        ));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::domain(format!(
            "margin range M = {m} must be positive"
        )));
    }
    let t = &loss.transform;
    let mut breaks = vec![-m, m];
    if !t.is_identity() {
        breaks.extend([-t.c(), 0.0, t.c()]);
    }
    if loss.base == BaseLoss::Hinge {
        breaks.push(t.sigma_inverse(1.0));
    }
    breaks.retain(|&b| b >= -m && b <= m);
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    breaks.dedup();

    let points = points.max(MIN_QUADRATURE_POINTS);
    let segments: Vec<(f64, f64)> = breaks.windows(2).map(|w| (w[0], w[1])).collect();
    let mut integral = 0.0;
    for &(a, b) in &segments {
        let share = ((b - a) / (2.0 * m) * points as f64).ceil() as usize;
        let xs = nodes(a, b, share.max(1000));
        // Endpoints sit on kinks: evaluate one-sided limits from inside.
        let nudge = (b - a) * 1e-12;
        let f = |i: usize| {
            let x = if i == 0 {
                xs[0] + nudge
            } else if i == xs.len() - 1 {
                xs[i] - nudge
            } else {
                xs[i]
            };
            margin_slope(loss, x)
        };
        let mut prev = f(0);
        for i in 1..xs.len() {
            let cur = f(i);
            integral += 0.5 * (xs[i] - xs[i - 1]) * (prev + cur);
            prev = cur;
        }
    }
    Ok((integral / (2.0 * m)).abs())
}

/// A Monte Carlo estimate of a Lipschitz-in-the-small constant. Being a
/// maximum over sampled pairs it is a lower bound on the true supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub n_pairs: usize,
    pub epsilon: f64,
}

fn uniform_in_ball(rng: &mut Rng, d: usize, radius: f64) -> Array1<f64> {
    loop {
        let dir: Array1<f64> = Array1::from_shape_fn(d, |_| rng.sample(StandardNormal));
        let norm = dir.dot(&dir).sqrt();
        if norm > 0.0 {
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            return dir * (r / norm);
        }
    }
}

fn project(w: &mut Array1<f64>, m: f64) {
    let norm = w.dot(w).sqrt();
    if norm > m {
        *w *= m / norm;
    }
}

/// Estimates `L_R(eps)` as the largest `|R(w1) - R(w2)| / ||w1 - w2||` over
/// `n_pairs` sampled pairs in `W_M` with `||w1 - w2|| <= eps`.
///
/// Pair `i` is drawn from its own stream, so the first `k` pairs of a larger
/// run are exactly the pairs of a run with `n_pairs = k`.
pub fn lipschitz_small_mc<R>(
    risk: R,
    d: usize,
    epsilon: f64,
    m: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate>
where
    R: Fn(&[f64]) -> f64 + Sync,
{
    if n_pairs == 0 {
        return Err(Error::domain("n_pairs must be positive"));
    }
    if !(epsilon > 0.0 && m > 0.0) || d == 0 {
        return Err(Error::domain("epsilon, M and d must be positive"));
    }
    let value = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, streams::MC_BASE + i as u64);
            let w1 = uniform_in_ball(&mut rng, d, m);
            let mut w2 = &w1 + &uniform_in_ball(&mut rng, d, epsilon);
            // projection onto the ball is non-expansive, so the pair stays within eps
            project(&mut w2, m);
            let diff = &w1 - &w2;
            let dist = diff.dot(&diff).sqrt();
            if dist == 0.0 {
                return 0.0;
            }
            let r1 = risk(w1.as_slice().expect("contiguous"));
            let r2 = risk(w2.as_slice().expect("contiguous"));
            (r1 - r2).abs() / dist
        })
        .reduce(|| 0.0, f64::max);
    Ok(LipschitzEstimate {
        value,
        n_pairs,
        epsilon,
    })
}

/// Smallest `eps'` on a geometric grid (ratio 1.05, from `1e-8 eps` to
/// `eps`) satisfying `eps' >= min(eps, eps / (4 L_R(eps')))`.
///
/// When the grid point `g` is the first to qualify, the exact threshold
/// `eps / (4 L_R(g))` is returned instead if it lies in the preceding grid
/// cell and itself qualifies. If no grid point below `eps` qualifies the
/// result is `eps`, which satisfies the condition through the `min`.
pub fn eps_prime_fixed_point<F: Fn(f64) -> f64>(l_r_of: F, epsilon: f64) -> f64 {
    let holds = |x: f64| x >= epsilon.min(epsilon / (4.0 * l_r_of(x)));
    let mut prev = 0.0;
    let mut g = 1e-8 * epsilon;
    while g < epsilon {
        if holds(g) {
            let exact = epsilon / (4.0 * l_r_of(g));
            if exact > prev && exact <= g && holds(exact) {
                return exact;
            }
            return g;
        }
        prev = g;
        g *= 1.05;
    }
    epsilon
}

/// How `L_R(eps)` is obtained for a bound query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LipschitzProfile {
    Constant {
        value: f64,
    },
    /// Piecewise-linear interpolation through `(eps, L_R)` knots, constant
    /// beyond the end knots. Values must be nondecreasing.
    Table {
        points: Vec<(f64, f64)>,
    },
    /// Uniform-margin estimate for a loss: constant in `eps`, equal to
    /// [`lipschitz_small_uniform`] at the query's `M`.
    UniformMargin {
        loss: LossSpec,
        #[serde(default = "default_quadrature")]
        quadrature_points: usize,
    },
}

fn default_quadrature() -> usize {
    200_000
}

impl LipschitzProfile {
    pub fn label(&self) -> &'static str {
        match self {
            LipschitzProfile::Constant { .. } => "constant",
            LipschitzProfile::Table { .. } => "table",
            LipschitzProfile::UniformMargin { .. } => "uniform_margin_quadrature",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LipschitzProfile::Constant { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return Err(Error::domain("constant L_R must be positive and finite"));
                }
            }
            LipschitzProfile::Table { points } => {
                if points.is_empty() {
                    return Err(Error::domain("L_R table is empty"));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                        return Err(Error::domain(
                            "L_R table must have increasing eps and nondecreasing values",
                        ));
                    }
                }
                if points.iter().any(|p| !(p.1 > 0.0)) {
                    return Err(Error::domain("L_R table values must be positive"));
                }
            }
            LipschitzProfile::UniformMargin { loss, .. } => loss.transform.validate()?,
        }
        Ok(())
    }

    /// Resolves the profile into a callable `eps -> L_R(eps)` for radius `m`.
    pub fn resolve(&self, m: f64) -> Result<ResolvedProfile> {
        self.validate()?;
        Ok(match self {
            LipschitzProfile::Constant { value } => ResolvedProfile::Constant(*value),
            LipschitzProfile::Table { points } => ResolvedProfile::Table(points.clone()),
            LipschitzProfile::UniformMargin {
                loss,
                quadrature_points,
            } => ResolvedProfile::Constant(lipschitz_small_uniform(loss, m, *quadrature_points)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedProfile {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl ResolvedProfile {
    pub fn eval(&self, eps: f64) -> f64 {
        match self {
            ResolvedProfile::Constant(v) => *v,
            ResolvedProfile::Table(pts) => {
                if eps <= pts[0].0 {
                    return pts[0].1;
                }
                for w in pts.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if eps <= x1 {
                        return y0 + (y1 - y0) * (eps - x0) / (x1 - x0);
                    }
                }
                pts[pts.len() - 1].1
            }
        }
    }
}

/// Every symbol the two confidence calculators need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    /// Sample count.
    pub n: f64,
    /// Feature dimension.
    pub d: usize,
    /// Weight-ball radius, at least 1.
    pub m: f64,
    pub epsilon: f64,
    /// Global Lipschitz constant of the loss.
    pub l_l: f64,
    /// Upper bound on `l(0, y)`.
    pub c_l: f64,
    pub l_r: LipschitzProfile,
}

impl BoundQuery {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!(
                    "{name} = {v} must be positive and finite"
                )))
            }
        };
        positive(self.n, "N")?;
        positive(self.epsilon, "epsilon")?;
        positive(self.l_l, "L_l")?;
        positive(self.c_l, "C_l")?;
        if self.d == 0 {
            return Err(Error::domain("d must be positive"));
        }
        if !(self.m >= 1.0 && self.m.is_finite()) {
            return Err(Error::domain(format!(
                "M = {} must be finite and >= 1",
                self.m
            )));
        }
        self.l_r.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Lipschitz-in-the-small bound.
    LocalLipschitz,
    /// Classical bound in the loss's global Lipschitz constant.
    GlobalLipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// Deviation level the confidence refers to.
    pub epsilon_effective: f64,
    /// Lower bound on the probability that the uniform deviation stays
    /// below `epsilon_effective`. Not clamped: values <= 0 are vacuous.
    /// When the failure term overflows this is `-f64::MAX`;
    /// `log_failure_term` always holds the exact exponent.
    pub confidence: f64,
    pub vacuous: bool,
    /// Natural log of the subtracted failure term.
    pub log_failure_term: f64,
    pub b: f64,
    pub covering_radius: f64,
    /// `ln C(covering_radius)`.
    pub log_covering_count: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_prime: Option<f64>,
    /// `L_R(eps')` for the local bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_r_at_eps_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_r_at_m: Option<f64>,
    /// Which estimator supplied the `L_R` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_r_source: Option<String>,
    pub query: BoundQuery,
}

fn confidence_from_log(log_fail: f64) -> f64 {
    if log_fail > f64::MAX.ln() {
        -f64::MAX
    } else {
        1.0 - log_fail.exp()
    }
}

/// Lipschitz-in-the-small confidence:
/// `1 - 2 (C(eps / 4 L_R(eps')) + 1) exp(-N eps^2 / 8 B^2)` with
/// `B = L_R(M) M + C_l`, for deviations up to `eps + L_l eps^2 / 2B`.
pub fn theorem2_confidence(q: &BoundQuery) -> Result<BoundReport> {
    q.validate()?;
    let profile = q.l_r.resolve(q.m)?;
    let l_r_m = profile.eval(q.m);
    let b = l_r_m * q.m + q.c_l;
    let eps_prime = eps_prime_fixed_point(|x| profile.eval(x), q.epsilon);
    let l_r_eps_prime = profile.eval(eps_prime);
    let radius = q.epsilon / (4.0 * l_r_eps_prime);
    let log_c = covering_number_ball(q.m, radius, q.d);
    let log_fail =
        std::f64::consts::LN_2 + log_plus_one(log_c) - q.n * q.epsilon * q.epsilon / (8.0 * b * b);
    let confidence = confidence_from_log(log_fail);
    Ok(BoundReport {
        kind: BoundKind::LocalLipschitz,
        epsilon_effective: q.epsilon + q.l_l * q.epsilon * q.epsilon / (2.0 * b),
        confidence,
        vacuous: confidence <= 0.0,
        log_failure_term: log_fail,
        b,
        covering_radius: radius,
        log_covering_count: log_c,
        eps_prime: Some(eps_prime),
        l_r_at_eps_prime: Some(l_r_eps_prime),
        l_r_at_m: Some(l_r_m),
        l_r_source: Some(q.l_r.label().to_string()),
        query: q.clone(),
    })
}

/// Classical confidence `1 - 2 C(eps / 4 L_l) exp(-N eps^2 / 8 B^2)` with
/// `B = L_l M + C_l`.
pub fn theorem3_confidence(q: &BoundQuery) -> Result<BoundReport> {
    q.validate()?;
    let b = q.l_l * q.m + q.c_l;
    let radius = q.epsilon / (4.0 * q.l_l);
    let log_c = covering_number_ball(q.m, radius, q.d);
    let log_fail = std::f64::consts::LN_2 + log_c - q.n * q.epsilon * q.epsilon / (8.0 * b * b);
    let confidence = confidence_from_log(log_fail);
    Ok(BoundReport {
        kind: BoundKind::GlobalLipschitz,
        epsilon_effective: q.epsilon,
        confidence,
        vacuous: confidence <= 0.0,
        log_failure_term: log_fail,
        b,
        covering_radius: radius,
        log_covering_count: log_c,
        eps_prime: None,
        l_r_at_eps_prime: None,
        l_r_at_m: None,
        l_r_source: None,
        query: q.clone(),
    })
}

/// Data distributions for the Monte Carlo checks. Features are always
/// projected into the unit ball so losses of linear scores stay Lipschitz
/// in `w` with the loss's own constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// Equiprobable labels ±1, `x ~ N(y (separation/2) e_1, std^2 I)`,
    /// then `x <- x / max(1, ||x||)`.
    TwoGaussians { d: usize, separation: f64, std: f64 },
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec::TwoGaussians {
            d: 2,
            separation: 1.0,
            std: 0.5,
        }
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::TwoGaussians { d, separation, std } => {
                if d == 0 || !(std > 0.0) || !(separation >= 0.0) {
                    return Err(Error::domain(
                        "two_gaussians needs d >= 1, std > 0 and separation >= 0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match *self {
            DistributionSpec::TwoGaussians { d, .. } => d,
        }
    }

    /// Draws `n` labelled points.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> (Array2<f64>, Vec<i32>) {
        match *self {
            DistributionSpec::TwoGaussians { d, separation, std } => {
                let mut x = Array2::zeros((n, d));
                let mut labels = Vec::with_capacity(n);
                for mut row in x.rows_mut() {
                    let y = if rng.random::<bool>() { 1 } else { -1 };
                    for v in row.iter_mut() {
                        *v = std * rng.sample::<f64, _>(StandardNormal);
                    }
                    row[0] += y as f64 * separation / 2.0;
                    let norm = row.dot(&row).sqrt();
                    if norm > 1.0 {
                        row /= norm;
                    }
                    labels.push(y);
                }
                (x, labels)
            }
        }
    }
}

/// Per-sample loss differences `z_i = l(w1.x_i, y_i) - l(w2.x_i, y_i)`.
fn loss_differences(
    loss: &LossSpec,
    x: &Array2<f64>,
    labels: &[i32],
    w1: &Array1<f64>,
    w2: &Array1<f64>,
) -> Vec<f64> {
    let s1 = x.dot(w1);
    let s2 = x.dot(w2);
    let t = &loss.transform;
    s1.iter()
        .zip(s2.iter())
        .zip(labels)
        .map(|((&a, &b), &y)| {
            let y = y as f64;
            margin_loss(loss.base, y * t.sigma_unchecked(a)).0
                - margin_loss(loss.base, y * t.sigma_unchecked(b)).0
        })
        .collect()
}

/// Expected risk `R(w)` estimated from a fixed Monte Carlo sample.
#[derive(Debug, Clone)]
pub struct MonteCarloRisk {
    loss: LossSpec,
    x: Array2<f64>,
    labels: Vec<i32>,
}

impl MonteCarloRisk {
    pub fn new(loss: LossSpec, dist: &DistributionSpec, samples: usize, seed: u64) -> Result<Self> {
        if !loss.base.is_binary() {
            return Err(Error::domain(
                "Monte Carlo risk supports binary margin losses",
            ));
        }
        dist.validate()?;
        let (x, labels) = dist.sample(samples, &mut rng::stream(seed, streams::DATA));
        Ok(MonteCarloRisk { loss, x, labels })
    }

    pub fn risk(&self, w: &[f64]) -> f64 {
        let scores = self.x.dot(&ndarray::ArrayView1::from(w));
        let t = &self.loss.transform;
        let total: f64 = scores
            .iter()
            .zip(&self.labels)
            .map(|(&s, &y)| margin_loss(self.loss.base, y as f64 * t.sigma_unchecked(s)).0)
            .sum();
        total / self.labels.len() as f64
    }
}

fn default_reference_samples() -> usize {
    10_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Config {
    pub loss: LossSpec,
    #[serde(default)]
    pub distribution: DistributionSpec,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Declared bound on `||w1 - w2||`.
    pub epsilon: f64,
    /// Dataset size per trial.
    pub n: usize,
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_reference_samples")]
    pub reference_samples: usize,
}

impl Lemma2Config {
    /// Logistic loss on the default distribution with `w2 = w1 + eps e_2`.
    pub fn logistic_default(n: usize, epsilon: f64, rho: f64, trials: usize, seed: u64) -> Self {
        Lemma2Config {
            loss: LossSpec::untransformed(BaseLoss::Logistic),
            distribution: DistributionSpec::default(),
            w1: vec![0.8, 0.0],
            w2: vec![0.8, epsilon],
            epsilon,
            n,
            rho,
            trials,
            seed,
            reference_samples: default_reference_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub config: Lemma2Config,
    pub lipschitz_constant: f64,
    pub weight_distance: f64,
    /// `R(w1) - R(w2)` from the reference sample.
    pub reference_difference: f64,
    pub reference_std_error: f64,
    pub violations: usize,
    pub frequency: f64,
    /// `2 exp(-N rho^2 / (2 L_l^2 eps^2))`.
    pub hoeffding_bound: f64,
    /// `4 sqrt(0.25 / trials)`.
    pub binomial_slack: f64,
    /// Largest `|z_i|` seen across all trials; at most `L_l eps`.
    pub max_abs_increment: f64,
    pub pass: bool,
}

const REFERENCE_CHUNK: usize = 100_000;

/// Empirical check of the Hoeffding deviation step: the frequency with
/// which `|(R(w1) - R(w2)) - (R_hat(w1) - R_hat(w2))| >= rho` over
/// `trials` datasets of size `N` must not exceed
/// `2 exp(-N rho^2 / (2 L_l^2 eps^2))` plus binomial slack.
pub fn lemma2_mc_check(cfg: &Lemma2Config) -> Result<Lemma2Report> {
    if !cfg.loss.base.is_binary() {
        return Err(Error::domain("lemma2 check supports binary margin losses"));
    }
    cfg.loss.transform.validate()?;
    cfg.distribution.validate()?;
    let d = cfg.distribution.dim();
    if cfg.w1.len() != d || cfg.w2.len() != d {
        return Err(Error::shape(
            format!("weights of length {d}"),
            cfg.w1.len().max(cfg.w2.len()),
        ));
    }
    if cfg.trials < 1000 {
        return Err(Error::domain(format!(
            "need at least 1000 trials, got {}",
            cfg.trials
        )));
    }
    if cfg.n == 0 || !(cfg.rho > 0.0) || !(cfg.epsilon > 0.0) {
        return Err(Error::domain("N, rho and epsilon must be positive"));
    }
    if cfg.reference_samples < REFERENCE_CHUNK {
        return Err(Error::domain(format!(
            "reference sample must have at least {REFERENCE_CHUNK} points"
        )));
    }
    let w1 = Array1::from(cfg.w1.clone());
    let w2 = Array1::from(cfg.w2.clone());
    let diff = &w1 - &w2;
    let distance = diff.dot(&diff).sqrt();
    if distance > cfg.epsilon * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "||w1 - w2|| = {distance} exceeds declared epsilon {}",
            cfg.epsilon
        )));
    }
    let lipschitz = cfg.loss.lipschitz();

    // Reference difference from chunked, independently seeded streams.
    let chunks = cfg.reference_samples.div_ceil(REFERENCE_CHUNK);
    let reference_base = streams::MC_BASE + (1 << 40);
    let partial: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let size = REFERENCE_CHUNK.min(cfg.reference_samples - j * REFERENCE_CHUNK);
            let mut rng = rng::stream(cfg.seed, reference_base + j as u64);
            let (x, y) = cfg.distribution.sample(size, &mut rng);
            let z = loss_differences(&cfg.loss, &x, &y, &w1, &w2);
            (z.iter().sum(), z.iter().map(|v| v * v).sum(), size)
        })
        .collect();
    let (sum, sum_sq, count) = partial.iter().fold((0.0, 0.0, 0usize), |acc, p| {
        (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2)
    });
    let count_f = count as f64;
    let reference = sum / count_f;
    let variance = (sum_sq / count_f - reference * reference).max(0.0) * count_f / (count_f - 1.0);
    let std_error = (variance / count_f).sqrt();

    let per_trial: Vec<(bool, f64)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(cfg.seed, streams::MC_BASE + t as u64);
            let (x, y) = cfg.distribution.sample(cfg.n, &mut rng);
            let z = loss_differences(&cfg.loss, &x, &y, &w1, &w2);
            let mean = z.iter().sum::<f64>() / cfg.n as f64;
            let max_abs = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ((reference - mean).abs() >= cfg.rho, max_abs)
        })
        .collect();
    let violations = per_trial.iter().filter(|p| p.0).count();
    let max_abs_increment = per_trial.iter().fold(0.0f64, |m, p| m.max(p.1));
    let frequency = violations as f64 / cfg.trials as f64;
    let hoeffding_bound = 2.0
        * (-(cfg.n as f64) * cfg.rho * cfg.rho
            / (2.0 * lipschitz * lipschitz * cfg.epsilon * cfg.epsilon))
            .exp();
    let binomial_slack = 4.0 * (0.25 / cfg.trials as f64).sqrt();
    Ok(Lemma2Report {
        config: cfg.clone(),
        lipschitz_constant: lipschitz,
        weight_distance: distance,
        reference_difference: reference,
        reference_std_error: std_error,
        violations,
        frequency,
        hoeffding_bound,
        binomial_slack,
        max_abs_increment,
        pass: frequency <= hoeffding_bound + binomial_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::TransformParams;

    fn query(l_r: f64) -> BoundQuery {
        BoundQuery {
            n: 1e5,
            d: 5,
            m: 1.0,
            epsilon: 0.3,
            l_l: 1.0,
            c_l: std::f64::consts::LN_2,
            l_r: LipschitzProfile::Constant { value: l_r },
        }
    }

    #[test]
    fn covering_examples() {
        assert_eq!(covering_number_ball(1.0, 1.0, 5), 0.0);
        assert_eq!(covering_number_ball(1.0, 2.0, 5), 0.0);
        assert!((covering_number_ball(1.0, 0.999999999, 5).exp() - 243.0).abs() < 1e-6);
        assert!((covering_number_ball(2.0, 1.0, 5) - 5.0 * 5f64.ln()).abs() < 1e-14);
        let big = covering_number_ball(10.0, 1e-9, 1_000_000);
        assert!(big.is_finite() && big > 0.0);
    }

    #[test]
    fn eps_prime_examples() {
        assert_eq!(eps_prime_fixed_point(|_| 1.0, 0.2), 0.2 / 4.0);
        assert_eq!(eps_prime_fixed_point(|_| 10.0, 0.2), 0.2 / 40.0);
        // L_R < 1/4 makes eps / 4L_R exceed eps, so only eps itself qualifies
        assert_eq!(eps_prime_fixed_point(|_| 0.1, 0.3), 0.3);
        assert_eq!(eps_prime_fixed_point(|_| 1e-30, 0.3), 0.3);
    }

    #[test]
    fn eps_prime_satisfies_condition() {
        let profiles: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|x| 0.5 + x),
            Box::new(|x| 3.0 + 100.0 * x * x),
            Box::new(|x| if x < 0.01 { 0.2 } else { 5.0 }),
        ];
        for l in &profiles {
            for eps in [1e-3, 0.05, 0.5, 2.0] {
                let ep = eps_prime_fixed_point(l, eps);
                assert!(ep > 0.0 && ep <= eps);
                assert!(ep >= eps.min(eps / (4.0 * l(ep))) * (1.0 - 1e-15));
            }
        }
    }

    #[test]
    fn hand_computed_local_bound() {
        let r = theorem2_confidence(&query(0.1)).unwrap();
        let b = 0.1 + std::f64::consts::LN_2;
        assert!((r.b - b).abs() < 1e-15);
        assert_eq!(r.eps_prime, Some(0.3));
        assert!((r.covering_radius - 0.75).abs() < 1e-15);
        // radius 0.75 < M = 1, so C = (1 + 2 / 0.75)^5
        let c = (1.0f64 + 2.0 / 0.75).powi(5);
        assert!((r.log_covering_count - c.ln()).abs() < 1e-12);
        let expected = 1.0 - 2.0 * (c + 1.0) * (-1e5 * 0.09 / (8.0 * b * b)).exp();
        assert!((r.confidence - expected).abs() < 1e-9);
        assert!((r.epsilon_effective - (0.3 + 0.09 / (2.0 * b))).abs() < 1e-15);
        assert!(!r.vacuous);
    }

    #[test]
    fn vacuous_bounds_are_reported() {
        let mut q = query(3.0);
        q.n = 10.0;
        q.d = 50;
        let r = theorem3_confidence(&q).unwrap();
        assert!(r.vacuous && r.confidence < 0.0);
        q.d = 1_000_000;
        q.epsilon = 1e-6;
        let r = theorem2_confidence(&q).unwrap();
        assert_eq!(r.confidence, -f64::MAX);
        assert!(r.log_failure_term.is_finite());
    }

    #[test]
    fn query_validation() {
        let mut q = query(0.1);
        q.m = 0.5;
        assert!(theorem2_confidence(&q).is_err());
        let mut q = query(0.1);
        q.l_r = LipschitzProfile::Table {
            points: vec![(0.1, 2.0), (0.2, 1.0)],
        };
        assert!(theorem2_confidence(&q).is_err());
    }

    #[test]
    fn table_profile_interpolates() {
        let p = ResolvedProfile::Table(vec![(0.1, 1.0), (0.3, 2.0)]);
        assert_eq!(p.eval(0.01), 1.0);
        assert!((p.eval(0.2) - 1.5).abs() < 1e-15);
        assert_eq!(p.eval(5.0), 2.0);
    }

    #[test]
    fn uniform_margin_identity_matches_base() {
        let base = LossSpec::untransformed(BaseLoss::Logistic);
        let t1 = LossSpec::new(BaseLoss::Logistic, TransformParams::new(1.0, 0.5).unwrap());
        assert_eq!(
            lipschitz_small_uniform(&base, 7.0, 100_000).unwrap(),
            lipschitz_small_uniform(&t1, 7.0, 100_000).unwrap()
        );
        assert!(
            lipschitz_small_uniform(&LossSpec::untransformed(BaseLoss::SoftmaxCe), 1.0, 10)
                .is_err()
        );
    }

    #[test]
    fn mc_lipschitz_edge_cases() {
        let est = lipschitz_small_mc(|_| 3.0, 3, 0.1, 2.0, 500, 4).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(lipschitz_small_mc(|_| 0.0, 3, 0.1, 2.0, 0, 4).is_err());
    }

    #[test]
    fn lemma2_input_checks() {
        let mut cfg = Lemma2Config::logistic_default(50, 0.1, 0.05, 1000, 1);
        cfg.reference_samples = 100_000;
        cfg.w2 = vec![0.8, 0.2];
        assert!(lemma2_mc_check(&cfg).is_err());
        cfg.w2 = vec![0.8, 0.1];
        cfg.trials = 999;
        assert!(lemma2_mc_check(&cfg).is_err());
    }
}
