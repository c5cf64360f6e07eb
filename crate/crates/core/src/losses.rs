//! Base convex losses and their e-exponentiated versions.
//!
//! A transformed loss evaluates the base loss on `sigma(score)` instead of
//! the raw score; gradients are returned with respect to the raw scores.

use serde::{Deserialize, Serialize};

use crate::transform::TransformParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    Logistic,
    Hinge,
    #[serde(alias = "softmax")]
    SoftmaxCe,
}

impl BaseLoss {
    pub fn is_binary(self) -> bool {
        matches!(self, BaseLoss::Logistic | BaseLoss::Hinge)
    }

    /// Exact value of `l(0, y)`; `num_classes` is only read for softmax.
    pub fn value_at_zero(self, num_classes: usize) -> f64 {
        match self {
            BaseLoss::Logistic => std::f64::consts::LN_2,
            BaseLoss::Hinge => 1.0,
            BaseLoss::SoftmaxCe => (num_classes as f64).ln(),
        }
    }

    /// Lipschitz constant with respect to the score (Euclidean norm over
    /// the logits for softmax).
    pub fn lipschitz(self) -> f64 {
        match self {
            BaseLoss::Logistic | BaseLoss::Hinge => 1.0,
            BaseLoss::SoftmaxCe => std::f64::consts::SQRT_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::Logistic => "logistic",
            BaseLoss::Hinge => "hinge",
            BaseLoss::SoftmaxCe => "softmax",
        }
    }
}

impl std::str::FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(BaseLoss::Logistic),
            "hinge" => Ok(BaseLoss::Hinge),
            "softmax" | "softmax_ce" | "softmax-ce" => Ok(BaseLoss::SoftmaxCe),
            other => Err(Error::domain(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: BaseLoss,
    #[serde(default)]
    pub transform: TransformParams,
}

/// Loss value together with its gradient with respect to the raw scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad_wrt_scores: Vec<f64>,
}

impl LossSpec {
    pub fn new(base: BaseLoss, transform: TransformParams) -> Self {
        LossSpec { base, transform }
    }

    pub fn untransformed(base: BaseLoss) -> Self {
        LossSpec {
            base,
            transform: TransformParams::identity(),
        }
    }

    /// `C_l`: an upper bound on `l(0, y)`. The transform fixes the origin,
    /// so this is the base loss's value at zero.
    pub fn c_l(&self, num_classes: usize) -> f64 {
        self.base.value_at_zero(num_classes)
    }

    /// `L_l`: Lipschitz constant of the (possibly transformed) loss in the score.
    pub fn lipschitz(&self) -> f64 {
        self.base.lipschitz() * self.transform.max_slope()
    }

    /// Dispatches on the base loss. Binary losses read `scores[0]` and a ±1
    /// label; softmax reads all scores and a class index.
    pub fn eval(&self, scores: &[f64], label: i32) -> Result<LossEval> {
        match self.base {
            BaseLoss::Logistic | BaseLoss::Hinge => {
                if scores.len() != 1 {
                    return Err(Error::shape("1 score", format!("{} scores", scores.len())));
                }
                binary_loss(self, scores[0], label)
            }
            BaseLoss::SoftmaxCe => {
                if label < 0 {
                    return Err(Error::domain(format!("class index {label} is negative")));
                }
                softmax_ce_loss(self, scores, label as usize)
            }
        }
    }
}

/// `ln(1 + exp(-m))` without overflow.
#[inline]
fn softplus_neg(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(m))` without overflow.
#[inline]
fn sigmoid_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let z = (-m).exp();
        z / (1.0 + z)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

/// Margin loss `l(m)` and `dl/dm` for the binary bases.
#[inline]
pub(crate) fn margin_loss(base: BaseLoss, m: f64) -> (f64, f64) {
    match base {
        BaseLoss::Logistic => (softplus_neg(m), -sigmoid_neg(m)),
        BaseLoss::Hinge => {
            if m < 1.0 {
                (1.0 - m, -1.0)
            } else {
                (0.0, 0.0)
            }
        }
        BaseLoss::SoftmaxCe => unreachable!("softmax has no scalar margin"),
    }
}

/// Logistic or hinge loss of a single score with label `y` in {-1, +1}.
pub fn binary_loss(spec: &LossSpec, yhat: f64, y: i32) -> Result<LossEval> {
    if !spec.base.is_binary() {
        return Err(Error::domain("binary_loss needs a logistic or hinge base"));
    }
    if y != 1 && y != -1 {
        return Err(Error::domain(format!(
            "binary label must be -1 or +1, got {y}"
        )));
    }
    let t = &spec.transform;
    let s = t.sigma(yhat)?;
    let yf = y as f64;
    let (value, dl_dm) = margin_loss(spec.base, yf * s);
    let grad = dl_dm * yf * t.sigma_deriv_unchecked(yhat);
    Ok(LossEval {
        value,
        grad_wrt_scores: vec![grad],
    })
}

/// Softmax cross-entropy over transformed logits `sigma(logit_k)`.
pub fn softmax_ce_loss(spec: &LossSpec, logits: &[f64], y: usize) -> Result<LossEval> {
    if spec.base != BaseLoss::SoftmaxCe {
        return Err(Error::domain("softmax_ce_loss needs a softmax base"));
    }
    let k = logits.len();
    if k < 2 {
        return Err(Error::domain(format!(
            "softmax needs at least 2 logits, got {k}"
        )));
    }
    if y >= k {
        return Err(Error::domain(format!(
            "class index {y} out of range for {k} classes"
        )));
    }
    let t = &spec.transform;
    let mut z = Vec::with_capacity(k);
    for &l in logits {
        z.push(t.sigma(l)?);
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted_y = z[y] - max;
    let mut sum = 0.0;
    for zk in z.iter_mut() {
        *zk = (*zk - max).exp();
        sum += *zk;
    }
    // z now holds unnormalised probabilities
    let value = sum.ln() - shifted_y;
    let grad = z
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(j, (&ez, &l))| {
            let p = ez / sum;
            let target = if j == y { 1.0 } else { 0.0 };
            (p - target) * t.sigma_deriv_unchecked(l)
        })
        .collect();
    Ok(LossEval {
        value: value.max(0.0),
        grad_wrt_scores: grad,
    })
}

/// Mean loss over `N` score rows.
pub fn empirical_risk<S: AsRef<[f64]>>(
    spec: &LossSpec,
    scores: &[S],
    labels: &[i32],
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::domain("empirical risk over zero samples"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", scores.len()),
            format!("{} labels", labels.len()),
        ));
    }
    let mut total = 0.0;
    for (row, &y) in scores.iter().zip(labels) {
        total += spec.eval(row.as_ref(), y)?.value;
    }
    Ok(total / scores.len() as f64)
}
