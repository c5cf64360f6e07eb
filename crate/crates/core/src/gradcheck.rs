//! Central finite-difference checks of the analytic loss gradients.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::losses::{BaseLoss, LossSpec};
use crate::rng::{self, streams};
use crate::Result;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Points closer than this to a kink are not sampled.
pub const KINK_EXCLUSION: f64 = 1e-3;
/// Pass threshold on the relative error.
pub const TOLERANCE: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: LossSpec,
    pub samples: usize,
    pub max_relative_error: f64,
    /// Scores and label at which the worst error occurred.
    pub worst_scores: Vec<f64>,
    pub worst_label: i32,
    pub pass: bool,
}

/// Score locations where `l(sigma(score), label)` is not differentiable.
fn kinks(spec: &LossSpec, label: i32) -> Vec<f64> {
    let t = &spec.transform;
    let mut k = Vec::new();
    if !t.is_identity() {
        k.extend([-t.c(), t.c()]);
        if t.c() == 0.0 {
            k.push(0.0);
        }
    }
    if spec.base == BaseLoss::Hinge {
        k.push(label as f64 * t.sigma_inverse(1.0));
    }
    k
}

fn near_kink(x: f64, kinks: &[f64]) -> bool {
    kinks.iter().any(|k| (x - k).abs() <= KINK_EXCLUSION)
}

/// Draws `samples` score vectors (uniform in `[-5, 5]` for binary losses,
/// `num_classes` logits in `[-3, 3]` for softmax) away from kinks and
/// compares each gradient component with a central difference of the loss
/// value.
pub fn check_loss(
    spec: &LossSpec,
    samples: usize,
    num_classes: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    spec.transform.validate()?;
    let mut rng = rng::stream(seed, streams::DATA);
    let mut worst = (0.0f64, Vec::new(), 0);
    let mut drawn = 0;
    while drawn < samples {
        let (scores, label): (Vec<f64>, i32) = if spec.base.is_binary() {
            let y = if rng.random::<bool>() { 1 } else { -1 };
            (vec![rng.random_range(-5.0..5.0)], y)
        } else {
            let k = num_classes.max(2);
            let logits = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            (logits, rng.random_range(0..k as i32))
        };
        let ks = kinks(spec, label);
        if scores.iter().any(|&s| near_kink(s, &ks)) {
            continue;
        }
        drawn += 1;
        let analytic = spec.eval(&scores, label)?.grad_wrt_scores;
        for j in 0..scores.len() {
            let mut plus = scores.clone();
            let mut minus = scores.clone();
            plus[j] += STEP;
            minus[j] -= STEP;
            let numeric =
                (spec.eval(&plus, label)?.value - spec.eval(&minus, label)?.value) / (2.0 * STEP);
            let err = relative_error(analytic[j], numeric);
            if err > worst.0 {
                worst = (err, scores.clone(), label);
            }
        }
    }
    Ok(GradcheckReport {
        loss: *spec,
        samples,
        max_relative_error: worst.0,
        worst_scores: worst.1,
        worst_label: worst.2,
        pass: worst.0 <= TOLERANCE,
    })
}
