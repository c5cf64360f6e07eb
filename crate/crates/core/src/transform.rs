//! The e-exponentiated squashing map.
//!
//! For exponent `e` and crossover threshold `c`:
//!
//! ```text
//! sigma(y) = sgn(y) |y|^e      if |y| >= c
//!          = c^(e-1) y         otherwise
//! ```
//!
//! The two branches meet at `|y| = c`, so the map is continuous, odd and
//! strictly increasing for `e > 0`. With `e = 1` it is the identity.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default ceiling on `|sigma'|` when `c = 0`.
pub const DEFAULT_GRAD_CAP: f64 = 1e6;

/// Crossover threshold used throughout the reference experiments.
pub const DEFAULT_C: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    e: f64,
    c: f64,
    #[serde(default = "default_grad_cap")]
    grad_cap: f64,
}

fn default_grad_cap() -> f64 {
    DEFAULT_GRAD_CAP
}

impl TransformParams {
    pub fn new(e: f64, c: f64) -> Result<Self> {
        Self::with_grad_cap(e, c, DEFAULT_GRAD_CAP)
    }

    pub fn with_grad_cap(e: f64, c: f64, grad_cap: f64) -> Result<Self> {
        let p = TransformParams { e, c, grad_cap };
        p.validate()?;
        Ok(p)
    }

    /// `e = 1`: the untransformed loss.
    pub fn identity() -> Self {
        TransformParams {
            e: 1.0,
            c: DEFAULT_C,
            grad_cap: DEFAULT_GRAD_CAP,
        }
    }

    /// Checks the invariants. Deserialized values bypass [`TransformParams::new`],
    /// so callers loading configs should run this.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.e) {
            return Err(Error::domain(format!(
                "exponent e = {} not in [0, 1]",
                self.e
            )));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::domain(format!(
                "threshold c = {} must be finite and >= 0",
                self.c
            )));
        }
        if !(self.grad_cap > 0.0) {
            return Err(Error::domain(format!(
                "grad_cap = {} must be > 0",
                self.grad_cap
            )));
        }
        Ok(())
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn grad_cap(&self) -> f64 {
        self.grad_cap
    }

    pub fn is_identity(&self) -> bool {
        self.e == 1.0
    }

    /// Same threshold and cap with a different exponent (used by the warm-up schedule).
    pub fn with_e(&self, e: f64) -> Result<Self> {
        Self::with_grad_cap(e, self.c, self.grad_cap)
    }

    pub fn sigma(&self, yhat: f64) -> Result<f64> {
        sigma(yhat, self)
    }

    pub fn sigma_deriv(&self, yhat: f64) -> Result<f64> {
        sigma_deriv(yhat, self)
    }

    /// Largest value `|sigma'|` can take, i.e. the factor by which the
    /// transform can inflate a loss's Lipschitz constant.
    pub fn max_slope(&self) -> f64 {
        if self.is_identity() {
            1.0
        } else if self.c > 0.0 {
            self.c.powf(self.e - 1.0)
        } else {
            self.grad_cap
        }
    }

    /// Inverse of `sigma` on the positive half line.
    pub fn sigma_inverse(&self, value: f64) -> f64 {
        let a = value.abs();
        let mag = if self.is_identity() {
            a
        } else if a >= self.c.powf(self.e) {
            if self.e == 0.0 {
                // Flat power branch: every |y| >= c maps to 1.
                self.c.max(f64::MIN_POSITIVE)
            } else {
                a.powf(1.0 / self.e)
            }
        } else {
            a * self.c.powf(1.0 - self.e)
        };
        mag.copysign(value)
    }

    #[inline]
    pub(crate) fn sigma_unchecked(&self, yhat: f64) -> f64 {
        let a = yhat.abs();
        let mag = if a == 0.0 {
            0.0
        } else if a >= self.c {
            a.powf(self.e)
        } else {
            self.c.powf(self.e - 1.0) * a
        };
        mag.copysign(yhat)
    }

    #[inline]
    pub(crate) fn sigma_deriv_unchecked(&self, yhat: f64) -> f64 {
        let a = yhat.abs();
        if self.c == 0.0 {
            if a == 0.0 {
                return 0.0;
            }
            return (self.e * a.powf(self.e - 1.0)).min(self.grad_cap);
        }
        if a > self.c {
            self.e * a.powf(self.e - 1.0)
        } else {
            // Inner slope, also at the kink |y| = c.
            self.c.powf(self.e - 1.0)
        }
    }
}

impl Default for TransformParams {
    fn default() -> Self {
        Self::identity()
    }
}

fn check_finite(yhat: f64) -> Result<()> {
    if yhat.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("score {yhat} is not finite")))
    }
}

/// Applies the squashing map to a raw score.
pub fn sigma(yhat: f64, p: &TransformParams) -> Result<f64> {
    check_finite(yhat)?;
    Ok(p.sigma_unchecked(yhat))
}

/// Derivative of [`sigma`].
///
/// At `|yhat| = c` the inner (linear branch) slope `c^(e-1)` is returned.
/// With `c = 0` the derivative is `0` at the origin and capped at
/// `grad_cap` elsewhere.
pub fn sigma_deriv(yhat: f64, p: &TransformParams) -> Result<f64> {
    check_finite(yhat)?;
    Ok(p.sigma_deriv_unchecked(yhat))
}
