use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};

/// Floor applied to an adaptive gradient bound.
pub const GRAD_BOUND_FLOOR: f64 = 1.0;

fn default_kl_radius() -> f64 {
    std::f64::consts::LN_2
}

/// Which epoch quantity the doubling rate divides by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoublingVariant {
    /// `η = sqrt(2D / (M² · 2^i))` for `2^i ≤ t < 2^{i+1}`.
    #[default]
    Epoch,
    /// `η = sqrt(2D / (M² · i))` with the same epoch index `i` (clamped
    /// to ≥ 1 so the first epoch is finite).
    ExponentIndex,
}

/// Learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        rate: f64,
    },
    PowerDecay {
        base_rate: f64,
        exponent: f64,
    },
    Doubling {
        #[serde(default = "default_kl_radius")]
        kl_radius: f64,
        /// `None` tracks the running maximum of observed gradient norms,
        /// floored at [`GRAD_BOUND_FLOOR`].
        #[serde(default)]
        grad_bound: Option<f64>,
        #[serde(default)]
        variant: DoublingVariant,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant { rate: 0.1 }
    }
}

impl Schedule {
    pub fn doubling(kl_radius: f64, grad_bound: Option<f64>) -> Self {
        Schedule::Doubling {
            kl_radius,
            grad_bound,
            variant: DoublingVariant::Epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PegError::InvalidSchedule(m));
        match *self {
            Schedule::Constant { rate } => {
                if !(rate.is_finite() && rate >= 0.0) {
                    return bad(format!("constant rate must be finite and ≥ 0, got {rate}"));
                }
            }
            Schedule::PowerDecay {
                base_rate,
                exponent,
            } => {
                if !(base_rate.is_finite() && base_rate > 0.0) {
                    return bad(format!("base_rate must be > 0, got {base_rate}"));
                }
                if !(exponent > 0.5 && exponent < 1.0) {
                    return bad(format!("exponent must lie in (0.5, 1), got {exponent}"));
                }
            }
            Schedule::Doubling {
                kl_radius,
                grad_bound,
                ..
            } => {
                if !(kl_radius.is_finite() && kl_radius >= 0.0) {
                    return bad(format!("kl_radius must be ≥ 0, got {kl_radius}"));
                }
                if let Some(m) = grad_bound {
                    if !(m.is_finite() && m > 0.0) {
                        return bad(format!("grad_bound must be > 0, got {m}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self, Schedule::Constant { rate } if *rate == 0.0)
    }

    /// Gradient bound in effect given the largest norm seen so far.
    pub fn grad_bound(&self, observed_max: f64) -> Option<f64> {
        match self {
            Schedule::Doubling { grad_bound, .. } => {
                Some(grad_bound.unwrap_or(observed_max.max(GRAD_BOUND_FLOOR)))
            }
            _ => None,
        }
    }

    /// Rate at iteration `t ≥ 1`. `observed_max` feeds an adaptive
    /// doubling bound and is ignored otherwise.
    pub fn rate(&self, t: u64, observed_max: f64) -> Result<f64> {
        self.validate()?;
        if t == 0 {
            return Err(PegError::InvalidSchedule("iteration index starts at 1".into()));
        }
        Ok(match *self {
            Schedule::Constant { rate } => rate,
            Schedule::PowerDecay {
                base_rate,
                exponent,
            } => base_rate / (t as f64).powf(exponent),
            Schedule::Doubling {
                kl_radius, variant, ..
            } => {
                let m = self.grad_bound(observed_max).unwrap();
                let epoch = doubling_epoch(t);
                let denom = match variant {
                    DoublingVariant::Epoch => (1u64 << epoch) as f64,
                    DoublingVariant::ExponentIndex => epoch.max(1) as f64,
                };
                (2.0 * kl_radius / (m * m * denom)).sqrt()
            }
        })
    }
}

/// `⌊log₂ t⌋` for `t ≥ 1`.
#[inline]
pub fn doubling_epoch(t: u64) -> u32 {
    63 - t.leading_zeros()
}

/// Rate at `t` with no observed gradients (adaptive bounds sit at the floor).
pub fn schedule_rate(s: &Schedule, t: u64) -> Result<f64> {
    s.rate(t, 0.0)
}
