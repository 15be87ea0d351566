use crate::error::{PegError, Result};
use crate::types::ProbVector;

/// Lower bound on every policy coordinate after an update.
pub const POLICY_FLOOR: f64 = 1e-9;

/// One entropic mirror-ascent step: `π'ᵢ ∝ πᵢ · exp(η gᵢ)`.
///
/// The exponent is shifted by its maximum before exponentiating. The result
/// is not floored; see [`omd_step_floored`].
pub fn omd_step(policy: &ProbVector, gradient: &[f64], rate: f64) -> Result<ProbVector> {
    if gradient.len() != policy.len() {
        return Err(PegError::LengthMismatch {
            expected: policy.len(),
            found: gradient.len(),
        });
    }
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(PegError::InvalidSchedule(format!("rate must be finite and ≥ 0, got {rate}")));
    }
    if let Some(index) = policy.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(PegError::ZeroSupport { index });
    }
    if let Some(index) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(PegError::NegativeEntry {
            index,
            value: gradient[index],
        });
    }
    if rate == 0.0 {
        return Ok(policy.clone());
    }
    let top = gradient
        .iter()
        .map(|g| rate * g)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = policy
        .as_slice()
        .iter()
        .zip(gradient)
        .map(|(&p, &g)| p * (rate * g - top).exp())
        .collect();
    ProbVector::normalize_from(w)
}

/// [`omd_step`] followed by flooring at [`POLICY_FLOOR`] and renormalizing.
pub fn omd_step_floored(policy: &ProbVector, gradient: &[f64], rate: f64) -> Result<ProbVector> {
    Ok(omd_step(policy, gradient, rate)?.floored(POLICY_FLOOR))
}
