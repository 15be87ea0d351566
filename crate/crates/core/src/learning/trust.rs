use crate::error::{PegError, Result};
use crate::types::{PolicyPoint, ProbVector};

/// L1 ball of radius `radius` around `reference`, per condition.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegion {
    reference: PolicyPoint,
    radius: f64,
    enabled: bool,
}

impl TrustRegion {
    pub fn new(reference: PolicyPoint, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(PegError::InvalidTrustRegion(format!(
                "radius must be finite and > 0, got {radius}"
            )));
        }
        Ok(TrustRegion {
            reference,
            radius,
            enabled: true,
        })
    }

    pub fn disabled(reference: PolicyPoint) -> Self {
        TrustRegion {
            reference,
            radius: f64::INFINITY,
            enabled: false,
        }
    }

    pub fn reference(&self) -> &PolicyPoint {
        &self.reference
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }
}

/// Pulls each condition's row back along the segment toward the reference
/// row until its L1 distance is at most the radius. Rows already inside
/// are returned unchanged.
pub fn trust_project(policy: &PolicyPoint, region: &TrustRegion) -> PolicyPoint {
    if !region.enabled {
        return policy.clone();
    }
    let rows = [0, 1].map(|c| {
        let p = &policy.rows()[c];
        let r = &region.reference.rows()[c];
        let d = p.l1_distance(r);
        if d <= region.radius {
            return p.clone();
        }
        let lambda = region.radius / d;
        let mixed: Vec<f64> = p
            .as_slice()
            .iter()
            .zip(r.as_slice())
            .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        ProbVector::normalize_from(mixed).expect("convex combination of distributions")
    });
    PolicyPoint::new(rows).expect("rows have length 2")
}
