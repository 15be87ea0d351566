use std::ops::{Add, Index};

use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::types::{Label, PolicyPoint};
use crate::world::TaskBatch;

/// Gradient over a conditional policy, indexed `[condition][output]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyGradient(pub [[f64; 2]; 2]);

impl PolicyGradient {
    pub fn zero() -> Self {
        PolicyGradient([[0.0; 2]; 2])
    }

    pub fn row(&self, c: Label) -> &[f64; 2] {
        &self.0[c.index()]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut g = *self;
        g.0.iter_mut().flatten().for_each(|x| *x *= s);
        g
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `Σ_c ⟨g_c, π_c⟩`.
    pub fn dot(&self, policy: &PolicyPoint) -> f64 {
        Label::ALL
            .iter()
            .map(|&c| {
                let row = policy.condition(c);
                self.0[c.index()][0] * row.get(0) + self.0[c.index()][1] * row.get(1)
            })
            .sum()
    }

    /// Component-wise mean, summed in slice order.
    pub fn mean(gs: &[PolicyGradient]) -> Result<PolicyGradient> {
        if gs.is_empty() {
            return Err(PegError::EmptySequence);
        }
        let sum = gs.iter().fold(PolicyGradient::zero(), |a, b| a + *b);
        Ok(sum.scaled(1.0 / gs.len() as f64))
    }
}

impl Add for PolicyGradient {
    type Output = PolicyGradient;
    fn add(mut self, o: PolicyGradient) -> PolicyGradient {
        for (a, b) in self.0.iter_mut().flatten().zip(o.0.iter().flatten()) {
            *a += b;
        }
        self
    }
}

impl Index<(usize, usize)> for PolicyGradient {
    type Output = f64;
    fn index(&self, (c, r): (usize, usize)) -> &f64 {
        &self.0[c][r]
    }
}

/// Score-function estimate for discriminator `i`:
/// `g(s, r) = w · Σ_{k : signal_k = s} [1(report_k = r) − π(s, r)]`,
/// where `w` is the payment (or payment minus a baseline) and `π` is the
/// policy that produced the reports. The score is taken with respect to
/// the row logits.
pub fn reinforce_gradient_discriminator(
    batch: &TaskBatch,
    i: usize,
    weight: f64,
    policy: &PolicyPoint,
) -> Result<PolicyGradient> {
    let reports = batch.reports().ok_or(PegError::EmptyBatch)?;
    if batch.k() == 0 {
        return Err(PegError::EmptyBatch);
    }
    if i >= reports.len() {
        return Err(PegError::IndexOutOfRange {
            index: i,
            len: reports.len(),
        });
    }
    let mut counts = [[0.0f64; 2]; 2];
    for (s, r) in batch.signals()[i].iter().zip(&reports[i]) {
        counts[s.index()][r.index()] += 1.0;
    }
    Ok(score_gradient(&counts, policy, |_| weight))
}

/// Score-function estimate for the generator. Each task's reward is
/// `1(target_k = vote_k)` and enters the score of its own draw:
/// `g(v, y) = Σ_{k : target_k = v} reward_k · [1(correct_k = y) − π_G(v, y)]`.
pub fn reinforce_gradient_generator(
    batch: &TaskBatch,
    votes: &[Label],
    policy: &PolicyPoint,
) -> Result<PolicyGradient> {
    if batch.k() == 0 {
        return Err(PegError::EmptyBatch);
    }
    if votes.len() != batch.k() {
        return Err(PegError::LengthMismatch {
            expected: batch.k(),
            found: votes.len(),
        });
    }
    let mut rewarded = [[0.0f64; 2]; 2];
    for ((v, y), vote) in batch
        .generator_targets()
        .iter()
        .zip(batch.generator_correct())
        .zip(votes)
    {
        if v == vote {
            rewarded[v.index()][y.index()] += 1.0;
        }
    }
    Ok(score_gradient(&rewarded, policy, |_| 1.0))
}

fn score_gradient(
    counts: &[[f64; 2]; 2],
    policy: &PolicyPoint,
    weight: impl Fn(usize) -> f64,
) -> PolicyGradient {
    let mut g = [[0.0; 2]; 2];
    for c in 0..2 {
        let n_c = counts[c][0] + counts[c][1];
        let row = policy.condition(Label::from_index(c));
        for r in 0..2 {
            g[c][r] = weight(c) * (counts[c][r] - n_c * row.get(r));
        }
    }
    PolicyGradient(g)
}
