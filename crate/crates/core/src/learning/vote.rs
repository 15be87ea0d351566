use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::types::Label;

/// How an exact tie among the reports is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Zero,
    Random,
}

/// Strict majority; ties go to [`Label::Zero`].
pub fn majority_vote(reports: &[Label]) -> Result<Label> {
    tally(reports).map(|t| t.unwrap_or(Label::Zero))
}

pub fn majority_vote_with<R: Rng + ?Sized>(
    reports: &[Label],
    rule: TieRule,
    rng: &mut R,
) -> Result<Label> {
    Ok(match (tally(reports)?, rule) {
        (Some(l), _) => l,
        (None, TieRule::Zero) => Label::Zero,
        (None, TieRule::Random) => Label::from(rng.gen::<bool>()),
    })
}

/// Per-task votes from an agents × tasks report matrix.
pub fn majority_votes<R: Rng + ?Sized>(
    reports: &[Vec<Label>],
    rule: TieRule,
    rng: &mut R,
) -> Result<Vec<Label>> {
    let k = reports.first().ok_or(PegError::EmptySequence)?.len();
    let mut column = Vec::with_capacity(reports.len());
    (0..k)
        .map(|t| {
            column.clear();
            column.extend(reports.iter().map(|r| r[t]));
            majority_vote_with(&column, rule, rng)
        })
        .collect()
}

fn tally(reports: &[Label]) -> Result<Option<Label>> {
    if reports.is_empty() {
        return Err(PegError::EmptySequence);
    }
    let ones = reports.iter().filter(|&&l| l == Label::One).count();
    let zeros = reports.len() - ones;
    Ok(match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => Some(Label::One),
        std::cmp::Ordering::Less => Some(Label::Zero),
        std::cmp::Ordering::Equal => None,
    })
}
