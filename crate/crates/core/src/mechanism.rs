//! Determinant-based peer payments.
//!
//! A batch of tasks is split into two disjoint subsets. For every ordered
//! pair of agents `(i, j)` we count co-reports on each subset and pay agent
//! `i` the product of the two count determinants, summed over peers `j`.
//! Each determinant is an unbiased estimate of `a · det(U)` for the pair's
//! joint report distribution `U`, and the subsets are independent, so the
//! expected payment is `a₁ · a₂ · det(U)²` per peer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::types::{CoReportCounts, JointDist, Label};

/// Smallest batch for which both subsets have at least two tasks.
pub const MIN_BATCH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// First `⌈K/2⌉` tasks, then the rest.
    #[default]
    Half,
    /// Uniformly random balanced partition.
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSplit {
    subset_one: Vec<usize>,
    subset_two: Vec<usize>,
}

impl TaskSplit {
    /// Validates that the subsets partition `0..k` and both hold at least
    /// two tasks.
    pub fn new(mut subset_one: Vec<usize>, mut subset_two: Vec<usize>) -> Result<Self> {
        subset_one.sort_unstable();
        subset_two.sort_unstable();
        if subset_one.len() < 2 || subset_two.len() < 2 {
            return Err(PegError::InvalidSplit(format!(
                "subset sizes {} and {} (need ≥ 2 each)",
                subset_one.len(),
                subset_two.len()
            )));
        }
        let k = subset_one.len() + subset_two.len();
        let mut seen = vec![false; k];
        for &idx in subset_one.iter().chain(&subset_two) {
            if idx >= k || seen[idx] {
                return Err(PegError::InvalidSplit(format!(
                    "index {idx} repeated or outside 0..{k}"
                )));
            }
            seen[idx] = true;
        }
        Ok(TaskSplit {
            subset_one,
            subset_two,
        })
    }

    pub fn half(k: usize) -> Result<Self> {
        if k < MIN_BATCH {
            return Err(PegError::BatchTooSmall { k });
        }
        let h = k.div_ceil(2);
        Ok(TaskSplit {
            subset_one: (0..h).collect(),
            subset_two: (h..k).collect(),
        })
    }

    pub fn subset_one(&self) -> &[usize] {
        &self.subset_one
    }

    pub fn subset_two(&self) -> &[usize] {
        &self.subset_two
    }

    pub fn subsets(&self) -> [&[usize]; 2] {
        [&self.subset_one, &self.subset_two]
    }

    pub fn batch_size(&self) -> usize {
        self.subset_one.len() + self.subset_two.len()
    }

    /// `a₁ · a₂`, the scale between a pair's expected payment and `det(U)²`.
    pub fn pair_scale(&self) -> u64 {
        // Both subsets have ≥ 2 tasks by construction.
        pair_count_constant(self.subset_one.len()).unwrap()
            * pair_count_constant(self.subset_two.len()).unwrap()
    }
}

/// Partitions `0..k`. The `Half` policy never touches `rng`; `Random`
/// shuffles and takes the first `⌈k/2⌉` indices.
pub fn split_tasks<R: Rng + ?Sized>(k: usize, policy: SplitPolicy, rng: &mut R) -> Result<TaskSplit> {
    if k < MIN_BATCH {
        return Err(PegError::BatchTooSmall { k });
    }
    match policy {
        SplitPolicy::Half => TaskSplit::half(k),
        SplitPolicy::Random => {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(rng);
            let h = k.div_ceil(2);
            let two = idx.split_off(h);
            TaskSplit::new(idx, two)
        }
    }
}

pub fn co_report_matrix(
    reports_i: &[Label],
    reports_j: &[Label],
    subset: &[usize],
) -> Result<CoReportCounts> {
    if reports_i.len() != reports_j.len() {
        return Err(PegError::LengthMismatch {
            expected: reports_i.len(),
            found: reports_j.len(),
        });
    }
    let mut counts = [[0u64; 2]; 2];
    for &k in subset {
        if k >= reports_i.len() {
            return Err(PegError::IndexOutOfRange {
                index: k,
                len: reports_i.len(),
            });
        }
        counts[reports_i[k].index()][reports_j[k].index()] += 1;
    }
    CoReportCounts::new(counts, subset.len())
}

/// Determinant mutual information, `|det(U)|`.
pub fn dmi(u: &JointDist) -> f64 {
    u.det().abs()
}

/// `C(s, 2) · 2! = s (s − 1)`.
pub fn pair_count_constant(subset_size: usize) -> Result<u64> {
    if subset_size < 2 {
        return Err(PegError::SubsetTooSmall { size: subset_size });
    }
    let s = subset_size as u64;
    Ok(s * (s - 1))
}

fn check_reports(reports: &[Vec<Label>], split: &TaskSplit) -> Result<()> {
    if reports.len() < 2 {
        return Err(PegError::TooFewAgents { n: reports.len() });
    }
    let k = split.batch_size();
    for row in reports {
        if row.len() != k {
            return Err(PegError::LengthMismatch {
                expected: k,
                found: row.len(),
            });
        }
    }
    Ok(())
}

fn pair_term(reports: &[Vec<Label>], split: &TaskSplit, i: usize, j: usize) -> Result<i64> {
    let d1 = co_report_matrix(&reports[i], &reports[j], split.subset_one())?.det();
    let d2 = co_report_matrix(&reports[i], &reports[j], split.subset_two())?.det();
    Ok(d1 * d2)
}

/// Payment to agent `i`: `Σ_{j≠i} det(M₁ⁱʲ) · det(M₂ⁱʲ)`. Exact; may be
/// negative for a single realization.
pub fn payment(reports: &[Vec<Label>], split: &TaskSplit, i: usize) -> Result<f64> {
    check_reports(reports, split)?;
    if i >= reports.len() {
        return Err(PegError::IndexOutOfRange {
            index: i,
            len: reports.len(),
        });
    }
    let mut total: i64 = 0;
    for j in 0..reports.len() {
        if j != i {
            total += pair_term(reports, split, i, j)?;
        }
    }
    Ok(total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaymentVector {
    payments: Vec<f64>,
}

impl PaymentVector {
    pub fn new(payments: Vec<f64>) -> Self {
        PaymentVector { payments }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.payments
    }

    pub fn len(&self) -> usize {
        self.payments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.payments[i]
    }

    /// Per-pair-averaged estimate of `det(U)²`: raw payment divided by
    /// `a₁ · a₂ · (n − 1)`.
    pub fn normalized(&self, split: &TaskSplit) -> PaymentVector {
        let denom = split.pair_scale() as f64 * (self.payments.len() - 1) as f64;
        PaymentVector {
            payments: self.payments.iter().map(|p| p / denom).collect(),
        }
    }
}

/// Payments to every agent. Each unordered pair is counted once and
/// credited to both sides.
pub fn payments_all(reports: &[Vec<Label>], split: &TaskSplit) -> Result<PaymentVector> {
    check_reports(reports, split)?;
    let n = reports.len();
    let mut totals = vec![0i64; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let term = pair_term(reports, split, i, j)?;
            totals[i] += term;
            totals[j] += term;
        }
    }
    Ok(PaymentVector::new(
        totals.into_iter().map(|t| t as f64).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{labels, Channel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l(bits: &[u8]) -> Vec<Label> {
        labels(bits).unwrap()
    }

    #[test]
    fn half_split_examples() {
        let s = TaskSplit::half(4).unwrap();
        assert_eq!(s.subset_one(), &[0, 1]);
        assert_eq!(s.subset_two(), &[2, 3]);
        let s = TaskSplit::half(8).unwrap();
        assert_eq!(s.subset_one(), &[0, 1, 2, 3]);
        assert_eq!(s.subset_two(), &[4, 5, 6, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            split_tasks(3, SplitPolicy::Half, &mut rng),
            Err(PegError::BatchTooSmall { k: 3 })
        );
    }

    #[test]
    fn odd_half_split_puts_extra_task_first() {
        let s = TaskSplit::half(7).unwrap();
        assert_eq!(s.subset_one().len(), 4);
        assert_eq!(s.subset_two().len(), 3);
        assert_eq!(s.pair_scale(), 12 * 6);
    }

    #[test]
    fn random_split_is_balanced_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 4..16 {
            let s = split_tasks(k, SplitPolicy::Random, &mut rng).unwrap();
            assert_eq!(s.subset_one().len(), k.div_ceil(2));
            let mut all: Vec<usize> = s.subset_one().iter().chain(s.subset_two()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..k).collect::<Vec<_>>());
        }
    }

    #[test]
    fn random_split_is_seed_deterministic() {
        let a = split_tasks(10, SplitPolicy::Random, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = split_tasks(10, SplitPolicy::Random, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn task_split_rejects_bad_partitions() {
        assert!(TaskSplit::new(vec![0, 1], vec![1, 2]).is_err());
        assert!(TaskSplit::new(vec![0], vec![1, 2]).is_err());
        assert!(TaskSplit::new(vec![0, 5], vec![1, 2]).is_err());
        assert!(TaskSplit::new(vec![3, 0], vec![1, 2]).is_ok());
    }

    #[test]
    fn co_report_examples() {
        let all = [0, 1, 2, 3];
        let m = co_report_matrix(&l(&[0, 0, 1, 1]), &l(&[0, 0, 1, 1]), &all).unwrap();
        assert_eq!(m.counts(), &[[2, 0], [0, 2]]);
        assert_eq!(m.det(), 4);
        let m = co_report_matrix(&l(&[0, 1, 0, 1]), &l(&[1, 0, 1, 0]), &all).unwrap();
        assert_eq!(m.counts(), &[[0, 2], [2, 0]]);
        assert_eq!(m.det(), -4);
        let m = co_report_matrix(&l(&[0, 0, 1, 1]), &l(&[0, 1, 1, 1]), &all).unwrap();
        assert_eq!(m.counts(), &[[1, 1], [0, 2]]);
        assert_eq!(m.det(), 2);
    }

    #[test]
    fn co_report_index_out_of_range() {
        let r = l(&[0, 1]);
        assert_eq!(
            co_report_matrix(&r, &r, &[0, 2]),
            Err(PegError::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn dmi_examples() {
        assert_eq!(dmi(&JointDist::new([[0.5, 0.0], [0.0, 0.5]]).unwrap()), 0.25);
        assert_eq!(dmi(&JointDist::new([[0.25, 0.25], [0.25, 0.25]]).unwrap()), 0.0);
        let u = JointDist::new([[0.4, 0.1], [0.1, 0.4]]).unwrap();
        assert!((dmi(&u) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn pair_count_constant_examples() {
        assert_eq!(pair_count_constant(2), Ok(2));
        assert_eq!(pair_count_constant(4), Ok(12));
        assert_eq!(pair_count_constant(1), Err(PegError::SubsetTooSmall { size: 1 }));
    }

    #[test]
    fn payment_two_identical_agents() {
        let r = l(&[0, 0, 1, 1, 0, 1, 0, 1]);
        let reports = vec![r.clone(), r];
        let split = TaskSplit::half(8).unwrap();
        assert_eq!(payment(&reports, &split, 0).unwrap(), 16.0);
        assert_eq!(payments_all(&reports, &split).unwrap().as_slice(), &[16.0, 16.0]);
    }

    #[test]
    fn payment_constant_peer_scores_zero() {
        let reports = vec![l(&[0, 0, 1, 1, 0, 1, 0, 1]), l(&[0; 8])];
        let split = TaskSplit::half(8).unwrap();
        assert_eq!(payment(&reports, &split, 0).unwrap(), 0.0);
        let ones = vec![l(&[1; 8]); 3];
        assert!(payments_all(&ones, &split)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&p| p == 0.0));
    }

    #[test]
    fn payment_with_duplicate_peers_doubles() {
        let a = l(&[0, 1, 1, 0, 1, 1, 0, 0]);
        let b = l(&[0, 0, 1, 1, 0, 1, 0, 1]);
        let split = TaskSplit::half(8).unwrap();
        let pair = payment(&[a.clone(), b.clone()], &split, 0).unwrap();
        let triple = payment(&[a, b.clone(), b], &split, 0).unwrap();
        assert_eq!(triple, 2.0 * pair);
    }

    #[test]
    fn payments_all_matches_single_agent_calls() {
        let reports = vec![
            l(&[0, 1, 1, 0, 1, 1, 0, 0]),
            l(&[0, 0, 1, 1, 0, 1, 0, 1]),
            l(&[1, 0, 1, 1, 0, 1, 1, 1]),
        ];
        let split = TaskSplit::half(8).unwrap();
        let all = payments_all(&reports, &split).unwrap();
        for i in 0..3 {
            assert_eq!(all.get(i), payment(&reports, &split, i).unwrap());
        }
    }

    #[test]
    fn payment_errors() {
        let split = TaskSplit::half(4).unwrap();
        assert_eq!(
            payment(&[l(&[0, 1, 0, 1])], &split, 0),
            Err(PegError::TooFewAgents { n: 1 })
        );
        assert!(matches!(
            payment(&[l(&[0, 1, 0, 1]), l(&[0, 1, 0])], &split, 0),
            Err(PegError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn payments_can_be_negative() {
        // Agreement on one subset, disagreement on the other.
        let reports = vec![l(&[0, 1, 0, 1]), l(&[0, 1, 1, 0])];
        let split = TaskSplit::half(4).unwrap();
        assert_eq!(payment(&reports, &split, 0).unwrap(), -1.0);
    }

    #[test]
    fn normalized_payment_divides_by_pair_scale() {
        let split = TaskSplit::half(8).unwrap();
        let p = PaymentVector::new(vec![288.0, 144.0, 0.0]);
        assert_eq!(p.normalized(&split).as_slice(), &[1.0, 0.5, 0.0]);
    }

    fn reports_strategy(n: usize, k: usize) -> impl proptest::strategy::Strategy<Value = Vec<Vec<Label>>> {
        proptest::collection::vec(
            proptest::collection::vec(any::<bool>().prop_map(Label::from), k),
            n,
        )
    }

    fn joint() -> impl proptest::strategy::Strategy<Value = JointDist> {
        proptest::collection::vec(0.001f64..1.0, 4).prop_map(|w| {
            let s: f64 = w.iter().sum();
            JointDist::new([[w[0] / s, w[1] / s], [w[2] / s, 1.0 - (w[0] + w[1] + w[2]) / s]]).unwrap()
        })
    }

    proptest! {
        #[test]
        fn count_determinant_bounded(r in reports_strategy(2, 9)) {
            let s = 9usize;
            let idx: Vec<usize> = (0..s).collect();
            let m = co_report_matrix(&r[0], &r[1], &idx).unwrap();
            prop_assert_eq!(m.total(), s as u64);
            prop_assert!(m.det().unsigned_abs() <= ((s / 2) * s.div_ceil(2)) as u64);
        }

        #[test]
        fn dmi_symmetric_and_permutation_invariant(u in joint()) {
            let d = dmi(&u);
            prop_assert!((dmi(&u.transpose()) - d).abs() < 1e-15);
            prop_assert!((dmi(&u.swap_rows()) - d).abs() < 1e-15);
            prop_assert!((dmi(&u.swap_cols()) - d).abs() < 1e-15);
            prop_assert!(d <= 0.25 + 1e-15);
        }

        #[test]
        fn garbling_never_increases_dmi(u in joint(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let g = Channel::from_flip_probs(a, b).unwrap();
            prop_assert!(dmi(&u.garble_first(&g)) <= dmi(&u) + 1e-12);
        }

        #[test]
        fn constant_reporter_gets_zero_determinant(r in reports_strategy(1, 8), c in any::<bool>()) {
            let constant = vec![Label::from(c); 8];
            let split = TaskSplit::half(8).unwrap();
            for subset in split.subsets() {
                prop_assert_eq!(co_report_matrix(&r[0], &constant, subset).unwrap().det(), 0);
            }
        }

        #[test]
        fn payments_permutation_equivariant(r in reports_strategy(4, 8), shift in 1usize..4) {
            let split = TaskSplit::half(8).unwrap();
            let base = payments_all(&r, &split).unwrap();
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let permuted: Vec<Vec<Label>> = perm.iter().map(|&p| r[p].clone()).collect();
            let moved = payments_all(&permuted, &split).unwrap();
            for (new_idx, &old_idx) in perm.iter().enumerate() {
                prop_assert_eq!(moved.get(new_idx), base.get(old_idx));
            }
        }
    }
}
