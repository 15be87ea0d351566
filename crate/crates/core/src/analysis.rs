//! Regret, convergence and accuracy diagnostics over recorded histories.

use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::experiment::{run_experiment, Experiment, ReplicationTrace};
use crate::learning::{PolicyGradient, GRAD_BOUND_FLOOR};
use crate::mechanism::MIN_BATCH;
use crate::oracle::exact_vote_accuracy;
use crate::types::{Channel, Label, PolicyPoint, ProbVector};
use crate::world::{exact_report_accuracy, GeneratorModel};

/// Moving-average window for convergence diagnostics.
pub const CONVERGENCE_WINDOW: usize = 100;

/// Distance below which a window-averaged policy counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 0.05;

/// `√2 / (√2 − 1)`, the doubling-trick constant.
pub const DOUBLING_CONSTANT: f64 = std::f64::consts::SQRT_2 / (std::f64::consts::SQRT_2 - 1.0);

/// Constants of the surrogate regret bound
/// `C · M_t · sqrt(2 · D · t)` (and the same with `t` replaced by `K · t`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// `D`, standing in for the unknown KL divergence to the comparator.
    pub kl_radius: f64,
    /// Fixed `M`; `None` uses the running max of gradient L2 norms,
    /// floored at [`GRAD_BOUND_FLOOR`].
    pub grad_bound: Option<f64>,
    /// Tasks per batch, for the `√(K t)` curve.
    pub tasks: usize,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            kl_radius: std::f64::consts::LN_2,
            grad_bound: None,
            tasks: 1,
        }
    }
}

pub fn surrogate_bound(t: f64, grad_bound: f64, kl_radius: f64) -> f64 {
    DOUBLING_CONSTANT * grad_bound * (2.0 * kl_radius * t).sqrt()
}

/// Regret series, all of length `T`. Entry `t − 1` covers rounds `1..=t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    /// `⟨g_t, π_t⟩`.
    pub realized: Vec<f64>,
    pub cumulative_realized: Vec<f64>,
    /// Cumulative utility of the best fixed vertex for rounds `1..=t`.
    pub baseline: Vec<f64>,
    /// `baseline − cumulative_realized`.
    pub regret: Vec<f64>,
    pub bound: Vec<f64>,
    pub bound_kt: Vec<f64>,
}

impl RegretRecord {
    pub fn len(&self) -> usize {
        self.regret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regret.is_empty()
    }

    pub fn average_regret(&self, t: usize) -> f64 {
        self.regret[t - 1] / t as f64
    }

    /// First `t` (1-based) where regret exceeds the surrogate bound.
    pub fn first_bound_violation(&self) -> Option<usize> {
        self.regret
            .iter()
            .zip(&self.bound)
            .position(|(r, b)| r > b)
            .map(|i| i + 1)
    }
}

/// Core computation over a product of simplices: each round supplies one
/// (gradient, policy) pair per block and the comparator picks a vertex per
/// block.
fn regret_blocks(rounds: &[Vec<(&[f64], &[f64])>], bound: &BoundParams) -> Result<RegretRecord> {
    let first = rounds.first().ok_or(PegError::EmptySequence)?;
    let dims: Vec<usize> = first.iter().map(|(g, _)| g.len()).collect();
    let mut sums: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    let t_len = rounds.len();
    let mut rec = RegretRecord {
        realized: Vec::with_capacity(t_len),
        cumulative_realized: Vec::with_capacity(t_len),
        baseline: Vec::with_capacity(t_len),
        regret: Vec::with_capacity(t_len),
        bound: Vec::with_capacity(t_len),
        bound_kt: Vec::with_capacity(t_len),
    };
    let mut cum = 0.0;
    let mut m_run = 0.0f64;
    for (t, blocks) in rounds.iter().enumerate() {
        if blocks.len() != dims.len() {
            return Err(PegError::LengthMismatch {
                expected: dims.len(),
                found: blocks.len(),
            });
        }
        let mut u = 0.0;
        let mut sq = 0.0;
        for (b, (g, p)) in blocks.iter().enumerate() {
            if g.len() != dims[b] || p.len() != dims[b] {
                return Err(PegError::LengthMismatch {
                    expected: dims[b],
                    found: if g.len() != dims[b] { g.len() } else { p.len() },
                });
            }
            for (k, (&gk, &pk)) in g.iter().zip(p.iter()).enumerate() {
                u += gk * pk;
                sq += gk * gk;
                sums[b][k] += gk;
            }
        }
        cum += u;
        m_run = m_run.max(sq.sqrt());
        // Lowest index wins ties, as in `best_fixed_policy`.
        let base: f64 = sums
            .iter()
            .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        let m = bound.grad_bound.unwrap_or(m_run.max(GRAD_BOUND_FLOOR));
        let tt = (t + 1) as f64;
        rec.realized.push(u);
        rec.cumulative_realized.push(cum);
        rec.baseline.push(base);
        rec.regret.push(base - cum);
        rec.bound.push(surrogate_bound(tt, m, bound.kl_radius));
        rec.bound_kt.push(surrogate_bound(tt * bound.tasks as f64, m, bound.kl_radius));
    }
    Ok(rec)
}

/// Regret of a conditional-policy trajectory against the best fixed
/// conditional policy in hindsight (a vertex per condition).
pub fn regret_curve(
    gradients: &[PolicyGradient],
    policies: &[PolicyPoint],
    bound: &BoundParams,
) -> Result<RegretRecord> {
    if gradients.len() != policies.len() {
        return Err(PegError::LengthMismatch {
            expected: gradients.len(),
            found: policies.len(),
        });
    }
    let rounds: Vec<Vec<(&[f64], &[f64])>> = gradients
        .iter()
        .zip(policies)
        .map(|(g, p)| {
            (0..2)
                .map(|c| (&g.0[c][..], p.rows()[c].as_slice()))
                .collect()
        })
        .collect();
    regret_blocks(&rounds, bound)
}

/// Regret on a single simplex.
pub fn regret_curve_simplex(
    gradients: &[Vec<f64>],
    policies: &[ProbVector],
    bound: &BoundParams,
) -> Result<RegretRecord> {
    if gradients.len() != policies.len() {
        return Err(PegError::LengthMismatch {
            expected: gradients.len(),
            found: policies.len(),
        });
    }
    let rounds: Vec<Vec<(&[f64], &[f64])>> = gradients
        .iter()
        .zip(policies)
        .map(|(g, p)| vec![(&g[..], p.as_slice())])
        .collect();
    regret_blocks(&rounds, bound)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(PegError::EmptySequence);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Smallest `t` used in the dyadic slope fit.
pub const SLOPE_MIN_T: usize = 16;

/// Log-log slope of regret over `t = 16, 32, 64, …` (points with
/// nonpositive regret are skipped).
pub fn regret_slope(rec: &RegretRecord) -> Result<f64> {
    let mut pts = Vec::new();
    let mut t = SLOPE_MIN_T;
    while t <= rec.len() {
        pts.push((t as f64, rec.regret[t - 1]));
        t *= 2;
    }
    loglog_slope(&pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    /// L1 distance to the reference per condition.
    pub distances: Vec<[f64; 2]>,
    /// Trailing mean of `distances` over up to [`CONVERGENCE_WINDOW`] entries.
    pub window_average: Vec<[f64; 2]>,
}

impl ConvergenceRecord {
    /// Worse of the two conditions' window averages at each step.
    pub fn window_max(&self) -> Vec<f64> {
        self.window_average.iter().map(|w| w[0].max(w[1])).collect()
    }

    pub fn final_window_max(&self) -> Option<f64> {
        self.window_average.last().map(|w| w[0].max(w[1]))
    }

    /// Means of the worse-condition distance over consecutive, disjoint
    /// windows of [`CONVERGENCE_WINDOW`] entries, starting at `from`.
    pub fn block_means(&self, from: usize) -> Vec<f64> {
        self.distances[from.min(self.distances.len())..]
            .chunks_exact(CONVERGENCE_WINDOW)
            .map(|c| c.iter().map(|d| d[0].max(d[1])).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

pub fn convergence_curve(history: &[PolicyPoint], reference: &PolicyPoint) -> ConvergenceRecord {
    let distances: Vec<[f64; 2]> = history.iter().map(|p| p.l1_distances(reference)).collect();
    let mut window_average = Vec::with_capacity(distances.len());
    let mut acc = [0.0f64; 2];
    for (t, d) in distances.iter().enumerate() {
        acc[0] += d[0];
        acc[1] += d[1];
        if t >= CONVERGENCE_WINDOW {
            let old = distances[t - CONVERGENCE_WINDOW];
            acc[0] -= old[0];
            acc[1] -= old[1];
        }
        let w = (t + 1).min(CONVERGENCE_WINDOW) as f64;
        window_average.push([(acc[0] / w).max(0.0), (acc[1] / w).max(0.0)]);
    }
    ConvergenceRecord {
        distances,
        window_average,
    }
}

/// True when every element is at most its predecessor plus `tol`.
pub fn is_nonincreasing(xs: &[f64], tol: f64) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + tol)
}

pub fn vote_accuracy(votes: &[Label], truths: &[Label]) -> Result<f64> {
    if votes.len() != truths.len() {
        return Err(PegError::LengthMismatch {
            expected: truths.len(),
            found: votes.len(),
        });
    }
    if votes.is_empty() {
        return Err(PegError::EmptySequence);
    }
    let hits = votes.iter().zip(truths).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / votes.len() as f64)
}

/// Exact per-agent report accuracies and majority accuracy of a population
/// snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySnapshot {
    pub report_accuracy: Vec<f64>,
    pub vote_accuracy: f64,
}

pub fn accuracy_snapshot(
    exp: &Experiment,
    discriminators: &[PolicyPoint],
    generator: &PolicyPoint,
) -> Result<AccuracySnapshot> {
    let gen = GeneratorModel::new(generator.clone());
    let strategies: Vec<Channel> = discriminators.iter().map(PolicyPoint::to_channel).collect();
    Ok(AccuracySnapshot {
        report_accuracy: strategies
            .iter()
            .enumerate()
            .map(|(i, s)| exact_report_accuracy(&exp.world, &gen, s, i))
            .collect(),
        vote_accuracy: exact_vote_accuracy(&exp.world, &gen, &strategies, exp.params.tie_rule)?,
    })
}

pub fn initial_accuracy(exp: &Experiment) -> Result<AccuracySnapshot> {
    let d: Vec<PolicyPoint> = exp
        .population
        .discriminators
        .iter()
        .map(|a| a.policy().clone())
        .collect();
    accuracy_snapshot(exp, &d, exp.population.generator.policy())
}

pub fn final_accuracy(exp: &Experiment, trace: &ReplicationTrace) -> Result<AccuracySnapshot> {
    let pop = &trace.final_population;
    let d: Vec<PolicyPoint> = pop.discriminators.iter().map(|a| a.policy().clone()).collect();
    accuracy_snapshot(exp, &d, pop.generator.policy())
}

/// Worst (over discriminators and conditions) final L1 distance to truthful.
pub fn final_distance(trace: &ReplicationTrace) -> f64 {
    let truthful = PolicyPoint::from_channel(&Channel::truthful());
    trace
        .final_population
        .discriminators
        .iter()
        .map(|a| {
            let d = a.policy().l1_distances(&truthful);
            d[0].max(d[1])
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub replication: u64,
    /// Exact majority accuracy of the final policies.
    pub vote_accuracy: f64,
    /// Raw payment averaged over agents, batches and iterations.
    pub mean_payment: f64,
    pub final_distance: f64,
}

/// Runs the full experiment once per batch size. Seeds are shared across
/// batch sizes, so replication `r` at every `K` starts from the same root.
pub fn batch_size_sweep(exp: &Experiment, k_values: &[usize]) -> Result<Vec<SweepRow>> {
    if let Some(&k) = k_values.iter().find(|&&k| k < MIN_BATCH) {
        return Err(PegError::BatchTooSmall { k });
    }
    let mut rows = Vec::new();
    for &k in k_values {
        let mut e = exp.clone();
        e.params.batch_size = k;
        for trace in run_experiment(&e)? {
            let pays: Vec<f64> = trace.records.iter().flat_map(|r| r.mean_payments.iter().copied()).collect();
            rows.push(SweepRow {
                k,
                replication: trace.replication,
                vote_accuracy: final_accuracy(&e, &trace)?.vote_accuracy,
                mean_payment: pays.iter().sum::<f64>() / pays.len() as f64,
                final_distance: final_distance(&trace),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::best_fixed_policy;
    use crate::rng::{Purpose, StreamRoot};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn frozen_uniform_constant_gradient() {
        let g = vec![vec![1.0, 0.0]; 10];
        let p = vec![ProbVector::uniform(2); 10];
        let r = regret_curve_simplex(&g, &p, &BoundParams::default()).unwrap();
        assert_abs_diff_eq!(r.regret[9], 5.0, epsilon = 1e-12);
        assert_eq!(r.len(), 10);
    }

    #[test]
    fn hindsight_vertex_has_zero_regret() {
        let g = vec![vec![1.0, -0.5], vec![0.3, 0.2]];
        let p = vec![ProbVector::vertex(2, 0); 2];
        let r = regret_curve_simplex(&g, &p, &BoundParams::default()).unwrap();
        assert!(r.regret.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn baseline_matches_best_fixed_policy() {
        let mut rng = StreamRoot::new(1, 0).stream(0, 0, Purpose::Auxiliary(7));
        let g: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let p = vec![ProbVector::uniform(2); 40];
        let r = regret_curve_simplex(&g, &p, &BoundParams::default()).unwrap();
        for t in [1, 7, 40] {
            assert_eq!(r.baseline[t - 1], best_fixed_policy(&g[..t]).unwrap().1);
        }
    }

    #[test]
    fn bound_scales_with_sqrt_t() {
        let b = BoundParams {
            grad_bound: Some(3.0),
            tasks: 8,
            ..BoundParams::default()
        };
        let g = vec![vec![1.0, 0.0]; 400];
        let p = vec![ProbVector::uniform(2); 400];
        let r = regret_curve_simplex(&g, &p, &b).unwrap();
        assert!((r.bound[399] / r.bound[99] - 2.0).abs() < 1e-9);
        assert!((r.bound_kt[99] / r.bound[99] - 8f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn linear_regret_slope_is_one() {
        let g = vec![vec![1.0, 0.0]; 4096];
        let p = vec![ProbVector::uniform(2); 4096];
        let r = regret_curve_simplex(&g, &p, &BoundParams::default()).unwrap();
        assert_abs_diff_eq!(regret_slope(&r).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn regret_length_mismatch() {
        let g = vec![PolicyGradient::zero(); 3];
        let p = vec![PolicyPoint::uniform(); 2];
        assert!(matches!(
            regret_curve(&g, &p, &BoundParams::default()),
            Err(PegError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn conditional_regret_sums_conditions() {
        let g = vec![PolicyGradient([[1.0, 0.0], [0.0, 2.0]]); 4];
        let p = vec![PolicyPoint::uniform(); 4];
        let r = regret_curve(&g, &p, &BoundParams::default()).unwrap();
        assert_abs_diff_eq!(r.regret[3], 4.0 * 0.5 + 4.0 * 1.0, epsilon = 1e-12);
    }

    #[test]
    fn convergence_examples() {
        let truthful = PolicyPoint::from_channel(&Channel::truthful());
        let c = convergence_curve(&vec![truthful.clone(); 5], &truthful);
        assert!(c.distances.iter().all(|d| d == &[0.0, 0.0]));
        let c = convergence_curve(&[PolicyPoint::uniform(), truthful.clone()], &truthful);
        assert_eq!(c.distances, vec![[1.0, 1.0], [0.0, 0.0]]);
        assert_eq!(c.window_average[1], [0.5, 0.5]);
    }

    #[test]
    fn window_is_trailing_mean() {
        let truthful = PolicyPoint::from_channel(&Channel::truthful());
        let hist: Vec<PolicyPoint> = (0..250)
            .map(|t| {
                let f = 1.0 - 0.5 / (1.0 + t as f64);
                PolicyPoint::from_channel(&Channel::symmetric(f).unwrap())
            })
            .collect();
        let c = convergence_curve(&hist, &truthful);
        let direct: f64 = c.distances[150..250].iter().map(|d| d[0]).sum::<f64>() / 100.0;
        assert_abs_diff_eq!(c.window_average[249][0], direct, epsilon = 1e-12);
        assert!(is_nonincreasing(&c.window_max(), 0.0));
        assert_eq!(c.block_means(50).len(), 2);
    }

    #[test]
    fn vote_accuracy_examples() {
        let l = |b: &[u8]| crate::types::labels(b).unwrap();
        assert_eq!(vote_accuracy(&l(&[1, 0, 1]), &l(&[1, 0, 1])).unwrap(), 1.0);
        assert_eq!(vote_accuracy(&l(&[0, 1, 0]), &l(&[1, 0, 1])).unwrap(), 0.0);
        assert_abs_diff_eq!(vote_accuracy(&l(&[1, 0, 1]), &l(&[1, 1, 1])).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(vote_accuracy(&l(&[1]), &l(&[1, 0])), Err(PegError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn vote_accuracy_permutation_invariant(bits in proptest::collection::vec((0u8..2, 0u8..2), 1..40), seed in 0u64..1000) {
            let votes: Vec<Label> = bits.iter().map(|b| Label::from_index(b.0 as usize)).collect();
            let truths: Vec<Label> = bits.iter().map(|b| Label::from_index(b.1 as usize)).collect();
            let mut idx: Vec<usize> = (0..bits.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut StreamRoot::new(seed, 0).stream(0, 0, Purpose::Auxiliary(0)));
            let pv: Vec<Label> = idx.iter().map(|&i| votes[i]).collect();
            let pt: Vec<Label> = idx.iter().map(|&i| truths[i]).collect();
            prop_assert_eq!(vote_accuracy(&votes, &truths).unwrap(), vote_accuracy(&pv, &pt).unwrap());
        }

        #[test]
        fn distances_in_range(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let truthful = PolicyPoint::from_channel(&Channel::truthful());
            let p = PolicyPoint::from_channel(&Channel::from_flip_probs(a, b).unwrap());
            let c = convergence_curve(&[p], &truthful);
            for d in c.distances[0] {
                prop_assert!((0.0..=2.0).contains(&d));
            }
        }
    }
}
