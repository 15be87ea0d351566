//! Brute-force ground truth on small instances.
//!
//! Everything here is computed by exhaustive enumeration or closed-form
//! algebra, never by sampling, so it can referee the Monte Carlo paths.

use rand::Rng;

use crate::error::{PegError, Result};
use crate::exec::Exec;
use crate::learning::{PolicyGradient, TieRule};
use crate::mechanism::{payments_all, PaymentVector, TaskSplit};
use crate::types::{Channel, JointDist, Label, PolicyPoint, ProbVector, Strategy};
use crate::world::{joint_report_distribution, GeneratorModel, WorldModel};

/// Largest task subset enumerated exactly (`4^6` sequences).
pub const ENUMERATION_LIMIT: usize = 6;

/// Largest number of joint outcomes [`expected_payment_full_enumeration`]
/// will visit.
pub const FULL_ENUMERATION_LIMIT: usize = 1 << 20;

/// `|det U|` below which a peer counts as uninformative.
pub const INFORMATIVE_TOLERANCE: f64 = 1e-9;

/// Central finite-difference step on logits.
pub const FD_STEP: f64 = 1e-6;

fn check_subset(size: usize) -> Result<()> {
    if size < 2 {
        return Err(PegError::SubsetTooSmall { size });
    }
    if size > ENUMERATION_LIMIT {
        return Err(PegError::SubsetTooLarge {
            size,
            max: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// `E[det M]` for the co-report matrix of `subset_size` i.i.d. tasks whose
/// report pair is drawn from `u`, by visiting all `4^subset_size` sequences.
pub fn expected_det_exact(u: &JointDist, subset_size: usize) -> Result<f64> {
    check_subset(subset_size)?;
    let cells = [
        u.probs()[0][0],
        u.probs()[0][1],
        u.probs()[1][0],
        u.probs()[1][1],
    ];
    let total = 1usize << (2 * subset_size);
    let mut acc = 0.0;
    for code in 0..total {
        let mut n = [0i64; 4];
        let mut p = 1.0;
        let mut c = code;
        for _ in 0..subset_size {
            let cell = c & 3;
            n[cell] += 1;
            p *= cells[cell];
            c >>= 2;
        }
        acc += p * (n[0] * n[3] - n[1] * n[2]) as f64;
    }
    Ok(acc)
}

/// `E[det M₁ · det M₂]` for one pair by enumerating all `4^K` joint
/// outcomes of the pair over the whole batch.
pub fn expected_det_product_full(u: &JointDist, split: &TaskSplit) -> Result<f64> {
    let k = split.batch_size();
    if k > 2 * ENUMERATION_LIMIT {
        return Err(PegError::SubsetTooLarge {
            size: k,
            max: 2 * ENUMERATION_LIMIT,
        });
    }
    let cells = [
        u.probs()[0][0],
        u.probs()[0][1],
        u.probs()[1][0],
        u.probs()[1][1],
    ];
    let mut which = vec![0u8; k];
    for &t in split.subset_two() {
        which[t] = 1;
    }
    let mut acc = 0.0;
    for code in 0..(1usize << (2 * k)) {
        let mut n = [[0i64; 4]; 2];
        let mut p = 1.0;
        let mut c = code;
        for &w in &which {
            let cell = c & 3;
            n[w as usize][cell] += 1;
            p *= cells[cell];
            c >>= 2;
        }
        let d1 = n[0][0] * n[0][3] - n[0][1] * n[0][2];
        let d2 = n[1][0] * n[1][3] - n[1][1] * n[1][2];
        acc += p * (d1 * d2) as f64;
    }
    Ok(acc)
}

fn check_profile(world: &WorldModel, strategies: &[Strategy]) -> Result<()> {
    let n = world.n_agents();
    if n < 2 {
        return Err(PegError::TooFewAgents { n });
    }
    if strategies.len() != n {
        return Err(PegError::ArityMismatch {
            expected: n,
            found: strategies.len(),
        });
    }
    Ok(())
}

/// Agent `i`'s expected payment with each co-report determinant's
/// expectation obtained by enumeration.
pub fn expected_payment_exact_for(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
    i: usize,
) -> Result<f64> {
    check_profile(world, strategies)?;
    let [m1, m2] = split.subsets().map(|s| s.len());
    let mut total = 0.0;
    for j in (0..world.n_agents()).filter(|&j| j != i) {
        let u = joint_report_distribution(world, &strategies[i], &strategies[j], generator, i, j)?;
        total += expected_det_exact(&u, m1)? * expected_det_exact(&u, m2)?;
    }
    Ok(total)
}

pub fn expected_payment_exact(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
) -> Result<PaymentVector> {
    (0..world.n_agents())
        .map(|i| expected_payment_exact_for(world, generator, strategies, split, i))
        .collect::<Result<Vec<_>>>()
        .map(PaymentVector::new)
}

/// `a₁ a₂ Σ_{j≠i} det(Uᵢⱼ)²`, with no size limit.
pub fn expected_payment_closed_form(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
) -> Result<PaymentVector> {
    check_profile(world, strategies)?;
    let scale = split.pair_scale() as f64;
    let n = world.n_agents();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let d = joint_report_distribution(world, &strategies[i], &strategies[j], generator, i, j)?.det();
            s += d * d;
        }
        out.push(scale * s);
    }
    Ok(PaymentVector::new(out))
}

/// Rows `A(v, ·)` of the composed channel truth → report for every agent.
fn report_channels(world: &WorldModel, strategies: &[Strategy]) -> Vec<Channel> {
    (0..world.n_agents())
        .map(|i| world.confusion(i).then(&strategies[i]))
        .collect()
}

/// Distribution of the full report profile on one task; profile bit `i`
/// is agent `i`'s report.
fn profile_distribution(world: &WorldModel, generator: &GeneratorModel, strategies: &[Strategy]) -> Vec<f64> {
    let truth = world.truth_distribution(generator);
    let a = report_channels(world, strategies);
    let n = world.n_agents();
    (0..1usize << n)
        .map(|rho| {
            (0..2)
                .map(|v| {
                    truth[v]
                        * (0..n)
                            .map(|i| a[i].matrix()[v][(rho >> i) & 1])
                            .product::<f64>()
                })
                .sum()
        })
        .collect()
}

/// Expected payments by enumerating every joint report outcome of the
/// whole batch and running the mechanism on each.
pub fn expected_payment_full_enumeration(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
) -> Result<PaymentVector> {
    check_profile(world, strategies)?;
    let n = world.n_agents();
    let k = split.batch_size();
    let outcomes = (n * k < usize::BITS as usize)
        .then(|| 1usize << (n * k))
        .filter(|&o| o <= FULL_ENUMERATION_LIMIT)
        .ok_or(PegError::SubsetTooLarge {
            size: k,
            max: FULL_ENUMERATION_LIMIT,
        })?;
    let profile = profile_distribution(world, generator, strategies);
    let mask = (1usize << n) - 1;
    let mut reports = vec![vec![Label::Zero; k]; n];
    let mut acc = vec![0.0; n];
    for code in 0..outcomes {
        let mut p = 1.0;
        for t in 0..k {
            let rho = (code >> (n * t)) & mask;
            p *= profile[rho];
            for (i, r) in reports.iter_mut().enumerate() {
                r[t] = Label::from_index((rho >> i) & 1);
            }
        }
        if p == 0.0 {
            continue;
        }
        let pay = payments_all(&reports, split)?;
        for (a, x) in acc.iter_mut().zip(pay.as_slice()) {
            *a += p * x;
        }
    }
    Ok(PaymentVector::new(acc))
}

/// Partial derivatives of agent `i`'s closed-form expected payment with
/// respect to the entries `Sᵢ(c, r)` of its strategy.
pub fn payment_entry_gradient(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
    i: usize,
) -> Result<[[f64; 2]; 2]> {
    check_profile(world, strategies)?;
    let n = world.n_agents();
    if i >= n {
        return Err(PegError::IndexOutOfRange { index: i, len: n });
    }
    let truth = world.truth_distribution(generator);
    let a = report_channels(world, strategies);
    let q = world.confusion(i).matrix();
    let scale = split.pair_scale() as f64;
    let mut grad = [[0.0; 2]; 2];
    for j in (0..n).filter(|&j| j != i) {
        let u = joint_report_distribution(world, &strategies[i], &strategies[j], generator, i, j)?;
        let up = u.probs();
        let d = u.det();
        // ∂det/∂U(r, r')
        let cof = [[up[1][1], -up[1][0]], [-up[0][1], up[0][0]]];
        let aj = a[j].matrix();
        for (c, grow) in grad.iter_mut().enumerate() {
            for (r, g) in grow.iter_mut().enumerate() {
                let mut dd = 0.0;
                for rp in 0..2 {
                    let du: f64 = (0..2).map(|v| truth[v] * q[v][c] * aj[v][rp]).sum();
                    dd += cof[r][rp] * du;
                }
                *g += scale * 2.0 * d * dd;
            }
        }
    }
    Ok(grad)
}

/// Gradient of agent `i`'s expected payment with respect to its row
/// logits, the coordinates the score-function estimator lives in.
pub fn exact_gradient(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
    i: usize,
) -> Result<PolicyGradient> {
    let partial = payment_entry_gradient(world, generator, strategies, split, i)?;
    let s = strategies[i].matrix();
    let mut g = [[0.0; 2]; 2];
    for c in 0..2 {
        let mean = s[c][0] * partial[c][0] + s[c][1] * partial[c][1];
        for r in 0..2 {
            g[c][r] = s[c][r] * (partial[c][r] - mean);
        }
    }
    Ok(PolicyGradient(g))
}

fn softmax_row(theta: [f64; 2]) -> ProbVector {
    let m = theta[0].max(theta[1]);
    let e = [(theta[0] - m).exp(), (theta[1] - m).exp()];
    let s = e[0] + e[1];
    ProbVector::new(vec![e[0] / s, e[1] / s]).expect("softmax of finite logits")
}

/// Central finite differences of `f` with respect to the row logits of
/// `policy`. Every coordinate must be positive.
pub fn finite_difference_gradient<F>(policy: &PolicyPoint, h: f64, mut f: F) -> Result<PolicyGradient>
where
    F: FnMut(&PolicyPoint) -> Result<f64>,
{
    let mut theta = [[0.0; 2]; 2];
    for (c, row) in policy.rows().iter().enumerate() {
        for r in 0..2 {
            let p = row.get(r);
            if p <= 0.0 {
                return Err(PegError::ZeroSupport { index: 2 * c + r });
            }
            theta[c][r] = p.ln();
        }
    }
    let mut eval = |th: &[[f64; 2]; 2]| f(&PolicyPoint::new([softmax_row(th[0]), softmax_row(th[1])])?);
    let mut g = [[0.0; 2]; 2];
    for c in 0..2 {
        for r in 0..2 {
            let mut plus = theta;
            let mut minus = theta;
            plus[c][r] += h;
            minus[c][r] -= h;
            g[c][r] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
    }
    Ok(PolicyGradient(g))
}

/// Finite-difference gradient of [`expected_payment_exact_for`] for agent `i`.
pub fn payment_fd_gradient(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
    i: usize,
    h: f64,
) -> Result<PolicyGradient> {
    check_profile(world, strategies)?;
    let mut profile = strategies.to_vec();
    finite_difference_gradient(&PolicyPoint::from_channel(&strategies[i]), h, |p| {
        profile[i] = p.to_channel();
        expected_payment_exact_for(world, generator, &profile, split, i)
    })
}

/// `P(vote = l | truth = y)` for every `(y, l)`.
pub fn vote_channel(world: &WorldModel, strategies: &[Strategy], tie_rule: TieRule) -> Result<[[f64; 2]; 2]> {
    check_profile(world, strategies)?;
    let a = report_channels(world, strategies);
    let n = world.n_agents();
    let mut out = [[0.0; 2]; 2];
    for (y, row) in out.iter_mut().enumerate() {
        for rho in 0..1usize << n {
            let p: f64 = (0..n).map(|i| a[i].matrix()[y][(rho >> i) & 1]).product();
            let ones = rho.count_ones() as usize;
            match (2 * ones).cmp(&n) {
                std::cmp::Ordering::Greater => row[1] += p,
                std::cmp::Ordering::Less => row[0] += p,
                std::cmp::Ordering::Equal => match tie_rule {
                    TieRule::Zero => row[0] += p,
                    TieRule::Random => {
                        row[0] += 0.5 * p;
                        row[1] += 0.5 * p;
                    }
                },
            }
        }
    }
    Ok(out)
}

/// Probability that the majority vote on a task equals its ground truth.
pub fn exact_vote_accuracy(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    tie_rule: TieRule,
) -> Result<f64> {
    let vc = vote_channel(world, strategies, tie_rule)?;
    let truth = world.truth_distribution(generator);
    Ok(truth[0] * vc[0][0] + truth[1] * vc[1][1])
}

/// `E[Σ_k 1(target_k = vote_k)]` over a batch of `k` tasks.
pub fn expected_generator_utility(
    world: &WorldModel,
    generator: &PolicyPoint,
    strategies: &[Strategy],
    k: usize,
    tie_rule: TieRule,
) -> Result<f64> {
    let vc = vote_channel(world, strategies, tie_rule)?;
    let prior = [1.0 - world.truth_prior(), world.truth_prior()];
    let mut per_task = 0.0;
    for v in 0..2 {
        for y in 0..2 {
            per_task += prior[v] * generator.rows()[v].get(y) * vc[y][v];
        }
    }
    Ok(k as f64 * per_task)
}

/// Finite-difference logit gradient of [`expected_generator_utility`].
pub fn generator_fd_gradient(
    world: &WorldModel,
    generator: &PolicyPoint,
    strategies: &[Strategy],
    k: usize,
    tie_rule: TieRule,
    h: f64,
) -> Result<PolicyGradient> {
    finite_difference_gradient(generator, h, |p| {
        expected_generator_utility(world, p, strategies, k, tie_rule)
    })
}

/// Outcome of a grid search over one agent's strategies.
#[derive(Clone, Debug, PartialEq)]
pub struct DominanceReport {
    pub agent: usize,
    pub world: WorldModel,
    pub peer_strategies: Vec<Strategy>,
    pub grid_step: f64,
    pub grid_points: usize,
    pub truthful_value: f64,
    /// Best value among grid strategies other than truthful and flip.
    pub max_deviation_value: f64,
    /// `(a, b)` of that deviation, rows `[(1−a, a), (b, 1−b)]`.
    pub argmax_deviation: (f64, f64),
    /// `truthful_value − max_deviation_value`.
    pub worst_gap: f64,
    pub permutation_value: f64,
    pub permutation_tie: bool,
    /// Smallest `|det U|` between agent `i` reporting truthfully and a peer.
    pub min_peer_det: f64,
}

impl DominanceReport {
    pub fn grid_max(&self) -> f64 {
        self.truthful_value
            .max(self.permutation_value)
            .max(self.max_deviation_value)
    }
}

/// Grid coordinates `0, step, …, 1`.
pub fn strategy_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(PegError::InvalidExperiment(format!("grid_step must lie in (0, 0.5], got {step}")));
    }
    let m = (1.0 / step).round() as usize;
    Ok((0..=m).map(|x| (x as f64 * step).min(1.0)).collect())
}

/// Verifies that agent `i` cannot beat truthful reporting with any grid
/// strategy while its peers play `strategies` (entry `i` is ignored).
pub fn check_dominance(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    split: &TaskSplit,
    i: usize,
    grid_step: f64,
    exec: Exec,
) -> Result<DominanceReport> {
    check_dominance_with(world, generator, strategies, i, grid_step, exec, |s| {
        let mut profile = strategies.to_vec();
        profile[i] = *s;
        expected_payment_exact_for(world, generator, &profile, split, i)
    })
}

/// [`check_dominance`] with the payoff of agent `i` supplied by the caller.
pub fn check_dominance_with<F>(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategies: &[Strategy],
    i: usize,
    grid_step: f64,
    exec: Exec,
    payoff: F,
) -> Result<DominanceReport>
where
    F: Fn(&Strategy) -> Result<f64> + Sync + Send,
{
    check_profile(world, strategies)?;
    let n = world.n_agents();
    if i >= n {
        return Err(PegError::IndexOutOfRange { index: i, len: n });
    }
    let grid = strategy_grid(grid_step)?;
    let truthful = Channel::truthful();
    let mut min_peer_det = f64::INFINITY;
    for j in (0..n).filter(|&j| j != i) {
        let det = joint_report_distribution(world, &truthful, &strategies[j], generator, i, j)?.det();
        if det.abs() <= INFORMATIVE_TOLERANCE {
            return Err(PegError::UninformativePeer { peer: j, det });
        }
        min_peer_det = min_peer_det.min(det.abs());
    }
    let m = grid.len();
    let values = exec.try_map(m * m, |idx| {
        let (a, b) = (grid[idx / m], grid[idx % m]);
        payoff(&Channel::from_flip_probs(a, b)?)
    })?;
    let truthful_value = values[0];
    let permutation_value = values[m * m - 1];
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (idx, &v) in values.iter().enumerate().take(m * m - 1).skip(1) {
        if v > best.0 {
            best = (v, idx);
        }
    }
    let tol = 1e-9 * truthful_value.abs().max(1.0);
    Ok(DominanceReport {
        agent: i,
        world: world.clone(),
        peer_strategies: strategies
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| *s)
            .collect(),
        grid_step,
        grid_points: m * m,
        truthful_value,
        max_deviation_value: best.0,
        argmax_deviation: (grid[best.1 / m], grid[best.1 % m]),
        worst_gap: truthful_value - best.0,
        permutation_value,
        permutation_tie: (permutation_value - truthful_value).abs() <= tol,
        min_peer_det,
    })
}

/// Best vertex in hindsight for a sequence of linear utilities: the
/// coordinate with the largest sum (lowest index on ties) and that sum.
pub fn best_fixed_policy(utility_gradients: &[Vec<f64>]) -> Result<(usize, f64)> {
    let first = utility_gradients.first().ok_or(PegError::EmptySequence)?;
    let d = first.len();
    let mut sums = vec![0.0; d];
    for g in utility_gradients {
        if g.len() != d {
            return Err(PegError::LengthMismatch {
                expected: d,
                found: g.len(),
            });
        }
        for (s, x) in sums.iter_mut().zip(g) {
            *s += x;
        }
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (k, &s) in sums.iter().enumerate() {
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best)
}

/// Uniform draw from the 4-cell simplex.
pub fn random_joint<R: Rng + ?Sized>(rng: &mut R) -> JointDist {
    let e: Vec<f64> = (0..4).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut m = [[e[0] / s, e[1] / s], [e[2] / s, e[3] / s]];
    let total: f64 = m.iter().flatten().sum();
    m[1][1] += 1.0 - total;
    JointDist::new(m).expect("normalized draw")
}

/// Random row-stochastic 2×2 matrix.
pub fn random_channel<R: Rng + ?Sized>(rng: &mut R) -> Channel {
    Channel::from_flip_probs(rng.gen(), rng.gen()).expect("entries in [0, 1]")
}

/// World whose agents have asymmetric confusion matrices with both
/// accuracies drawn from `[min_accuracy, 1)`, and an interior prior.
pub fn random_informative_world<R: Rng + ?Sized>(rng: &mut R, n: usize, min_accuracy: f64) -> Result<WorldModel> {
    let prior = rng.gen_range(0.2..0.8);
    let confusions = (0..n)
        .map(|_| {
            let a = rng.gen_range(min_accuracy..1.0);
            let b = rng.gen_range(min_accuracy..1.0);
            Channel::from_flip_probs(1.0 - a, 1.0 - b)
        })
        .collect::<Result<Vec<_>>>()?;
    WorldModel::new(prior, confusions)
}
