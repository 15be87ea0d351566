//! Oracle checks behind `peg verify`.

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use peg_core::exec::Exec;
use peg_core::learning::{
    majority_votes, reinforce_gradient_discriminator, reinforce_gradient_generator, PolicyGradient, TieRule,
};
use peg_core::mechanism::{dmi, payment, split_tasks, SplitPolicy, TaskSplit};
use peg_core::oracle::{
    check_dominance_with, exact_gradient, expected_det_exact, expected_det_product_full, expected_payment_exact_for,
    generator_fd_gradient, payment_fd_gradient, random_channel, random_informative_world, random_joint,
    DominanceReport, FD_STEP,
};
use peg_core::rng::{Purpose, StreamRoot};
use peg_core::types::{Channel, PolicyPoint, Strategy};
use peg_core::world::{apply_strategies, sample_batch, GeneratorModel, WorldModel};
use peg_core::{PegError, Result};

pub const EXACT_TOLERANCE: f64 = 1e-12;
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;
pub const STRICT_GAP: f64 = 1e-6;
/// Peer determinant above which a strict gap is required.
pub const STRICT_DET: f64 = 0.05;
pub const STRICT_MONOTONICITY: f64 = 1e-9;
pub const MONOTONICITY_DET: f64 = 0.01;
pub const PERMUTATION_DISTANCE: f64 = 0.05;
pub const FD_RELATIVE_TOLERANCE: f64 = 1e-4;
pub const STANDARD_ERRORS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub cases: usize,
    pub failures: usize,
    /// Worst measured gap; its meaning is per-check.
    pub measured: f64,
    pub tolerance: f64,
    pub details: serde_json::Value,
}

impl CheckResult {
    fn new(name: &str, cases: usize, failures: usize, measured: f64, tolerance: f64, details: serde_json::Value) -> Self {
        CheckResult {
            name: name.into(),
            status: if failures == 0 { Status::Pass } else { Status::Fail },
            reason: None,
            cases,
            failures,
            measured,
            tolerance,
            details,
        }
    }

    fn skipped(name: &str, reason: String) -> Self {
        CheckResult {
            name: name.into(),
            status: Status::Skipped,
            reason: Some(reason),
            cases: 0,
            failures: 0,
            measured: 0.0,
            tolerance: 0.0,
            details: serde_json::Value::Null,
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Deliberate defects for checking that the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    PaymentSignFlip,
}

fn aux(root: &StreamRoot, tag: u64) -> impl Rng {
    root.stream(0, 0, Purpose::Auxiliary(tag))
}

/// `E[det M] = s(s − 1) det U` by enumeration, for `instances` random
/// joints and every subset size in `sizes`.
pub fn check_unbiasedness(root: &StreamRoot, instances: usize, sizes: std::ops::RangeInclusive<usize>) -> Result<CheckResult> {
    let mut rng = aux(root, 1);
    let (mut worst, mut failures, mut cases) = (0.0f64, 0, 0);
    for _ in 0..instances {
        let u = random_joint(&mut rng);
        for s in sizes.clone() {
            let err = (expected_det_exact(&u, s)? - (s * (s - 1)) as f64 * u.det()).abs();
            worst = worst.max(err);
            cases += 1;
            if err > EXACT_TOLERANCE {
                failures += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "unbiasedness",
        cases,
        failures,
        worst,
        EXACT_TOLERANCE,
        json!({ "subset_sizes": [sizes.start(), sizes.end()] }),
    ))
}

/// For a `K = 4` half split, `E[det M₁ · det M₂] = 4 det(U)²` over all
/// `4⁴` outcomes.
pub fn check_payment_expectation(root: &StreamRoot, instances: usize) -> Result<CheckResult> {
    let mut rng = aux(root, 2);
    let split = TaskSplit::half(4)?;
    let (mut worst, mut failures, mut min_value) = (0.0f64, 0, f64::INFINITY);
    for _ in 0..instances {
        let u = random_joint(&mut rng);
        let v = expected_det_product_full(&u, &split)?;
        let err = (v - 4.0 * u.det() * u.det()).abs();
        worst = worst.max(err);
        min_value = min_value.min(v);
        if err > EXACT_TOLERANCE || v < -EXACT_TOLERANCE {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "dmi_squared",
        instances,
        failures,
        worst,
        EXACT_TOLERANCE,
        json!({ "batch_size": 4, "min_expectation": min_value }),
    ))
}

/// Garbling the first variable never raises DMI, and lowers it strictly
/// when both the joint and the garbling are far from degenerate.
pub fn check_information_monotonicity(root: &StreamRoot, pairs: usize) -> Result<CheckResult> {
    let mut rng = aux(root, 3);
    let (mut worst, mut failures, mut strict_cases, mut min_strict_drop) = (f64::NEG_INFINITY, 0, 0, f64::INFINITY);
    for _ in 0..pairs {
        let u = random_joint(&mut rng);
        let g = random_channel(&mut rng);
        let drop = dmi(&u) - dmi(&u.garble_first(&g));
        worst = worst.max(-drop);
        let mut ok = drop >= -EXACT_TOLERANCE;
        let far = g.max_abs_diff(&Channel::truthful()) > PERMUTATION_DISTANCE
            && g.max_abs_diff(&Channel::flip()) > PERMUTATION_DISTANCE;
        if u.det().abs() > MONOTONICITY_DET && far {
            strict_cases += 1;
            min_strict_drop = min_strict_drop.min(drop);
            ok &= drop > STRICT_MONOTONICITY;
        }
        if !ok {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "information_monotonicity",
        pairs,
        failures,
        worst,
        EXACT_TOLERANCE,
        json!({ "strict_cases": strict_cases, "min_strict_drop": min_strict_drop }),
    ))
}

/// One world, peers and agent to test.
#[derive(Clone, Debug, PartialEq)]
pub struct DominanceCase {
    pub world: WorldModel,
    pub generator: GeneratorModel,
    pub strategies: Vec<Strategy>,
    pub batch_size: usize,
    pub agent: usize,
}

fn interior_strategy<R: Rng + ?Sized>(rng: &mut R) -> Result<Strategy> {
    Channel::from_flip_probs(rng.gen_range(0.02..0.4), rng.gen_range(0.02..0.4))
}

/// `count` random informative worlds alternating `n ∈ {2, 3}` and
/// `K ∈ {4, 8}`, with every agent tested.
pub fn random_dominance_cases(root: &StreamRoot, count: usize) -> Result<Vec<DominanceCase>> {
    let mut rng = aux(root, 4);
    let mut cases = Vec::new();
    for w in 0..count {
        let n = 2 + w % 2;
        let batch_size = if (w / 2) % 2 == 0 { 4 } else { 8 };
        let world = random_informative_world(&mut rng, n, 0.6)?;
        let generator = GeneratorModel::with_fidelity(rng.gen_range(0.6..1.0))?;
        let strategies = (0..n).map(|_| interior_strategy(&mut rng)).collect::<Result<Vec<_>>>()?;
        for agent in 0..n {
            cases.push(DominanceCase {
                world: world.clone(),
                generator: generator.clone(),
                strategies: strategies.clone(),
                batch_size,
                agent,
            });
        }
    }
    Ok(cases)
}

pub fn dominance_report(case: &DominanceCase, grid_step: f64, exec: Exec, mutation: Option<Mutation>) -> Result<DominanceReport> {
    let split = TaskSplit::half(case.batch_size)?;
    let sign = match mutation {
        Some(Mutation::PaymentSignFlip) => -1.0,
        None => 1.0,
    };
    check_dominance_with(&case.world, &case.generator, &case.strategies, case.agent, grid_step, exec, |s| {
        let mut profile = case.strategies.clone();
        profile[case.agent] = *s;
        Ok(sign * expected_payment_exact_for(&case.world, &case.generator, &profile, &split, case.agent)?)
    })
}

/// Truthful reporting beats every grid deviation, the flip ties, and the
/// margin is strict when every peer is clearly informative.
pub fn dominance_passes(r: &DominanceReport) -> bool {
    let strict = r.min_peer_det < STRICT_DET || r.worst_gap > STRICT_GAP;
    r.worst_gap >= -DOMINANCE_TOLERANCE && r.permutation_tie && strict
}

/// Runs every case. An uninformative peer in any case skips the whole check.
pub fn check_dominance_cases(
    name: &str,
    cases: &[DominanceCase],
    grid_step: f64,
    exec: Exec,
    mutation: Option<Mutation>,
) -> Result<CheckResult> {
    let mut reports = Vec::with_capacity(cases.len());
    for c in cases {
        match dominance_report(c, grid_step, exec, mutation) {
            Ok(r) => reports.push(r),
            Err(PegError::UninformativePeer { peer, det }) => {
                return Ok(CheckResult::skipped(
                    name,
                    format!("UninformativePeer (agent {}, peer {peer}, det {det:e})", c.agent),
                ))
            }
            Err(e) => return Err(e),
        }
    }
    let failures = reports.iter().filter(|r| !dominance_passes(r)).count();
    let worst = reports.iter().map(|r| r.worst_gap).fold(f64::INFINITY, f64::min);
    let details: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "agent": r.agent,
                "n_agents": r.world.n_agents(),
                "truthful_value": r.truthful_value,
                "max_deviation_value": r.max_deviation_value,
                "argmax_deviation": [r.argmax_deviation.0, r.argmax_deviation.1],
                "worst_gap": r.worst_gap,
                "permutation_tie": r.permutation_tie,
                "min_peer_det": r.min_peer_det,
                "pass": dominance_passes(r),
            })
        })
        .collect();
    Ok(CheckResult::new(name, reports.len(), failures, worst, -DOMINANCE_TOLERANCE, json!(details)))
}

/// Sample mean and standard error of each gradient coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradientStats {
    pub mean: PolicyGradient,
    pub standard_error: PolicyGradient,
}

pub fn gradient_stats(samples: &[PolicyGradient]) -> Result<GradientStats> {
    if samples.len() < 2 {
        return Err(PegError::EmptySequence);
    }
    let mean = PolicyGradient::mean(samples)?;
    let n = samples.len() as f64;
    let mut se = [[0.0; 2]; 2];
    for (c, row) in se.iter_mut().enumerate() {
        for (r, cell) in row.iter_mut().enumerate() {
            let ss: f64 = samples.iter().map(|g| (g.0[c][r] - mean.0[c][r]).powi(2)).sum();
            *cell = (ss / (n - 1.0) / n).sqrt();
        }
    }
    Ok(GradientStats {
        mean,
        standard_error: PolicyGradient(se),
    })
}

/// Largest `|mean − reference|` in units of standard errors. Coordinates
/// with zero spread must match to 1e-12.
pub fn max_z(stats: &GradientStats, reference: &PolicyGradient) -> f64 {
    let mut z = 0.0f64;
    for c in 0..2 {
        for r in 0..2 {
            let d = (stats.mean.0[c][r] - reference.0[c][r]).abs();
            let se = stats.standard_error.0[c][r];
            z = z.max(if se > 0.0 {
                d / se
            } else if d <= EXACT_TOLERANCE {
                0.0
            } else {
                f64::INFINITY
            });
        }
    }
    z
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn relative_error(a: &PolicyGradient, b: &PolicyGradient) -> f64 {
    let diff = PolicyGradient([
        [a.0[0][0] - b.0[0][0], a.0[0][1] - b.0[0][1]],
        [a.0[1][0] - b.0[1][0], a.0[1][1] - b.0[1][1]],
    ]);
    diff.max_abs() / b.max_abs().max(f64::MIN_POSITIVE)
}

/// World, profile and batch settings for gradient sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCase {
    pub world: WorldModel,
    pub generator: PolicyPoint,
    pub strategies: Vec<Strategy>,
    pub batch_size: usize,
    pub split: SplitPolicy,
    pub tie_rule: TieRule,
    pub agent: usize,
}

pub fn random_gradient_cases(root: &StreamRoot, count: usize) -> Result<Vec<GradientCase>> {
    let mut rng = aux(root, 5);
    (0..count)
        .map(|w| {
            let world = random_informative_world(&mut rng, 3, 0.6)?;
            let generator = GeneratorModel::with_fidelity(rng.gen_range(0.6..0.95))?.policy;
            let strategies = (0..3).map(|_| interior_strategy(&mut rng)).collect::<Result<Vec<_>>>()?;
            Ok(GradientCase {
                world,
                generator,
                strategies,
                batch_size: 8,
                split: SplitPolicy::Half,
                tie_rule: TieRule::Zero,
                agent: w % 3,
            })
        })
        .collect()
}

/// Per-sample score estimates for the tested discriminator and the generator.
pub fn sample_gradients(
    case: &GradientCase,
    samples: usize,
    root: &StreamRoot,
    exec: Exec,
) -> Result<(Vec<PolicyGradient>, Vec<PolicyGradient>)> {
    let gen = GeneratorModel::new(case.generator.clone());
    let own = PolicyPoint::from_channel(&case.strategies[case.agent]);
    let pairs = exec.try_map(samples, |s| {
        let s = s as u64;
        let batch = sample_batch(&case.world, &gen, case.batch_size, &mut root.stream(s, 0, Purpose::World))?;
        let batch = apply_strategies(batch, &case.strategies, &mut root.stream(s, 0, Purpose::Reports))?;
        let split = split_tasks(case.batch_size, case.split, &mut root.stream(s, 0, Purpose::Split))?;
        let reports = batch.reports().expect("reports applied");
        let p = payment(reports, &split, case.agent)?;
        let d = reinforce_gradient_discriminator(&batch, case.agent, p, &own)?;
        let votes = majority_votes(reports, case.tie_rule, &mut root.stream(s, 0, Purpose::Ties))?;
        let g = reinforce_gradient_generator(&batch, &votes, &case.generator)?;
        Ok::<_, PegError>((d, g))
    })?;
    Ok(pairs.into_iter().unzip())
}

/// Score-function means against exact and finite-difference gradients.
pub fn check_gradients(
    cases: &[GradientCase],
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<[CheckResult; 2]> {
    let (mut d_fail, mut g_fail) = (0, 0);
    let (mut d_worst, mut g_worst, mut fd_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut d_details = Vec::new();
    let mut g_details = Vec::new();
    for (w, case) in cases.iter().enumerate() {
        let root = StreamRoot::new(seed, w as u64);
        let gen = GeneratorModel::new(case.generator.clone());
        let split = TaskSplit::half(case.batch_size)?;
        let exact = exact_gradient(&case.world, &gen, &case.strategies, &split, case.agent)?;
        let fd = payment_fd_gradient(&case.world, &gen, &case.strategies, &split, case.agent, FD_STEP)?;
        let gen_fd = generator_fd_gradient(
            &case.world,
            &case.generator,
            &case.strategies,
            case.batch_size,
            case.tie_rule,
            FD_STEP,
        )?;
        let (d_samples, g_samples) = sample_gradients(case, samples, &root, exec)?;
        let d_stats = gradient_stats(&d_samples)?;
        let g_stats = gradient_stats(&g_samples)?;
        let dz = max_z(&d_stats, &exact);
        let rel = relative_error(&exact, &fd);
        let gz = max_z(&g_stats, &gen_fd);
        d_worst = d_worst.max(dz);
        fd_worst = fd_worst.max(rel);
        g_worst = g_worst.max(gz);
        let d_ok = dz <= STANDARD_ERRORS && rel < FD_RELATIVE_TOLERANCE;
        if !d_ok {
            d_fail += 1;
        }
        if gz > STANDARD_ERRORS {
            g_fail += 1;
        }
        d_details.push(json!({
            "case": w,
            "agent": case.agent,
            "exact": exact,
            "finite_difference": fd,
            "sample_mean": d_stats.mean,
            "standard_error": d_stats.standard_error,
            "max_z": dz,
            "fd_relative_error": rel,
            "pass": d_ok,
        }));
        g_details.push(json!({
            "case": w,
            "finite_difference": gen_fd,
            "sample_mean": g_stats.mean,
            "standard_error": g_stats.standard_error,
            "max_z": gz,
            "pass": gz <= STANDARD_ERRORS,
        }));
    }
    let d = CheckResult::new(
        "gradient_discriminator",
        cases.len(),
        d_fail,
        d_worst,
        STANDARD_ERRORS,
        json!({ "samples": samples, "max_fd_relative_error": fd_worst, "fd_tolerance": FD_RELATIVE_TOLERANCE, "cases": d_details }),
    );
    let g = CheckResult::new(
        "gradient_generator",
        cases.len(),
        g_fail,
        g_worst,
        STANDARD_ERRORS,
        json!({ "samples": samples, "cases": g_details }),
    );
    Ok([d, g])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutation_breaks_dominance() {
        let root = StreamRoot::new(3, 0);
        let cases = random_dominance_cases(&root, 2).unwrap();
        let ok = check_dominance_cases("d", &cases, 0.1, Exec::Sequential, None).unwrap();
        assert_eq!(ok.status, Status::Pass);
        let bad = check_dominance_cases("d", &cases, 0.1, Exec::Sequential, Some(Mutation::PaymentSignFlip)).unwrap();
        assert_eq!(bad.status, Status::Fail);
        assert_eq!(bad.failures, cases.len());
    }

    #[test]
    fn uninformative_peer_skips() {
        let world = WorldModel::symmetric(0.5, &[0.9, 0.5, 0.8]).unwrap();
        let case = DominanceCase {
            world,
            generator: GeneratorModel::ideal(),
            strategies: vec![Channel::truthful(); 3],
            batch_size: 4,
            agent: 0,
        };
        let r = check_dominance_cases("d", &[case], 0.1, Exec::Sequential, None).unwrap();
        assert_eq!(r.status, Status::Skipped);
        assert!(r.reason.as_deref().unwrap().starts_with("UninformativePeer"));
        assert!(r.passed());
    }

    #[test]
    fn stats_of_constant_samples() {
        let g = PolicyGradient([[1.0, -1.0], [0.5, -0.5]]);
        let s = gradient_stats(&[g; 4]).unwrap();
        assert_eq!(s.standard_error, PolicyGradient::zero());
        assert_eq!(max_z(&s, &g), 0.0);
        assert_eq!(max_z(&s, &PolicyGradient::zero()), f64::INFINITY);
    }

    #[test]
    fn small_gradient_run_agrees() {
        let root = StreamRoot::new(11, 0);
        let cases = random_gradient_cases(&root, 1).unwrap();
        let [d, g] = check_gradients(&cases, 4000, 11, Exec::Parallel).unwrap();
        assert!(d.details["max_fd_relative_error"].as_f64().unwrap() < FD_RELATIVE_TOLERANCE);
        assert!(d.measured < 5.0, "{d:?}");
        assert!(g.measured < 5.0, "{g:?}");
    }
}
