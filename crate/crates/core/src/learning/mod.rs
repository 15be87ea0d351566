//! Learning dynamics: schedules, mirror-ascent updates, score-function
//! estimators, trust regions, majority voting and the PEG round.

mod estimator;
mod omd;
mod schedule;
mod trust;
mod vote;

pub use estimator::{reinforce_gradient_discriminator, reinforce_gradient_generator, PolicyGradient};
pub use omd::{omd_step, omd_step_floored, POLICY_FLOOR};
pub use schedule::{doubling_epoch, schedule_rate, DoublingVariant, Schedule, GRAD_BOUND_FLOOR};
pub use trust::{trust_project, TrustRegion};
pub use vote::{majority_vote, majority_vote_with, majority_votes, TieRule};

use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::exec::Exec;
use crate::mechanism::{payments_all, split_tasks, PaymentVector, SplitPolicy, TaskSplit};
use crate::rng::{Purpose, StreamRoot};
use crate::types::{Label, PolicyPoint, ProbVector, Strategy};
use crate::world::{apply_strategies, sample_batch, GeneratorModel, TaskBatch, WorldModel};

/// What discriminators' score-function estimates are weighted by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentSignal {
    /// The determinant payment as computed.
    #[default]
    Raw,
    /// Payment divided by `a₁ a₂ (n − 1)`, an unbiased estimate of the mean
    /// squared peer determinant. Keeps step sizes comparable across `K`.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

/// One learner: its current policy, schedule, trust region and the running
/// statistics its schedule and baseline depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    role: Role,
    policy: PolicyPoint,
    initial_policy: PolicyPoint,
    schedule: Schedule,
    trust: TrustRegion,
    grad_max: f64,
    signal_sum: f64,
    rounds: u64,
}

impl AgentState {
    /// Learners start from the floored, trust-projected policy. A frozen
    /// schedule keeps the policy exactly as given.
    pub fn new(role: Role, policy: PolicyPoint, schedule: Schedule, trust: TrustRegion) -> Result<Self> {
        schedule.validate()?;
        let policy = if schedule.is_frozen() {
            policy
        } else {
            trust_project(&policy.floored(POLICY_FLOOR), &trust)
        };
        Ok(AgentState {
            role,
            initial_policy: policy.clone(),
            policy,
            schedule,
            trust,
            grad_max: 0.0,
            signal_sum: 0.0,
            rounds: 0,
        })
    }

    pub fn frozen(role: Role, policy: PolicyPoint) -> Self {
        let trust = TrustRegion::disabled(policy.clone());
        AgentState::new(role, policy, Schedule::Constant { rate: 0.0 }, trust).expect("frozen schedule is valid")
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn policy(&self) -> &PolicyPoint {
        &self.policy
    }

    /// Policy after flooring and projection at construction.
    pub fn initial_policy(&self) -> &PolicyPoint {
        &self.initial_policy
    }

    pub fn strategy(&self) -> Strategy {
        self.policy.to_channel()
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn trust(&self) -> &TrustRegion {
        &self.trust
    }

    /// Largest gradient L2 norm this agent has been updated with.
    pub fn grad_max(&self) -> f64 {
        self.grad_max
    }

    /// Mean of the per-round payment signals seen so far (0 before the
    /// first round).
    pub fn baseline(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.signal_sum / self.rounds as f64
        }
    }

    /// Updated state and the rate used at iteration `t`.
    pub fn step(&self, gradient: &PolicyGradient, t: u64) -> Result<(AgentState, f64)> {
        let mut next = self.clone();
        next.grad_max = self.grad_max.max(gradient.norm_l2());
        let rate = self.schedule.rate(t, next.grad_max)?;
        if rate == 0.0 {
            return Ok((next, rate));
        }
        let rows = [Label::Zero, Label::One].map(|c| {
            omd_step_floored(self.policy.condition(c), gradient.row(c), rate)
        });
        let [r0, r1] = rows;
        let updated = PolicyPoint::new([r0?, r1?])?;
        next.policy = trust_project(&updated, &self.trust);
        Ok((next, rate))
    }

    fn record_signal(&mut self, s: f64) {
        self.signal_sum += s;
        self.rounds += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub discriminators: Vec<AgentState>,
    pub generator: AgentState,
    /// Number of completed rounds.
    pub iteration: u64,
}

impl Population {
    pub fn new(discriminators: Vec<AgentState>, generator: AgentState) -> Result<Self> {
        if discriminators.len() < 2 {
            return Err(PegError::TooFewAgents {
                n: discriminators.len(),
            });
        }
        Ok(Population {
            discriminators,
            generator,
            iteration: 0,
        })
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.discriminators.iter().map(AgentState::strategy).collect()
    }

    pub fn generator_model(&self) -> GeneratorModel {
        GeneratorModel::new(self.generator.policy.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundParams {
    pub batch_size: usize,
    pub split: SplitPolicy,
    /// Sampled batches averaged into each update.
    pub gradient_batches: usize,
    pub payment_signal: PaymentSignal,
    /// Subtract each agent's running mean signal before weighting.
    pub baseline: bool,
    pub tie_rule: TieRule,
    pub exec: Exec,
}

impl Default for RoundParams {
    fn default() -> Self {
        RoundParams {
            batch_size: 8,
            split: SplitPolicy::Half,
            gradient_batches: 32,
            payment_signal: PaymentSignal::Raw,
            baseline: false,
            tie_rule: TieRule::Zero,
            exec: Exec::Parallel,
        }
    }
}

/// Everything observed in one sampled batch of a round.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub batch: TaskBatch,
    pub split: TaskSplit,
    pub payments: PaymentVector,
    /// Per-agent weight fed to the estimator (signal minus baseline).
    pub weights: Vec<f64>,
    pub votes: Vec<Label>,
    pub discriminator_gradients: Vec<PolicyGradient>,
    pub generator_gradient: PolicyGradient,
}

impl BatchRecord {
    /// Fraction of tasks whose vote matches the ground truth.
    pub fn vote_accuracy(&self) -> f64 {
        let hits = self
            .votes
            .iter()
            .zip(self.batch.truths())
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / self.votes.len() as f64
    }

    /// Fraction of tasks whose vote matches the generator's target.
    pub fn generator_reward(&self) -> f64 {
        let hits = self
            .votes
            .iter()
            .zip(self.batch.generator_targets())
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / self.votes.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub population: Population,
    /// Iteration index `t` (1-based) of this round.
    pub iteration: u64,
    pub batches: Vec<BatchRecord>,
    /// Mean estimates the updates were made with.
    pub discriminator_gradients: Vec<PolicyGradient>,
    pub generator_gradient: PolicyGradient,
    pub discriminator_rates: Vec<f64>,
    pub generator_rate: f64,
}

fn sample_one(
    pop: &Population,
    world: &WorldModel,
    params: &RoundParams,
    root: &StreamRoot,
    t: u64,
    b: u64,
    strategies: &[Strategy],
    baselines: &[f64],
) -> Result<BatchRecord> {
    let gen = pop.generator_model();
    let batch = sample_batch(world, &gen, params.batch_size, &mut root.stream(t, b, Purpose::World))?;
    let batch = apply_strategies(batch, strategies, &mut root.stream(t, b, Purpose::Reports))?;
    let split = split_tasks(params.batch_size, params.split, &mut root.stream(t, b, Purpose::Split))?;
    let reports = batch.reports().expect("reports applied");
    let payments = payments_all(reports, &split)?;
    let signal = match params.payment_signal {
        PaymentSignal::Raw => payments.clone(),
        PaymentSignal::Normalized => payments.normalized(&split),
    };
    let weights: Vec<f64> = signal
        .as_slice()
        .iter()
        .zip(baselines)
        .map(|(s, b)| s - b)
        .collect();
    let discriminator_gradients = pop
        .discriminators
        .iter()
        .enumerate()
        .map(|(i, a)| reinforce_gradient_discriminator(&batch, i, weights[i], a.policy()))
        .collect::<Result<Vec<_>>>()?;
    let votes = majority_votes(reports, params.tie_rule, &mut root.stream(t, b, Purpose::Ties))?;
    let generator_gradient = reinforce_gradient_generator(&batch, &votes, pop.generator.policy())?;
    Ok(BatchRecord {
        batch,
        split,
        payments,
        weights,
        votes,
        discriminator_gradients,
        generator_gradient,
    })
}

/// Runs iteration `t = pop.iteration + 1`: samples `gradient_batches`
/// batches from their own streams, estimates every agent's gradient on each,
/// averages in batch order and applies one update per agent.
pub fn run_peg_round(
    pop: &Population,
    world: &WorldModel,
    params: &RoundParams,
    root: &StreamRoot,
) -> Result<RoundOutcome> {
    let n = pop.discriminators.len();
    if n < 2 {
        return Err(PegError::TooFewAgents { n });
    }
    if world.n_agents() != n {
        return Err(PegError::ArityMismatch {
            expected: world.n_agents(),
            found: n,
        });
    }
    if params.gradient_batches == 0 {
        return Err(PegError::InvalidExperiment("gradient_batches must be ≥ 1".into()));
    }
    let t = pop.iteration + 1;
    let strategies = pop.strategies();
    let baselines: Vec<f64> = pop
        .discriminators
        .iter()
        .map(|a| if params.baseline { a.baseline() } else { 0.0 })
        .collect();

    let batches = params.exec.try_map(params.gradient_batches, |b| {
        sample_one(pop, world, params, root, t, b as u64, &strategies, &baselines)
    })?;

    let mut next = pop.clone();
    let mut discriminator_gradients = Vec::with_capacity(n);
    let mut discriminator_rates = Vec::with_capacity(n);
    let inv = 1.0 / batches.len() as f64;
    for i in 0..n {
        let per_batch: Vec<PolicyGradient> = batches.iter().map(|r| r.discriminator_gradients[i]).collect();
        let g = PolicyGradient::mean(&per_batch)?;
        let (mut state, rate) = pop.discriminators[i].step(&g, t)?;
        let mean_signal: f64 = batches
            .iter()
            .map(|r| r.weights[i] + baselines[i])
            .sum::<f64>()
            * inv;
        state.record_signal(mean_signal);
        next.discriminators[i] = state;
        discriminator_gradients.push(g);
        discriminator_rates.push(rate);
    }
    let per_batch: Vec<PolicyGradient> = batches.iter().map(|r| r.generator_gradient).collect();
    let generator_gradient = PolicyGradient::mean(&per_batch)?;
    let (gen_state, generator_rate) = pop.generator.step(&generator_gradient, t)?;
    next.generator = gen_state;
    next.iteration = t;

    Ok(RoundOutcome {
        population: next,
        iteration: t,
        batches,
        discriminator_gradients,
        generator_gradient,
        discriminator_rates,
        generator_rate,
    })
}

/// Policy whose rows are `[f, 1 − f]` and `[1 − f, f]`.
pub fn noisy_truthful(fidelity: f64) -> Result<PolicyPoint> {
    let row = |p: f64| ProbVector::new(vec![p, 1.0 - p]);
    PolicyPoint::new([row(fidelity)?, row(1.0 - fidelity)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::payment;
    use crate::types::Channel;

    fn learner(f: f64) -> AgentState {
        let p = noisy_truthful(f).unwrap();
        AgentState::new(
            Role::Discriminator,
            p,
            Schedule::Constant { rate: 0.1 },
            TrustRegion::disabled(PolicyPoint::from_channel(&Channel::truthful())),
        )
        .unwrap()
    }

    fn setup(n: usize) -> (Population, WorldModel) {
        let pop = Population::new((0..n).map(|_| learner(0.8)).collect(), learner(0.8)).unwrap();
        let world = WorldModel::symmetric(0.5, &vec![0.8; n]).unwrap();
        (pop, world)
    }

    #[test]
    fn round_is_deterministic_and_exec_independent() {
        let (pop, world) = setup(3);
        let root = StreamRoot::new(7, 0);
        let seq = RoundParams {
            exec: Exec::Sequential,
            ..RoundParams::default()
        };
        let par = RoundParams {
            exec: Exec::Parallel,
            ..RoundParams::default()
        };
        let a = run_peg_round(&pop, &world, &seq, &root).unwrap();
        let b = run_peg_round(&pop, &world, &par, &root).unwrap();
        let c = run_peg_round(&pop, &world, &par, &root).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(a.iteration, 1);
        assert_eq!(a.population.iteration, 1);
        assert_eq!(a.batches.len(), 32);
    }

    #[test]
    fn payments_match_mechanism() {
        let (pop, world) = setup(3);
        let out = run_peg_round(&pop, &world, &RoundParams::default(), &StreamRoot::new(1, 0)).unwrap();
        for rec in &out.batches {
            let reports = rec.batch.reports().unwrap();
            for i in 0..3 {
                assert_eq!(rec.payments.get(i), payment(reports, &rec.split, i).unwrap());
            }
        }
    }

    #[test]
    fn updated_policies_stay_valid_and_move() {
        let (mut pop, world) = setup(3);
        let root = StreamRoot::new(3, 0);
        let params = RoundParams::default();
        let start = pop.clone();
        for _ in 0..5 {
            pop = run_peg_round(&pop, &world, &params, &root).unwrap().population;
        }
        assert_eq!(pop.iteration, 5);
        for a in pop.discriminators.iter().chain(std::iter::once(&pop.generator)) {
            for row in a.policy().rows() {
                assert!((row.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(row.as_slice().iter().all(|&x| x >= POLICY_FLOOR * 0.999));
            }
        }
        assert_ne!(pop.discriminators[0].policy(), start.discriminators[0].policy());
    }

    #[test]
    fn frozen_agents_do_not_move() {
        let world = WorldModel::symmetric(0.5, &[0.8, 0.8, 0.8]).unwrap();
        let truthful = PolicyPoint::from_channel(&Channel::truthful());
        let pop = Population::new(
            vec![
                learner(0.8),
                AgentState::frozen(Role::Discriminator, truthful.clone()),
                AgentState::frozen(Role::Discriminator, truthful.clone()),
            ],
            AgentState::frozen(Role::Discriminator, truthful.clone()),
        )
        .unwrap();
        let out = run_peg_round(&pop, &world, &RoundParams::default(), &StreamRoot::new(2, 0)).unwrap();
        assert_eq!(out.population.discriminators[1].policy(), &truthful);
        assert_eq!(out.population.generator.policy(), &truthful);
        assert_eq!(out.generator_rate, 0.0);
    }

    #[test]
    fn arity_and_agent_count_checked() {
        let (pop, _) = setup(3);
        let world2 = WorldModel::symmetric(0.5, &[0.8, 0.8]).unwrap();
        assert!(matches!(
            run_peg_round(&pop, &world2, &RoundParams::default(), &StreamRoot::new(0, 0)),
            Err(PegError::ArityMismatch { .. })
        ));
        assert_eq!(
            Population::new(vec![learner(0.8)], learner(0.8)),
            Err(PegError::TooFewAgents { n: 1 })
        );
    }

    #[test]
    fn baseline_tracks_mean_signal() {
        let (pop, world) = setup(3);
        let params = RoundParams {
            baseline: true,
            ..RoundParams::default()
        };
        let out = run_peg_round(&pop, &world, &params, &StreamRoot::new(4, 0)).unwrap();
        // First round: baseline is zero, so weights equal raw payments.
        for rec in &out.batches {
            assert_eq!(rec.weights, rec.payments.as_slice());
        }
        let mean0: f64 = out.batches.iter().map(|r| r.payments.get(0)).sum::<f64>() / 32.0;
        assert!((out.population.discriminators[0].baseline() - mean0).abs() < 1e-9);
    }
}
