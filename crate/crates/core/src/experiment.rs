//! Multi-round, multi-replication runs of the PEG loop.

use crate::error::{PegError, Result};
use crate::learning::{run_peg_round, PolicyGradient, Population, RoundParams};
use crate::mechanism::MIN_BATCH;
use crate::rng::StreamRoot;
use crate::types::{Label, PolicyPoint};
use crate::world::WorldModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub world: WorldModel,
    pub population: Population,
    pub params: RoundParams,
    pub iterations: u64,
    pub replications: u64,
    pub seed: u64,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let n = self.population.discriminators.len();
        if n < 2 {
            return Err(PegError::TooFewAgents { n });
        }
        if self.world.n_agents() != n {
            return Err(PegError::ArityMismatch {
                expected: self.world.n_agents(),
                found: n,
            });
        }
        if self.params.batch_size < MIN_BATCH {
            return Err(PegError::BatchTooSmall {
                k: self.params.batch_size,
            });
        }
        if self.iterations == 0 || self.replications == 0 || self.params.gradient_batches == 0 {
            return Err(PegError::InvalidExperiment(
                "iterations, replications and gradient_batches must all be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Summary of one round. Policies are the ones that played the round.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub t: u64,
    pub discriminator_policies: Vec<PolicyPoint>,
    pub generator_policy: PolicyPoint,
    pub discriminator_gradients: Vec<PolicyGradient>,
    pub generator_gradient: PolicyGradient,
    pub discriminator_rates: Vec<f64>,
    pub generator_rate: f64,
    /// Per-agent raw payment averaged over the round's batches.
    pub mean_payments: Vec<f64>,
    /// Per-agent normalized payment averaged over the round's batches.
    pub mean_normalized_payments: Vec<f64>,
    /// Vote accuracy averaged over the round's batches.
    pub vote_accuracy: f64,
    pub generator_reward: f64,
    /// Targets, truths and votes of the round's first batch.
    pub first_batch_targets: Vec<Label>,
    pub first_batch_truths: Vec<Label>,
    pub first_batch_votes: Vec<Label>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationTrace {
    pub replication: u64,
    pub records: Vec<IterationRecord>,
    pub final_population: Population,
}

impl ReplicationTrace {
    /// Policies of discriminator `i` from the first round through the final
    /// state (`T + 1` entries).
    pub fn discriminator_policy_history(&self, i: usize) -> Vec<PolicyPoint> {
        self.records
            .iter()
            .map(|r| r.discriminator_policies[i].clone())
            .chain(std::iter::once(self.final_population.discriminators[i].policy().clone()))
            .collect()
    }

    pub fn generator_policy_history(&self) -> Vec<PolicyPoint> {
        self.records
            .iter()
            .map(|r| r.generator_policy.clone())
            .chain(std::iter::once(self.final_population.generator.policy().clone()))
            .collect()
    }

    pub fn discriminator_gradients(&self, i: usize) -> Vec<PolicyGradient> {
        self.records.iter().map(|r| r.discriminator_gradients[i]).collect()
    }

    pub fn generator_gradients(&self) -> Vec<PolicyGradient> {
        self.records.iter().map(|r| r.generator_gradient).collect()
    }

    /// Policies that played each round, aligned with the gradients.
    pub fn played_discriminator_policies(&self, i: usize) -> Vec<PolicyPoint> {
        self.records
            .iter()
            .map(|r| r.discriminator_policies[i].clone())
            .collect()
    }

    pub fn played_generator_policies(&self) -> Vec<PolicyPoint> {
        self.records.iter().map(|r| r.generator_policy.clone()).collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn run_replication(exp: &Experiment, replication: u64) -> Result<ReplicationTrace> {
    exp.validate()?;
    let root = StreamRoot::new(exp.seed, replication);
    let n = exp.population.discriminators.len();
    let mut pop = exp.population.clone();
    let mut records = Vec::with_capacity(exp.iterations as usize);
    for _ in 0..exp.iterations {
        let out = run_peg_round(&pop, &exp.world, &exp.params, &root)?;
        let first = &out.batches[0];
        records.push(IterationRecord {
            t: out.iteration,
            discriminator_policies: pop.discriminators.iter().map(|a| a.policy().clone()).collect(),
            generator_policy: pop.generator.policy().clone(),
            discriminator_gradients: out.discriminator_gradients.clone(),
            generator_gradient: out.generator_gradient,
            discriminator_rates: out.discriminator_rates.clone(),
            generator_rate: out.generator_rate,
            mean_payments: (0..n)
                .map(|i| mean(out.batches.iter().map(|b| b.payments.get(i))))
                .collect(),
            mean_normalized_payments: (0..n)
                .map(|i| mean(out.batches.iter().map(|b| b.payments.normalized(&b.split).get(i))))
                .collect(),
            vote_accuracy: mean(out.batches.iter().map(|b| b.vote_accuracy())),
            generator_reward: mean(out.batches.iter().map(|b| b.generator_reward())),
            first_batch_targets: first.batch.generator_targets().to_vec(),
            first_batch_truths: first.batch.truths().to_vec(),
            first_batch_votes: first.votes.clone(),
        });
        pop = out.population;
    }
    Ok(ReplicationTrace {
        replication,
        records,
        final_population: pop,
    })
}

/// All replications, in replication order. Replications run through the
/// experiment's [`crate::exec::Exec`].
pub fn run_experiment(exp: &Experiment) -> Result<Vec<ReplicationTrace>> {
    exp.validate()?;
    exp.params
        .exec
        .try_map(exp.replications as usize, |r| run_replication(exp, r as u64))
}
