//! Synthetic environment standing in for language models.
//!
//! A task's ground truth is the correctness of the generator's response.
//! The generator is asked for a response with target correctness `v`
//! (drawn from `truth_prior`) and produces one whose actual correctness is
//! drawn from its policy row for `v`. Each discriminator then observes a
//! private signal about that truth through its own confusion matrix,
//! independently of every other discriminator.

use rand::Rng;

use crate::error::{PegError, Result};
use crate::mechanism::MIN_BATCH;
use crate::types::{Channel, JointDist, Label, PolicyPoint, ProbVector, Strategy};

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    truth_prior: f64,
    confusions: Vec<Channel>,
}

impl WorldModel {
    pub fn new(truth_prior: f64, confusions: Vec<Channel>) -> Result<Self> {
        if !(0.0..=1.0).contains(&truth_prior) {
            return Err(PegError::InvalidWorld(format!(
                "truth_prior {truth_prior} outside [0, 1]"
            )));
        }
        if confusions.is_empty() {
            return Err(PegError::InvalidWorld("no agents".into()));
        }
        Ok(WorldModel {
            truth_prior,
            confusions,
        })
    }

    /// Symmetric confusion matrices: agent `i` sees the truth with
    /// probability `accuracies[i]`.
    pub fn symmetric(truth_prior: f64, accuracies: &[f64]) -> Result<Self> {
        let confusions = accuracies
            .iter()
            .map(|&a| Channel::symmetric(a))
            .collect::<Result<Vec<_>>>()?;
        WorldModel::new(truth_prior, confusions)
    }

    pub fn truth_prior(&self) -> f64 {
        self.truth_prior
    }

    pub fn confusions(&self) -> &[Channel] {
        &self.confusions
    }

    pub fn confusion(&self, i: usize) -> &Channel {
        &self.confusions[i]
    }

    pub fn n_agents(&self) -> usize {
        self.confusions.len()
    }

    /// Marginal distribution of the ground truth, induced by the target
    /// prior and the generator policy.
    pub fn truth_distribution(&self, generator: &GeneratorModel) -> [f64; 2] {
        let p1 = self.truth_prior * generator.policy.prob(Label::One, Label::One)
            + (1.0 - self.truth_prior) * generator.policy.prob(Label::Zero, Label::One);
        [1.0 - p1, p1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub policy: PolicyPoint,
}

impl GeneratorModel {
    pub fn new(policy: PolicyPoint) -> Self {
        GeneratorModel { policy }
    }

    /// Always produces a response whose correctness equals the target.
    pub fn ideal() -> Self {
        GeneratorModel {
            policy: PolicyPoint::from_channel(&Channel::truthful()),
        }
    }

    pub fn with_fidelity(fidelity: f64) -> Result<Self> {
        Ok(GeneratorModel {
            policy: PolicyPoint::from_channel(&Channel::symmetric(fidelity)?),
        })
    }
}

/// One batch of `K` tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskBatch {
    truths: Vec<Label>,
    signals: Vec<Vec<Label>>,
    reports: Option<Vec<Vec<Label>>>,
    generator_targets: Vec<Label>,
    generator_correct: Vec<Label>,
}

impl TaskBatch {
    /// Assembles a batch from explicit parts. Ground truth is taken to be
    /// `generator_correct`.
    pub fn from_parts(
        generator_targets: Vec<Label>,
        generator_correct: Vec<Label>,
        signals: Vec<Vec<Label>>,
        reports: Option<Vec<Vec<Label>>>,
    ) -> Result<Self> {
        let k = generator_targets.len();
        let check = |len: usize| {
            if len == k {
                Ok(())
            } else {
                Err(PegError::LengthMismatch {
                    expected: k,
                    found: len,
                })
            }
        };
        check(generator_correct.len())?;
        for row in &signals {
            check(row.len())?;
        }
        if let Some(reports) = &reports {
            if reports.len() != signals.len() {
                return Err(PegError::ArityMismatch {
                    expected: signals.len(),
                    found: reports.len(),
                });
            }
            for row in reports {
                check(row.len())?;
            }
        }
        Ok(TaskBatch {
            truths: generator_correct.clone(),
            signals,
            reports,
            generator_targets,
            generator_correct,
        })
    }

    pub fn k(&self) -> usize {
        self.truths.len()
    }

    pub fn n_agents(&self) -> usize {
        self.signals.len()
    }

    pub fn truths(&self) -> &[Label] {
        &self.truths
    }

    pub fn signals(&self) -> &[Vec<Label>] {
        &self.signals
    }

    pub fn reports(&self) -> Option<&[Vec<Label>]> {
        self.reports.as_deref()
    }

    pub fn generator_targets(&self) -> &[Label] {
        &self.generator_targets
    }

    pub fn generator_correct(&self) -> &[Label] {
        &self.generator_correct
    }
}

#[inline]
fn draw<R: Rng + ?Sized>(rng: &mut R, row: &ProbVector) -> Label {
    Label::from(rng.gen::<f64>() >= row.get(0))
}

#[inline]
fn draw_row<R: Rng + ?Sized>(rng: &mut R, row: [f64; 2]) -> Label {
    Label::from(rng.gen::<f64>() >= row[0])
}

/// Draw order: for each task, target then produced correctness; then for
/// each agent, its signals in task order.
pub fn sample_batch<R: Rng + ?Sized>(
    world: &WorldModel,
    generator: &GeneratorModel,
    k: usize,
    rng: &mut R,
) -> Result<TaskBatch> {
    if k < MIN_BATCH {
        return Err(PegError::BatchTooSmall { k });
    }
    let mut targets = Vec::with_capacity(k);
    let mut correct = Vec::with_capacity(k);
    for _ in 0..k {
        let v = Label::from(rng.gen::<f64>() < world.truth_prior);
        targets.push(v);
        correct.push(draw(rng, generator.policy.condition(v)));
    }
    let signals = world
        .confusions
        .iter()
        .map(|q| correct.iter().map(|&t| draw_row(rng, q.row(t))).collect())
        .collect();
    Ok(TaskBatch {
        truths: correct.clone(),
        signals,
        reports: None,
        generator_targets: targets,
        generator_correct: correct,
    })
}

/// Each agent reports through its own strategy, the same one on every task.
pub fn apply_strategies<R: Rng + ?Sized>(
    mut batch: TaskBatch,
    strategies: &[Strategy],
    rng: &mut R,
) -> Result<TaskBatch> {
    if strategies.len() != batch.n_agents() {
        return Err(PegError::ArityMismatch {
            expected: batch.n_agents(),
            found: strategies.len(),
        });
    }
    let reports = batch
        .signals
        .iter()
        .zip(strategies)
        .map(|(sig, s)| sig.iter().map(|&c| draw_row(rng, s.row(c))).collect())
        .collect();
    batch.reports = Some(reports);
    Ok(batch)
}

/// Exact joint distribution of agent `i`'s and agent `j`'s reports on one
/// task: `U(r, r') = Σ_v P(v) · [Qᵢ Sᵢ](v, r) · [Qⱼ Sⱼ](v, r')`.
pub fn joint_report_distribution(
    world: &WorldModel,
    strat_i: &Strategy,
    strat_j: &Strategy,
    generator: &GeneratorModel,
    i: usize,
    j: usize,
) -> Result<JointDist> {
    if i == j {
        return Err(PegError::SameAgent { agent: i });
    }
    let n = world.n_agents();
    for idx in [i, j] {
        if idx >= n {
            return Err(PegError::IndexOutOfRange { index: idx, len: n });
        }
    }
    let truth = world.truth_distribution(generator);
    let a = world.confusion(i).then(strat_i);
    let b = world.confusion(j).then(strat_j);
    let mut u = [[0.0; 2]; 2];
    for (r, row) in u.iter_mut().enumerate() {
        for (rp, cell) in row.iter_mut().enumerate() {
            *cell = truth[0] * a.matrix()[0][r] * b.matrix()[0][rp]
                + truth[1] * a.matrix()[1][r] * b.matrix()[1][rp];
        }
    }
    // Entries sum to one up to rounding; renormalize so the 1e-12
    // validation never trips on accumulated error.
    let s: f64 = u.iter().flatten().sum();
    for cell in u.iter_mut().flatten() {
        *cell /= s;
    }
    JointDist::new(u)
}

/// `|det(u)| > tol`.
pub fn informative_peer_check(u: &JointDist, tol: f64) -> bool {
    u.det().abs() > tol
}

/// Probability that agent `i`'s report equals the ground truth.
pub fn exact_report_accuracy(
    world: &WorldModel,
    generator: &GeneratorModel,
    strategy: &Strategy,
    i: usize,
) -> f64 {
    let truth = world.truth_distribution(generator);
    let a = world.confusion(i).then(strategy);
    truth[0] * a.matrix()[0][0] + truth[1] * a.matrix()[1][1]
}
