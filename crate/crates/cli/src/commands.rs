//! The four workflows. Each returns an [`Outcome`] after writing its files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use peg_core::analysis::{
    batch_size_sweep, convergence_curve, final_accuracy, final_distance, initial_accuracy, regret_curve, regret_slope,
    BoundParams, RegretRecord,
};
use peg_core::exec::{with_jobs, Exec};
use peg_core::experiment::{run_experiment, ReplicationTrace};
use peg_core::learning::{PolicyGradient, Schedule, POLICY_FLOOR};
use peg_core::mechanism::MIN_BATCH;
use peg_core::oracle::ENUMERATION_LIMIT;
use peg_core::rng::StreamRoot;
use peg_core::types::{Channel, PolicyPoint};

use crate::config::{ExperimentConfig, RegretRole};
use crate::output::{fmt_f64, row, OutputDir};
use crate::verify::{self, CheckResult, DominanceCase, GradientCase, Mutation};
use crate::{resolve_seed, CliError, ConfigError};

pub const DEFAULT_OUT_DIR: &str = "peg-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Verify,
    Sweep,
    Regret,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::Regret => "regret",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Raw value of `PEG_SEED`, if set.
    pub env_seed: Option<String>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub mutation: Option<Mutation>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    /// False only when a verification check failed.
    pub success: bool,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

pub fn load_config(path: &Path, opts: &RunOptions) -> Result<ExperimentConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    let mut cfg = crate::parse_config(&text)?;
    cfg.seed = resolve_seed(opts.seed, opts.env_seed.as_deref(), cfg.seed)?;
    Ok(cfg)
}

pub fn run(command: Command, config_path: &Path, opts: &RunOptions) -> Result<Outcome, CliError> {
    let cfg = load_config(config_path, opts)?;
    run_config(command, &cfg, opts)
}

/// Runs `command` on an already loaded config (its seed is used as is).
pub fn run_config(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let go = || match command {
        Command::Simulate => simulate(cfg, &out),
        Command::Verify => verify_cmd(cfg, &out, opts.mutation),
        Command::Sweep => sweep(cfg, &out),
        Command::Regret => regret(cfg, &out),
    };
    match opts.jobs {
        Some(j) => with_jobs(j, go),
        None => go(),
    }
}

fn policy_cells(p: &PolicyPoint) -> [String; 4] {
    let r = p.rows();
    [r[0].get(0), r[0].get(1), r[1].get(0), r[1].get(1)].map(fmt_f64)
}

fn bound_params(cfg: &ExperimentConfig) -> BoundParams {
    BoundParams {
        kl_radius: cfg.regret.kl_radius,
        grad_bound: cfg.regret.grad_bound,
        tasks: cfg.batch_size,
    }
}

fn regret_rows(rows: &mut Vec<String>, prefix: &[String], rec: &RegretRecord) {
    for t in 0..rec.len() {
        let mut cells = prefix.to_vec();
        cells.push((t + 1).to_string());
        cells.extend(
            [rec.realized[t], rec.baseline[t], rec.regret[t], rec.bound[t], rec.bound_kt[t]].map(fmt_f64),
        );
        rows.push(row(&cells));
    }
}

/// Role, index, policy history, gradients, played policies.
type Trajectory = (&'static str, usize, Vec<PolicyPoint>, Vec<PolicyGradient>, Vec<PolicyPoint>);

fn trajectories(trace: &ReplicationTrace) -> Vec<Trajectory> {
    let n = trace.final_population.discriminators.len();
    let mut out: Vec<_> = (0..n)
        .map(|i| {
            (
                "discriminator",
                i,
                trace.discriminator_policy_history(i),
                trace.discriminator_gradients(i),
                trace.played_discriminator_policies(i),
            )
        })
        .collect();
    out.push((
        "generator",
        0,
        trace.generator_policy_history(),
        trace.generator_gradients(),
        trace.played_generator_policies(),
    ));
    out
}

fn config_echo(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let exp = cfg.experiment(Exec::Parallel)?;
    let traces = run_experiment(&exp)?;
    let initial = initial_accuracy(&exp)?;
    let truthful = PolicyPoint::from_channel(&Channel::truthful());
    let bound = bound_params(cfg);

    let (mut payments, mut policies, mut votes, mut regrets, mut convergence) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut per_rep = Vec::new();
    for trace in &traces {
        let r = trace.replication.to_string();
        for rec in &trace.records {
            for (i, (p, q)) in rec.mean_payments.iter().zip(&rec.mean_normalized_payments).enumerate() {
                payments.push(row(&[r.clone(), rec.t.to_string(), i.to_string(), fmt_f64(*p), fmt_f64(*q)]));
            }
            for (k, ((v, y), l)) in rec
                .first_batch_targets
                .iter()
                .zip(&rec.first_batch_truths)
                .zip(&rec.first_batch_votes)
                .enumerate()
            {
                votes.push(row(&[
                    r.clone(),
                    rec.t.to_string(),
                    k.to_string(),
                    v.index().to_string(),
                    y.index().to_string(),
                    l.index().to_string(),
                ]));
            }
        }
        let mut agents = Vec::new();
        for (role, i, history, grads, played) in trajectories(trace) {
            for (t, p) in history.iter().enumerate() {
                let mut cells = vec![r.clone(), t.to_string(), role.to_string(), i.to_string()];
                cells.extend(policy_cells(p));
                policies.push(row(&cells));
            }
            let conv = convergence_curve(&history, &truthful);
            for (t, (d, w)) in conv.distances.iter().zip(&conv.window_average).enumerate() {
                let mut cells = vec![r.clone(), role.to_string(), i.to_string(), t.to_string()];
                cells.extend([d[0], d[1], w[0], w[1]].map(fmt_f64));
                convergence.push(row(&cells));
            }
            let rec = regret_curve(&grads, &played, &bound)?;
            regret_rows(&mut regrets, &[r.clone(), role.to_string(), i.to_string()], &rec);
            agents.push(json!({
                "role": role,
                "agent": i,
                "final_regret": rec.regret.last(),
                "regret_slope": regret_slope(&rec).ok(),
                "first_bound_violation": rec.first_bound_violation(),
                "final_window_distance": conv.final_window_max(),
            }));
        }
        per_rep.push(json!({
            "replication": trace.replication,
            "final_accuracy": final_accuracy(&exp, trace)?,
            "final_distance": final_distance(trace),
            "round_vote_accuracy": trace.records.iter().map(|r| r.vote_accuracy).collect::<Vec<_>>(),
            "round_generator_reward": trace.records.iter().map(|r| r.generator_reward).collect::<Vec<_>>(),
            "agents": agents,
        }));
    }

    let dir = OutputDir::create(out, &cfg.hash(), cfg.seed)?;
    let mut files = vec![
        dir.write_csv("payments.csv", &["replication", "t", "agent", "payment", "normalized_payment"], &payments)?,
        dir.write_csv(
            "policies.csv",
            &["replication", "t", "role", "agent", "p00", "p01", "p10", "p11"],
            &policies,
        )?,
        dir.write_csv("votes.csv", &["replication", "t", "task", "target", "truth", "vote"], &votes)?,
        dir.write_csv(
            "regret.csv",
            &[
                "replication",
                "role",
                "agent",
                "t",
                "realized",
                "baseline",
                "regret",
                "surrogate_bound",
                "surrogate_bound_kt",
            ],
            &regrets,
        )?,
        dir.write_csv(
            "convergence.csv",
            &["replication", "role", "agent", "t", "distance_0", "distance_1", "window_0", "window_1"],
            &convergence,
        )?,
    ];
    let summary = json!({
        "command": "simulate",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "initial_accuracy": initial,
        "replications": per_rep,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    files.push(dir.write_json("summary.json", &summary)?);
    Ok(Outcome {
        success: true,
        out_dir: out.to_path_buf(),
        files,
        summary,
    })
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    if let Some(&k) = cfg.sweep.k_values.iter().find(|&&k| k < MIN_BATCH) {
        return Err(ConfigError::Validation {
            field: "sweep.k_values".into(),
            message: format!("K must be ≥ {MIN_BATCH}, got {k}"),
        }
        .into());
    }
    let exp = cfg.experiment(Exec::Parallel)?;
    let rows = batch_size_sweep(&exp, &cfg.sweep.k_values)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            row(&[
                r.k.to_string(),
                r.replication.to_string(),
                fmt_f64(r.vote_accuracy),
                fmt_f64(r.mean_payment),
                fmt_f64(r.final_distance),
            ])
        })
        .collect();
    let dir = OutputDir::create(out, &cfg.hash(), cfg.seed)?;
    let mut files = vec![dir.write_csv(
        "sweep.csv",
        &["K", "replication", "vote_accuracy", "mean_payment", "final_distance"],
        &lines,
    )?];
    let acc: Vec<f64> = rows.iter().map(|r| r.vote_accuracy).collect();
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let summary = json!({
        "command": "sweep",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "rows": rows.len(),
        "vote_accuracy_min": lo,
        "vote_accuracy_max": hi,
        "vote_accuracy_band": hi - lo,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    files.push(dir.write_json("summary.json", &summary)?);
    Ok(Outcome {
        success: true,
        out_dir: out.to_path_buf(),
        files,
        summary,
    })
}

/// Regret of a policy that never moves against a constant gradient that
/// always favors the opposite of its mode: grows linearly in `t`.
pub fn negative_control(policy: &PolicyPoint, rounds: usize, bound: &BoundParams) -> Result<RegretRecord, CliError> {
    let mut g = [[0.0; 2]; 2];
    for (c, row) in policy.rows().iter().enumerate() {
        let mode = usize::from(row.get(1) > row.get(0));
        g[c][mode] = -1.0;
        g[c][1 - mode] = 1.0;
    }
    let grads = vec![PolicyGradient(g); rounds];
    let played = vec![policy.clone(); rounds];
    Ok(regret_curve(&grads, &played, bound)?)
}

pub fn regret(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let (schedule, frozen) = cfg.agent_schedule(cfg.regret.role, cfg.regret.agent);
    let fixed_bound = match (&schedule, frozen) {
        (Schedule::Doubling { grad_bound, .. }, false) => *grad_bound,
        (Schedule::PowerDecay { .. }, false) => None,
        _ => {
            return Err(ConfigError::Validation {
                field: "schedule".into(),
                message: "regret needs the selected agent to learn with a doubling or power_decay schedule".into(),
            }
            .into())
        }
    };
    let exp = cfg.experiment(Exec::Parallel)?;
    let traces = run_experiment(&exp)?;
    let bound = BoundParams {
        grad_bound: cfg.regret.grad_bound.or(fixed_bound),
        ..bound_params(cfg)
    };
    let (role, agent) = match cfg.regret.role {
        RegretRole::Discriminator => ("discriminator", cfg.regret.agent),
        RegretRole::Generator => ("generator", 0),
    };
    let mut lines = Vec::new();
    let mut per_rep = Vec::new();
    for trace in &traces {
        let (grads, played) = match cfg.regret.role {
            RegretRole::Discriminator => (trace.discriminator_gradients(agent), trace.played_discriminator_policies(agent)),
            RegretRole::Generator => (trace.generator_gradients(), trace.played_generator_policies()),
        };
        let rec = regret_curve(&grads, &played, &bound)?;
        regret_rows(&mut lines, &[trace.replication.to_string()], &rec);
        let t = rec.len();
        per_rep.push(json!({
            "replication": trace.replication,
            "regret_slope": regret_slope(&rec).ok(),
            "first_bound_violation": rec.first_bound_violation(),
            "average_regret_final": rec.average_regret(t),
            "average_regret_quarter": if t >= 4 { Some(rec.average_regret(t / 4)) } else { None },
            "min_regret": rec.regret.iter().copied().fold(f64::INFINITY, f64::min),
            "final_regret": rec.regret[t - 1],
            "final_bound": rec.bound[t - 1],
        }));
    }
    let initial = match cfg.regret.role {
        RegretRole::Discriminator => exp.population.discriminators[agent].policy().clone(),
        RegretRole::Generator => exp.population.generator.policy().clone(),
    };
    let control = negative_control(&initial, cfg.iterations as usize, &bound)?;

    let dir = OutputDir::create(out, &cfg.hash(), cfg.seed)?;
    let mut files = vec![dir.write_csv(
        "regret.csv",
        &["replication", "t", "realized", "baseline", "regret", "surrogate_bound", "surrogate_bound_kt"],
        &lines,
    )?];
    let summary = json!({
        "command": "regret",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "role": role,
        "agent": agent,
        "replications": per_rep,
        "negative_control_slope": regret_slope(&control).ok(),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    files.push(dir.write_json("summary.json", &summary)?);
    Ok(Outcome {
        success: true,
        out_dir: out.to_path_buf(),
        files,
        summary,
    })
}

fn floored_channel(c: &Channel) -> Channel {
    PolicyPoint::from_channel(c).floored(POLICY_FLOOR).to_channel()
}

pub fn verify_checks(cfg: &ExperimentConfig, mutation: Option<Mutation>) -> Result<Vec<CheckResult>, CliError> {
    if !cfg.enumerable() {
        return Err(ConfigError::Validation {
            field: "batch_size".into(),
            message: format!("exact checks enumerate subsets of at most {ENUMERATION_LIMIT} tasks"),
        }
        .into());
    }
    let v = &cfg.verify;
    let exec = Exec::Parallel;
    let root = StreamRoot::new(cfg.seed, 0);
    let exp = cfg.experiment(exec)?;
    let mut checks = vec![
        verify::check_unbiasedness(&root, v.random_instances, 2..=5)?,
        verify::check_payment_expectation(&root, v.random_instances)?,
        verify::check_information_monotonicity(&root, v.garbling_pairs)?,
    ];

    let generator = exp.population.generator_model();
    let strategies = exp.population.strategies();
    let configured: Vec<DominanceCase> = (0..strategies.len())
        .map(|agent| DominanceCase {
            world: exp.world.clone(),
            generator: generator.clone(),
            strategies: strategies.clone(),
            batch_size: cfg.batch_size,
            agent,
        })
        .collect();
    checks.push(verify::check_dominance_cases("dominance", &configured, v.grid_step, exec, mutation)?);
    if v.dominance_worlds > 0 {
        let random = verify::random_dominance_cases(&root, v.dominance_worlds)?;
        checks.push(verify::check_dominance_cases(
            "dominance_random_worlds",
            &random,
            v.grid_step,
            exec,
            mutation,
        )?);
    }

    let mut cases = vec![GradientCase {
        world: exp.world.clone(),
        generator: generator.policy.floored(POLICY_FLOOR),
        strategies: strategies.iter().map(floored_channel).collect(),
        batch_size: cfg.batch_size,
        split: cfg.split,
        tie_rule: cfg.tie_rule,
        agent: 0,
    }];
    cases.extend(verify::random_gradient_cases(&root, v.gradient_worlds)?);
    checks.extend(verify::check_gradients(&cases, v.gradient_samples, cfg.seed, exec)?);
    Ok(checks)
}

pub fn verify_cmd(cfg: &ExperimentConfig, out: &Path, mutation: Option<Mutation>) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let checks = verify_checks(cfg, mutation)?;
    let success = checks.iter().all(CheckResult::passed);
    let dir = OutputDir::create(out, &cfg.hash(), cfg.seed)?;
    let summary = json!({
        "command": "verify",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "mutation": mutation.map(|_| "payment-sign-flip"),
        "passed": success,
        "checks": checks,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    let files = vec![dir.write_json("verify.json", &summary)?];
    Ok(Outcome {
        success,
        out_dir: out.to_path_buf(),
        files,
        summary,
    })
}
