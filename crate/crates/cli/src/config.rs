//! Experiment configuration: a JSON document with every field optional.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use peg_core::exec::Exec;
use peg_core::experiment::Experiment;
use peg_core::learning::{
    noisy_truthful, AgentState, PaymentSignal, Population, Role, RoundParams, Schedule, TieRule, TrustRegion,
};
use peg_core::mechanism::{SplitPolicy, MIN_BATCH};
use peg_core::oracle::ENUMERATION_LIMIT;
use peg_core::types::{Channel, PolicyPoint};
use peg_core::world::WorldModel;

pub const DEFAULT_ACCURACIES: [f64; 3] = [0.9, 0.7, 0.76];

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Parse(String),
    Validation { field: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Validation { field, message } => write!(f, "invalid config field `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub truth_prior: f64,
    /// Symmetric confusion accuracies, one per discriminator.
    pub accuracies: Option<Vec<f64>>,
    /// Full confusion matrices `[[P(0|0), P(1|0)], [P(0|1), P(1|1)]]`;
    /// overrides `accuracies`.
    pub confusions: Option<Vec<[[f64; 2]; 2]>>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            truth_prior: 0.5,
            accuracies: None,
            confusions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Rows `[f, 1 − f]`, `[1 − f, f]` at the start. Defaults to
    /// `initial_fidelity` at the top level.
    pub initial_fidelity: Option<f64>,
    /// Defaults to the top-level `schedule`.
    pub schedule: Option<Schedule>,
    /// Never updates.
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    pub enabled: bool,
    pub radius: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            enabled: false,
            radius: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_values: (4..=15).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretRole {
    #[default]
    Discriminator,
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretConfig {
    pub role: RegretRole,
    /// Discriminator index; ignored for the generator.
    pub agent: usize,
    pub kl_radius: f64,
    pub grad_bound: Option<f64>,
}

impl Default for RegretConfig {
    fn default() -> Self {
        RegretConfig {
            role: RegretRole::Discriminator,
            agent: 0,
            kl_radius: std::f64::consts::LN_2,
            grad_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub grid_step: f64,
    /// Random instances for the unbiasedness and product checks.
    pub random_instances: usize,
    /// Random (U, G) pairs for the garbling check.
    pub garbling_pairs: usize,
    /// Random worlds for the dominance check, on top of the configured one.
    pub dominance_worlds: usize,
    /// Random worlds for the gradient agreement checks.
    pub gradient_worlds: usize,
    /// Sampled batches per world for the gradient agreement checks.
    pub gradient_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            grid_step: 0.05,
            random_instances: 20,
            garbling_pairs: 1000,
            dominance_worlds: 10,
            gradient_worlds: 5,
            gradient_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_agents: Option<usize>,
    pub batch_size: usize,
    pub iterations: u64,
    pub replications: u64,
    pub world: WorldConfig,
    pub initial_fidelity: f64,
    /// Default schedule for every agent.
    pub schedule: Schedule,
    pub generator: AgentConfig,
    /// Per-discriminator overrides; absent entries use the defaults.
    pub discriminators: Vec<AgentConfig>,
    pub split: SplitPolicy,
    pub gradient_batches: usize,
    pub payment_signal: PaymentSignal,
    pub baseline: bool,
    pub tie_rule: TieRule,
    pub trust_region: TrustConfig,
    pub output_dir: Option<String>,
    pub sweep: SweepConfig,
    pub regret: RegretConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_agents: None,
            batch_size: 8,
            iterations: 10,
            replications: 1,
            world: WorldConfig::default(),
            initial_fidelity: 0.8,
            schedule: Schedule::Constant { rate: 0.1 },
            generator: AgentConfig::default(),
            discriminators: Vec::new(),
            split: SplitPolicy::Half,
            gradient_batches: 32,
            payment_signal: PaymentSignal::Raw,
            baseline: false,
            tie_rule: TieRule::Zero,
            trust_region: TrustConfig::default(),
            output_dir: None,
            sweep: SweepConfig::default(),
            regret: RegretConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// Parses and validates. Whitespace-only input yields the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = if text.trim().is_empty() {
        ExperimentConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        if let Some(c) = &self.world.confusions {
            return c.len();
        }
        if let Some(a) = &self.world.accuracies {
            return a.len();
        }
        DEFAULT_ACCURACIES.len()
    }

    fn confusion_channels(&self) -> Result<Vec<Channel>, ConfigError> {
        if let Some(c) = &self.world.confusions {
            return c
                .iter()
                .enumerate()
                .map(|(i, m)| Channel::new(*m).map_err(|e| invalid(format!("world.confusions[{i}]"), e)))
                .collect();
        }
        let acc: Vec<f64> = match &self.world.accuracies {
            Some(a) => a.clone(),
            None => DEFAULT_ACCURACIES.to_vec(),
        };
        acc.iter()
            .enumerate()
            .map(|(i, &a)| Channel::symmetric(a).map_err(|e| invalid(format!("world.accuracies[{i}]"), e)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        if let Some(declared) = self.n_agents {
            if declared != n {
                let source = if self.world.confusions.is_some() {
                    "world.confusions"
                } else if self.world.accuracies.is_some() {
                    "world.accuracies"
                } else {
                    "the default world"
                };
                return Err(invalid(
                    "n_agents",
                    format!("{declared} agents declared but {source} describes {n}"),
                ));
            }
        }
        if n < 2 {
            return Err(invalid("n_agents", format!("need at least 2 discriminators, got {n}")));
        }
        if self.batch_size < MIN_BATCH {
            return Err(invalid(
                "batch_size",
                format!("K must be ≥ {MIN_BATCH}, got {}", self.batch_size),
            ));
        }
        if self.iterations < 1 {
            return Err(invalid("iterations", "T must be ≥ 1"));
        }
        if self.replications < 1 {
            return Err(invalid("replications", "R must be ≥ 1"));
        }
        if self.gradient_batches < 1 {
            return Err(invalid("gradient_batches", "must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.world.truth_prior) {
            return Err(invalid("world.truth_prior", "must lie in [0, 1]"));
        }
        self.confusion_channels()?;
        if self.discriminators.len() > n {
            return Err(invalid(
                "discriminators",
                format!("{} entries for {n} agents", self.discriminators.len()),
            ));
        }
        check_fidelity("initial_fidelity", Some(self.initial_fidelity))?;
        self.schedule.validate().map_err(|e| invalid("schedule", e))?;
        check_fidelity("generator.initial_fidelity", self.generator.initial_fidelity)?;
        if let Some(s) = &self.generator.schedule {
            s.validate().map_err(|e| invalid("generator.schedule", e))?;
        }
        for (i, d) in self.discriminators.iter().enumerate() {
            check_fidelity(&format!("discriminators[{i}].initial_fidelity"), d.initial_fidelity)?;
            if let Some(s) = &d.schedule {
                s.validate()
                    .map_err(|e| invalid(format!("discriminators[{i}].schedule"), e))?;
            }
        }
        if self.trust_region.enabled && !(self.trust_region.radius.is_finite() && self.trust_region.radius > 0.0) {
            return Err(invalid("trust_region.radius", "must be > 0 when enabled"));
        }
        if self.sweep.k_values.is_empty() {
            return Err(invalid("sweep.k_values", "must not be empty"));
        }
        if let Some(&k) = self.sweep.k_values.iter().find(|&&k| k < MIN_BATCH) {
            return Err(invalid("sweep.k_values", format!("K must be ≥ {MIN_BATCH}, got {k}")));
        }
        if self.regret.role == RegretRole::Discriminator && self.regret.agent >= n {
            return Err(invalid("regret.agent", format!("index {} out of range for {n} agents", self.regret.agent)));
        }
        if !(self.regret.kl_radius.is_finite() && self.regret.kl_radius >= 0.0) {
            return Err(invalid("regret.kl_radius", "must be ≥ 0"));
        }
        if let Some(m) = self.regret.grad_bound {
            if !(m.is_finite() && m > 0.0) {
                return Err(invalid("regret.grad_bound", "must be > 0"));
            }
        }
        if !(self.verify.grid_step > 0.0 && self.verify.grid_step <= 0.5) {
            return Err(invalid("verify.grid_step", "must lie in (0, 0.5]"));
        }
        if self.verify.gradient_samples < 2 {
            return Err(invalid("verify.gradient_samples", "need at least 2 samples"));
        }
        Ok(())
    }

    pub fn world_model(&self) -> Result<WorldModel, ConfigError> {
        WorldModel::new(self.world.truth_prior, self.confusion_channels()?).map_err(|e| invalid("world", e))
    }

    fn discriminator_config(&self, i: usize) -> AgentConfig {
        self.discriminators.get(i).cloned().unwrap_or_default()
    }

    fn build_agent(&self, role: Role, cfg: &AgentConfig, field: &str) -> Result<AgentState, ConfigError> {
        let fidelity = cfg.initial_fidelity.unwrap_or(self.initial_fidelity);
        let policy = noisy_truthful(fidelity).map_err(|e| invalid(format!("{field}.initial_fidelity"), e))?;
        if cfg.frozen {
            return Ok(AgentState::frozen(role, policy));
        }
        let truthful = PolicyPoint::from_channel(&Channel::truthful());
        let trust = match role {
            Role::Discriminator if self.trust_region.enabled => {
                TrustRegion::new(truthful, self.trust_region.radius).map_err(|e| invalid("trust_region", e))?
            }
            _ => TrustRegion::disabled(truthful),
        };
        let schedule = cfg.schedule.clone().unwrap_or_else(|| self.schedule.clone());
        AgentState::new(role, policy, schedule, trust).map_err(|e| invalid(field, e))
    }

    pub fn agent_schedule(&self, role: RegretRole, i: usize) -> (Schedule, bool) {
        let cfg = match role {
            RegretRole::Generator => self.generator.clone(),
            RegretRole::Discriminator => self.discriminator_config(i),
        };
        (cfg.schedule.unwrap_or_else(|| self.schedule.clone()), cfg.frozen)
    }

    pub fn round_params(&self, exec: Exec) -> RoundParams {
        RoundParams {
            batch_size: self.batch_size,
            split: self.split,
            gradient_batches: self.gradient_batches,
            payment_signal: self.payment_signal,
            baseline: self.baseline,
            tie_rule: self.tie_rule,
            exec,
        }
    }

    pub fn experiment(&self, exec: Exec) -> Result<Experiment, ConfigError> {
        self.validate()?;
        let world = self.world_model()?;
        let discriminators = (0..self.n())
            .map(|i| self.build_agent(Role::Discriminator, &self.discriminator_config(i), &format!("discriminators[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let generator = self.build_agent(Role::Generator, &self.generator, "generator")?;
        let population = Population::new(discriminators, generator).map_err(|e| invalid("n_agents", e))?;
        Ok(Experiment {
            world,
            population,
            params: self.round_params(exec),
            iterations: self.iterations,
            replications: self.replications,
            seed: self.seed,
        })
    }

    /// Whether exact enumeration can handle this batch size.
    pub fn enumerable(&self) -> bool {
        self.batch_size.div_ceil(2) <= ENUMERATION_LIMIT
    }

    /// SHA-256 of the canonical JSON of this config without its output
    /// directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn check_fidelity(field: &str, f: Option<f64>) -> Result<(), ConfigError> {
    match f {
        Some(x) if !(0.0..=1.0).contains(&x) => Err(invalid(field, format!("must lie in [0, 1], got {x}"))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        for text in ["", "{}", "  \n"] {
            let c = parse_config(text).unwrap();
            assert_eq!(c.n(), 3);
            assert_eq!(c.batch_size, 8);
            assert_eq!(c.iterations, 10);
            assert_eq!(c.schedule, Schedule::Constant { rate: 0.1 });
            let e = c.experiment(Exec::Sequential).unwrap();
            assert_eq!(e.world.n_agents(), 3);
            assert_eq!(e.world.confusion(1), &Channel::symmetric(0.7).unwrap());
        }
    }

    #[test]
    fn small_batch_rejected() {
        match parse_config(r#"{"batch_size": 3}"#) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "batch_size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_decay_exponent_rejected() {
        let text = r#"{"schedule": {"kind": "power_decay", "base_rate": 0.1, "exponent": 1.2}}"#;
        match parse_config(text) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "schedule"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"discriminators": [{}, {"schedule": {"kind": "power_decay", "base_rate": 0.1, "exponent": 0.4}}]}"#;
        match parse_config(text) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "discriminators[1].schedule"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(parse_config("{"), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config(r#"{"unknown_field": 1}"#), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn n_agents_consistency() {
        assert!(parse_config(r#"{"n_agents": 2, "world": {"accuracies": [0.8, 0.7]}}"#).is_ok());
        match parse_config(r#"{"n_agents": 4}"#) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "n_agents"),
            other => panic!("{other:?}"),
        }
        match parse_config(r#"{"world": {"accuracies": [0.8]}}"#) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "n_agents"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_and_overrides() {
        let c = parse_config(
            r#"{"discriminators": [{"schedule": {"kind": "doubling"}}, {"frozen": true, "initial_fidelity": 1.0}],
                "generator": {"frozen": true, "initial_fidelity": 1.0}}"#,
        )
        .unwrap();
        let e = c.experiment(Exec::Sequential).unwrap();
        let truthful = PolicyPoint::from_channel(&Channel::truthful());
        assert_eq!(e.population.discriminators[1].policy(), &truthful);
        assert!(e.population.discriminators[1].schedule().is_frozen());
        assert!(!e.population.discriminators[2].schedule().is_frozen());
        assert!(matches!(e.population.discriminators[0].schedule(), Schedule::Doubling { .. }));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = parse_config("{}").unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
