//! Scenario files: network, sensors, budget, trust setup and learner knobs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::budget::{BudgetEnvelope, BudgetError, PowerBudget};
use crate::message::{Action, Endpoint, NetAddress, ServiceRef};
use crate::pipeline::{SensorConfig, SensorKind, SlicingStrategy};
use crate::repr::{AgentProfile, ChainSpec, IndexedConfig, OperatingSubnet, ReprContext, RepresentationRegistry};
use crate::sim::{Node, Router, Topology, VulnEntry, VulnerabilityList};
use crate::trust::FaultConfig;

/// The reference scenario shipped with the crate.
pub const REFERENCE: &str = include_str!("../scenarios/reference.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub step_cap: u32,
    pub episodes: usize,
    pub goal_reward: f64,
    pub step_reward: f64,
    /// Upper bound on grounded actions offered per step.
    pub max_actions: usize,
    /// Steps without a new machine before the network tap is requested.
    pub tap_after: u32,
    /// Episodes of the shared replay trace used for codec metrics.
    pub eval_episodes: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            step_cap: 100,
            episodes: 500,
            goal_reward: 100.0,
            step_reward: -1.0,
            max_actions: 64,
            tap_after: 20,
            eval_episodes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineProbe {
    pub action: Action,
    pub target: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustConfig {
    /// Copies of each faulted sensor's stream that are voted on; 1 disables voting.
    pub replicas: usize,
    pub faults: Vec<FaultConfig>,
    pub baselines: Vec<BaselineProbe>,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig { replicas: 1, faults: Vec::new(), baselines: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub nodes: Vec<Node>,
    pub routers: Vec<Router>,
    /// Name of the node the agent runs on.
    pub agent_node: String,
    pub agent_service: ServiceRef,
    pub goal: Endpoint,
    #[serde(default)]
    pub vulnerabilities: Vec<VulnEntry>,
    #[serde(default = "one")]
    pub seed: u64,
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub slicing: SlicingStrategy,
    #[serde(default)]
    pub chains: BTreeMap<String, ChainSpec>,
    pub budget: BudgetEnvelope,
    #[serde(default)]
    pub trust: TrustConfig,
    pub operating_subnets: Vec<OperatingSubnet>,
    #[serde(default)]
    pub indexed: IndexedConfig,
    #[serde(default = "default_capacity")]
    pub machine_capacity: usize,
    #[serde(default)]
    pub learner: LearnerConfig,
}

fn one() -> u64 {
    1
}

fn default_capacity() -> usize {
    16
}

/// Everything wrong with a scenario, one line per problem.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, issue: impl Into<String>) {
        self.issues.push(issue.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("scenario is valid");
        }
        writeln!(f, "{} problem(s):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  - {i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

impl ScenarioError {
    /// Infeasible power envelopes are configuration problems of their own kind.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, ScenarioError::Budget(BudgetError::InfeasibleBudget(_)))
    }
}

/// A validated scenario with its derived runtime pieces.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub topology: Arc<Topology>,
    pub vulns: VulnerabilityList,
    pub profile: AgentProfile,
    pub budget: PowerBudget,
}

impl Loaded {
    pub fn context(&self) -> ReprContext {
        ReprContext {
            profile: self.profile.clone(),
            indexed: self.scenario.indexed,
            machine_capacity: self.scenario.machine_capacity,
            chains: self.scenario.chains.clone(),
        }
    }

    /// Ping targets for exploring the operating subnets, own addresses excluded.
    pub fn sweep(&self) -> Vec<NetAddress> {
        let own: BTreeSet<NetAddress> = self.profile.own_addresses.iter().copied().collect();
        self.profile
            .operating_subnets
            .iter()
            .flat_map(|s| (1..u128::from(s.max_hosts)).filter_map(|o| s.prefix.host(o)))
            .filter(|a| !own.contains(a))
            .collect()
    }

    /// Selectors of the six built-in configurations, chains last.
    pub fn default_selectors(&self) -> Vec<String> {
        let mut out: Vec<String> =
            ["verbatim", "static_elim", "indexed", "restructured", "history"].iter().map(|s| s.to_string()).collect();
        out.extend(self.scenario.chains.keys().map(|k| format!("chain:{k}")));
        out
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::from_json(&text)
    }

    pub fn reference() -> Self {
        Scenario::from_json(REFERENCE).expect("bundled scenario parses")
    }

    fn profile(&self) -> Option<AgentProfile> {
        let node = self.nodes.iter().find(|n| n.name == self.agent_node)?;
        Some(AgentProfile::new(node.addresses.clone(), self.agent_service.clone(), self.operating_subnets.clone()))
    }

    /// Checks everything except budget feasibility.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let agent = self.nodes.iter().position(|n| n.name == self.agent_node);
        match agent {
            None => report.push(format!("agent node {:?} not found", self.agent_node)),
            Some(i) => {
                if self.nodes[i].service(&self.agent_service).is_none() {
                    report.push(format!("agent node does not run {}", self.agent_service));
                }
                if let Err(e) = Topology::new(
                    self.nodes.clone(),
                    self.routers.clone(),
                    i,
                    self.agent_service.clone(),
                    self.goal.clone(),
                ) {
                    for issue in e.0 {
                        report.push(issue);
                    }
                }
            }
        }
        let goal_ok =
            self.nodes.iter().any(|n| n.addresses.contains(&self.goal.ip) && n.service(&self.goal.service).is_some());
        if !goal_ok {
            report.push(format!("goal {} is not a service in the network", self.goal));
        }

        let mut ids = BTreeSet::new();
        let mut ranks = BTreeSet::new();
        for s in &self.sensors {
            if !ids.insert(s.id.as_str()) {
                report.push(format!("sensor id {:?} used twice", s.id));
            }
            if !ranks.insert(s.importance) {
                report.push(format!("importance rank {} used twice", s.importance));
            }
            if let Err(e) = s.kind() {
                report.push(format!("sensor {}: {e}", s.id));
            }
            if s.interval == 0 {
                report.push(format!("sensor {}: interval must be >= 1", s.id));
            }
            if !(s.power_cost >= 0.0 && s.power_cost.is_finite()) {
                report.push(format!("sensor {}: power_cost must be a finite number >= 0", s.id));
            }
        }
        if !self.sensors.iter().any(|s| s.kind().ok() == Some(SensorKind::ResponseSensor)) {
            report.push("no response sensor configured");
        }
        if let Err(e) = self.slicing.validate() {
            report.push(e.to_string());
        }
        if let Err(e) = self.budget.validate() {
            report.push(e.to_string());
        }

        let t = &self.trust;
        if t.replicas == 0 || (t.replicas > 1 && (t.replicas < 3 || t.replicas.is_multiple_of(2))) {
            report.push(format!("trust.replicas must be 1 or an odd number >= 3, got {}", t.replicas));
        }
        for f in &t.faults {
            if let Err(e) = f.validate() {
                report.push(format!("fault on {}: {e}", f.sensor));
            }
            if !ids.contains(f.sensor.as_str()) {
                report.push(format!("fault names unknown sensor {:?}", f.sensor));
            }
            if let Some(r) = f.replica {
                if r >= t.replicas {
                    report.push(format!("fault replica {r} out of range"));
                }
            }
        }

        match self.profile() {
            Some(p) => {
                if let Err(e) = p.validate() {
                    report.push(e.to_string());
                }
            }
            None => report.push("cannot derive the agent profile"),
        }
        if self.machine_capacity == 0 {
            report.push("machine_capacity must be >= 1");
        }
        let registry = RepresentationRegistry::with_builtins();
        let names: Vec<&str> = registry.names().collect();
        for (name, chain) in &self.chains {
            let base = chain.base.split(':').next().unwrap_or_default();
            if base == "chain" || !names.contains(&base) {
                report.push(format!("chain {name}: base {:?} is not a plain representation", chain.base));
            }
        }

        let l = &self.learner;
        if !(l.alpha > 0.0 && l.alpha <= 1.0) {
            report.push("learner.alpha must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&l.gamma) {
            report.push("learner.gamma must be in [0, 1)");
        }
        for (n, e) in [("epsilon_start", l.epsilon_start), ("epsilon_end", l.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                report.push(format!("learner.{n} must be in [0, 1]"));
            }
        }
        if l.step_cap == 0 || l.episodes == 0 || l.max_actions == 0 {
            report.push("learner.step_cap, episodes and max_actions must be >= 1");
        }
        report
    }

    /// Validates and builds the runtime pieces.
    pub fn load(self) -> Result<Loaded, ScenarioError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(ScenarioError::Invalid(report));
        }
        let agent = self.nodes.iter().position(|n| n.name == self.agent_node).expect("validated");
        let topology = Topology::new(
            self.nodes.clone(),
            self.routers.clone(),
            agent,
            self.agent_service.clone(),
            self.goal.clone(),
        )
        .map_err(|e| ScenarioError::Invalid(ValidationReport { issues: e.0 }))?;
        let budget = PowerBudget::plan(&self.sensors, self.budget)?;
        let profile = self.profile().expect("validated");
        let vulns: VulnerabilityList = self.vulnerabilities.to_vec().into();
        Ok(Loaded { topology: Arc::new(topology), vulns, profile, budget, scenario: self })
    }
}
