use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::percept::{HostState, Payload, TimestampedPercept};
use super::PipelineError;
use crate::sim::{Engine, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    Pull,
    Push,
}

/// What a sensor observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    /// Responses delivered to the agent.
    ResponseSensor,
    /// The agent's own outgoing requests.
    RequestSensor,
    /// Local host state of the agent node.
    HostProbe,
    /// Periodic download of the vulnerability list.
    VulnFeed,
    /// Mirror of traffic seen at the agent's uplink.
    NetworkTap,
}

impl SensorKind {
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::ResponseSensor => "response_sensor",
            SensorKind::RequestSensor => "request_sensor",
            SensorKind::HostProbe => "host_probe",
            SensorKind::VulnFeed => "vuln_feed",
            SensorKind::NetworkTap => "network_tap",
        }
    }

    /// Whether readings are produced by querying the environment.
    pub fn is_sampling(self) -> bool {
        matches!(self, SensorKind::HostProbe | SensorKind::VulnFeed)
    }
}

impl FromStr for SensorKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "response_sensor" => SensorKind::ResponseSensor,
            "request_sensor" => SensorKind::RequestSensor,
            "host_probe" => SensorKind::HostProbe,
            "vuln_feed" => SensorKind::VulnFeed,
            "network_tap" => SensorKind::NetworkTap,
            other => return Err(PipelineError::UnknownSensorKind(other.to_string())),
        })
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sensor section of the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub id: String,
    /// Defaults to the kind named by `id`.
    #[serde(default)]
    pub kind: Option<SensorKind>,
    pub mode: SensorMode,
    #[serde(default = "one")]
    pub interval: u64,
    /// Polling phase: a pull sensor is due when `tick % interval == offset % interval`.
    #[serde(default)]
    pub offset: u64,
    pub bandwidth_per_slice: u32,
    pub power_cost: f64,
    pub importance: u32,
    /// Sensors outside the base set are only ever activated on demand.
    #[serde(default = "yes")]
    pub base: bool,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

impl SensorConfig {
    pub fn kind(&self) -> Result<SensorKind, PipelineError> {
        match self.kind {
            Some(k) => Ok(k),
            None => self.id.parse(),
        }
    }
}

/// Read access to the environment for pull-mode sensors.
pub trait PullSource {
    fn sample(&self, kind: SensorKind) -> Vec<Payload>;
}

impl PullSource for Engine {
    fn sample(&self, kind: SensorKind) -> Vec<Payload> {
        match kind {
            SensorKind::HostProbe => {
                let node = self.topology().agent_node();
                vec![Payload::Host(HostState { address: node.primary_address(), services: node.services.clone() })]
            }
            SensorKind::VulnFeed => self.vulnerabilities().iter().cloned().map(Payload::Vuln).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Buffered,
    DroppedBandwidth,
    DroppedDisabled,
    /// Arrived between duty cycles of a stretched push sensor.
    DroppedInterval,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poll {
    pub percepts: Vec<TimestampedPercept>,
    pub disabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SensorCounters {
    pub accepted: u64,
    pub dropped: u64,
    pub disabled_drops: u64,
    pub interval_drops: u64,
}

/// Runtime state of one logical sensor.
#[derive(Debug, Clone)]
pub struct Sensor {
    id: String,
    kind: SensorKind,
    mode: SensorMode,
    interval: u64,
    offset: u64,
    bandwidth_per_slice: u32,
    enabled: bool,
    slice_accepted: u32,
    buffer: Vec<TimestampedPercept>,
    counters: SensorCounters,
}

impl Sensor {
    pub fn from_config(config: &SensorConfig) -> Result<Self, PipelineError> {
        if config.interval == 0 {
            return Err(PipelineError::InvalidSensor(format!("{}: interval must be >= 1", config.id)));
        }
        Ok(Sensor {
            id: config.id.clone(),
            kind: config.kind()?,
            mode: config.mode,
            interval: config.interval,
            offset: config.offset,
            bandwidth_per_slice: config.bandwidth_per_slice,
            enabled: true,
            slice_accepted: 0,
            buffer: Vec::new(),
            counters: SensorCounters::default(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn mode(&self) -> SensorMode {
        self.mode
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn counters(&self) -> SensorCounters {
        self.counters
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn set_mode(&mut self, mode: SensorMode) {
        self.mode = mode;
    }

    pub fn set_interval(&mut self, interval: u64) {
        self.interval = interval.max(1);
    }

    pub fn is_due(&self, tick: Tick) -> bool {
        tick % self.interval == self.offset % self.interval
    }

    /// Starts a new slice for bandwidth accounting.
    pub fn begin_slice(&mut self) {
        self.slice_accepted = 0;
    }

    fn admit(&mut self) -> bool {
        if self.slice_accepted >= self.bandwidth_per_slice {
            self.counters.dropped += 1;
            return false;
        }
        self.slice_accepted += 1;
        self.counters.accepted += 1;
        true
    }

    /// Active read. Returns nothing unless the sensor is in pull mode and due.
    pub fn poll(&mut self, source: &dyn PullSource, tick: Tick) -> Poll {
        if !self.enabled {
            return Poll { percepts: Vec::new(), disabled: true };
        }
        if self.mode != SensorMode::Pull || !self.is_due(tick) {
            return Poll::default();
        }
        let readings = source.sample(self.kind);
        let mut percepts = Vec::with_capacity(readings.len());
        for payload in readings {
            if self.admit() {
                percepts.push(TimestampedPercept::new(tick, self.id.clone(), payload));
            }
        }
        Poll { percepts, disabled: false }
    }

    /// Passive receipt of a stimulus pushed by the environment.
    pub fn deliver(&mut self, percept: TimestampedPercept) -> Delivery {
        if !self.enabled {
            self.counters.disabled_drops += 1;
            return Delivery::DroppedDisabled;
        }
        if !self.is_due(percept.tick) {
            self.counters.interval_drops += 1;
            return Delivery::DroppedInterval;
        }
        if !self.admit() {
            return Delivery::DroppedBandwidth;
        }
        self.buffer.push(percept);
        Delivery::Buffered
    }

    pub fn drain(&mut self) -> Vec<TimestampedPercept> {
        std::mem::take(&mut self.buffer)
    }
}
