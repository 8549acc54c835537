//! Discrete-event, message-passing simulation of machines, services and
//! routers: the objective state the agent observes.

mod engine;
mod topology;
mod vulns;

pub use engine::{node_target, Engine, EngineError, EventQueue, Tick, TraceRecord, TracedMessage, DEFAULT_TTL};
pub use topology::{AttachedSubnet, Node, Router, ServiceInstance, Topology, TopologyError};
pub use vulns::{VulnEntry, VulnerabilityList};
