//! Sensors, transformers and time-slice alignment between the environment
//! and the world representation.

mod percept;
mod sensor;
mod slicing;
mod transform;

pub use percept::{
    count_split_pairs, EventReason, EventRecord, FlowKey, FlowRecord, HostState, Payload, Snapshot, TimestampedPercept,
};
pub use sensor::{Delivery, Poll, PullSource, Sensor, SensorConfig, SensorCounters, SensorKind, SensorMode};
pub use slicing::{SliceAligner, SlicingStrategy};
pub use transform::{
    aggregate_flows, chain, detect_events, AggregateFlows, ChainError, DetectEvents, TransformError, Transformer,
    TransformerConfig, TRANSFORM_SOURCE,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid slicing strategy `{0}`")]
    InvalidStrategy(String),
    #[error("unknown sensor kind `{0}`")]
    UnknownSensorKind(String),
    #[error("invalid sensor: {0}")]
    InvalidSensor(String),
}
