use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::percept::{EventReason, EventRecord, FlowKey, FlowRecord, Payload, Snapshot, TimestampedPercept};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{transformer}: {reason}")]
pub struct TransformError {
    pub transformer: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transformer chain failed at stage {stage}: {source}")]
pub struct ChainError {
    pub stage: usize,
    #[source]
    pub source: TransformError,
}

/// A pipeline stage that reduces or enriches the percepts of a snapshot.
pub trait Transformer: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn apply(&self, snapshot: Snapshot) -> Result<Snapshot, TransformError>;
}

/// Source tag of percepts produced by transformers.
pub const TRANSFORM_SOURCE: &str = "transform";

/// Packet-trace to flow aggregation over the message percepts of a snapshot.
pub fn aggregate_flows(snapshot: &Snapshot) -> Vec<FlowRecord> {
    let mut flows: BTreeMap<FlowKey, (u32, u64)> = BTreeMap::new();
    for p in &snapshot.percepts {
        let msg = match &p.payload {
            Payload::Request(r) => &r.msg,
            Payload::Response(r) => &r.msg,
            _ => continue,
        };
        let key = FlowKey { src_ip: msg.src_ip, dst_ip: msg.dst_ip, dst_service: msg.dst_service.clone() };
        let entry = flows.entry(key).or_default();
        entry.0 += 1;
        entry.1 += u64::from(msg.metadata.byte_count);
    }
    flows
        .into_iter()
        .map(|(key, (msg_count, total_bytes))| FlowRecord { key, msg_count, total_bytes, window: snapshot.window })
        .collect()
}

/// One event per flow whose message count strictly exceeds `threshold`.
pub fn detect_events(flows: &[FlowRecord], threshold: u32) -> Vec<EventRecord> {
    flows
        .iter()
        .filter(|f| f.msg_count > threshold)
        .map(|f| EventRecord { key: f.key.clone(), reason: EventReason::MessageCountAbove(threshold) })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AggregateFlows;

impl Transformer for AggregateFlows {
    fn name(&self) -> &str {
        "aggregate_flows"
    }

    fn apply(&self, mut snapshot: Snapshot) -> Result<Snapshot, TransformError> {
        let end = snapshot.window.1;
        let flows = aggregate_flows(&snapshot);
        snapshot
            .percepts
            .extend(flows.into_iter().map(|f| TimestampedPercept::new(end, TRANSFORM_SOURCE, Payload::Flow(f))));
        Ok(snapshot)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DetectEvents {
    pub threshold: u32,
}

impl Transformer for DetectEvents {
    fn name(&self) -> &str {
        "detect_events"
    }

    fn apply(&self, mut snapshot: Snapshot) -> Result<Snapshot, TransformError> {
        if self.threshold < 1 {
            return Err(TransformError { transformer: self.name().into(), reason: "threshold must be >= 1".into() });
        }
        let flows: Vec<FlowRecord> = snapshot
            .percepts
            .iter()
            .filter_map(|p| match &p.payload {
                Payload::Flow(f) => Some(f.clone()),
                _ => None,
            })
            .collect();
        let end = snapshot.window.1;
        snapshot.percepts.extend(
            detect_events(&flows, self.threshold)
                .into_iter()
                .map(|e| TimestampedPercept::new(end, TRANSFORM_SOURCE, Payload::Event(e))),
        );
        Ok(snapshot)
    }
}

/// Transformer entry of the scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformerConfig {
    AggregateFlows,
    DetectEvents { threshold: u32 },
}

impl TransformerConfig {
    pub fn build(&self) -> Box<dyn Transformer> {
        match *self {
            TransformerConfig::AggregateFlows => Box::new(AggregateFlows),
            TransformerConfig::DetectEvents { threshold } => Box::new(DetectEvents { threshold }),
        }
    }
}

/// Applies `transformers` left to right.
pub fn chain(transformers: &[Box<dyn Transformer>], snapshot: Snapshot) -> Result<Snapshot, ChainError> {
    transformers
        .iter()
        .enumerate()
        .try_fold(snapshot, |snap, (stage, t)| t.apply(snap).map_err(|source| ChainError { stage, source }))
}
