use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::message::{NetAddress, Request, Response, ServiceRef};
use crate::sim::{ServiceInstance, Tick, TracedMessage, VulnEntry};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: NetAddress,
    pub dst_ip: NetAddress,
    pub dst_service: ServiceRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub msg_count: u32,
    pub total_bytes: u64,
    pub window: (Tick, Tick),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "code", content = "threshold")]
pub enum EventReason {
    MessageCountAbove(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub key: FlowKey,
    pub reason: EventReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostState {
    pub address: NetAddress,
    pub services: Vec<ServiceInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "data")]
pub enum Payload {
    Response(Response),
    Request(Request),
    Flow(FlowRecord),
    Event(EventRecord),
    Vuln(VulnEntry),
    Host(HostState),
}

impl Payload {
    pub fn message_id(&self) -> Option<u32> {
        match self {
            Payload::Response(r) => Some(r.msg.id),
            Payload::Request(r) => Some(r.msg.id),
            _ => None,
        }
    }
}

impl From<TracedMessage> for Payload {
    fn from(m: TracedMessage) -> Self {
        match m {
            TracedMessage::Request(r) => Payload::Request(r),
            TracedMessage::Response(r) => Payload::Response(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampedPercept {
    pub tick: Tick,
    pub source: String,
    pub payload: Payload,
}

impl TimestampedPercept {
    pub fn new(tick: Tick, source: impl Into<String>, payload: Payload) -> Self {
        TimestampedPercept { tick, source: source.into(), payload }
    }
}

/// Percepts bundled for one perception window `(start, end]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub slice_index: u64,
    pub window: (Tick, Tick),
    /// Length of the sampling window that produced this snapshot.
    pub window_len: u64,
    pub percepts: Vec<TimestampedPercept>,
    /// Per request id: whether its response is inside this snapshot.
    pub completeness: BTreeMap<u32, bool>,
}

impl Snapshot {
    pub fn new(slice_index: u64, window: (Tick, Tick), window_len: u64, mut percepts: Vec<TimestampedPercept>) -> Self {
        sort_percepts(&mut percepts);
        let completeness = completeness_of(&percepts);
        Snapshot { slice_index, window, window_len, percepts, completeness }
    }

    pub fn responses(&self) -> impl Iterator<Item = &Response> {
        self.percepts.iter().filter_map(|p| match &p.payload {
            Payload::Response(r) => Some(r),
            _ => None,
        })
    }

    pub fn requests(&self) -> impl Iterator<Item = &Request> {
        self.percepts.iter().filter_map(|p| match &p.payload {
            Payload::Request(r) => Some(r),
            _ => None,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.completeness.values().all(|&c| c)
    }
}

/// Stable ordering: tick, then source; equal keys keep arrival order.
pub(crate) fn sort_percepts(percepts: &mut [TimestampedPercept]) {
    percepts.sort_by(|a, b| (a.tick, &a.source).cmp(&(b.tick, &b.source)));
}

fn completeness_of(percepts: &[TimestampedPercept]) -> BTreeMap<u32, bool> {
    let mut map = BTreeMap::new();
    for p in percepts {
        if let Payload::Request(r) = &p.payload {
            map.entry(r.msg.id).or_insert(false);
        }
    }
    for p in percepts {
        if let Payload::Response(r) = &p.payload {
            if let Some(c) = map.get_mut(&r.msg.id) {
                *c = true;
            }
        }
    }
    map
}

/// Number of request ids whose request and response landed in different
/// snapshots of `snapshots`.
pub fn count_split_pairs<'a>(snapshots: impl IntoIterator<Item = &'a Snapshot>) -> usize {
    let mut req_at: BTreeMap<u32, usize> = BTreeMap::new();
    let mut resp_at: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, s) in snapshots.into_iter().enumerate() {
        for p in &s.percepts {
            match &p.payload {
                Payload::Request(r) => {
                    req_at.entry(r.msg.id).or_insert(i);
                }
                Payload::Response(r) => {
                    resp_at.entry(r.msg.id).or_insert(i);
                }
                _ => {}
            }
        }
    }
    req_at.iter().filter(|(id, at)| resp_at.get(id).is_some_and(|r| r != *at)).count()
}
