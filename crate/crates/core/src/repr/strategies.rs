use std::collections::{BTreeSet, HashSet};

use serde_json::json;

use super::indexed::{IndexedCodec, IndexedConfig, SideChannel};
use super::static_elim::StaticElim;
use super::vector::StateVector;
use super::verbatim::{decode_verbatim, encode_verbatim};
use super::world::RestructuredWorld;
use super::{Grounding, ReprError, ReprStats, Representation, RepresentationDump};
use crate::digest::{fnv1a64, Fnv1a};
use crate::message::{default_layout, Response};
use crate::pipeline::{chain, FlowKey, Payload, Snapshot, Transformer};

/// One encoded percept plus whatever is needed to read it back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub vector: StateVector,
    pub side: Option<SideChannel>,
    pub fallback: bool,
}

/// A percept-level codec usable by [`CodecRepresentation`].
pub trait ResponseCodec: Send {
    fn name(&self) -> &str;
    fn layout_id(&self) -> String;
    fn width_bits(&self) -> u32;
    fn encode(&mut self, r: &Response) -> Result<Encoded, ReprError>;
    fn reconstruct(&self, vector: &StateVector, side: Option<&SideChannel>) -> Result<Response, ReprError>;
    fn evictions(&self) -> u64 {
        0
    }
    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerbatimScheme;

impl ResponseCodec for VerbatimScheme {
    fn name(&self) -> &str {
        "verbatim"
    }

    fn layout_id(&self) -> String {
        default_layout().id().to_string()
    }

    fn width_bits(&self) -> u32 {
        default_layout().total_width()
    }

    fn encode(&mut self, r: &Response) -> Result<Encoded, ReprError> {
        Ok(Encoded { vector: encode_verbatim(r)?, side: None, fallback: false })
    }

    fn reconstruct(&self, vector: &StateVector, _: Option<&SideChannel>) -> Result<Response, ReprError> {
        decode_verbatim(vector)
    }
}

/// Static elimination, falling back to verbatim outside the operating subnets.
#[derive(Debug, Clone)]
pub struct StaticScheme {
    codec: StaticElim,
}

impl StaticScheme {
    pub fn new(codec: StaticElim) -> Self {
        StaticScheme { codec }
    }
}

impl ResponseCodec for StaticScheme {
    fn name(&self) -> &str {
        "static_elim"
    }

    fn layout_id(&self) -> String {
        self.codec.layout().id().to_string()
    }

    fn width_bits(&self) -> u32 {
        self.codec.layout().total_width()
    }

    fn encode(&mut self, r: &Response) -> Result<Encoded, ReprError> {
        match self.codec.encode(r) {
            Ok(vector) => Ok(Encoded { vector, side: None, fallback: false }),
            Err(ReprError::OutOfProfile(_)) => Ok(Encoded { vector: encode_verbatim(r)?, side: None, fallback: true }),
            Err(e) => Err(e),
        }
    }

    fn reconstruct(&self, vector: &StateVector, _: Option<&SideChannel>) -> Result<Response, ReprError> {
        if vector.layout_id == self.codec.layout().id() {
            self.codec.reconstruct(vector)
        } else {
            decode_verbatim(vector)
        }
    }
}

#[derive(Debug, Clone)]
pub struct IndexedScheme {
    codec: IndexedCodec,
}

impl IndexedScheme {
    pub fn new(config: IndexedConfig) -> Self {
        IndexedScheme { codec: IndexedCodec::new(config) }
    }
}

impl ResponseCodec for IndexedScheme {
    fn name(&self) -> &str {
        "indexed"
    }

    fn layout_id(&self) -> String {
        self.codec.layout().id().to_string()
    }

    fn width_bits(&self) -> u32 {
        self.codec.layout().total_width()
    }

    fn encode(&mut self, r: &Response) -> Result<Encoded, ReprError> {
        let (vector, side) = self.codec.encode(r)?;
        Ok(Encoded { vector, side: Some(side), fallback: false })
    }

    fn reconstruct(&self, vector: &StateVector, side: Option<&SideChannel>) -> Result<Response, ReprError> {
        let side = side.ok_or_else(|| ReprError::Decode("side_channel".into()))?;
        self.codec.reconstruct(vector, side)
    }

    fn evictions(&self) -> u64 {
        self.codec.registry().evictions()
    }

    fn reset(&mut self) {
        self.codec.reset();
    }
}

/// Vector representation: the state is the encoding of the latest responses.
/// Grounding reads the vectors back and folds them into a world model.
pub struct CodecRepresentation<C> {
    codec: C,
    emitted: Vec<Encoded>,
    current: Vec<usize>,
    seen: HashSet<u32>,
    distinct: HashSet<StateVector>,
    world: RestructuredWorld,
    world_evictions: u64,
    stale: BTreeSet<usize>,
    fallbacks: u64,
}

impl<C: ResponseCodec> CodecRepresentation<C> {
    pub fn new(codec: C) -> Self {
        CodecRepresentation {
            codec,
            emitted: Vec::new(),
            current: Vec::new(),
            seen: HashSet::new(),
            distinct: HashSet::new(),
            world: RestructuredWorld::new(usize::MAX),
            world_evictions: 0,
            stale: BTreeSet::new(),
            fallbacks: 0,
        }
    }

    pub fn codec(&self) -> &C {
        &self.codec
    }

    /// Every vector emitted since the last reset, in order.
    pub fn emitted(&self) -> &[Encoded] {
        &self.emitted
    }

    fn rebuild_world(&mut self) {
        self.world.clear();
        self.stale.clear();
        for (i, e) in self.emitted.iter().enumerate() {
            match self.codec.reconstruct(&e.vector, e.side.as_ref()) {
                Ok(r) => self.world.apply(&r),
                Err(_) => {
                    self.stale.insert(i);
                }
            }
        }
        self.world_evictions = self.codec.evictions();
    }
}

impl<C: ResponseCodec> Representation for CodecRepresentation<C> {
    fn name(&self) -> &str {
        self.codec.name()
    }

    fn observe(&mut self, snapshot: &Snapshot) -> Result<(), ReprError> {
        let mut batch = Vec::new();
        for r in snapshot.responses() {
            if !self.seen.insert(r.msg.id) {
                continue;
            }
            let e = self.codec.encode(r)?;
            self.fallbacks += u64::from(e.fallback);
            self.distinct.insert(e.vector.clone());
            if self.codec.evictions() == self.world_evictions {
                if let Ok(back) = self.codec.reconstruct(&e.vector, e.side.as_ref()) {
                    self.world.apply(&back);
                }
            }
            batch.push(self.emitted.len());
            self.emitted.push(e);
        }
        if !batch.is_empty() {
            self.current = batch;
        }
        Ok(())
    }

    fn state_key(&self) -> u64 {
        let mut h = Fnv1a::new();
        for &i in &self.current {
            let v = &self.emitted[i].vector;
            h.write(v.layout_id.as_bytes());
            h.write(v.bits.as_bytes());
        }
        h.finish()
    }

    fn width_bits(&self) -> Option<u32> {
        Some(self.codec.width_bits())
    }

    fn grounding(&mut self) -> Grounding {
        if self.codec.evictions() != self.world_evictions {
            self.rebuild_world();
        }
        Grounding::from_world(&self.world, self.stale.len() as u64)
    }

    fn stats(&self) -> ReprStats {
        ReprStats {
            encoded: self.emitted.len() as u64,
            distinct_states: self.distinct.len(),
            stale_index_events: self.stale.len() as u64,
            evictions: self.codec.evictions(),
            fallbacks: self.fallbacks,
        }
    }

    fn dump(&self) -> RepresentationDump {
        let fields: Vec<_> = self
            .current
            .iter()
            .map(|&i| {
                let e = &self.emitted[i];
                let decoded = match self.codec.reconstruct(&e.vector, e.side.as_ref()) {
                    Ok(r) => serde_json::to_value(r).unwrap_or_default(),
                    Err(err) => json!({ "error": err.to_string() }),
                };
                json!({ "layout_id": e.vector.layout_id, "bits": e.vector.bits.to_hex(), "decoded": decoded })
            })
            .collect();
        let side: Vec<_> =
            self.current.iter().map(|&i| serde_json::to_value(&self.emitted[i].side).unwrap_or_default()).collect();
        RepresentationDump {
            representation: self.codec.name().to_string(),
            layout_id: self.codec.layout_id(),
            width_bits: Some(self.codec.width_bits()),
            state_key: format!("{:016x}", self.state_key()),
            fields: fields.into(),
            side_channel: side.into(),
        }
    }

    fn reset(&mut self) {
        self.codec.reset();
        self.emitted.clear();
        self.current.clear();
        self.seen.clear();
        self.distinct.clear();
        self.world.clear();
        self.world_evictions = self.codec.evictions();
        self.stale.clear();
        self.fallbacks = 0;
    }
}

fn world_fields(world: &RestructuredWorld) -> serde_json::Value {
    world
        .by_recency()
        .map(|(ip, rec)| json!({ "ip": ip, "services": rec.services, "sessions": rec.sessions }))
        .collect::<Vec<_>>()
        .into()
}

/// Machine-keyed world model with bounded memory.
pub struct RestructuredRepresentation {
    world: RestructuredWorld,
    keys: BTreeSet<u64>,
    encoded: u64,
}

impl RestructuredRepresentation {
    pub fn new(capacity: usize) -> Self {
        RestructuredRepresentation { world: RestructuredWorld::new(capacity), keys: BTreeSet::new(), encoded: 0 }
    }

    pub fn world(&self) -> &RestructuredWorld {
        &self.world
    }
}

impl Representation for RestructuredRepresentation {
    fn name(&self) -> &str {
        "restructured"
    }

    fn observe(&mut self, snapshot: &Snapshot) -> Result<(), ReprError> {
        for r in snapshot.responses() {
            self.world.apply(r);
            self.encoded += 1;
        }
        self.keys.insert(self.state_key());
        Ok(())
    }

    fn state_key(&self) -> u64 {
        fnv1a64(&self.world.canonical_bytes())
    }

    fn width_bits(&self) -> Option<u32> {
        None
    }

    fn grounding(&mut self) -> Grounding {
        Grounding::from_world(&self.world, 0)
    }

    fn stats(&self) -> ReprStats {
        ReprStats {
            encoded: self.encoded,
            distinct_states: self.keys.len(),
            evictions: self.world.forgotten(),
            ..ReprStats::default()
        }
    }

    fn dump(&self) -> RepresentationDump {
        RepresentationDump {
            representation: self.name().to_string(),
            layout_id: "world".into(),
            width_bits: None,
            state_key: format!("{:016x}", self.state_key()),
            fields: world_fields(&self.world),
            side_channel: serde_json::Value::Null,
        }
    }

    fn reset(&mut self) {
        self.world.clear();
        self.keys.clear();
        self.encoded = 0;
    }
}

/// World model plus per-service exploitation history.
pub struct HistoryRepresentation {
    world: RestructuredWorld,
    history: super::ServiceHistory,
    keys: BTreeSet<u64>,
    encoded: u64,
}

impl HistoryRepresentation {
    pub fn new(capacity: usize) -> Self {
        HistoryRepresentation {
            world: RestructuredWorld::new(capacity),
            history: super::ServiceHistory::new(),
            keys: BTreeSet::new(),
            encoded: 0,
        }
    }

    pub fn history(&self) -> &super::ServiceHistory {
        &self.history
    }

    pub fn world(&self) -> &RestructuredWorld {
        &self.world
    }
}

impl Representation for HistoryRepresentation {
    fn name(&self) -> &str {
        "history"
    }

    fn observe(&mut self, snapshot: &Snapshot) -> Result<(), ReprError> {
        let mut feed = Vec::new();
        for p in &snapshot.percepts {
            match &p.payload {
                Payload::Request(r) => self.history.observe_request(r, p.tick),
                Payload::Response(r) => {
                    self.world.apply(r);
                    self.history.observe_response(r, p.tick);
                    self.encoded += 1;
                }
                Payload::Vuln(v) => feed.push(v.clone()),
                _ => {}
            }
        }
        if !feed.is_empty() {
            self.history.learn_vulnerabilities(&feed);
        }
        self.history.advance(snapshot.window.1);
        self.keys.insert(self.state_key());
        Ok(())
    }

    fn state_key(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(&self.world.canonical_bytes());
        h.write(&self.history.canonical_bytes());
        h.finish()
    }

    fn width_bits(&self) -> Option<u32> {
        None
    }

    fn grounding(&mut self) -> Grounding {
        Grounding::from_world(&self.world, 0)
    }

    fn stats(&self) -> ReprStats {
        ReprStats {
            encoded: self.encoded,
            distinct_states: self.keys.len(),
            evictions: self.world.forgotten(),
            ..ReprStats::default()
        }
    }

    fn dump(&self) -> RepresentationDump {
        let now = self.history.now();
        let services: Vec<_> = self
            .history
            .records()
            .map(|r| {
                json!({
                    "ip": r.ip,
                    "name": r.name,
                    "version": r.version,
                    "vulnerable": r.vulnerable,
                    "exploitation_attempts": r.exploitation_attempts,
                    "time_since_last_attempt": r.time_since_last_attempt(now),
                })
            })
            .collect();
        RepresentationDump {
            representation: self.name().to_string(),
            layout_id: "world+history".into(),
            width_bits: None,
            state_key: format!("{:016x}", self.state_key()),
            fields: json!({ "machines": world_fields(&self.world), "services": services, "now": now }),
            side_channel: serde_json::Value::Null,
        }
    }

    fn reset(&mut self) {
        self.world.clear();
        self.history.clear();
        self.keys.clear();
        self.encoded = 0;
    }
}

/// Runs a transformer chain on each snapshot before the inner representation,
/// and folds the detected event keys into the state.
pub struct ChainRepresentation {
    name: String,
    stages: Vec<Box<dyn Transformer>>,
    inner: Box<dyn Representation>,
    events: BTreeSet<FlowKey>,
}

impl ChainRepresentation {
    pub fn new(name: &str, stages: Vec<Box<dyn Transformer>>, inner: Box<dyn Representation>) -> Self {
        ChainRepresentation { name: format!("chain:{name}"), stages, inner, events: BTreeSet::new() }
    }
}

impl Representation for ChainRepresentation {
    fn name(&self) -> &str {
        &self.name
    }

    fn observe(&mut self, snapshot: &Snapshot) -> Result<(), ReprError> {
        let out = chain(&self.stages, snapshot.clone())?;
        self.events = out
            .percepts
            .iter()
            .filter_map(|p| match &p.payload {
                Payload::Event(e) => Some(e.key.clone()),
                _ => None,
            })
            .collect();
        self.inner.observe(&out)
    }

    fn state_key(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(&self.inner.state_key().to_be_bytes());
        for k in &self.events {
            h.write(&k.src_ip.bits().to_be_bytes());
            h.write(&k.dst_ip.bits().to_be_bytes());
            h.write(k.dst_service.as_str().as_bytes());
            h.write(&[0]);
        }
        h.finish()
    }

    fn width_bits(&self) -> Option<u32> {
        self.inner.width_bits()
    }

    fn grounding(&mut self) -> Grounding {
        self.inner.grounding()
    }

    fn stats(&self) -> ReprStats {
        self.inner.stats()
    }

    fn dump(&self) -> RepresentationDump {
        let mut d = self.inner.dump();
        d.representation = self.name.clone();
        d.state_key = format!("{:016x}", self.state_key());
        d.fields = json!({ "inner": d.fields, "events": self.events });
        d
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.events.clear();
    }
}
