//! Internal state representations and the registry that selects them by name.

mod history;
mod indexed;
mod intern;
mod static_elim;
mod strategies;
mod vector;
mod verbatim;
mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::message::{NetAddress, ServiceRef, Session};
use crate::pipeline::{ChainError, Snapshot, TransformerConfig};

pub use history::{time_bucket, ServiceHistory, ServiceHistoryRecord, ATTEMPT_CAP, TIME_BUCKETS};
pub use indexed::{IndexedCodec, IndexedConfig, SideChannel, SlotRef};
pub use intern::{IndexRegistry, IndexWidths, Interned, Interner};
pub use static_elim::{AgentProfile, OperatingSubnet, StaticElim, DROPPABLE, HOST_OFFSET_BITS, SUBNET_INDEX_BITS};
pub use strategies::{
    ChainRepresentation, CodecRepresentation, HistoryRepresentation, IndexedScheme, ResponseCodec,
    RestructuredRepresentation, StaticScheme, VerbatimScheme,
};
pub use vector::{distinct, log2_bucket, StateVector};
pub use verbatim::{decode_verbatim, encode_verbatim};
pub use world::{MachineRecord, RestructuredWorld};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReprError {
    #[error("response is not canonical")]
    NonCanonical,
    #[error("vector has {actual} bits, layout needs {expected}")]
    Length { expected: usize, actual: usize },
    #[error("cannot decode field {0}")]
    Decode(String),
    #[error("value does not fit field {0}")]
    FieldOverflow(String),
    #[error("layout names unknown field {0}")]
    UnknownLayoutField(String),
    #[error("{0} is outside the operating subnets")]
    OutOfProfile(NetAddress),
    #[error("field {0} differs from the agent profile")]
    ProfileViolation(String),
    #[error("invalid agent profile: {0}")]
    Profile(String),
    #[error("index {index} is stale")]
    StaleIndex { index: u32, generation: Option<u64> },
    #[error("unknown representation {0:?}")]
    UnknownSelector(String),
    #[error("unknown chain {0:?}")]
    UnknownChain(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// A machine the agent can address, as seen through a representation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundMachine {
    pub ip: NetAddress,
    pub services: Vec<ServiceRef>,
    pub sessions: Vec<Session>,
}

/// Concrete entities an abstract state refers to, for building actions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Grounding {
    /// Most recently touched first.
    pub machines: Vec<GroundMachine>,
    pub stale_index_events: u64,
}

impl Grounding {
    pub(crate) fn from_world(world: &RestructuredWorld, stale_index_events: u64) -> Self {
        Grounding {
            machines: world
                .by_recency()
                .map(|(ip, rec)| GroundMachine {
                    ip,
                    services: rec.services.iter().cloned().collect(),
                    sessions: rec.sessions.iter().cloned().collect(),
                })
                .collect(),
            stale_index_events,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReprStats {
    pub encoded: u64,
    pub distinct_states: usize,
    pub stale_index_events: u64,
    pub evictions: u64,
    /// Percepts a compact codec could not take and encoded verbatim instead.
    pub fallbacks: u64,
}

/// Inspectable form of the current state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationDump {
    pub representation: String,
    pub layout_id: String,
    pub width_bits: Option<u32>,
    pub state_key: String,
    pub fields: serde_json::Value,
    pub side_channel: serde_json::Value,
}

/// Maintains the agent's internal state from a stream of snapshots.
pub trait Representation: Send {
    fn name(&self) -> &str;
    fn observe(&mut self, snapshot: &Snapshot) -> Result<(), ReprError>;
    /// Hash of the current state, used as the learner's table key.
    fn state_key(&self) -> u64;
    /// Fixed vector width, for vector-based representations.
    fn width_bits(&self) -> Option<u32>;
    fn grounding(&mut self) -> Grounding;
    fn stats(&self) -> ReprStats;
    fn dump(&self) -> RepresentationDump;
    /// Forgets everything learned, e.g. between episodes.
    fn reset(&mut self);
}

/// A named transformer chain in front of a base representation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub base: String,
    pub transformers: Vec<TransformerConfig>,
}

/// Everything a factory may need to build a representation.
#[derive(Debug, Clone)]
pub struct ReprContext {
    pub profile: AgentProfile,
    pub indexed: IndexedConfig,
    pub machine_capacity: usize,
    pub chains: BTreeMap<String, ChainSpec>,
}

type Factory = Box<dyn Fn(&ReprContext, Option<&str>) -> Result<Box<dyn Representation>, ReprError> + Send + Sync>;

/// Representations registered by name. A selector is `name` or `name:arg`.
pub struct RepresentationRegistry {
    factories: BTreeMap<String, Factory>,
}

impl RepresentationRegistry {
    pub fn empty() -> Self {
        RepresentationRegistry { factories: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = RepresentationRegistry::empty();
        r.register("verbatim", |_, _| Ok(Box::new(CodecRepresentation::new(VerbatimScheme))));
        r.register("static_elim", |ctx, _| {
            Ok(Box::new(CodecRepresentation::new(StaticScheme::new(StaticElim::new(ctx.profile.clone())?))))
        });
        r.register("indexed", |ctx, _| Ok(Box::new(CodecRepresentation::new(IndexedScheme::new(ctx.indexed)))));
        r.register("restructured", |ctx, _| Ok(Box::new(RestructuredRepresentation::new(ctx.machine_capacity))));
        r.register("history", |ctx, _| Ok(Box::new(HistoryRepresentation::new(ctx.machine_capacity))));
        r.register("chain", |ctx, arg| {
            let name = arg.ok_or_else(|| ReprError::UnknownSelector("chain".into()))?;
            let spec = ctx.chains.get(name).ok_or_else(|| ReprError::UnknownChain(name.into()))?;
            if spec.base.starts_with("chain") {
                return Err(ReprError::UnknownSelector(spec.base.clone()));
            }
            let inner = RepresentationRegistry::with_builtins().create(&spec.base, ctx)?;
            let stages = spec.transformers.iter().map(TransformerConfig::build).collect();
            Ok(Box::new(ChainRepresentation::new(name, stages, inner)))
        });
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        factory: impl Fn(&ReprContext, Option<&str>) -> Result<Box<dyn Representation>, ReprError> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, selector: &str, ctx: &ReprContext) -> Result<Box<dyn Representation>, ReprError> {
        let (name, arg) = match selector.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (selector, None),
        };
        let factory = self.factories.get(name).ok_or_else(|| ReprError::UnknownSelector(selector.into()))?;
        factory(ctx, arg)
    }
}

impl Default for RepresentationRegistry {
    fn default() -> Self {
        RepresentationRegistry::with_builtins()
    }
}
