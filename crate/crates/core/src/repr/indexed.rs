use serde::{Deserialize, Serialize};

use super::intern::{IndexRegistry, IndexWidths};
use super::vector::{log2_bucket, FieldReader, FieldWriter, StateVector};
use super::ReprError;
use crate::message::{
    BitLayout, Endpoint, MessageKind, Metadata, NetAddress, Response, ServiceRef, Session, Status, LAYOUT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexedConfig {
    #[serde(flatten)]
    pub widths: IndexWidths,
    /// Replace ttl and metadata by 4-bit logarithmic buckets.
    pub quantize: bool,
}

impl Default for IndexedConfig {
    fn default() -> Self {
        IndexedConfig { widths: IndexWidths::default(), quantize: true }
    }
}

/// A registry reference captured at encoding time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub index: u32,
    pub generation: u64,
}

/// Supplementary data for one indexed vector: the registry slots it refers
/// to and the exact values of everything the vector does not carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideChannel {
    pub dst_ip: SlotRef,
    pub dst_service: SlotRef,
    pub auth_token: SlotRef,
    pub session_start: Option<SlotRef>,
    pub session_end: Option<SlotRef>,
    pub content: SlotRef,
    pub src_ip: NetAddress,
    pub src_service: ServiceRef,
    pub ttl: u8,
    pub metadata: Metadata,
}

impl SideChannel {
    /// Every registry reference held by this entry.
    pub fn slots(&self) -> Vec<(&'static str, SlotRef)> {
        let mut out = vec![
            ("dst_ip", self.dst_ip),
            ("dst_service", self.dst_service),
            ("auth_token", self.auth_token),
            ("content", self.content),
        ];
        out.extend(self.session_start.map(|s| ("session.start", s)));
        out.extend(self.session_end.map(|s| ("session.end", s)));
        out
    }
}

/// Interning codec: high-cardinality fields become registry indices.
#[derive(Debug, Clone)]
pub struct IndexedCodec {
    config: IndexedConfig,
    layout: BitLayout,
    registry: IndexRegistry,
}

fn slot<V>(i: super::intern::Interned<V>) -> SlotRef {
    SlotRef { index: i.index, generation: i.generation }
}

impl IndexedCodec {
    pub fn new(config: IndexedConfig) -> Self {
        let w = config.widths;
        let (ttl, meta) = if config.quantize { (4, 4) } else { (8, 32) };
        let layout = BitLayout::new(
            format!("{LAYOUT_VERSION}/indexed"),
            [
                ("kind", 1),
                ("dst_ip", w.address_bits),
                ("dst_service", w.service_bits),
                ("ttl", ttl),
                ("metadata.packet_count", meta),
                ("metadata.byte_count", meta),
                ("metadata.duration_ticks", meta),
                ("auth_token", w.token_bits),
                ("session_present", 1),
                ("session.start", w.endpoint_bits),
                ("session.end", w.endpoint_bits),
                ("status.origin", 2),
                ("status.value", 2),
                ("status.detail", 8),
                ("content", w.content_bits),
            ],
        );
        IndexedCodec { config, layout, registry: IndexRegistry::new(w) }
    }

    pub fn layout(&self) -> &BitLayout {
        &self.layout
    }

    pub fn registry(&self) -> &IndexRegistry {
        &self.registry
    }

    pub fn reset(&mut self) {
        self.registry.clear();
    }

    pub fn encode(&mut self, r: &Response) -> Result<(StateVector, SideChannel), ReprError> {
        if !r.is_canonical() {
            return Err(ReprError::NonCanonical);
        }
        let m = &r.msg;
        let reg = &mut self.registry;
        let dst_ip = slot(reg.addresses.intern(&m.dst_ip));
        let dst_service = slot(reg.services.intern(&m.dst_service));
        let auth_token = slot(reg.tokens.intern(&m.auth_token));
        let (session_start, session_end) = match &m.session {
            Some(s) => (Some(slot(reg.endpoints.intern(&s.start))), Some(slot(reg.endpoints.intern(&s.end)))),
            None => (None, None),
        };
        let content = slot(reg.contents.intern(&r.content));

        let q = |v: u64| if self.config.quantize { u128::from(log2_bucket(v)) } else { u128::from(v) };
        let mut w = FieldWriter::new();
        for field in self.layout.fields() {
            let name = field.name.as_str();
            let width = field.width;
            let value = match name {
                "kind" => 1,
                "dst_ip" => dst_ip.index.into(),
                "dst_service" => dst_service.index.into(),
                "ttl" => q(m.ttl.into()),
                "metadata.packet_count" => q(m.metadata.packet_count.into()),
                "metadata.byte_count" => q(m.metadata.byte_count.into()),
                "metadata.duration_ticks" => q(m.metadata.duration_ticks.into()),
                "auth_token" => auth_token.index.into(),
                "session_present" => m.session.is_some().into(),
                "session.start" => session_start.map_or(0, |s| s.index.into()),
                "session.end" => session_end.map_or(0, |s| s.index.into()),
                "status.origin" => r.status.origin.code().into(),
                "status.value" => r.status.value.code().into(),
                "status.detail" => r.status.detail.code().into(),
                "content" => content.index.into(),
                other => return Err(ReprError::UnknownLayoutField(other.to_string())),
            };
            w.uint(name, value, width)?;
        }
        let side = SideChannel {
            dst_ip,
            dst_service,
            auth_token,
            session_start,
            session_end,
            content,
            src_ip: m.src_ip,
            src_service: m.src_service.clone(),
            ttl: m.ttl,
            metadata: m.metadata,
        };
        Ok((w.finish(self.layout.id()), side))
    }

    /// Rebuilds a response from a vector and its side channel against the
    /// current registry. Fails with a stale-index error once any referenced
    /// slot has been reassigned. The dropped `id` comes back as 0.
    pub fn reconstruct(&self, vector: &StateVector, side: &SideChannel) -> Result<Response, ReprError> {
        let expected = self.layout.total_width() as usize;
        if vector.width() != expected {
            return Err(ReprError::Length { expected, actual: vector.width() });
        }
        let reg = &self.registry;
        let mut rd = FieldReader::new(&vector.bits);
        let mut out = Response::zeroed();
        let mut status = Status::new(out.status.origin, out.status.value, out.status.detail);
        let mut present = 0;
        let check = |name: &str, got: u128, slot: SlotRef| {
            if got != u128::from(slot.index) {
                Err(ReprError::Decode(name.to_string()))
            } else {
                Ok(())
            }
        };
        for field in self.layout.fields() {
            let name = field.name.as_str();
            let width = field.width;
            match name {
                "kind" => out.msg.kind = rd.kind(name)?,
                "dst_ip" => {
                    check(name, rd.uint(name, width)?, side.dst_ip)?;
                    out.msg.dst_ip = *reg.addresses.resolve_at(side.dst_ip.index, side.dst_ip.generation)?;
                }
                "dst_service" => {
                    check(name, rd.uint(name, width)?, side.dst_service)?;
                    out.msg.dst_service =
                        reg.services.resolve_at(side.dst_service.index, side.dst_service.generation)?.clone();
                }
                "auth_token" => {
                    check(name, rd.uint(name, width)?, side.auth_token)?;
                    out.msg.auth_token = *reg.tokens.resolve_at(side.auth_token.index, side.auth_token.generation)?;
                }
                "content" => {
                    check(name, rd.uint(name, width)?, side.content)?;
                    out.content = reg.contents.resolve_at(side.content.index, side.content.generation)?.clone();
                }
                "session_present" => present = rd.uint(name, width)?,
                "session.start" | "session.end" => {
                    let got = rd.uint(name, width)?;
                    let slot = if name == "session.start" { side.session_start } else { side.session_end };
                    match slot {
                        Some(s) => check(name, got, s)?,
                        None if got == 0 => {}
                        None => return Err(ReprError::Decode(name.to_string())),
                    }
                }
                "status.origin" => status.origin = rd.origin(name, width)?,
                "status.value" => status.value = rd.value(name, width)?,
                "status.detail" => status.detail = rd.detail(name, width)?,
                // exact values come from the side channel
                _ => {
                    rd.uint(name, width)?;
                }
            }
        }
        let resolve = |s: SlotRef| -> Result<Endpoint, ReprError> {
            Ok(reg.endpoints.resolve_at(s.index, s.generation)?.clone())
        };
        out.msg.session = match (present, side.session_start, side.session_end) {
            (1, Some(a), Some(b)) => Some(Session { start: resolve(a)?, end: resolve(b)? }),
            (0, None, None) => None,
            _ => return Err(ReprError::Decode("session_present".into())),
        };
        out.msg.kind = MessageKind::Response;
        out.msg.src_ip = side.src_ip;
        out.msg.src_service = side.src_service.clone();
        out.msg.ttl = side.ttl;
        out.msg.metadata = side.metadata;
        out.status = status;
        Ok(out)
    }
}
