use serde::{Deserialize, Serialize};

use super::vector::{assemble_session, FieldReader, FieldWriter, StateVector};
use super::verbatim::{narrow, service};
use super::ReprError;
use crate::message::{
    BitLayout, Endpoint, MessageKind, NetAddress, Response, ServiceRef, Status, Subnet, DEFAULT_FIELDS, LAYOUT_VERSION,
};

/// Fields that may be dropped because they are constant for one agent.
pub const DROPPABLE: [&str; 5] = ["kind", "id", "src_ip", "src_service", "session.start"];

pub const SUBNET_INDEX_BITS: u32 = 4;
pub const HOST_OFFSET_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatingSubnet {
    pub prefix: Subnet,
    pub max_hosts: u32,
}

/// What is known in advance about the agent and the networks it works in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub own_addresses: Vec<NetAddress>,
    pub own_service: ServiceRef,
    pub operating_subnets: Vec<OperatingSubnet>,
    #[serde(default = "default_drop")]
    pub drop_fields: Vec<String>,
}

fn default_drop() -> Vec<String> {
    DROPPABLE.iter().map(|s| s.to_string()).collect()
}

impl AgentProfile {
    pub fn new(
        own_addresses: Vec<NetAddress>,
        own_service: ServiceRef,
        operating_subnets: Vec<OperatingSubnet>,
    ) -> Self {
        AgentProfile { own_addresses, own_service, operating_subnets, drop_fields: default_drop() }
    }

    pub fn validate(&self) -> Result<(), ReprError> {
        let bad = |why: String| Err(ReprError::Profile(why));
        if self.own_addresses.is_empty() {
            return bad("no own addresses".into());
        }
        if self.operating_subnets.len() > 1 << SUBNET_INDEX_BITS {
            return bad(format!("at most {} operating subnets", 1 << SUBNET_INDEX_BITS));
        }
        for s in &self.operating_subnets {
            if s.max_hosts == 0 || u64::from(s.max_hosts) > 1 << HOST_OFFSET_BITS {
                return bad(format!("{}: max_hosts out of range", s.prefix));
            }
        }
        for f in &self.drop_fields {
            if !DROPPABLE.contains(&f.as_str()) {
                return bad(format!("field {f} cannot be dropped"));
            }
        }
        Ok(())
    }

    fn drops(&self, field: &str) -> bool {
        self.drop_fields.iter().any(|f| f == field)
    }

    fn own_index_bits(&self) -> u32 {
        let n = self.own_addresses.len();
        if n <= 1 {
            0
        } else {
            usize::BITS - (n - 1).leading_zeros()
        }
    }

    fn own_index(&self, addr: NetAddress) -> Option<usize> {
        self.own_addresses.iter().position(|a| *a == addr)
    }

    /// Layout derived from the default by dropping profile constants and
    /// recoding the destination as (subnet index, host offset).
    pub fn layout(&self) -> BitLayout {
        let own = self.own_index_bits();
        let mut fields: Vec<(String, u32)> = Vec::new();
        for (name, width) in DEFAULT_FIELDS {
            match name {
                "dst_ip" => {
                    fields.push(("dst_ip.subnet".into(), SUBNET_INDEX_BITS));
                    fields.push(("dst_ip.offset".into(), HOST_OFFSET_BITS));
                }
                "src_ip" | "session.start" if self.drops(name) => {
                    if own > 0 {
                        fields.push((format!("{name}.own"), own));
                    }
                }
                n if self.drops(n) => {}
                n => fields.push((n.to_string(), width)),
            }
        }
        BitLayout::new(format!("{LAYOUT_VERSION}/static-elim"), fields)
    }

    fn locate(&self, addr: NetAddress) -> Option<(usize, u128)> {
        self.operating_subnets
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.prefix.offset_of(addr).filter(|&o| o < u128::from(s.max_hosts)).map(|o| (i, o)))
    }
}

/// Static-elimination codec bound to one profile.
#[derive(Debug, Clone)]
pub struct StaticElim {
    profile: AgentProfile,
    layout: BitLayout,
}

impl StaticElim {
    pub fn new(profile: AgentProfile) -> Result<Self, ReprError> {
        profile.validate()?;
        let layout = profile.layout();
        Ok(StaticElim { profile, layout })
    }

    pub fn profile(&self) -> &AgentProfile {
        &self.profile
    }

    pub fn layout(&self) -> &BitLayout {
        &self.layout
    }

    pub fn encode(&self, r: &Response) -> Result<StateVector, ReprError> {
        if !r.is_canonical() {
            return Err(ReprError::NonCanonical);
        }
        let p = &self.profile;
        let m = &r.msg;
        let (subnet, offset) = p.locate(m.dst_ip).ok_or(ReprError::OutOfProfile(m.dst_ip))?;
        let own = |field: &str, addr: NetAddress| {
            p.own_index(addr).ok_or_else(|| ReprError::ProfileViolation(field.to_string()))
        };
        let src_index = if p.drops("src_ip") { own("src_ip", m.src_ip)? } else { 0 };
        if p.drops("src_service") && m.src_service != p.own_service {
            return Err(ReprError::ProfileViolation("src_service".into()));
        }
        let mut start_index = 0;
        if p.drops("session.start") {
            if let Some(s) = &m.session {
                start_index = own("session.start", s.start.ip)?;
                if s.start.service != p.own_service {
                    return Err(ReprError::ProfileViolation("session.start".into()));
                }
            }
        }

        let mut w = FieldWriter::new();
        for field in self.layout.fields() {
            let name = field.name.as_str();
            let width = field.width;
            match name {
                "id" => w.uint(name, m.id.into(), width)?,
                "kind" => w.uint(name, 1, width)?,
                "src_ip" => w.uint(name, m.src_ip.bits(), width)?,
                "src_ip.own" => w.uint(name, src_index as u128, width)?,
                "dst_ip.subnet" => w.uint(name, subnet as u128, width)?,
                "dst_ip.offset" => w.uint(name, offset, width)?,
                "src_service" => w.text(name, m.src_service.as_str(), width)?,
                "dst_service" => w.text(name, m.dst_service.as_str(), width)?,
                "ttl" => w.uint(name, m.ttl.into(), width)?,
                "metadata.packet_count" => w.uint(name, m.metadata.packet_count.into(), width)?,
                "metadata.byte_count" => w.uint(name, m.metadata.byte_count.into(), width)?,
                "metadata.duration_ticks" => w.uint(name, m.metadata.duration_ticks.into(), width)?,
                "auth_token" => w.uint(name, m.auth_token, width)?,
                "session_present" => w.uint(name, m.session.is_some().into(), width)?,
                "session.start" => w.endpoint(name, m.session.as_ref().map(|s| &s.start), width)?,
                "session.start.own" => w.uint(name, start_index as u128, width)?,
                "session.end" => w.endpoint(name, m.session.as_ref().map(|s| &s.end), width)?,
                "status.origin" => w.uint(name, r.status.origin.code().into(), width)?,
                "status.value" => w.uint(name, r.status.value.code().into(), width)?,
                "status.detail" => w.uint(name, r.status.detail.code().into(), width)?,
                "content" => w.text(name, &r.content, width)?,
                other => return Err(ReprError::UnknownLayoutField(other.to_string())),
            }
        }
        Ok(w.finish(self.layout.id()))
    }

    /// Restores the dropped constants from the profile. A dropped `id` comes back as 0.
    pub fn reconstruct(&self, vector: &StateVector) -> Result<Response, ReprError> {
        let expected = self.layout.total_width() as usize;
        if vector.width() != expected || vector.layout_id != self.layout.id() {
            return Err(ReprError::Length { expected, actual: vector.width() });
        }
        let p = &self.profile;
        let mut rd = FieldReader::new(&vector.bits);
        let mut out = Response::zeroed();
        out.msg.src_ip = p.own_addresses[0];
        out.msg.src_service = p.own_service.clone();
        let mut subnet = 0usize;
        let mut present = 0;
        let mut start_own = 0usize;
        let mut start = None;
        let mut end = None;
        let mut status = Status::new(out.status.origin, out.status.value, out.status.detail);
        for field in self.layout.fields() {
            let name = field.name.as_str();
            let width = field.width;
            let m = &mut out.msg;
            match name {
                "id" => m.id = narrow(name, rd.uint(name, width)?)?,
                "kind" => m.kind = rd.kind(name)?,
                "src_ip" => m.src_ip = NetAddress::from_bits(rd.uint(name, width)?),
                "src_ip.own" => {
                    let i: usize = narrow(name, rd.uint(name, width)?)?;
                    m.src_ip = *p.own_addresses.get(i).ok_or_else(|| ReprError::Decode(name.into()))?;
                }
                "dst_ip.subnet" => subnet = narrow(name, rd.uint(name, width)?)?,
                "dst_ip.offset" => {
                    let offset = rd.uint(name, width)?;
                    let s = p.operating_subnets.get(subnet).ok_or_else(|| ReprError::Decode("dst_ip.subnet".into()))?;
                    if offset >= u128::from(s.max_hosts) {
                        return Err(ReprError::Decode(name.into()));
                    }
                    m.dst_ip = s.prefix.host(offset).ok_or_else(|| ReprError::Decode(name.into()))?;
                }
                "src_service" => m.src_service = service(name, rd.text(name, width)?)?,
                "dst_service" => m.dst_service = service(name, rd.text(name, width)?)?,
                "ttl" => m.ttl = narrow(name, rd.uint(name, width)?)?,
                "metadata.packet_count" => m.metadata.packet_count = narrow(name, rd.uint(name, width)?)?,
                "metadata.byte_count" => m.metadata.byte_count = narrow(name, rd.uint(name, width)?)?,
                "metadata.duration_ticks" => m.metadata.duration_ticks = narrow(name, rd.uint(name, width)?)?,
                "auth_token" => m.auth_token = rd.uint(name, width)?,
                "session_present" => present = rd.uint(name, width)?,
                "session.start" => start = Some(rd.endpoint(name, width)?),
                "session.start.own" => start_own = narrow(name, rd.uint(name, width)?)?,
                "session.end" => end = Some(rd.endpoint(name, width)?),
                "status.origin" => status.origin = rd.origin(name, width)?,
                "status.value" => status.value = rd.value(name, width)?,
                "status.detail" => status.detail = rd.detail(name, width)?,
                "content" => out.content = rd.text(name, width)?,
                other => return Err(ReprError::UnknownLayoutField(other.to_string())),
            }
        }
        out.msg.kind = MessageKind::Response;
        let blank = Endpoint { ip: NetAddress::UNSPECIFIED, service: ServiceRef::node() };
        let end = end.unwrap_or_else(|| blank.clone());
        let start = match start {
            Some(s) => s,
            None if present == 1 => Endpoint {
                ip: *p.own_addresses.get(start_own).ok_or_else(|| ReprError::Decode("session.start.own".into()))?,
                service: p.own_service.clone(),
            },
            None => blank,
        };
        out.msg.session = assemble_session(present, start, end)?;
        out.status = status;
        if !out.is_canonical() {
            return Err(ReprError::Decode("content".into()));
        }
        Ok(out)
    }
}
