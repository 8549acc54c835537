//! Name-addressed access to response attributes, used by fault injection,
//! voting and baseline comparison.

use std::fmt;

use serde::Serialize;

use super::types::{MessageKind, Response, Session, StatusDetail, StatusOrigin, StatusValue};
use super::{MessageError, NetAddress, ServiceRef};

/// Every comparable attribute of a response. The session is compared as one
/// unit so a vote never stitches halves of different sessions together.
pub const RESPONSE_FIELDS: [&str; 16] = [
    "id",
    "kind",
    "src_ip",
    "dst_ip",
    "src_service",
    "dst_service",
    "ttl",
    "metadata.packet_count",
    "metadata.byte_count",
    "metadata.duration_ticks",
    "auth_token",
    "session",
    "status.origin",
    "status.value",
    "status.detail",
    "content",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(untagged)]
pub enum FieldValue {
    Int(u128),
    Kind(MessageKind),
    Address(NetAddress),
    Service(ServiceRef),
    Session(Option<Session>),
    Origin(StatusOrigin),
    Value(StatusValue),
    Detail(StatusDetail),
    Text(String),
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Int(v) => write!(f, "{v}"),
            FieldValue::Kind(k) => write!(f, "{k:?}"),
            FieldValue::Address(a) => write!(f, "{a}"),
            FieldValue::Service(s) => write!(f, "{s}"),
            FieldValue::Session(Some(s)) => write!(f, "{} -> {}", s.start, s.end),
            FieldValue::Session(None) => f.write_str("-"),
            FieldValue::Origin(o) => write!(f, "{o}"),
            FieldValue::Value(v) => write!(f, "{v}"),
            FieldValue::Detail(d) => write!(f, "{d}"),
            FieldValue::Text(t) => write!(f, "{t:?}"),
        }
    }
}

pub fn get_field(r: &Response, name: &str) -> Result<FieldValue, MessageError> {
    let m = &r.msg;
    Ok(match name {
        "id" => FieldValue::Int(m.id.into()),
        "kind" => FieldValue::Kind(m.kind),
        "src_ip" => FieldValue::Address(m.src_ip),
        "dst_ip" => FieldValue::Address(m.dst_ip),
        "src_service" => FieldValue::Service(m.src_service.clone()),
        "dst_service" => FieldValue::Service(m.dst_service.clone()),
        "ttl" => FieldValue::Int(m.ttl.into()),
        "metadata.packet_count" => FieldValue::Int(m.metadata.packet_count.into()),
        "metadata.byte_count" => FieldValue::Int(m.metadata.byte_count.into()),
        "metadata.duration_ticks" => FieldValue::Int(m.metadata.duration_ticks.into()),
        "auth_token" => FieldValue::Int(m.auth_token),
        "session" => FieldValue::Session(m.session.clone()),
        "status.origin" => FieldValue::Origin(r.status.origin),
        "status.value" => FieldValue::Value(r.status.value),
        "status.detail" => FieldValue::Detail(r.status.detail),
        "content" => FieldValue::Text(r.content.clone()),
        other => return Err(MessageError::UnknownField(other.to_string())),
    })
}

pub fn set_field(r: &mut Response, name: &str, value: FieldValue) -> Result<(), MessageError> {
    let mismatch = || MessageError::FieldType(name.to_string());
    let int = |v: &FieldValue, max: u128| match v {
        FieldValue::Int(i) if *i <= max => Ok(*i),
        _ => Err(mismatch()),
    };
    let m = &mut r.msg;
    match (name, &value) {
        ("id", v) => m.id = int(v, u32::MAX.into())? as u32,
        ("ttl", v) => m.ttl = int(v, u8::MAX.into())? as u8,
        ("metadata.packet_count", v) => m.metadata.packet_count = int(v, u32::MAX.into())? as u32,
        ("metadata.byte_count", v) => m.metadata.byte_count = int(v, u32::MAX.into())? as u32,
        ("metadata.duration_ticks", v) => m.metadata.duration_ticks = int(v, u32::MAX.into())? as u32,
        ("auth_token", v) => m.auth_token = int(v, u128::MAX)?,
        ("kind", FieldValue::Kind(k)) => m.kind = *k,
        ("src_ip", FieldValue::Address(a)) => m.src_ip = *a,
        ("dst_ip", FieldValue::Address(a)) => m.dst_ip = *a,
        ("src_service", FieldValue::Service(s)) => m.src_service = s.clone(),
        ("dst_service", FieldValue::Service(s)) => m.dst_service = s.clone(),
        ("session", FieldValue::Session(s)) => m.session = s.clone(),
        ("status.origin", FieldValue::Origin(o)) => r.status.origin = *o,
        ("status.value", FieldValue::Value(v)) => r.status.value = *v,
        ("status.detail", FieldValue::Detail(d)) => r.status.detail = *d,
        ("content", FieldValue::Text(t)) => r.content = t.clone(),
        (n, _) if RESPONSE_FIELDS.contains(&n) => return Err(mismatch()),
        (n, _) => return Err(MessageError::UnknownField(n.to_string())),
    }
    Ok(())
}

/// Names of the fields on which two responses differ, in schema order.
pub fn diff_fields(a: &Response, b: &Response) -> Vec<&'static str> {
    RESPONSE_FIELDS.iter().copied().filter(|f| get_field(a, f).ok() != get_field(b, f).ok()).collect()
}
