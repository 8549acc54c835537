use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::text::{canonical_text, ServiceRef, TEXT_CAP};
use super::{MessageError, NetAddress};

/// One side of a session: an address and the service bound to it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: NetAddress,
    pub service: ServiceRef,
}

impl Endpoint {
    pub fn new(ip: NetAddress, service: impl Into<ServiceRef>) -> Self {
        Endpoint { ip, service: service.into() }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.service)
    }
}

/// A persistent connection between two services.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Session {
    pub start: Endpoint,
    pub end: Endpoint,
}

impl Session {
    pub fn new(start: Endpoint, end: Endpoint) -> Result<Self, MessageError> {
        if start == end {
            return Err(MessageError::DegenerateSession);
        }
        Ok(Session { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub packet_count: u32,
    pub byte_count: u32,
    pub duration_ticks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Request,
    Response,
}

macro_rules! code_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $code:expr => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> u8 {
                match self {
                    $($name::$variant => $code),+
                }
            }

            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

code_enum!(StatusOrigin {
    Network = 0 => "network",
    Node = 1 => "node",
    Service = 2 => "service",
    System = 3 => "system",
});

code_enum!(
    /// Two bits are reserved for this field; code 3 is undefined.
    StatusValue {
        Success = 0 => "success",
        Failure = 1 => "failure",
        Error = 2 => "error",
    }
);

code_enum!(StatusDetail {
    Ok = 0 => "ok",
    HostUnreachable = 1 => "host_unreachable",
    NoSuchService = 2 => "no_such_service",
    NotVulnerable = 3 => "not_vulnerable",
    NoSession = 4 => "no_session",
    TtlExpired = 5 => "ttl_expired",
    UnknownAction = 6 => "unknown_action",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Status {
    pub origin: StatusOrigin,
    pub value: StatusValue,
    pub detail: StatusDetail,
}

impl Status {
    pub const fn new(origin: StatusOrigin, value: StatusValue, detail: StatusDetail) -> Self {
        Status { origin, value, detail }
    }

    pub fn is_success(&self) -> bool {
        self.value == StatusValue::Success
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.origin, self.value, self.detail)
    }
}

/// Actions the agent can request. Names outside the known set are carried
/// verbatim so the engine can answer them with `unknown_action`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Ping,
    ListServices,
    Exploit,
    ReadData,
    Other(String),
}

impl Action {
    pub const KNOWN: [Action; 4] = [Action::Ping, Action::ListServices, Action::Exploit, Action::ReadData];

    pub fn name(&self) -> &str {
        match self {
            Action::Ping => "ping",
            Action::ListServices => "list_services",
            Action::Exploit => "exploit",
            Action::ReadData => "read_data",
            Action::Other(name) => name,
        }
    }

    /// Ordinal used for deterministic action ordering.
    pub fn ordinal(&self) -> u8 {
        match self {
            Action::Ping => 0,
            Action::ListServices => 1,
            Action::Exploit => 2,
            Action::ReadData => 3,
            Action::Other(_) => u8::MAX,
        }
    }
}

impl FromStr for Action {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = canonical_text(s, TEXT_CAP);
        Ok(match s.as_str() {
            "ping" => Action::Ping,
            "list_services" => Action::ListServices,
            "exploit" => Action::Exploit,
            "read_data" => Action::ReadData,
            _ => Action::Other(s),
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

/// Attributes shared by requests and responses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub id: u32,
    pub kind: MessageKind,
    pub src_ip: NetAddress,
    pub dst_ip: NetAddress,
    pub src_service: ServiceRef,
    pub dst_service: ServiceRef,
    pub ttl: u8,
    pub metadata: Metadata,
    #[serde(with = "hex128")]
    pub auth_token: u128,
    pub session: Option<Session>,
}

/// 128-bit tokens travel as 32 hex digits so they survive JSON readers
/// limited to 64-bit integers.
mod hex128 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

impl Message {
    pub fn empty(kind: MessageKind) -> Self {
        Message {
            id: 0,
            kind,
            src_ip: NetAddress::UNSPECIFIED,
            dst_ip: NetAddress::UNSPECIFIED,
            src_service: ServiceRef::node(),
            dst_service: ServiceRef::node(),
            ttl: 0,
            metadata: Metadata::default(),
            auth_token: 0,
            session: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    #[serde(flatten)]
    pub msg: Message,
    pub action: Action,
}

impl Request {
    pub fn new(id: u32, action: Action, src: Endpoint, dst: Endpoint, ttl: u8) -> Self {
        Request {
            msg: Message {
                id,
                kind: MessageKind::Request,
                src_ip: src.ip,
                dst_ip: dst.ip,
                src_service: src.service,
                dst_service: dst.service,
                ttl,
                metadata: Metadata::default(),
                auth_token: 0,
                session: None,
            },
            action,
        }
    }

    pub fn with_session(mut self, session: Session) -> Self {
        self.msg.session = Some(session);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Response {
    #[serde(flatten)]
    pub msg: Message,
    pub status: Status,
    pub content: String,
}

impl Response {
    /// The response whose every field is zero except `kind`.
    pub fn zeroed() -> Self {
        Response {
            msg: Message::empty(MessageKind::Response),
            status: Status::new(StatusOrigin::Network, StatusValue::Success, StatusDetail::Ok),
            content: String::new(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        canonicalize(self.clone()) == *self
    }
}

/// Lowercases and truncates every text field. Service names are already
/// canonical by construction, so only `content` changes in practice.
pub fn canonicalize(mut response: Response) -> Response {
    let fix = |s: &mut ServiceRef| *s = ServiceRef::new(s.as_str());
    fix(&mut response.msg.src_service);
    fix(&mut response.msg.dst_service);
    if let Some(session) = response.msg.session.as_mut() {
        fix(&mut session.start.service);
        fix(&mut session.end.service);
    }
    response.msg.kind = MessageKind::Response;
    response.content = canonical_text(&response.content, TEXT_CAP);
    response
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_is_lowercased() {
        let mut r = Response::zeroed();
        r.content = "OK".into();
        assert_eq!(canonicalize(r).content, "ok");
    }

    #[test]
    fn canonical_response_is_fixed_point() {
        let mut r = Response::zeroed();
        r.content = "http,ssh".into();
        r.msg.dst_service = ServiceRef::new("http");
        assert_eq!(canonicalize(r.clone()), r);
        assert!(r.is_canonical());
    }

    #[test]
    fn status_codes_roundtrip() {
        for d in StatusDetail::ALL {
            assert_eq!(StatusDetail::from_code(d.code()), Some(*d));
        }
        assert_eq!(StatusValue::from_code(3), None);
        assert_eq!(StatusDetail::ALL.len(), 7);
    }

    #[test]
    fn session_endpoints_must_differ() {
        let e = Endpoint::new(NetAddress::v4(10, 0, 0, 1), "ssh");
        assert!(Session::new(e.clone(), e).is_err());
    }

    #[test]
    fn action_parsing_keeps_unknown_names() {
        assert_eq!("PING".parse::<Action>().unwrap(), Action::Ping);
        assert_eq!("scan".parse::<Action>().unwrap(), Action::Other("scan".into()));
    }
}
