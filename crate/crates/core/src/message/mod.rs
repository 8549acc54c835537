//! Percept schema: messages, sessions, status codes, canonical text and the
//! fixed bit layout the codecs build on.

mod address;
pub mod fields;
mod layout;
mod text;
mod types;

pub use address::{NetAddress, Subnet};
pub use layout::{default_layout, BitLayout, LayoutField, DEFAULT_FIELDS, LAYOUT_VERSION};
pub use text::{canonical_text, is_canonical, ServiceRef, TEXT_CAP, VERSION_CAP};
pub use types::{
    canonicalize, Action, Endpoint, Message, MessageKind, Metadata, Request, Response, Session, Status, StatusDetail,
    StatusOrigin, StatusValue,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessageError {
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
    #[error("invalid subnet `{0}`")]
    InvalidSubnet(String),
    #[error("session start and end are the same endpoint")]
    DegenerateSession,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("value does not fit field `{0}`")]
    FieldType(String),
}
