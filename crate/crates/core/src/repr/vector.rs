use std::collections::BTreeSet;

use serde::Serialize;

use super::ReprError;
use crate::bits::{BitReader, BitString, BitWriter};
use crate::message::{Endpoint, MessageKind, NetAddress, ServiceRef, Session, StatusDetail, StatusOrigin, StatusValue};

/// A fixed-width encoding of one percept under a named layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct StateVector {
    pub layout_id: String,
    pub bits: BitString,
}

impl StateVector {
    pub fn width(&self) -> usize {
        self.bits.len()
    }
}

/// Field writer that checks widths against the declared layout.
pub(crate) struct FieldWriter {
    inner: BitWriter,
}

impl FieldWriter {
    pub fn new() -> Self {
        FieldWriter { inner: BitWriter::new() }
    }

    pub fn uint(&mut self, field: &str, value: u128, width: u32) -> Result<(), ReprError> {
        if width < 128 && value >> width != 0 {
            return Err(ReprError::FieldOverflow(field.to_string()));
        }
        self.inner.write_uint(value, width);
        Ok(())
    }

    pub fn text(&mut self, field: &str, value: &str, width: u32) -> Result<(), ReprError> {
        if value.len() * 8 > width as usize {
            return Err(ReprError::FieldOverflow(field.to_string()));
        }
        self.inner.write_bytes(value.as_bytes(), width);
        Ok(())
    }

    /// Address then service name, each in its own sub-width.
    pub fn endpoint(&mut self, field: &str, value: Option<&Endpoint>, width: u32) -> Result<(), ReprError> {
        let text_width = width.checked_sub(128).ok_or_else(|| ReprError::FieldOverflow(field.to_string()))?;
        match value {
            Some(e) => {
                self.uint(field, e.ip.bits(), 128)?;
                self.text(field, e.service.as_str(), text_width)
            }
            None => {
                self.uint(field, 0, 128)?;
                self.text(field, "", text_width)
            }
        }
    }

    pub fn finish(self, layout_id: &str) -> StateVector {
        StateVector { layout_id: layout_id.to_string(), bits: self.inner.finish() }
    }
}

pub(crate) struct FieldReader<'a> {
    inner: BitReader<'a>,
}

impl<'a> FieldReader<'a> {
    pub fn new(bits: &'a BitString) -> Self {
        FieldReader { inner: BitReader::new(bits) }
    }

    pub fn uint(&mut self, field: &str, width: u32) -> Result<u128, ReprError> {
        self.inner.read_uint(width).ok_or_else(|| ReprError::Decode(field.to_string()))
    }

    pub fn text(&mut self, field: &str, width: u32) -> Result<String, ReprError> {
        let bytes = self.inner.read_bytes(width).ok_or_else(|| ReprError::Decode(field.to_string()))?;
        String::from_utf8(bytes).map_err(|_| ReprError::Decode(field.to_string()))
    }

    pub fn endpoint(&mut self, field: &str, width: u32) -> Result<Endpoint, ReprError> {
        let ip = NetAddress::from_bits(self.uint(field, 128)?);
        let service = self.text(field, width - 128)?;
        Ok(Endpoint { ip, service: ServiceRef::new(&service) })
    }

    pub fn kind(&mut self, field: &str) -> Result<MessageKind, ReprError> {
        match self.uint(field, 1)? {
            1 => Ok(MessageKind::Response),
            _ => Err(ReprError::Decode(field.to_string())),
        }
    }

    pub fn origin(&mut self, field: &str, width: u32) -> Result<StatusOrigin, ReprError> {
        let code = self.uint(field, width)?;
        u8::try_from(code).ok().and_then(StatusOrigin::from_code).ok_or_else(|| ReprError::Decode(field.to_string()))
    }

    pub fn value(&mut self, field: &str, width: u32) -> Result<StatusValue, ReprError> {
        let code = self.uint(field, width)?;
        u8::try_from(code).ok().and_then(StatusValue::from_code).ok_or_else(|| ReprError::Decode(field.to_string()))
    }

    pub fn detail(&mut self, field: &str, width: u32) -> Result<StatusDetail, ReprError> {
        let code = self.uint(field, width)?;
        u8::try_from(code).ok().and_then(StatusDetail::from_code).ok_or_else(|| ReprError::Decode(field.to_string()))
    }
}

/// Rebuilds the optional session from its presence bit and endpoints,
/// rejecting leftover bits when the session is absent.
pub(crate) fn assemble_session(present: u128, start: Endpoint, end: Endpoint) -> Result<Option<Session>, ReprError> {
    let blank = Endpoint { ip: NetAddress::UNSPECIFIED, service: ServiceRef::node() };
    match present {
        1 => Ok(Some(Session { start, end })),
        0 if start == blank && end == blank => Ok(None),
        _ => Err(ReprError::Decode("session_present".into())),
    }
}

/// 4-bit logarithmic bucket: 0 for 0, otherwise floor(log2 v) + 1, capped at 15.
pub fn log2_bucket(v: u64) -> u8 {
    if v == 0 {
        0
    } else {
        (64 - v.leading_zeros()).min(15) as u8
    }
}

/// Number of distinct vectors in an iterator of vectors.
pub fn distinct<'a>(vectors: impl IntoIterator<Item = &'a StateVector>) -> usize {
    vectors.into_iter().map(|v| v.bits.as_bytes()).collect::<BTreeSet<_>>().len()
}
