use super::vector::{assemble_session, FieldReader, FieldWriter, StateVector};
use super::ReprError;
use crate::message::{default_layout, BitLayout, Message, Metadata, Response};

/// Encodes every field of a canonical response under the default layout.
pub fn encode_verbatim(response: &Response) -> Result<StateVector, ReprError> {
    encode_with(&default_layout(), response)
}

pub(crate) fn encode_with(layout: &BitLayout, r: &Response) -> Result<StateVector, ReprError> {
    if !r.is_canonical() {
        return Err(ReprError::NonCanonical);
    }
    let mut w = FieldWriter::new();
    for field in layout.fields() {
        let name = field.name.as_str();
        let width = field.width;
        let m = &r.msg;
        match name {
            "id" => w.uint(name, m.id.into(), width)?,
            "kind" => w.uint(name, 1, width)?,
            "src_ip" => w.uint(name, m.src_ip.bits(), width)?,
            "dst_ip" => w.uint(name, m.dst_ip.bits(), width)?,
            "src_service" => w.text(name, m.src_service.as_str(), width)?,
            "dst_service" => w.text(name, m.dst_service.as_str(), width)?,
            "ttl" => w.uint(name, m.ttl.into(), width)?,
            "metadata.packet_count" => w.uint(name, m.metadata.packet_count.into(), width)?,
            "metadata.byte_count" => w.uint(name, m.metadata.byte_count.into(), width)?,
            "metadata.duration_ticks" => w.uint(name, m.metadata.duration_ticks.into(), width)?,
            "auth_token" => w.uint(name, m.auth_token, width)?,
            "session_present" => w.uint(name, m.session.is_some().into(), width)?,
            "session.start" => w.endpoint(name, m.session.as_ref().map(|s| &s.start), width)?,
            "session.end" => w.endpoint(name, m.session.as_ref().map(|s| &s.end), width)?,
            "status.origin" => w.uint(name, r.status.origin.code().into(), width)?,
            "status.value" => w.uint(name, r.status.value.code().into(), width)?,
            "status.detail" => w.uint(name, r.status.detail.code().into(), width)?,
            "content" => w.text(name, &r.content, width)?,
            other => return Err(ReprError::UnknownLayoutField(other.to_string())),
        }
    }
    Ok(w.finish(layout.id()))
}

/// Inverse of [`encode_verbatim`].
pub fn decode_verbatim(vector: &StateVector) -> Result<Response, ReprError> {
    decode_with(&default_layout(), vector)
}

pub(crate) fn decode_with(layout: &BitLayout, vector: &StateVector) -> Result<Response, ReprError> {
    let expected = layout.total_width() as usize;
    if vector.width() != expected {
        return Err(ReprError::Length { expected, actual: vector.width() });
    }
    let mut r = FieldReader::new(&vector.bits);
    let mut out = Response::zeroed();
    let m: &mut Message = &mut out.msg;
    let mut present = 0;
    let mut start = None;
    let mut end = None;
    let mut status = Response::zeroed().status;
    let mut metadata = Metadata::default();
    for field in layout.fields() {
        let name = field.name.as_str();
        let width = field.width;
        match name {
            "id" => m.id = narrow(name, r.uint(name, width)?)?,
            "kind" => m.kind = r.kind(name)?,
            "src_ip" => m.src_ip = crate::message::NetAddress::from_bits(r.uint(name, width)?),
            "dst_ip" => m.dst_ip = crate::message::NetAddress::from_bits(r.uint(name, width)?),
            "src_service" => m.src_service = service(name, r.text(name, width)?)?,
            "dst_service" => m.dst_service = service(name, r.text(name, width)?)?,
            "ttl" => m.ttl = narrow(name, r.uint(name, width)?)?,
            "metadata.packet_count" => metadata.packet_count = narrow(name, r.uint(name, width)?)?,
            "metadata.byte_count" => metadata.byte_count = narrow(name, r.uint(name, width)?)?,
            "metadata.duration_ticks" => metadata.duration_ticks = narrow(name, r.uint(name, width)?)?,
            "auth_token" => m.auth_token = r.uint(name, width)?,
            "session_present" => present = r.uint(name, width)?,
            "session.start" => start = Some(r.endpoint(name, width)?),
            "session.end" => end = Some(r.endpoint(name, width)?),
            "status.origin" => status.origin = r.origin(name, width)?,
            "status.value" => status.value = r.value(name, width)?,
            "status.detail" => status.detail = r.detail(name, width)?,
            "content" => out.content = r.text(name, width)?,
            other => return Err(ReprError::UnknownLayoutField(other.to_string())),
        }
    }
    let (Some(start), Some(end)) = (start, end) else {
        return Err(ReprError::UnknownLayoutField("session".into()));
    };
    out.msg.metadata = metadata;
    out.msg.session = assemble_session(present, start, end)?;
    out.status = status;
    if !out.is_canonical() {
        return Err(ReprError::Decode("content".into()));
    }
    Ok(out)
}

pub(crate) fn narrow<T: TryFrom<u128>>(field: &str, v: u128) -> Result<T, ReprError> {
    T::try_from(v).map_err(|_| ReprError::Decode(field.to_string()))
}

pub(crate) fn service(field: &str, raw: String) -> Result<crate::message::ServiceRef, ReprError> {
    let s = crate::message::ServiceRef::new(&raw);
    if s.as_str() != raw {
        return Err(ReprError::Decode(field.to_string()));
    }
    Ok(s)
}
