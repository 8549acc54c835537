use serde::Serialize;

/// Version tag embedded in every emitted report.
pub const LAYOUT_VERSION: &str = "percept-lab-layout-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayoutField {
    pub name: String,
    pub width: u32,
}

/// Ordered fixed-width field map. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BitLayout {
    id: String,
    fields: Vec<LayoutField>,
    total_width: u32,
}

impl BitLayout {
    pub fn new(id: impl Into<String>, fields: impl IntoIterator<Item = (impl Into<String>, u32)>) -> Self {
        let fields: Vec<LayoutField> =
            fields.into_iter().map(|(name, width)| LayoutField { name: name.into(), width }).collect();
        let total_width = fields.iter().map(|f| f.width).sum();
        BitLayout { id: id.into(), fields, total_width }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fields(&self) -> &[LayoutField] {
        &self.fields
    }

    pub fn total_width(&self) -> u32 {
        self.total_width
    }

    pub fn width_of(&self, name: &str) -> Option<u32> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.width)
    }

    /// Bit offset of the named field from the start of the vector.
    pub fn offset_of(&self, name: &str) -> Option<u32> {
        let mut offset = 0;
        for f in &self.fields {
            if f.name == name {
                return Some(offset);
            }
            offset += f.width;
        }
        None
    }
}

/// Field widths of a full response.
pub const DEFAULT_FIELDS: [(&str, u32); 18] = [
    ("id", 32),
    ("kind", 1),
    ("src_ip", 128),
    ("dst_ip", 128),
    ("src_service", 256),
    ("dst_service", 256),
    ("ttl", 8),
    ("metadata.packet_count", 32),
    ("metadata.byte_count", 32),
    ("metadata.duration_ticks", 32),
    ("auth_token", 128),
    ("session_present", 1),
    ("session.start", 384),
    ("session.end", 384),
    ("status.origin", 2),
    ("status.value", 2),
    ("status.detail", 8),
    ("content", 256),
];

pub fn default_layout() -> BitLayout {
    BitLayout::new(LAYOUT_VERSION, DEFAULT_FIELDS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_width_is_2070() {
        let layout = default_layout();
        // 32+1+128+128+256+256+8+96+128+1+384+384+2+2+8+256
        assert_eq!(layout.total_width(), 2070);
        assert!(layout.total_width() > 1500);
        assert_eq!(layout.width_of("src_service"), Some(256));
        assert_eq!(layout.id(), LAYOUT_VERSION);
    }

    #[test]
    fn offsets_accumulate() {
        let layout = default_layout();
        assert_eq!(layout.offset_of("id"), Some(0));
        assert_eq!(layout.offset_of("kind"), Some(32));
        assert_eq!(layout.offset_of("content"), Some(2070 - 256));
        assert_eq!(layout.offset_of("nope"), None);
    }
}
