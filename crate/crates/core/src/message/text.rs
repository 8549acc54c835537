use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Byte cap for service names and response content.
pub const TEXT_CAP: usize = 32;
/// Byte cap for service versions.
pub const VERSION_CAP: usize = 16;

/// Canonical form of a free-text field: NULs removed, ASCII lowercased,
/// trimmed, then cut to at most `cap` bytes on a character boundary.
pub fn canonical_text(raw: &str, cap: usize) -> String {
    let mut s: String = raw.chars().filter(|&c| c != '\0').collect();
    s.make_ascii_lowercase();
    let s = s.trim();
    let mut end = s.len().min(cap);
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].trim_end().to_string()
}

pub fn is_canonical(raw: &str, cap: usize) -> bool {
    canonical_text(raw, cap) == raw
}

/// A service name, always held in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ServiceRef(String);

impl ServiceRef {
    pub fn new(raw: &str) -> Self {
        ServiceRef(canonical_text(raw, TEXT_CAP))
    }

    /// The empty name addresses a node rather than one of its services.
    pub fn node() -> Self {
        ServiceRef(String::new())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_node(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&str> for ServiceRef {
    fn from(raw: &str) -> Self {
        ServiceRef::new(raw)
    }
}

impl Borrow<str> for ServiceRef {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ServiceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ServiceRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ServiceRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(ServiceRef::new(&String::deserialize(deserializer)?))
    }
}
