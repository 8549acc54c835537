use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::message::{canonical_text, ServiceRef, VERSION_CAP};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VulnEntry {
    pub name: ServiceRef,
    pub version: String,
}

impl VulnEntry {
    pub fn new(name: &str, version: &str) -> Self {
        VulnEntry { name: ServiceRef::new(name), version: canonical_text(version, VERSION_CAP) }
    }
}

/// Known-vulnerable (service, version) pairs, stored canonicalized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<VulnEntry>", into = "Vec<VulnEntry>")]
pub struct VulnerabilityList {
    entries: BTreeSet<VulnEntry>,
}

impl VulnerabilityList {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        pairs.into_iter().map(|(n, v)| VulnEntry::new(n, v)).collect::<Vec<_>>().into()
    }

    pub fn contains(&self, name: &ServiceRef, version: &str) -> bool {
        self.entries.contains(&VulnEntry { name: name.clone(), version: canonical_text(version, VERSION_CAP) })
    }

    pub fn insert(&mut self, entry: VulnEntry) -> bool {
        self.entries.insert(VulnEntry::new(entry.name.as_str(), &entry.version))
    }

    pub fn iter(&self) -> impl Iterator<Item = &VulnEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl From<Vec<VulnEntry>> for VulnerabilityList {
    fn from(v: Vec<VulnEntry>) -> Self {
        let mut list = VulnerabilityList::default();
        for e in v {
            list.insert(e);
        }
        list
    }
}

impl From<VulnerabilityList> for Vec<VulnEntry> {
    fn from(v: VulnerabilityList) -> Self {
        v.entries.into_iter().collect()
    }
}
