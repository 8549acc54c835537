use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::ReprError;
use crate::message::{Endpoint, NetAddress, ServiceRef};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Slot<V> {
    value: V,
    generation: u64,
    stamp: u64,
}

/// Result of interning one value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interned<V> {
    pub index: u32,
    pub generation: u64,
    pub evicted: Option<V>,
}

/// Bounded value-to-index table with least-recently-interned eviction.
///
/// Every reuse of a slot bumps its generation, so a (index, generation) pair
/// names exactly one historical binding.
#[derive(Debug, Clone)]
pub struct Interner<V> {
    bits: u32,
    slots: Vec<Option<Slot<V>>>,
    generations: Vec<u64>,
    lookup: HashMap<V, u32>,
    recency: BTreeMap<u64, u32>,
    free: BTreeSet<u32>,
    clock: u64,
    evictions: u64,
}

impl<V: Clone + Eq + Hash> Interner<V> {
    /// A table of `2^bits` slots.
    pub fn new(bits: u32) -> Self {
        assert!((1..=16).contains(&bits), "index width must be 1..=16 bits");
        let capacity = 1usize << bits;
        Interner {
            bits,
            slots: vec![None; capacity],
            generations: vec![0; capacity],
            lookup: HashMap::new(),
            recency: BTreeMap::new(),
            free: (0..capacity as u32).collect(),
            clock: 0,
            evictions: 0,
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    /// Returns the slot of `value`, allocating the lowest free slot or
    /// evicting the least recently interned entry when full.
    pub fn intern(&mut self, value: &V) -> Interned<V> {
        self.clock += 1;
        if let Some(&index) = self.lookup.get(value) {
            let slot = self.slots[index as usize].as_mut().expect("lookup points at a live slot");
            self.recency.remove(&slot.stamp);
            slot.stamp = self.clock;
            self.recency.insert(self.clock, index);
            return Interned { index, generation: slot.generation, evicted: None };
        }
        let (index, evicted) = match self.free.pop_first() {
            Some(i) => (i, None),
            None => {
                let (_, victim) = self.recency.pop_first().expect("full table has entries");
                let old = self.slots[victim as usize].take().expect("recency points at a live slot");
                self.lookup.remove(&old.value);
                self.evictions += 1;
                (victim, Some(old.value))
            }
        };
        let generation = self.generations[index as usize] + 1;
        self.generations[index as usize] = generation;
        self.slots[index as usize] = Some(Slot { value: value.clone(), generation, stamp: self.clock });
        self.lookup.insert(value.clone(), index);
        self.recency.insert(self.clock, index);
        Interned { index, generation, evicted }
    }

    /// Current binding of `index`. Does not count as a use.
    pub fn resolve(&self, index: u32) -> Result<&V, ReprError> {
        self.slots
            .get(index as usize)
            .and_then(|s| s.as_ref())
            .map(|s| &s.value)
            .ok_or(ReprError::StaleIndex { index, generation: None })
    }

    /// Binding of `index`, provided it has not been reassigned since `generation`.
    pub fn resolve_at(&self, index: u32, generation: u64) -> Result<&V, ReprError> {
        match self.slots.get(index as usize).and_then(|s| s.as_ref()) {
            Some(s) if s.generation == generation => Ok(&s.value),
            _ => Err(ReprError::StaleIndex { index, generation: Some(generation) }),
        }
    }

    pub fn index_of(&self, value: &V) -> Option<u32> {
        self.lookup.get(value).copied()
    }

    /// Live entries in index order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &V)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|s| (i as u32, &s.value)))
    }

    pub fn clear(&mut self) {
        *self = Interner::new(self.bits);
    }
}

/// Index widths of the indexed codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexWidths {
    pub address_bits: u32,
    pub service_bits: u32,
    pub endpoint_bits: u32,
    pub token_bits: u32,
    pub content_bits: u32,
}

impl Default for IndexWidths {
    fn default() -> Self {
        IndexWidths { address_bits: 8, service_bits: 6, endpoint_bits: 6, token_bits: 4, content_bits: 8 }
    }
}

/// One interning table per value domain.
#[derive(Debug, Clone)]
pub struct IndexRegistry {
    pub addresses: Interner<NetAddress>,
    pub services: Interner<ServiceRef>,
    pub endpoints: Interner<Endpoint>,
    pub tokens: Interner<u128>,
    pub contents: Interner<String>,
}

impl IndexRegistry {
    pub fn new(widths: IndexWidths) -> Self {
        IndexRegistry {
            addresses: Interner::new(widths.address_bits),
            services: Interner::new(widths.service_bits),
            endpoints: Interner::new(widths.endpoint_bits),
            tokens: Interner::new(widths.token_bits),
            contents: Interner::new(widths.content_bits),
        }
    }

    pub fn evictions(&self) -> u64 {
        self.addresses.evictions()
            + self.services.evictions()
            + self.endpoints.evictions()
            + self.tokens.evictions()
            + self.contents.evictions()
    }

    pub fn clear(&mut self) {
        self.addresses.clear();
        self.services.clear();
        self.endpoints.clear();
        self.tokens.clear();
        self.contents.clear();
    }
}
