use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::percept::{Payload, Snapshot, TimestampedPercept};
use super::PipelineError;
use crate::sim::Tick;

/// How percepts are cut into time slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum SlicingStrategy {
    /// Fixed windows of `window` ticks.
    Extend { window: u64 },
    /// Parallel windows of several lengths, each emitted separately.
    Multi { windows: Vec<u64> },
    /// Base windows of `window` ticks; a slice holding a request without
    /// its response waits up to `lookahead` further windows.
    Contextual { lookahead: u64, window: u64 },
}

impl SlicingStrategy {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: &str| Err(PipelineError::InvalidStrategy(format!("{self}: {msg}")));
        match self {
            SlicingStrategy::Extend { window } if *window == 0 => bad("window must be >= 1"),
            SlicingStrategy::Multi { windows } if windows.is_empty() => bad("no windows"),
            SlicingStrategy::Multi { windows } if windows.contains(&0) => bad("window must be >= 1"),
            SlicingStrategy::Contextual { window, .. } if *window == 0 => bad("window must be >= 1"),
            SlicingStrategy::Contextual { lookahead, .. } if *lookahead == 0 => bad("lookahead must be >= 1"),
            _ => Ok(()),
        }
    }

    /// The window length snapshots are tagged with; for `Multi` the shortest.
    pub fn primary_window(&self) -> u64 {
        match self {
            SlicingStrategy::Extend { window } | SlicingStrategy::Contextual { window, .. } => *window,
            SlicingStrategy::Multi { windows } => windows.iter().copied().min().unwrap_or(1),
        }
    }
}

impl Default for SlicingStrategy {
    fn default() -> Self {
        SlicingStrategy::Contextual { lookahead: 2, window: 1 }
    }
}

impl fmt::Display for SlicingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlicingStrategy::Extend { window } => write!(f, "extend:{window}"),
            SlicingStrategy::Multi { windows } => {
                let ws: Vec<String> = windows.iter().map(u64::to_string).collect();
                write!(f, "multi:{}", ws.join(","))
            }
            SlicingStrategy::Contextual { lookahead, window } => write!(f, "contextual:{lookahead},{window}"),
        }
    }
}

/// Parses `extend:W`, `multi:W1,W2,..` and `contextual:N,W`.
impl FromStr for SlicingStrategy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PipelineError::InvalidStrategy(s.to_string());
        let (name, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<u64> = args.split(',').map(|n| n.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let strategy = match (name.trim(), nums.as_slice()) {
            ("extend", [w]) => SlicingStrategy::Extend { window: *w },
            ("multi", ws) => SlicingStrategy::Multi { windows: ws.to_vec() },
            ("contextual", [n, w]) => SlicingStrategy::Contextual { lookahead: *n, window: *w },
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

#[derive(Debug, Default)]
struct Held {
    start: Tick,
    percepts: Vec<TimestampedPercept>,
    /// request id -> base window index it arrived in
    request_window: BTreeMap<u32, u64>,
}

/// The single serialization point between sensors and the world
/// representation. Deliveries may come from any thread; slices are closed by
/// the owner.
#[derive(Debug)]
pub struct SliceAligner {
    strategy: SlicingStrategy,
    pending: Mutex<Vec<TimestampedPercept>>,
    held: Option<Held>,
    emitted: u64,
    late: u64,
    last_close: Tick,
}

impl SliceAligner {
    pub fn new(strategy: SlicingStrategy) -> Result<Self, PipelineError> {
        strategy.validate()?;
        Ok(SliceAligner { strategy, pending: Mutex::new(Vec::new()), held: None, emitted: 0, late: 0, last_close: 0 })
    }

    pub fn strategy(&self) -> &SlicingStrategy {
        &self.strategy
    }

    pub fn ingest(&self, percept: TimestampedPercept) {
        self.pending.lock().push(percept);
    }

    pub fn ingest_all(&self, percepts: impl IntoIterator<Item = TimestampedPercept>) {
        self.pending.lock().extend(percepts);
    }

    /// Percepts that arrived after their window had already closed.
    pub fn late_percepts(&self) -> u64 {
        self.late
    }

    pub fn is_boundary(&self, tick: Tick) -> bool {
        match &self.strategy {
            SlicingStrategy::Extend { window } | SlicingStrategy::Contextual { window, .. } => {
                tick.is_multiple_of(*window)
            }
            SlicingStrategy::Multi { windows } => windows.iter().any(|w| tick.is_multiple_of(*w)),
        }
    }

    /// Emits every snapshot due at `tick`. Calling on a non-boundary tick
    /// returns nothing.
    pub fn close_slice(&mut self, tick: Tick) -> Vec<Snapshot> {
        if tick == 0 || !self.is_boundary(tick) {
            return Vec::new();
        }
        let out = match self.strategy.clone() {
            SlicingStrategy::Extend { window } => self.close_extend(tick, window),
            SlicingStrategy::Multi { windows } => self.close_multi(tick, &windows),
            SlicingStrategy::Contextual { lookahead, window } => self.close_contextual(tick, lookahead, window),
        };
        self.last_close = tick;
        out
    }

    /// Releases whatever is still buffered or held, e.g. at episode end.
    pub fn flush(&mut self, tick: Tick) -> Vec<Snapshot> {
        let mut out = Vec::new();
        let mut percepts: Vec<TimestampedPercept> = std::mem::take(&mut *self.pending.lock());
        let start = match self.held.take() {
            Some(held) => {
                let mut merged = held.percepts;
                merged.append(&mut percepts);
                percepts = merged;
                held.start
            }
            None => self.last_close,
        };
        if !percepts.is_empty() {
            let end = percepts.iter().map(|p| p.tick).max().unwrap_or(tick).max(tick);
            out.push(Snapshot::new(self.emitted, (start, end), self.strategy.primary_window(), percepts));
            self.emitted += 1;
        }
        out
    }

    /// Removes pending percepts with tick in `(start, end]`; anything at or
    /// before `start` is counted late and discarded.
    fn take_window(&mut self, start: Tick, end: Tick) -> Vec<TimestampedPercept> {
        let mut pending = self.pending.lock();
        let mut taken = Vec::new();
        let mut keep = Vec::with_capacity(pending.len());
        for p in pending.drain(..) {
            if p.tick > end {
                keep.push(p);
            } else if p.tick > start {
                taken.push(p);
            } else {
                self.late += 1;
            }
        }
        *pending = keep;
        taken
    }

    fn close_extend(&mut self, tick: Tick, window: u64) -> Vec<Snapshot> {
        let start = tick - window;
        let percepts = self.take_window(start, tick);
        let snap = Snapshot::new(self.emitted, (start, tick), window, percepts);
        self.emitted += 1;
        vec![snap]
    }

    fn close_multi(&mut self, tick: Tick, windows: &[u64]) -> Vec<Snapshot> {
        let lens: BTreeSet<u64> = windows.iter().copied().collect();
        let mut out = Vec::new();
        let mut pending = self.pending.lock();
        for &w in &lens {
            if !tick.is_multiple_of(w) {
                continue;
            }
            let start = tick.saturating_sub(w);
            let percepts: Vec<TimestampedPercept> =
                pending.iter().filter(|p| p.tick > start && p.tick <= tick).cloned().collect();
            out.push(Snapshot::new(tick / w - 1, (start, tick), w, percepts));
        }
        // a percept is done once every window length has closed over it
        pending.retain(|p| lens.iter().any(|&w| p.tick.div_ceil(w) * w > tick));
        self.emitted += out.len() as u64;
        out
    }

    fn close_contextual(&mut self, tick: Tick, lookahead: u64, window: u64) -> Vec<Snapshot> {
        let index = tick / window;
        let start = tick - window;
        let fresh = self.take_window(start, tick);
        let mut held = self.held.take().unwrap_or(Held { start, ..Held::default() });
        for p in &fresh {
            if let Payload::Request(r) = &p.payload {
                held.request_window.entry(r.msg.id).or_insert_with(|| p.tick.div_ceil(window));
            }
        }
        held.percepts.extend(fresh);

        let answered: BTreeSet<u32> = held
            .percepts
            .iter()
            .filter_map(|p| match &p.payload {
                Payload::Response(r) => Some(r.msg.id),
                _ => None,
            })
            .collect();
        let waiting: Vec<u64> =
            held.request_window.iter().filter(|(id, _)| !answered.contains(id)).map(|(_, &w)| w).collect();
        let expired = waiting.iter().any(|&w| w + lookahead <= index);
        if waiting.is_empty() || expired {
            let snap = Snapshot::new(self.emitted, (held.start, tick), window, held.percepts);
            self.emitted += 1;
            vec![snap]
        } else {
            self.held = Some(held);
            Vec::new()
        }
    }
}
