use std::collections::BTreeMap;

use serde::Serialize;

use super::world::{put_len, put_str};
use crate::message::{Action, NetAddress, Request, Response, ServiceRef, StatusDetail, StatusOrigin};
use crate::sim::{Tick, VulnerabilityList};

/// Upper bounds of the elapsed-time buckets; the last bucket is open.
pub const TIME_BUCKETS: [u64; 8] = [0, 1, 3, 7, 15, 31, 63, 127];

/// Bucket of an elapsed tick count: 0, 1, 2-3, 4-7, ..., 64-127, 128+.
pub fn time_bucket(elapsed: u64) -> u8 {
    TIME_BUCKETS.iter().position(|&hi| elapsed <= hi).unwrap_or(TIME_BUCKETS.len()) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceHistoryRecord {
    pub ip: NetAddress,
    pub name: ServiceRef,
    /// Empty until a version banner has been seen.
    pub version: String,
    pub vulnerable: bool,
    pub exploitation_attempts: u32,
    pub last_attempt: Option<Tick>,
}

impl ServiceHistoryRecord {
    fn new(ip: NetAddress, name: ServiceRef) -> Self {
        ServiceHistoryRecord {
            ip,
            name,
            version: String::new(),
            vulnerable: false,
            exploitation_attempts: 0,
            last_attempt: None,
        }
    }

    pub fn time_since_last_attempt(&self, now: Tick) -> Option<u64> {
        self.last_attempt.map(|t| now.saturating_sub(t))
    }
}

/// Per-service memory of exploitation attempts, built from the agent's own
/// requests paired with their responses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceHistory {
    records: BTreeMap<(NetAddress, ServiceRef), ServiceHistoryRecord>,
    pending: BTreeMap<u32, Action>,
    vulns: VulnerabilityList,
    now: Tick,
}

/// Attempts are saturated at this count in the state key.
pub const ATTEMPT_CAP: u32 = 7;

impl ServiceHistory {
    pub fn new() -> Self {
        ServiceHistory::default()
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn advance(&mut self, tick: Tick) {
        self.now = self.now.max(tick);
    }

    pub fn records(&self) -> impl Iterator<Item = &ServiceHistoryRecord> {
        self.records.values()
    }

    pub fn record(&self, ip: NetAddress, name: &str) -> Option<&ServiceHistoryRecord> {
        self.records.get(&(ip, ServiceRef::new(name)))
    }

    fn entry(&mut self, ip: NetAddress, name: &ServiceRef) -> &mut ServiceHistoryRecord {
        self.records.entry((ip, name.clone())).or_insert_with(|| ServiceHistoryRecord::new(ip, name.clone()))
    }

    pub fn observe_request(&mut self, req: &Request, tick: Tick) {
        self.advance(tick);
        if req.action == Action::Exploit {
            let now = self.now;
            let rec = self.entry(req.msg.dst_ip, &req.msg.dst_service);
            rec.exploitation_attempts += 1;
            rec.last_attempt = Some(now);
        }
        self.pending.insert(req.msg.id, req.action.clone());
    }

    pub fn observe_response(&mut self, resp: &Response, tick: Tick) {
        self.advance(tick);
        let Some(action) = self.pending.remove(&resp.msg.id) else { return };
        if resp.status.origin != StatusOrigin::Service {
            return;
        }
        let ip = resp.msg.dst_ip;
        match action {
            Action::Exploit if matches!(resp.status.detail, StatusDetail::Ok | StatusDetail::NotVulnerable) => {
                let vulnerable = self.vulns.contains(&resp.msg.dst_service, &resp.content);
                let rec = self.entry(ip, &resp.msg.dst_service);
                rec.version = resp.content.clone();
                rec.vulnerable = vulnerable;
            }
            Action::ListServices if resp.status.is_success() => {
                for name in resp.content.split(',').filter(|s| !s.is_empty()) {
                    self.entry(ip, &ServiceRef::new(name));
                }
            }
            _ => {}
        }
    }

    /// Adds feed entries and re-evaluates every known (name, version).
    pub fn learn_vulnerabilities<'a>(&mut self, entries: impl IntoIterator<Item = &'a crate::sim::VulnEntry>) {
        for e in entries {
            self.vulns.insert(e.clone());
        }
        for rec in self.records.values_mut() {
            rec.vulnerable = !rec.version.is_empty() && self.vulns.contains(&rec.name, &rec.version);
        }
    }

    /// Attempts summed per (service name, version).
    pub fn attempts_by_version(&self) -> BTreeMap<(String, String), u32> {
        let mut out = BTreeMap::new();
        for r in self.records.values() {
            *out.entry((r.name.as_str().to_string(), r.version.clone())).or_default() += r.exploitation_attempts;
        }
        out
    }

    pub fn clear(&mut self) {
        *self = ServiceHistory::default();
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_len(&mut out, self.records.len());
        for r in self.records.values() {
            out.extend_from_slice(&r.ip.bits().to_be_bytes());
            put_str(&mut out, r.name.as_str());
            put_str(&mut out, &r.version);
            out.push(r.vulnerable.into());
            out.push(r.exploitation_attempts.min(ATTEMPT_CAP) as u8);
            out.push(r.time_since_last_attempt(self.now).map_or(u8::MAX, time_bucket));
        }
        out
    }
}
