use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::message::{NetAddress, Response, ServiceRef, Session, StatusDetail, StatusOrigin, StatusValue};

/// What the agent has learned about one machine.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MachineRecord {
    pub services: BTreeSet<ServiceRef>,
    pub sessions: BTreeSet<Session>,
}

/// Agent-centric world model: machines keyed by the address that answered,
/// with the services and sessions learned on each.
///
/// At most `capacity` machines are kept; the least recently touched one is
/// forgotten first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestructuredWorld {
    capacity: usize,
    machines: BTreeMap<NetAddress, MachineRecord>,
    /// Oldest first.
    order: Vec<NetAddress>,
    forgotten: u64,
}

impl RestructuredWorld {
    pub fn new(capacity: usize) -> Self {
        RestructuredWorld { capacity: capacity.max(1), machines: BTreeMap::new(), order: Vec::new(), forgotten: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.machines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.machines.is_empty()
    }

    pub fn machines(&self) -> &BTreeMap<NetAddress, MachineRecord> {
        &self.machines
    }

    pub fn machine(&self, ip: NetAddress) -> Option<&MachineRecord> {
        self.machines.get(&ip)
    }

    /// Machines ordered from most to least recently touched.
    pub fn by_recency(&self) -> impl Iterator<Item = (NetAddress, &MachineRecord)> {
        self.order.iter().rev().map(|ip| (*ip, &self.machines[ip]))
    }

    pub fn forgotten(&self) -> u64 {
        self.forgotten
    }

    pub fn clear(&mut self) {
        *self = RestructuredWorld::new(self.capacity);
    }

    fn touch(&mut self, ip: NetAddress) -> &mut MachineRecord {
        if let Some(pos) = self.order.iter().position(|a| *a == ip) {
            self.order.remove(pos);
        } else if self.machines.len() >= self.capacity {
            let victim = self.order.remove(0);
            self.machines.remove(&victim);
            self.forgotten += 1;
        }
        self.order.push(ip);
        self.machines.entry(ip).or_default()
    }

    /// Folds one response into the model. Network-level outcomes say nothing
    /// about the target and are ignored.
    pub fn apply(&mut self, r: &Response) {
        if let Some((ip, services, sessions)) = learned(r) {
            let rec = self.touch(ip);
            rec.services.extend(services);
            rec.sessions.extend(sessions);
        }
    }

    /// Deterministic byte form used for state keys.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_len(&mut out, self.machines.len());
        for (ip, rec) in &self.machines {
            out.extend_from_slice(&ip.bits().to_be_bytes());
            put_len(&mut out, rec.services.len());
            for s in &rec.services {
                put_str(&mut out, s.as_str());
            }
            put_len(&mut out, rec.sessions.len());
            for s in &rec.sessions {
                for e in [&s.start, &s.end] {
                    out.extend_from_slice(&e.ip.bits().to_be_bytes());
                    put_str(&mut out, e.service.as_str());
                }
            }
        }
        out
    }
}

type Learned = (NetAddress, Vec<ServiceRef>, Vec<Session>);

/// Facts a single response reveals, per machine.
pub(crate) fn learned(r: &Response) -> Option<Learned> {
    if r.status.origin == StatusOrigin::Network {
        return None;
    }
    let target = r.msg.dst_ip;
    let mut services = Vec::new();
    let mut sessions = Vec::new();
    let svc = &r.msg.dst_service;
    match (r.status.value, r.status.detail) {
        (StatusValue::Success, _) => {
            if !svc.is_node() {
                services.push(svc.clone());
            } else if r.status.origin == StatusOrigin::Service {
                services.extend(r.content.split(',').filter(|s| !s.is_empty()).map(ServiceRef::new));
            }
            if let Some(s) = &r.msg.session {
                sessions.push(s.clone());
            }
        }
        // the service answered, so it exists
        (StatusValue::Failure, StatusDetail::NotVulnerable | StatusDetail::NoSession) if !svc.is_node() => {
            services.push(svc.clone())
        }
        _ => {}
    }
    Some((target, services, sessions))
}

pub(crate) fn put_len(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u32).to_be_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_len(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::message::{Endpoint, Status};
    use proptest::prelude::*;

    pub(crate) fn answer(d: u8, service: &str, status: Status, content: &str, session: bool) -> Response {
        let mut r = Response::zeroed();
        r.msg.src_ip = NetAddress::v4(10, 0, 0, 10);
        r.msg.src_service = ServiceRef::new("aica");
        r.msg.dst_ip = NetAddress::v4(10, 0, 1, d);
        r.msg.dst_service = ServiceRef::new(service);
        r.status = status;
        r.content = content.into();
        if session {
            r.msg.session =
                Some(Session { start: Endpoint::new(r.msg.src_ip, "aica"), end: Endpoint::new(r.msg.dst_ip, service) });
        }
        r
    }

    fn ok(origin: StatusOrigin) -> Status {
        Status::new(origin, StatusValue::Success, StatusDetail::Ok)
    }

    /// Rebuild from scratch: pick the `m` most recently touched machines, then
    /// gather everything learned about each since it was last forgotten.
    fn oracle(responses: &[Response], m: usize) -> BTreeMap<NetAddress, MachineRecord> {
        let touches: Vec<(usize, Learned)> =
            responses.iter().enumerate().filter_map(|(i, r)| learned(r).map(|l| (i, l))).collect();
        // replay recency to find when each machine was last (re)admitted
        let mut live: Vec<NetAddress> = Vec::new();
        let mut admitted: BTreeMap<NetAddress, usize> = BTreeMap::new();
        for (i, (ip, _, _)) in &touches {
            if let Some(p) = live.iter().position(|a| a == ip) {
                live.remove(p);
            } else {
                if live.len() == m {
                    live.remove(0);
                }
                admitted.insert(*ip, *i);
            }
            live.push(*ip);
        }
        let mut out = BTreeMap::new();
        for ip in live {
            let since = admitted[&ip];
            let mut rec = MachineRecord::default();
            for (i, (a, svcs, sess)) in &touches {
                if *a == ip && *i >= since {
                    rec.services.extend(svcs.iter().cloned());
                    rec.sessions.extend(sess.iter().cloned());
                }
            }
            out.insert(ip, rec);
        }
        out
    }

    fn arb_answer() -> impl Strategy<Value = Response> {
        (
            0u8..6,
            proptest::sample::select(vec!["", "ssh", "http", "smb"]),
            proptest::sample::select(StatusOrigin::ALL),
            proptest::sample::select(StatusValue::ALL),
            proptest::sample::select(StatusDetail::ALL),
            proptest::sample::select(vec!["", "ssh,http", "7.2"]),
            any::<bool>(),
        )
            .prop_map(|(d, s, o, v, det, c, sess)| answer(d, s, Status::new(o, v, det), c, sess))
    }

    #[test]
    fn list_services_content_is_split() {
        let mut w = RestructuredWorld::new(8);
        w.apply(&answer(2, "", ok(StatusOrigin::Service), "http,ssh", false));
        let rec = w.machine(NetAddress::v4(10, 0, 1, 2)).unwrap();
        assert_eq!(rec.services.iter().map(|s| s.as_str()).collect::<Vec<_>>(), ["http", "ssh"]);
    }

    #[test]
    fn network_failures_are_ignored() {
        let mut w = RestructuredWorld::new(8);
        w.apply(&answer(
            2,
            "",
            Status::new(StatusOrigin::Network, StatusValue::Failure, StatusDetail::HostUnreachable),
            "",
            false,
        ));
        assert!(w.is_empty());
    }

    #[test]
    fn least_recent_machine_is_forgotten() {
        let mut w = RestructuredWorld::new(2);
        for d in [1, 2, 1, 3] {
            w.apply(&answer(d, "", ok(StatusOrigin::Node), "", false));
        }
        let live: Vec<_> = w.by_recency().map(|(ip, _)| ip).collect();
        assert_eq!(live, [NetAddress::v4(10, 0, 1, 3), NetAddress::v4(10, 0, 1, 1)]);
        assert_eq!(w.forgotten(), 1);
    }

    proptest! {
        #[test]
        fn matches_scan_oracle(rs in proptest::collection::vec(arb_answer(), 0..40), m in 1usize..5) {
            let mut w = RestructuredWorld::new(m);
            for r in &rs {
                w.apply(r);
            }
            prop_assert!(w.len() <= m);
            prop_assert_eq!(w.machines(), &oracle(&rs, m));
        }

        #[test]
        fn applying_twice_changes_nothing(rs in proptest::collection::vec(arb_answer(), 0..20), r in arb_answer()) {
            let mut w = RestructuredWorld::new(4);
            for x in &rs {
                w.apply(x);
            }
            w.apply(&r);
            let once = w.clone();
            w.apply(&r);
            prop_assert_eq!(w, once);
        }
    }
}
