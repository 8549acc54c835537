//! Fallible perception: seeded fault injection, replica voting and baseline
//! probing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::message::fields::{diff_fields, get_field, set_field, FieldValue, RESPONSE_FIELDS};
use crate::message::{
    Action, Endpoint, MessageKind, NetAddress, Response, ServiceRef, Session, StatusDetail, StatusOrigin, StatusValue,
};
use crate::pipeline::{Payload, TimestampedPercept};
use crate::sim::Engine;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrustError {
    #[error("dropout probability {0} outside [0, 1]")]
    InvalidProbability(String),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("voting needs an odd number of at least 3 replicas, got {0}")]
    ReplicaCount(usize),
    #[error("replicas do not agree on a message id at position {0}")]
    Alignment(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FaultMode {
    /// Each percept is lost independently with probability `p`.
    Dropout { p: f64 },
    /// Every response is replaced by `recorded`, or by the first response
    /// seen when none is given.
    Stuck {
        #[serde(default)]
        recorded: Option<Box<Response>>,
    },
    /// The listed fields get pseudo-random values from their domain.
    Flip { fields: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub sensor: String,
    pub seed: u64,
    /// Replica the fault is confined to. Without one the fault sits upstream
    /// of replication and every replica sees it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica: Option<usize>,
    #[serde(flatten)]
    pub mode: FaultMode,
}

impl FaultConfig {
    pub fn validate(&self) -> Result<(), TrustError> {
        match &self.mode {
            FaultMode::Dropout { p } if !(0.0..=1.0).contains(p) => Err(TrustError::InvalidProbability(p.to_string())),
            FaultMode::Flip { fields } => match fields.iter().find(|f| !RESPONSE_FIELDS.contains(&f.as_str())) {
                Some(f) => Err(TrustError::UnknownField(f.clone())),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Stateful fault applied to one sensor's percept stream.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    mode: FaultMode,
    rng: ChaCha8Rng,
}

impl FaultInjector {
    pub fn new(config: &FaultConfig) -> Result<Self, TrustError> {
        config.validate()?;
        Ok(FaultInjector { mode: config.mode.clone(), rng: ChaCha8Rng::seed_from_u64(config.seed) })
    }

    /// Passes one percept through the fault; `None` means it was lost.
    pub fn apply(&mut self, mut percept: TimestampedPercept) -> Option<TimestampedPercept> {
        match &mut self.mode {
            FaultMode::Dropout { p } => {
                let p = *p;
                // always draw so the stream position alone decides the outcome
                let roll: f64 = self.rng.gen();
                (roll >= p).then_some(percept)
            }
            FaultMode::Stuck { recorded } => {
                if let Payload::Response(r) = &mut percept.payload {
                    match recorded {
                        Some(stuck) => *r = (**stuck).clone(),
                        None => *recorded = Some(Box::new(r.clone())),
                    }
                }
                Some(percept)
            }
            FaultMode::Flip { fields } => {
                if let Payload::Response(r) = &mut percept.payload {
                    for f in fields.iter() {
                        flip_field(r, f, &mut self.rng);
                    }
                }
                Some(percept)
            }
        }
    }

    /// Convenience for a bare response stream.
    pub fn apply_response(&mut self, r: Response) -> Option<Response> {
        self.apply(TimestampedPercept::new(0, "", Payload::Response(r))).map(|p| match p.payload {
            Payload::Response(r) => r,
            _ => unreachable!("fault keeps the payload type"),
        })
    }
}

/// Runs a whole stream through a fresh injector.
pub fn inject(config: &FaultConfig, stream: Vec<TimestampedPercept>) -> Result<Vec<TimestampedPercept>, TrustError> {
    let mut f = FaultInjector::new(config)?;
    Ok(stream.into_iter().filter_map(|p| f.apply(p)).collect())
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let len = rng.gen_range(1..=max);
    (0..len).map(|_| char::from(b'a' + rng.gen_range(0..26))).collect()
}

fn random_value(current: &FieldValue, field: &str, rng: &mut ChaCha8Rng) -> FieldValue {
    fn pick<T: Copy>(all: &[T], rng: &mut ChaCha8Rng) -> T {
        all[rng.gen_range(0..all.len())]
    }
    match current {
        FieldValue::Int(_) => FieldValue::Int(match field {
            "ttl" => rng.gen::<u8>().into(),
            "auth_token" => rng.gen(),
            _ => rng.gen::<u32>().into(),
        }),
        FieldValue::Kind(_) => FieldValue::Kind(pick(&[MessageKind::Request, MessageKind::Response], rng)),
        FieldValue::Address(_) => FieldValue::Address(NetAddress::v4(10, rng.gen(), rng.gen(), rng.gen())),
        FieldValue::Service(_) => FieldValue::Service(ServiceRef::new(&random_text(rng, 8))),
        FieldValue::Session(_) => FieldValue::Session(rng.gen_bool(0.5).then(|| Session {
            start: Endpoint::new(
                NetAddress::v4(10, rng.gen(), rng.gen(), rng.gen()),
                ServiceRef::new(&random_text(rng, 8)),
            ),
            end: Endpoint::new(
                NetAddress::v4(10, rng.gen(), rng.gen(), rng.gen()),
                ServiceRef::new(&random_text(rng, 8)),
            ),
        })),
        FieldValue::Origin(_) => FieldValue::Origin(pick(StatusOrigin::ALL, rng)),
        FieldValue::Value(_) => FieldValue::Value(pick(StatusValue::ALL, rng)),
        FieldValue::Detail(_) => FieldValue::Detail(pick(StatusDetail::ALL, rng)),
        FieldValue::Text(_) => FieldValue::Text(random_text(rng, 16)),
    }
}

/// Replaces `field` with a different in-domain value.
fn flip_field(r: &mut Response, field: &str, rng: &mut ChaCha8Rng) {
    let Ok(current) = get_field(r, field) else { return };
    loop {
        let candidate = random_value(&current, field, rng);
        if candidate != current {
            set_field(r, field, candidate).expect("generated value matches the field type");
            return;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteOutcome {
    pub percept: Response,
    /// Fields on which no strict majority existed.
    pub untrusted: Vec<&'static str>,
}

impl VoteOutcome {
    pub fn is_flagged(&self) -> bool {
        !self.untrusted.is_empty()
    }
}

/// Field-wise strict majority over the replicas' percepts at `position`.
pub fn vote(replicas: &[Vec<Response>], position: usize) -> Result<VoteOutcome, TrustError> {
    let r = replicas.len();
    if r < 3 || r.is_multiple_of(2) {
        return Err(TrustError::ReplicaCount(r));
    }
    let present: Vec<&Response> = replicas.iter().filter_map(|s| s.get(position)).collect();
    let need = r / 2 + 1;
    let mut ids: BTreeMap<u32, usize> = BTreeMap::new();
    for p in &present {
        *ids.entry(p.msg.id).or_default() += 1;
    }
    let id = ids.into_iter().find(|&(_, n)| n >= need).map(|(id, _)| id).ok_or(TrustError::Alignment(position))?;
    let mut out = present.iter().find(|p| p.msg.id == id).map(|p| (*p).clone()).expect("majority id is present");
    let mut untrusted = Vec::new();
    for field in RESPONSE_FIELDS {
        let values: Vec<FieldValue> = present.iter().filter_map(|p| get_field(p, field).ok()).collect();
        let winner = values.iter().find(|v| values.iter().filter(|w| w == v).count() >= need);
        match winner {
            Some(v) => set_field(&mut out, field, v.clone()).expect("value read from the same field"),
            None => untrusted.push(field),
        }
    }
    Ok(VoteOutcome { percept: out, untrusted })
}

/// Votes every position up to the longest replica.
pub fn vote_stream(replicas: &[Vec<Response>]) -> Result<Vec<VoteOutcome>, TrustError> {
    let len = replicas.iter().map(Vec::len).max().unwrap_or(0);
    (0..len).map(|i| vote(replicas, i)).collect()
}

/// A probe and the answer recorded while the environment was known to be clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub action: Action,
    pub target: Endpoint,
    pub recorded: Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Match,
    Deviation(Vec<&'static str>),
}

/// Fields ignored when comparing against a baseline.
pub const TRANSPORT_FIELDS: [&str; 2] = ["id", "ttl"];

/// Ticks to wait for a probe answer.
pub const PROBE_TIMEOUT: u64 = 256;

fn run_probe(engine: &mut Engine, action: &Action, target: &Endpoint) -> Option<Response> {
    let req = engine.new_request(action.clone(), target.clone(), None);
    let id = req.msg.id;
    engine.submit_request(req).ok()?;
    for _ in 0..PROBE_TIMEOUT {
        if let Some(r) = engine.step().into_iter().find(|r| r.msg.id == id) {
            return Some(r);
        }
    }
    None
}

/// Records a baseline by probing now. Call only while the run is clean.
pub fn record_baseline(engine: &mut Engine, action: Action, target: Endpoint) -> Option<Baseline> {
    let recorded = run_probe(engine, &action, &target)?;
    Some(Baseline { action, target, recorded })
}

/// Re-probes and compares with the baseline. The answer passes through
/// `fault` when given, as it would through a faulty sensor.
pub fn probe_baseline(engine: &mut Engine, baseline: &Baseline, fault: Option<&mut FaultInjector>) -> Verdict {
    let all = || RESPONSE_FIELDS.iter().copied().filter(|f| !TRANSPORT_FIELDS.contains(f)).collect();
    let Some(mut answer) = run_probe(engine, &baseline.action, &baseline.target) else {
        return Verdict::Deviation(all());
    };
    if let Some(f) = fault {
        match f.apply_response(answer) {
            Some(a) => answer = a,
            None => return Verdict::Deviation(all()),
        }
    }
    let diff: Vec<&'static str> =
        diff_fields(&baseline.recorded, &answer).into_iter().filter(|f| !TRANSPORT_FIELDS.contains(f)).collect();
    if diff.is_empty() {
        Verdict::Match
    } else {
        Verdict::Deviation(diff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::Status;

    fn stream(n: u32) -> Vec<Response> {
        (1..=n)
            .map(|i| {
                let mut r = Response::zeroed();
                r.msg.id = i;
                r.msg.dst_ip = NetAddress::v4(10, 0, 1, (i % 7) as u8);
                r.msg.dst_service = ServiceRef::new(["ssh", "http", ""][i as usize % 3]);
                r.status = Status::new(StatusOrigin::Service, StatusValue::Success, StatusDetail::Ok);
                r.content = format!("v{}", i % 5);
                r
            })
            .collect()
    }

    fn percepts(rs: &[Response]) -> Vec<TimestampedPercept> {
        rs.iter()
            .enumerate()
            .map(|(i, r)| TimestampedPercept::new(i as u64, "response_sensor", Payload::Response(r.clone())))
            .collect()
    }

    fn cfg(mode: FaultMode, seed: u64) -> FaultConfig {
        FaultConfig { sensor: "response_sensor".into(), seed, replica: None, mode }
    }

    fn responses(ps: Vec<TimestampedPercept>) -> Vec<Response> {
        ps.into_iter()
            .filter_map(|p| match p.payload {
                Payload::Response(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn dropout_extremes() {
        let s = percepts(&stream(20));
        assert_eq!(inject(&cfg(FaultMode::Dropout { p: 0.0 }, 1), s.clone()).unwrap(), s);
        assert!(inject(&cfg(FaultMode::Dropout { p: 1.0 }, 1), s).unwrap().is_empty());
        assert!(cfg(FaultMode::Dropout { p: 1.5 }, 1).validate().is_err());
    }

    #[test]
    fn flip_is_reproducible_and_different() {
        let s = percepts(&stream(10));
        let c = cfg(FaultMode::Flip { fields: vec!["status.value".into()] }, 7);
        let a = responses(inject(&c, s.clone()).unwrap());
        let b = responses(inject(&c, s.clone()).unwrap());
        assert_eq!(a, b);
        for (orig, flipped) in stream(10).iter().zip(&a) {
            assert_eq!(diff_fields(orig, flipped), ["status.value"]);
        }
        assert!(cfg(FaultMode::Flip { fields: vec!["colour".into()] }, 7).validate().is_err());
    }

    #[test]
    fn stuck_replays_the_first_response() {
        let out = responses(inject(&cfg(FaultMode::Stuck { recorded: None }, 0), percepts(&stream(5))).unwrap());
        assert!(out.iter().all(|r| *r == stream(5)[0]));
    }

    #[test]
    fn majority_beats_one_stuck_replica() {
        let clean = stream(50);
        let stuck = responses(inject(&cfg(FaultMode::Stuck { recorded: None }, 0), percepts(&clean)).unwrap());
        let voted = vote_stream(&[clean.clone(), stuck, clean.clone()]).unwrap();
        assert!(voted.iter().zip(&clean).all(|(v, c)| v.percept == *c && !v.is_flagged()));
    }

    #[test]
    fn three_way_disagreement_is_flagged() {
        let base = stream(1);
        let mut b = base.clone();
        b[0].content = "other".into();
        let mut c = base.clone();
        c[0].content = "third".into();
        let out = vote(&[base, b, c], 0).unwrap();
        assert_eq!(out.untrusted, ["content"]);
    }

    #[test]
    fn misaligned_ids_fail() {
        let a = stream(1);
        let mut b = a.clone();
        b[0].msg.id = 9;
        let mut c = a.clone();
        c[0].msg.id = 10;
        assert_eq!(vote(&[a.clone(), b, c], 0), Err(TrustError::Alignment(0)));
        assert_eq!(vote(&[a.clone(), a], 0), Err(TrustError::ReplicaCount(2)));
    }

    #[test]
    fn upstream_fault_defeats_voting() {
        let clean = stream(30);
        let c = cfg(FaultMode::Flip { fields: vec!["content".into()] }, 3);
        let upstream = responses(inject(&c, percepts(&clean)).unwrap());
        let voted = vote_stream(&[upstream.clone(), upstream.clone(), upstream]).unwrap();
        assert!(voted.iter().zip(&clean).all(|(v, c)| v.percept != *c && !v.is_flagged()));
    }

    fn engine() -> Engine {
        use crate::sim::{AttachedSubnet, Node, Router, ServiceInstance, Topology};
        let a = |s: &str| s.parse::<NetAddress>().unwrap();
        let nodes = vec![
            Node {
                name: "agent".into(),
                addresses: vec![a("10.0.0.10")],
                services: vec![ServiceInstance::new("aica", "1")],
            },
            Node {
                name: "web".into(),
                addresses: vec![a("10.0.0.2")],
                services: vec![ServiceInstance::new("ssh", "7.2")],
            },
        ];
        let routers = vec![Router {
            name: "r1".into(),
            attached_subnets: vec![AttachedSubnet {
                prefix: "10.0.0.0/24".parse().unwrap(),
                members: vec![a("10.0.0.10"), a("10.0.0.2")],
            }],
            links: vec![],
        }];
        let topo = Topology::new(nodes, routers, 0, "aica".into(), Endpoint::new(a("10.0.0.2"), "ssh")).unwrap();
        Engine::new(std::sync::Arc::new(topo), Default::default(), 1)
    }

    #[test]
    fn baseline_probe_reports_flipped_fields() {
        let mut e = engine();
        let target = Endpoint::new(NetAddress::v4(10, 0, 0, 2), "ssh");
        let b = record_baseline(&mut e, Action::ListServices, target).unwrap();
        assert_eq!(probe_baseline(&mut e, &b, None), Verdict::Match);
        let mut f = FaultInjector::new(&cfg(FaultMode::Flip { fields: vec!["status.value".into()] }, 7)).unwrap();
        assert_eq!(probe_baseline(&mut e, &b, Some(&mut f)), Verdict::Deviation(vec!["status.value"]));
        let mut gone = FaultInjector::new(&cfg(FaultMode::Dropout { p: 1.0 }, 0)).unwrap();
        assert!(matches!(probe_baseline(&mut e, &b, Some(&mut gone)), Verdict::Deviation(f) if f.len() == 14));
    }
}
