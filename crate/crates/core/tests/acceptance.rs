//! End-to-end acceptance checks. Each criterion runs against an independent
//! oracle written here and must finish inside its time limit. One line per
//! criterion is printed to stderr; run with `--nocapture` to see them inline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use percept_lab::budget::{BudgetEnvelope, OffReason, PowerBudget, SensorSpec, MAX_STRETCH};
use percept_lab::harness::{run_experiment, write_metrics_csv};
use percept_lab::message::{
    default_layout, Action, Endpoint, Message, MessageKind, Metadata, NetAddress, Request, Response, ServiceRef,
    Session, Status, StatusDetail, StatusOrigin, StatusValue, DEFAULT_FIELDS,
};
use percept_lab::pipeline::{
    count_split_pairs, Payload, SensorConfig, SensorMode, SliceAligner, SlicingStrategy, Snapshot, TimestampedPercept,
};
use percept_lab::repr::{
    decode_verbatim, encode_verbatim, time_bucket, IndexedCodec, IndexedConfig, Interner, ReprError, RestructuredWorld,
    ServiceHistory, StaticElim,
};
use percept_lab::scenario::Scenario;
use percept_lab::trust::{inject, vote_stream, FaultConfig, FaultMode};

fn report(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

fn check(n: usize, name: &str, limit: Duration, f: fn()) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (ok, why) = match result {
        Err(_) => (false, "assertion failed".to_string()),
        Ok(()) if elapsed > limit => (false, format!("over time limit {limit:?}")),
        Ok(()) => (true, String::new()),
    };
    let verdict = if ok { "PASS" } else { "FAIL" };
    report(&format!("criterion {n:>2} {verdict} {name} ({:.3}s) {why}", elapsed.as_secs_f64()));
    ok
}

#[test]
fn acceptance() {
    let criteria: [(&str, Duration, fn()); 11] = [
        ("verbatim width", Duration::from_millis(1), verbatim_width),
        ("codec round-trips", Duration::from_secs(5), codec_round_trips),
        ("width ordering in compare output", Duration::from_secs(60), width_ordering),
        ("registry matches LRU oracle", Duration::from_secs(5), registry_oracle),
        ("restructured world matches rebuild", Duration::from_secs(10), world_oracle),
        ("service history matches scan", Duration::from_secs(5), history_oracle),
        ("slicing keeps pairs together", Duration::from_secs(5), slicing),
        ("budget safety and priority", Duration::from_secs(10), budget_safety),
        ("trust voting", Duration::from_secs(5), trust_voting),
        ("reproducible learning", Duration::from_secs(60), reproducible_learning),
        ("mapping drift", Duration::from_secs(1), mapping_drift),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        if !check(i + 1, name, limit, f) {
            failed.push(i + 1);
        }
    }
    report(&format!("acceptance: {} of 11 passed", 11 - failed.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---- generators ----

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789.-_,";

fn text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    let s: String = (0..len).map(|_| *ALPHABET.choose(rng).unwrap() as char).collect();
    s
}

fn address(rng: &mut ChaCha8Rng) -> NetAddress {
    if rng.gen_bool(0.5) {
        NetAddress::v4(rng.gen(), rng.gen(), rng.gen(), rng.gen())
    } else {
        NetAddress::from_bits(rng.gen())
    }
}

fn endpoint(rng: &mut ChaCha8Rng) -> Endpoint {
    Endpoint::new(address(rng), ServiceRef::new(&text(rng, 32)))
}

fn status(rng: &mut ChaCha8Rng) -> Status {
    Status::new(
        *StatusOrigin::ALL.choose(rng).unwrap(),
        *StatusValue::ALL.choose(rng).unwrap(),
        *StatusDetail::ALL.choose(rng).unwrap(),
    )
}

fn metadata(rng: &mut ChaCha8Rng) -> Metadata {
    Metadata { packet_count: rng.gen(), byte_count: rng.gen(), duration_ticks: rng.gen() }
}

fn canonical_response(rng: &mut ChaCha8Rng) -> Response {
    let src = endpoint(rng);
    let dst = endpoint(rng);
    let session = if rng.gen_bool(0.5) { Session::new(endpoint(rng), endpoint(rng)).ok() } else { None };
    Response {
        msg: Message {
            id: rng.gen(),
            kind: MessageKind::Response,
            src_ip: src.ip,
            dst_ip: dst.ip,
            src_service: src.service,
            dst_service: dst.service,
            ttl: rng.gen(),
            metadata: metadata(rng),
            auth_token: rng.gen(),
            session,
        },
        status: status(rng),
        content: text(rng, 32),
    }
}

// ---- 1 ----

fn verbatim_width() {
    let layout = default_layout();
    let independent: u32 = 32 + 1 + 128 + 128 + 256 + 256 + 8 + 3 * 32 + 128 + 1 + 2 * 384 + 2 + 2 + 8 + 256;
    assert_eq!(independent, 2070);
    assert_eq!(DEFAULT_FIELDS.iter().map(|(_, w)| w).sum::<u32>(), independent);
    assert_eq!(layout.total_width(), independent);
    assert!(layout.total_width() > 1500);
}

// ---- 2 ----

fn codec_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let r = canonical_response(&mut rng);
        assert!(r.is_canonical());
        let v = encode_verbatim(&r).unwrap();
        assert_eq!(v.width(), 2070);
        assert_eq!(decode_verbatim(&v).unwrap(), r);
    }

    let loaded = Scenario::reference().load().unwrap();
    let profile = loaded.profile.clone();
    let codec = StaticElim::new(profile.clone()).unwrap();
    assert_eq!(codec.layout().total_width(), 1161);
    for _ in 0..10_000 {
        let own_ip = *profile.own_addresses.choose(&mut rng).unwrap();
        let own = Endpoint::new(own_ip, profile.own_service.clone());
        let net = profile.operating_subnets.choose(&mut rng).unwrap();
        let dst_ip = net.prefix.host(rng.gen_range(0..u128::from(net.max_hosts))).unwrap();
        let mut r = canonical_response(&mut rng);
        r.msg.src_ip = own.ip;
        r.msg.src_service = own.service.clone();
        r.msg.dst_ip = dst_ip;
        if let Some(s) = r.msg.session.as_mut() {
            s.start = own.clone();
            if s.end == s.start {
                r.msg.session = None;
            }
        }
        let back = codec.reconstruct(&codec.encode(&r).unwrap()).unwrap();
        let mut expected = r;
        expected.msg.id = 0;
        assert_eq!(back, expected);
    }
}

// ---- 3 ----

fn width_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = percept_lab::cli::run(
        ["percept-lab", "compare", "--episodes", "2", "--seed", "1", "--out", &out],
        &mut stdout,
        &mut stderr,
    );
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&stderr));
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let width = |name: &str| -> u32 {
        let prefix = format!("{name},");
        let line = csv.lines().find(|l| l.starts_with(&prefix)).unwrap_or_else(|| panic!("no {name} row"));
        line[prefix.len()..].split(',').next().unwrap().parse().unwrap()
    };
    assert!(csv.lines().any(|l| l.starts_with("indexed,68,")));
    assert!(csv.lines().any(|l| l.starts_with("static_elim,1161,")));
    assert!(csv.lines().any(|l| l.starts_with("verbatim,2070,")));
    assert!(width("indexed") < width("static_elim"));
    assert!(width("static_elim") < width("verbatim"));
}

// ---- 4 ----

/// Slots plus a recency list, oldest first; lowest free slot is used first.
struct LruOracle {
    slots: Vec<Option<(u32, u64)>>,
    generations: Vec<u64>,
    recency: Vec<usize>,
    evictions: u64,
}

impl LruOracle {
    fn new(capacity: usize) -> Self {
        LruOracle { slots: vec![None; capacity], generations: vec![0; capacity], recency: Vec::new(), evictions: 0 }
    }

    fn intern(&mut self, v: u32) -> (u32, u64, Option<u32>) {
        if let Some(i) = self.slots.iter().position(|s| matches!(s, Some((x, _)) if *x == v)) {
            self.recency.retain(|&j| j != i);
            self.recency.push(i);
            return (i as u32, self.slots[i].unwrap().1, None);
        }
        let (i, evicted) = match self.slots.iter().position(Option::is_none) {
            Some(i) => (i, None),
            None => {
                let victim = self.recency.remove(0);
                self.evictions += 1;
                (victim, self.slots[victim].map(|(x, _)| x))
            }
        };
        self.generations[i] += 1;
        self.slots[i] = Some((v, self.generations[i]));
        self.recency.retain(|&j| j != i);
        self.recency.push(i);
        (i as u32, self.generations[i], evicted)
    }

    fn resolve(&self, i: u32) -> Option<u32> {
        self.slots.get(i as usize).copied().flatten().map(|(v, _)| v)
    }

    fn resolve_at(&self, i: u32, g: u64) -> Option<u32> {
        match self.slots.get(i as usize).copied().flatten() {
            Some((v, gen)) if gen == g => Some(v),
            _ => None,
        }
    }
}

fn registry_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for bits in [1u32, 2, 4] {
        let capacity = 1usize << bits;
        for _ in 0..10_000 {
            let mut sut: Interner<u32> = Interner::new(bits);
            let mut oracle = LruOracle::new(capacity);
            let mut issued: Vec<(u32, u64)> = Vec::new();
            let domain = (capacity * 2) as u32;
            for _ in 0..rng.gen_range(1..40) {
                match rng.gen_range(0..4) {
                    0 | 1 => {
                        let v = rng.gen_range(0..domain);
                        let got = sut.intern(&v);
                        let want = oracle.intern(v);
                        assert_eq!((got.index, got.generation, got.evicted), want);
                        issued.push((got.index, got.generation));
                    }
                    2 => {
                        let i = rng.gen_range(0..capacity as u32 + 1);
                        match (sut.resolve(i), oracle.resolve(i)) {
                            (Ok(v), Some(w)) => assert_eq!(*v, w),
                            (Err(ReprError::StaleIndex { index, .. }), None) => assert_eq!(index, i),
                            (got, want) => panic!("resolve({i}): {got:?} vs {want:?}"),
                        }
                    }
                    _ => {
                        let Some(&(i, g)) = issued.choose(&mut rng) else { continue };
                        match (sut.resolve_at(i, g), oracle.resolve_at(i, g)) {
                            (Ok(v), Some(w)) => assert_eq!(*v, w),
                            (Err(ReprError::StaleIndex { index, generation }), None) => {
                                assert_eq!((index, generation), (i, Some(g)))
                            }
                            (got, want) => panic!("resolve_at({i}, {g}): {got:?} vs {want:?}"),
                        }
                    }
                }
                assert_eq!(sut.evictions(), oracle.evictions);
            }
        }
    }
}

// ---- 5 ----

const SERVICES: [&str; 5] = ["", "http", "ssh", "smb", "mysql"];
const CONTENTS: [&str; 5] = ["", "http,ssh", "smb", "mysql,,ssh", "2.4"];

fn world_response(rng: &mut ChaCha8Rng, hosts: u8) -> Response {
    let mut r = Response::zeroed();
    r.msg.id = rng.gen();
    r.msg.src_ip = NetAddress::v4(10, 0, 0, 10);
    r.msg.src_service = ServiceRef::new("aica");
    r.msg.dst_ip = NetAddress::v4(10, 0, 1, rng.gen_range(1..=hosts));
    r.msg.dst_service = ServiceRef::new(SERVICES.choose(rng).unwrap());
    if rng.gen_bool(0.3) {
        let end = Endpoint::new(r.msg.dst_ip, ServiceRef::new(SERVICES[rng.gen_range(1..SERVICES.len())]));
        r.msg.session = Session::new(Endpoint::new(r.msg.src_ip, r.msg.src_service.clone()), end).ok();
    }
    r.status = status(rng);
    r.content = CONTENTS.choose(rng).unwrap().to_string();
    r
}

type OracleMachine = (BTreeSet<String>, BTreeSet<Session>);

/// Rebuilds the world from the whole prefix: facts per response, then an LRU
/// over the machines touched.
fn rebuild(trace: &[Response], capacity: usize) -> (Vec<(NetAddress, OracleMachine)>, u64) {
    let mut order: Vec<NetAddress> = Vec::new();
    let mut facts: BTreeMap<NetAddress, OracleMachine> = BTreeMap::new();
    let mut forgotten = 0;
    for r in trace {
        if r.status.origin == StatusOrigin::Network {
            continue;
        }
        let svc = r.msg.dst_service.as_str();
        let mut services = BTreeSet::new();
        let mut sessions = BTreeSet::new();
        if r.status.value == StatusValue::Success {
            if !svc.is_empty() {
                services.insert(svc.to_string());
            } else if r.status.origin == StatusOrigin::Service {
                services.extend(r.content.split(',').filter(|s| !s.is_empty()).map(str::to_string));
            }
            sessions.extend(r.msg.session.clone());
        } else if r.status.value == StatusValue::Failure
            && matches!(r.status.detail, StatusDetail::NotVulnerable | StatusDetail::NoSession)
            && !svc.is_empty()
        {
            services.insert(svc.to_string());
        }
        let ip = r.msg.dst_ip;
        if let Some(pos) = order.iter().position(|a| *a == ip) {
            order.remove(pos);
        } else if order.len() >= capacity {
            let victim = order.remove(0);
            facts.remove(&victim);
            forgotten += 1;
        }
        order.push(ip);
        let m = facts.entry(ip).or_default();
        m.0.extend(services);
        m.1.extend(sessions);
    }
    let newest_first = order.iter().rev().map(|ip| (*ip, facts[ip].clone())).collect();
    (newest_first, forgotten)
}

fn world_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trace_no in 0..100 {
        let capacity = if trace_no % 2 == 0 { 3 } else { 16 };
        let len = rng.gen_range(1..=200);
        let trace: Vec<Response> = (0..len).map(|_| world_response(&mut rng, 8)).collect();
        let mut world = RestructuredWorld::new(capacity);
        for (i, r) in trace.iter().enumerate() {
            world.apply(r);
            let (want, forgotten) = rebuild(&trace[..=i], capacity);
            let got: Vec<(NetAddress, OracleMachine)> = world
                .by_recency()
                .map(|(ip, m)| {
                    let services = m.services.iter().map(|s| s.as_str().to_string()).collect();
                    (ip, (services, m.sessions.clone()))
                })
                .collect();
            assert_eq!(got, want, "trace {trace_no} message {i}");
            assert_eq!(world.forgotten(), forgotten);
            assert_eq!(world.len(), want.len());
        }
    }
}

// ---- 6 ----

enum Traced {
    Req(Request, u64),
    Resp(Response, u64),
}

fn history_trace(rng: &mut ChaCha8Rng) -> Vec<Traced> {
    let agent = Endpoint::new(NetAddress::v4(10, 0, 0, 10), "aica");
    let actions = [Action::Ping, Action::ListServices, Action::Exploit, Action::Exploit, Action::ReadData];
    let mut out = Vec::new();
    let mut tick = 0u64;
    let mut open: Vec<(Request, u64)> = Vec::new();
    for id in 1..=rng.gen_range(1..150u32) {
        tick += rng.gen_range(0..40);
        let action = actions.choose(rng).unwrap().clone();
        let svc = if action == Action::Exploit { SERVICES[rng.gen_range(1..SERVICES.len())] } else { "" };
        let dst = Endpoint::new(NetAddress::v4(10, 0, 1, rng.gen_range(1..=4)), svc);
        let req = Request::new(id, action, agent.clone(), dst, 8);
        out.push(Traced::Req(req.clone(), tick));
        open.push((req, tick));
        // answer some of the open requests, in any order
        while !open.is_empty() && rng.gen_bool(0.6) {
            let (req, _) = open.swap_remove(rng.gen_range(0..open.len()));
            if rng.gen_bool(0.1) {
                continue;
            }
            tick += rng.gen_range(0..3);
            let mut r = Response::zeroed();
            r.msg.id = if rng.gen_bool(0.05) { rng.gen_range(1000..2000) } else { req.msg.id };
            r.msg.src_ip = agent.ip;
            r.msg.src_service = agent.service.clone();
            r.msg.dst_ip = req.msg.dst_ip;
            r.msg.dst_service = req.msg.dst_service.clone();
            r.status = status(rng);
            r.content = match req.action {
                Action::ListServices => ["http,ssh", "smb", ""].choose(rng).unwrap().to_string(),
                _ => ["2.4", "7.2", "3.0", ""].choose(rng).unwrap().to_string(),
            };
            out.push(Traced::Resp(r, tick));
        }
    }
    out
}

fn history_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..300 {
        let trace = history_trace(&mut rng);
        let mut h = ServiceHistory::new();
        for t in &trace {
            match t {
                Traced::Req(r, tick) => h.observe_request(r, *tick),
                Traced::Resp(r, tick) => h.observe_response(r, *tick),
            }
        }

        // scan: pair responses with requests by id, first answer wins
        let mut actions: BTreeMap<u32, Action> = BTreeMap::new();
        let mut attempts: BTreeMap<(NetAddress, String), u32> = BTreeMap::new();
        let mut last: BTreeMap<(NetAddress, String), u64> = BTreeMap::new();
        let mut version: BTreeMap<(NetAddress, String), String> = BTreeMap::new();
        let mut now = 0;
        for t in &trace {
            match t {
                Traced::Req(r, tick) => {
                    now = now.max(*tick);
                    actions.insert(r.msg.id, r.action.clone());
                    if r.action == Action::Exploit {
                        let key = (r.msg.dst_ip, r.msg.dst_service.as_str().to_string());
                        *attempts.entry(key.clone()).or_default() += 1;
                        last.insert(key, now);
                    }
                }
                Traced::Resp(r, tick) => {
                    now = now.max(*tick);
                    let Some(action) = actions.remove(&r.msg.id) else { continue };
                    if r.status.origin != StatusOrigin::Service {
                        continue;
                    }
                    let ip = r.msg.dst_ip;
                    if action == Action::Exploit
                        && matches!(r.status.detail, StatusDetail::Ok | StatusDetail::NotVulnerable)
                    {
                        version.insert((ip, r.msg.dst_service.as_str().to_string()), r.content.clone());
                    } else if action == Action::ListServices && r.status.value == StatusValue::Success {
                        for name in r.content.split(',').filter(|s| !s.is_empty()) {
                            attempts.entry((ip, name.to_string())).or_default();
                        }
                    }
                }
            }
        }
        for key in version.keys() {
            attempts.entry(key.clone()).or_default();
        }
        let mut by_version: BTreeMap<(String, String), u32> = BTreeMap::new();
        for (key, n) in &attempts {
            let v = version.get(key).cloned().unwrap_or_default();
            *by_version.entry((key.1.clone(), v)).or_default() += n;
        }
        assert_eq!(h.attempts_by_version(), by_version);

        let bucket = |e: u64| if e == 0 { 0u8 } else { (64 - e.leading_zeros()).min(8) as u8 };
        for ((ip, name), n) in &attempts {
            let rec = h.record(*ip, name).expect("record exists");
            assert_eq!(rec.exploitation_attempts, *n);
            let want = last.get(&(*ip, name.clone())).map(|t| bucket(now - t));
            assert_eq!(rec.time_since_last_attempt(h.now()).map(time_bucket), want);
        }
        assert_eq!(h.records().count(), attempts.len());
    }
}

// ---- 7 ----

fn slicing_trace() -> Vec<TimestampedPercept> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let agent = Endpoint::new(NetAddress::v4(10, 0, 0, 10), "aica");
    let mut out = Vec::new();
    let mut tick = 1;
    for id in 1..=250u32 {
        tick += rng.gen_range(0..3);
        let dst = Endpoint::new(NetAddress::v4(10, 0, 1, rng.gen_range(1..9)), "");
        out.push(TimestampedPercept::new(
            tick,
            "request_sensor",
            Payload::Request(Request::new(id, Action::Ping, agent.clone(), dst, 8)),
        ));
        let mut r = Response::zeroed();
        r.msg.id = id;
        out.push(TimestampedPercept::new(tick + rng.gen_range(0..=2), "response_sensor", Payload::Response(r)));
    }
    assert_eq!(out.len(), 500);
    out
}

fn slice(strategy: SlicingStrategy, trace: &[TimestampedPercept]) -> Vec<Snapshot> {
    let until = trace.iter().map(|p| p.tick).max().unwrap() + 16;
    let mut a = SliceAligner::new(strategy).unwrap();
    a.ingest_all(trace.iter().cloned());
    let mut out = Vec::new();
    for t in 1..=until {
        out.extend(a.close_slice(t));
    }
    out.extend(a.flush(until));
    assert_eq!(a.late_percepts(), 0);
    assert_eq!(out.iter().map(|s| s.percepts.len()).sum::<usize>(), trace.len());
    out
}

fn slicing() {
    let trace = slicing_trace();
    let contextual = slice(SlicingStrategy::Contextual { lookahead: 2, window: 1 }, &trace);
    assert_eq!(count_split_pairs(&contextual), 0);
    let splits: Vec<usize> = [1, 2, 4, 8]
        .iter()
        .map(|&w| count_split_pairs(&slice(SlicingStrategy::Extend { window: w }, &trace)))
        .collect();
    assert!(splits[0] > 0, "trace should split pairs under the narrowest window");
    assert!(splits.windows(2).all(|w| w[1] <= w[0]), "{splits:?}");
}

// ---- 8 ----

fn priority_holds(specs: &[SensorSpec]) -> bool {
    specs.iter().all(|s| {
        let weakened = !s.enabled || s.interval != s.base_interval || s.mode != s.base_mode;
        let user = !s.enabled && s.off_reason == Some(OffReason::User);
        !weakened
            || user
            || !specs.iter().any(|t| {
                t.importance > s.importance && t.enabled && t.interval == t.base_interval && t.mode == t.base_mode
            })
    })
}

fn oracle_power(specs: &[SensorSpec]) -> f64 {
    specs
        .iter()
        .filter(|s| s.enabled)
        .map(|s| {
            let push = if s.mode == SensorMode::Push { 0.5 } else { 1.0 };
            s.power_cost * push * s.base_interval as f64 / s.interval as f64
        })
        .sum()
}

fn random_sensors(rng: &mut ChaCha8Rng) -> Vec<SensorConfig> {
    (0..rng.gen_range(1..=6))
        .map(|i| SensorConfig {
            id: format!("s{i}"),
            kind: None,
            mode: if rng.gen_bool(0.5) { SensorMode::Pull } else { SensorMode::Push },
            interval: rng.gen_range(1..4),
            offset: 0,
            bandwidth_per_slice: 1,
            power_cost: rng.gen_range(0.5..8.0),
            importance: i + 1,
            base: i == 0 || rng.gen_bool(0.7),
        })
        .collect()
}

fn budget_safety() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut planned = 0;
    for _ in 0..10_000 {
        let configs = random_sensors(&mut rng);
        let envelope = BudgetEnvelope { power_limit: rng.gen_range(0.5..30.0), bandwidth_limit: 1000 };
        let Ok(mut b) = PowerBudget::plan(&configs, envelope) else { continue };
        planned += 1;
        let ids: Vec<String> = b.specs().iter().map(|s| s.id.clone()).collect();
        let safe = |b: &PowerBudget| {
            assert!(oracle_power(b.specs()) <= b.envelope().power_limit + 1e-9);
            assert!(priority_holds(b.specs()), "{:#?}", b.specs());
            for s in b.specs() {
                assert!(s.interval >= s.base_interval && s.interval <= s.base_interval * MAX_STRETCH);
            }
        };
        safe(&b);
        for t in 0..rng.gen_range(0..20u64) {
            let id = ids.choose(&mut rng).unwrap().clone();
            let _ = match rng.gen_range(0..5) {
                0 => b.activate_on_demand(&id, t).map(|_| ()),
                1 => b.release(&id, t),
                2 => b.set_power_limit(rng.gen_range(0.5..30.0), t),
                3 => b.degrade(t),
                _ => {
                    b.restore(t);
                    Ok(())
                }
            };
            safe(&b);
        }
    }
    assert!(planned > 5_000, "too few feasible plans: {planned}");
}

// ---- 9 ----

fn percepts(responses: &[Response]) -> Vec<TimestampedPercept> {
    responses
        .iter()
        .enumerate()
        .map(|(i, r)| TimestampedPercept::new(i as u64 + 1, "response_sensor", Payload::Response(r.clone())))
        .collect()
}

fn responses(ps: Vec<TimestampedPercept>) -> Vec<Response> {
    ps.into_iter()
        .filter_map(|p| match p.payload {
            Payload::Response(r) => Some(r),
            _ => None,
        })
        .collect()
}

fn trust_voting() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clean: Vec<Response> = (1..=1000u32)
        .map(|id| {
            let mut r = canonical_response(&mut rng);
            r.msg.id = id;
            r
        })
        .collect();
    let stuck = FaultConfig {
        sensor: "response_sensor".into(),
        seed: 1,
        replica: Some(1),
        mode: FaultMode::Stuck { recorded: None },
    };
    let faulty = responses(inject(&stuck, percepts(&clean)).unwrap());
    assert_eq!(faulty.len(), clean.len());
    assert!(faulty.iter().skip(1).all(|r| *r == clean[0]));
    let voted = vote_stream(&[clean.clone(), faulty, clean.clone()]).unwrap();
    let recovered = voted.iter().zip(&clean).filter(|(v, c)| v.percept == **c && !v.is_flagged()).count();
    assert_eq!(recovered, clean.len());

    // a fault upstream of replication reaches every replica alike
    let upstream = FaultConfig {
        sensor: "response_sensor".into(),
        seed: 3,
        replica: None,
        mode: FaultMode::Flip { fields: vec!["status.value".into(), "content".into()] },
    };
    let bad = responses(inject(&upstream, percepts(&clean)).unwrap());
    let voted = vote_stream(&[bad.clone(), bad.clone(), bad]).unwrap();
    assert!(voted.iter().zip(&clean).all(|(v, c)| v.percept != *c && !v.is_flagged()));
}

// ---- 10 ----

fn reproducible_learning() {
    let loaded = Scenario::reference().load().unwrap();
    let selectors = ["history".to_string()];
    let run = || {
        let result = run_experiment(&loaded, &selectors, 500, 1).unwrap();
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &result.metrics()).unwrap();
        (result.metrics().remove(0), csv)
    };
    let (m, first) = run();
    let (_, second) = run();
    assert_eq!(first, second, "metrics.csv differs between identical runs");
    assert!(m.episodes_to_goal.is_some(), "goal never reached");
    let steps = &m.steps_per_episode;
    assert_eq!(steps.len(), 500);
    let decile = steps.len() / 10;
    let mean = |s: &[u32]| s.iter().map(|&x| f64::from(x)).sum::<f64>() / s.len() as f64;
    let head = mean(&steps[..decile]);
    let tail = mean(&steps[steps.len() - decile..]);
    assert!(tail < head, "last decile {tail} not below first decile {head}");
}

// ---- 11 ----

fn mapping_drift() {
    let own = Endpoint::new(NetAddress::v4(10, 0, 0, 10), "aica");
    let make = |d: u8, svc: &str| {
        let mut r = Response::zeroed();
        r.msg.src_ip = own.ip;
        r.msg.src_service = own.service.clone();
        r.msg.dst_ip = NetAddress::v4(10, 0, 1, d);
        r.msg.dst_service = ServiceRef::new(svc);
        r
    };
    let msgs = [make(2, "http"), make(3, "mysql"), make(4, "smb")];
    let mut forward = IndexedCodec::new(IndexedConfig::default());
    let mut backward = IndexedCodec::new(IndexedConfig::default());
    for r in &msgs {
        forward.encode(r).unwrap();
    }
    for r in msgs.iter().rev() {
        backward.encode(r).unwrap();
    }
    let mut drifted = 0;
    for r in &msgs {
        let ip = r.msg.dst_ip;
        let f = forward.registry().addresses.index_of(&ip).unwrap();
        let b = backward.registry().addresses.index_of(&ip).unwrap();
        assert_eq!(forward.registry().addresses.resolve(f).unwrap(), &ip);
        assert_eq!(backward.registry().addresses.resolve(b).unwrap(), &ip);
        if f != b {
            drifted += 1;
        }
    }
    assert!(drifted >= 1);
}
