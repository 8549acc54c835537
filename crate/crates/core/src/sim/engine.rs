use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::topology::Topology;
use super::vulns::VulnerabilityList;
use crate::digest::fnv1a128;
use crate::message::{
    canonical_text, Action, Endpoint, MessageKind, Metadata, NetAddress, Request, Response, ServiceRef, Session,
    Status, StatusDetail, StatusOrigin, StatusValue, TEXT_CAP,
};

pub type Tick = u64;

pub const DEFAULT_TTL: u8 = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("request {0} has ttl 0")]
    TtlZero(u32),
    #[error("message {0} is not a request")]
    NotARequest(u32),
    #[error("request {id} originates from {src}, which is not a node")]
    UnknownSource { id: u32, src: NetAddress },
    #[error("request id {0} is already in flight")]
    DuplicateId(u32),
}

#[derive(Debug, Clone)]
enum Event {
    /// Request reached its destination node.
    Arrive { request: Request, hops: u32 },
    /// A router decremented the request's ttl to zero.
    Expire { request: Request, hops: u32 },
    /// No route to the destination.
    Unreachable { request: Request },
    /// Response handed back to the requesting agent.
    Deliver { response: Response },
}

/// Pending events ordered by (tick, submission sequence).
#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    pending: BTreeMap<(Tick, u64), Event>,
    next_seq: u64,
    current_tick: Tick,
}

impl EventQueue {
    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn current_tick(&self) -> Tick {
        self.current_tick
    }

    fn push(&mut self, tick: Tick, event: Event) {
        self.pending.insert((tick, self.next_seq), event);
        self.next_seq += 1;
    }

    fn pop_due(&mut self) -> Option<Event> {
        let (&key, _) = self.pending.first_key_value()?;
        if key.0 > self.current_tick {
            return None;
        }
        self.pending.remove(&key)
    }
}

/// One line of the trace log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: Tick,
    #[serde(flatten)]
    pub message: TracedMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TracedMessage {
    Request(Request),
    Response(Response),
}

impl TracedMessage {
    pub fn id(&self) -> u32 {
        match self {
            TracedMessage::Request(r) => r.msg.id,
            TracedMessage::Response(r) => r.msg.id,
        }
    }
}

/// Deterministic message-passing simulation of the scenario network.
#[derive(Debug, Clone)]
pub struct Engine {
    topology: Arc<Topology>,
    vulns: VulnerabilityList,
    seed: u64,
    queue: EventQueue,
    next_id: u32,
    in_flight: HashSet<u32>,
    sessions: BTreeSet<Session>,
    log: Vec<TraceRecord>,
}

impl Engine {
    pub fn new(topology: Arc<Topology>, vulns: VulnerabilityList, seed: u64) -> Self {
        Engine {
            topology,
            vulns,
            seed,
            queue: EventQueue::default(),
            next_id: 1,
            in_flight: HashSet::new(),
            sessions: BTreeSet::new(),
            log: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        *self = Engine::new(self.topology.clone(), self.vulns.clone(), self.seed);
    }

    /// Makes the next fresh request id `id` (never 0).
    pub fn start_ids_at(&mut self, id: u32) {
        self.next_id = id.max(1);
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn vulnerabilities(&self) -> &VulnerabilityList {
        &self.vulns
    }

    pub fn current_tick(&self) -> Tick {
        self.queue.current_tick
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.log
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Builds a request from the agent's own endpoint with a fresh id.
    pub fn new_request(&mut self, action: Action, dst: Endpoint, session: Option<Session>) -> Request {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1).max(1);
        let mut req = Request::new(id, action, self.topology.agent_endpoint(), dst, DEFAULT_TTL);
        req.msg.session = session;
        req
    }

    pub fn submit_request(&mut self, request: Request) -> Result<(), EngineError> {
        let id = request.msg.id;
        if request.msg.kind != MessageKind::Request {
            return Err(EngineError::NotARequest(id));
        }
        if request.msg.ttl == 0 {
            return Err(EngineError::TtlZero(id));
        }
        if self.topology.node_at(request.msg.src_ip).is_none() {
            return Err(EngineError::UnknownSource { id, src: request.msg.src_ip });
        }
        if self.in_flight.contains(&id) {
            return Err(EngineError::DuplicateId(id));
        }
        self.in_flight.insert(id);
        if id >= self.next_id {
            self.next_id = id.wrapping_add(1).max(1);
        }

        let now = self.queue.current_tick;
        let route = match self.topology.node_at(request.msg.dst_ip) {
            Some(_) => self.topology.router_hops(request.msg.src_ip, request.msg.dst_ip),
            None => None,
        };
        match route {
            None => self.queue.push(now + 1, Event::Unreachable { request }),
            Some(hops) if u32::from(request.msg.ttl) <= hops => {
                let hops = u32::from(request.msg.ttl);
                self.queue.push(now + u64::from(hops), Event::Expire { request, hops })
            }
            Some(hops) => self.queue.push(now + u64::from(hops), Event::Arrive { request, hops }),
        }
        Ok(())
    }

    /// Advances the clock one tick and returns the responses delivered to the
    /// agent during it.
    pub fn step(&mut self) -> Vec<Response> {
        self.queue.current_tick += 1;
        let now = self.queue.current_tick;
        let mut delivered = Vec::new();
        while let Some(event) = self.queue.pop_due() {
            match event {
                Event::Arrive { request, hops } => {
                    self.record(now, TracedMessage::Request(request.clone()));
                    let mut response = self.resolve_action(&request);
                    response.msg.ttl = request.msg.ttl - hops as u8;
                    response.msg.metadata = exchange_metadata(hops, hops + 1, &response);
                    self.queue.push(now + 1, Event::Deliver { response });
                }
                Event::Expire { request, hops } => {
                    self.record(now, TracedMessage::Request(request.clone()));
                    let mut response = respond(
                        &request,
                        Status::new(StatusOrigin::Network, StatusValue::Error, StatusDetail::TtlExpired),
                        String::new(),
                    );
                    response.msg.ttl = 0;
                    response.msg.metadata = exchange_metadata(hops, hops, &response);
                    delivered.push(self.deliver(now, response));
                }
                Event::Unreachable { request } => {
                    self.record(now, TracedMessage::Request(request.clone()));
                    let mut response = respond(
                        &request,
                        Status::new(StatusOrigin::Network, StatusValue::Failure, StatusDetail::HostUnreachable),
                        String::new(),
                    );
                    response.msg.ttl = request.msg.ttl.saturating_sub(1);
                    response.msg.metadata = exchange_metadata(1, 1, &response);
                    delivered.push(self.deliver(now, response));
                }
                Event::Deliver { response } => delivered.push(self.deliver(now, response)),
            }
        }
        delivered
    }

    fn deliver(&mut self, now: Tick, response: Response) -> Response {
        self.in_flight.remove(&response.msg.id);
        self.record(now, TracedMessage::Response(response.clone()));
        response
    }

    fn record(&mut self, tick: Tick, message: TracedMessage) {
        self.log.push(TraceRecord { tick, message });
    }

    /// Applies the action semantics at the destination node. Timing and
    /// metadata are filled in by the caller.
    pub fn resolve_action(&mut self, request: &Request) -> Response {
        use StatusDetail as D;
        use StatusOrigin as O;
        use StatusValue as V;

        let Some(node) = self.topology.node_at(request.msg.dst_ip) else {
            return respond(request, Status::new(O::Network, V::Failure, D::HostUnreachable), String::new());
        };
        let service = node.service(&request.msg.dst_service);
        let no_service = || respond(request, Status::new(O::Service, V::Failure, D::NoSuchService), String::new());

        match &request.action {
            Action::Ping => respond(request, Status::new(O::Node, V::Success, D::Ok), String::new()),
            Action::ListServices => {
                let mut names: Vec<&str> = node.services.iter().map(|s| s.name.as_str()).collect();
                names.sort_unstable();
                respond(request, Status::new(O::Service, V::Success, D::Ok), names.join(","))
            }
            Action::Exploit => {
                let Some(service) = service else { return no_service() };
                if self.vulns.contains(&service.name, &service.version) {
                    let session = Session {
                        start: Endpoint::new(request.msg.src_ip, request.msg.src_service.clone()),
                        end: Endpoint::new(request.msg.dst_ip, service.name.clone()),
                    };
                    let token = self.session_token(&session);
                    self.sessions.insert(session.clone());
                    let mut r = respond(request, Status::new(O::Service, V::Success, D::Ok), service.version.clone());
                    r.msg.session = Some(session);
                    r.msg.auth_token = token;
                    r
                } else {
                    respond(request, Status::new(O::Service, V::Failure, D::NotVulnerable), service.version.clone())
                }
            }
            Action::ReadData => {
                let Some(service) = service else { return no_service() };
                let target = Endpoint::new(request.msg.dst_ip, service.name.clone());
                match &request.msg.session {
                    Some(s) if s.end == target && self.sessions.contains(s) => {
                        let mut r = respond(
                            request,
                            Status::new(O::Service, V::Success, D::Ok),
                            service.data_token.clone().unwrap_or_default(),
                        );
                        r.msg.session = Some(s.clone());
                        r.msg.auth_token = self.session_token(s);
                        r
                    }
                    _ => respond(request, Status::new(O::Service, V::Failure, D::NoSession), String::new()),
                }
            }
            Action::Other(_) => respond(request, Status::new(O::System, V::Error, D::UnknownAction), String::new()),
        }
    }

    fn session_token(&self, session: &Session) -> u128 {
        let key = format!("{}|{}|{}", self.seed, session.start, session.end);
        fnv1a128(key.as_bytes())
    }

    pub fn write_trace(&self, out: &mut impl Write) -> std::io::Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut *out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn respond(request: &Request, status: Status, content: String) -> Response {
    let mut msg = request.msg.clone();
    msg.kind = MessageKind::Response;
    msg.session = None;
    Response { msg, status, content: canonical_text(&content, TEXT_CAP) }
}

fn exchange_metadata(hops: u32, duration: u32, response: &Response) -> Metadata {
    let session_bytes = if response.msg.session.is_some() { 48 } else { 0 };
    Metadata {
        packet_count: 2 * hops.max(1),
        byte_count: 64 + response.content.len() as u32 + session_bytes,
        duration_ticks: duration,
    }
}

/// The agent endpoint used when a request addresses a whole node.
pub fn node_target(ip: NetAddress) -> Endpoint {
    Endpoint::new(ip, ServiceRef::node())
}
