use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{enumerate_actions, ActionId, ActionTemplate, HarnessError, QTable};
use crate::budget::{Activation, PowerBudget};
use crate::message::{Action, Endpoint, Request, Response, StatusValue};
use crate::pipeline::{
    count_split_pairs, Payload, Sensor, SensorKind, SensorMode, SliceAligner, SlicingStrategy, Snapshot,
    TimestampedPercept,
};
use crate::repr::Representation;
use crate::scenario::Loaded;
use crate::sim::{Engine, Tick};
use crate::trust::{vote, FaultInjector};

/// Ticks an action may take before the agent moves on.
const MAX_WAIT: Tick = 64;

/// Picks actions and, optionally, learns from their outcome.
pub trait Chooser {
    fn choose(&mut self, state: u64, actions: &[ActionTemplate], rng: &mut ChaCha8Rng) -> usize;

    #[allow(clippy::too_many_arguments)]
    fn learn(&mut self, _s: u64, _a: &ActionId, _reward: f64, _s_next: u64, _next: &[ActionId]) {}
}

/// Epsilon-greedy Q-learning.
#[derive(Debug, Clone)]
pub struct Learner {
    pub q: QTable,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Chooser for Learner {
    fn choose(&mut self, state: u64, actions: &[ActionTemplate], rng: &mut ChaCha8Rng) -> usize {
        // draw unconditionally so the random stream does not depend on q
        let explore = rng.gen::<f64>() < self.epsilon;
        let pick = rng.gen_range(0..actions.len());
        if explore {
            return pick;
        }
        let ids: Vec<ActionId> = actions.iter().map(ActionTemplate::id).collect();
        self.q.best(state, &ids).unwrap_or(0)
    }

    fn learn(&mut self, s: u64, a: &ActionId, reward: f64, s_next: u64, next: &[ActionId]) {
        self.q.update(s, a, reward, s_next, next, self.alpha, self.gamma);
    }
}

/// Uniform choice; used to build the shared replay trace.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Chooser for RandomPolicy {
    fn choose(&mut self, _: u64, actions: &[ActionTemplate], rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..actions.len())
    }
}

/// Frozen greedy policy over a learned table.
#[derive(Debug, Clone)]
pub struct Greedy<'a>(pub &'a QTable);

impl Chooser for Greedy<'_> {
    fn choose(&mut self, state: u64, actions: &[ActionTemplate], _: &mut ChaCha8Rng) -> usize {
        let ids: Vec<ActionId> = actions.iter().map(ActionTemplate::id).collect();
        self.0.best(state, &ids).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: u32,
    pub tick: Tick,
    pub state_key: String,
    pub action: Action,
    pub target: Endpoint,
    /// Ground-truth outcome; absent when no answer came back in time.
    pub outcome: Option<StatusValue>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: u32,
    pub reached_goal: bool,
    pub total_reward: f64,
    pub final_tick: Tick,
    pub last_id: u32,
    pub split_pairs: u64,
    pub dropped_percepts: u64,
    pub untrusted_fields: u64,
    pub tap_requested: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub record: EpisodeRecord,
    pub steps: Vec<StepRecord>,
    /// Every snapshot the representation observed, in order.
    pub snapshots: Vec<Snapshot>,
    pub budget: PowerBudget,
}

/// Sensors, faults, voting, the budget and the slice aligner for one episode.
pub struct Perception {
    sensors: Vec<Sensor>,
    budget: PowerBudget,
    aligner: SliceAligner,
    upstream: BTreeMap<String, Vec<FaultInjector>>,
    per_replica: BTreeMap<String, Vec<(usize, FaultInjector)>>,
    replicas: usize,
    fault_drops: u64,
    untrusted_fields: u64,
}

impl Perception {
    /// Fault streams are reseeded per episode so runs stay reproducible
    /// episode by episode.
    pub fn new(loaded: &Loaded, episode: usize) -> Result<Self, HarnessError> {
        let sc = &loaded.scenario;
        let mut sensors = sc.sensors.iter().map(Sensor::from_config).collect::<Result<Vec<_>, _>>()?;
        let budget = loaded.budget.clone();
        budget.apply_to(&mut sensors);
        let mut upstream: BTreeMap<String, Vec<FaultInjector>> = BTreeMap::new();
        let mut per_replica: BTreeMap<String, Vec<(usize, FaultInjector)>> = BTreeMap::new();
        for f in &sc.trust.faults {
            let mut f = f.clone();
            f.seed = f.seed.wrapping_add(episode as u64);
            let inj = FaultInjector::new(&f)?;
            match f.replica {
                Some(r) if sc.trust.replicas >= 3 => per_replica.entry(f.sensor.clone()).or_default().push((r, inj)),
                _ => upstream.entry(f.sensor.clone()).or_default().push(inj),
            }
        }
        Ok(Perception {
            sensors,
            budget,
            aligner: SliceAligner::new(sc.slicing.clone())?,
            upstream,
            per_replica,
            replicas: sc.trust.replicas,
            fault_drops: 0,
            untrusted_fields: 0,
        })
    }

    pub fn budget(&self) -> &PowerBudget {
        &self.budget
    }

    /// Percepts lost to bandwidth, sensor cycles and faults. Sensors that are
    /// off are not counted.
    pub fn dropped(&self) -> u64 {
        self.fault_drops + self.sensors.iter().map(|s| s.counters().dropped + s.counters().interval_drops).sum::<u64>()
    }

    fn through_faults(&mut self, id: &str, percept: TimestampedPercept) -> Option<TimestampedPercept> {
        let mut p = percept;
        if let Some(faults) = self.upstream.get_mut(id) {
            for f in faults {
                p = f.apply(p)?;
            }
        }
        let Some(faults) = self.per_replica.get_mut(id) else { return Some(p) };
        let copies: Vec<Option<TimestampedPercept>> = (0..self.replicas)
            .map(|k| {
                let mut q = Some(p.clone());
                for (_, f) in faults.iter_mut().filter(|(r, _)| *r == k) {
                    q = q.and_then(|q| f.apply(q));
                }
                q
            })
            .collect();
        match &p.payload {
            Payload::Response(_) => {
                let streams: Vec<Vec<Response>> = copies
                    .iter()
                    .map(|c| match c.as_ref().map(|c| &c.payload) {
                        Some(Payload::Response(r)) => vec![r.clone()],
                        _ => Vec::new(),
                    })
                    .collect();
                let outcome = vote(&streams, 0).ok()?;
                self.untrusted_fields += outcome.untrusted.len() as u64;
                p.payload = Payload::Response(outcome.percept);
                Some(p)
            }
            _ => {
                let present = copies.iter().filter(|c| c.is_some()).count();
                (present > self.replicas / 2).then_some(p)
            }
        }
    }

    fn push(&mut self, kinds: &[SensorKind], tick: Tick, payload: &Payload) {
        for i in 0..self.sensors.len() {
            let s = &self.sensors[i];
            if !kinds.contains(&s.kind()) || s.mode() != SensorMode::Push || !s.is_enabled() {
                continue;
            }
            let id = s.id().to_string();
            let percept = TimestampedPercept::new(tick, id.clone(), payload.clone());
            match self.through_faults(&id, percept) {
                Some(p) => {
                    self.sensors[i].deliver(p);
                }
                None => self.fault_drops += 1,
            }
        }
    }

    /// Feeds one tick of activity and returns the snapshots it closes.
    pub fn tick(&mut self, engine: &Engine, tick: Tick, requests: &[Request], responses: &[Response]) -> Vec<Snapshot> {
        for r in requests {
            self.push(&[SensorKind::RequestSensor, SensorKind::NetworkTap], tick, &Payload::Request(r.clone()));
        }
        for r in responses {
            self.push(&[SensorKind::ResponseSensor, SensorKind::NetworkTap], tick, &Payload::Response(r.clone()));
        }
        for i in 0..self.sensors.len() {
            if self.sensors[i].mode() != SensorMode::Pull {
                continue;
            }
            let polled = self.sensors[i].poll(engine, tick).percepts;
            let mut kept = Vec::with_capacity(polled.len());
            for p in polled {
                let id = self.sensors[i].id().to_string();
                match self.through_faults(&id, p) {
                    Some(p) => kept.push(p),
                    None => self.fault_drops += 1,
                }
            }
            self.aligner.ingest_all(kept);
        }
        for s in &mut self.sensors {
            let drained = s.drain();
            self.aligner.ingest_all(drained);
        }
        let boundary = self.aligner.is_boundary(tick);
        let primary = self.aligner.strategy().primary_window();
        let mut out = self.aligner.close_slice(tick);
        // parallel windows all carry the same percepts; one length is used
        out.retain(|s| s.window_len == primary);
        if boundary {
            for s in &mut self.sensors {
                s.begin_slice();
            }
        }
        out
    }

    pub fn flush(&mut self, tick: Tick) -> Vec<Snapshot> {
        for s in &mut self.sensors {
            let drained = s.drain();
            self.aligner.ingest_all(drained);
        }
        self.aligner.flush(tick)
    }

    fn tap_id(&self) -> Option<String> {
        self.sensors.iter().find(|s| s.kind() == SensorKind::NetworkTap).map(|s| s.id().to_string())
    }

    fn request_tap(&mut self, tick: Tick) -> Result<bool, HarnessError> {
        let Some(id) = self.tap_id() else { return Ok(false) };
        if self.budget.spec(&id).is_some_and(|s| s.enabled) {
            return Ok(false);
        }
        let granted = matches!(self.budget.activate_on_demand(&id, tick), Ok(Activation::Granted));
        self.budget.apply_to(&mut self.sensors);
        Ok(granted)
    }

    fn release_tap(&mut self, tick: Tick) -> Result<(), HarnessError> {
        let Some(id) = self.tap_id() else { return Ok(()) };
        if self.budget.spec(&id).is_some_and(|s| s.held) {
            self.budget.release(&id, tick)?;
            self.budget.apply_to(&mut self.sensors);
        }
        Ok(())
    }
}

/// Longest a request/response pair may stay unresolved in the aligner.
fn settle_ticks(strategy: &SlicingStrategy) -> Tick {
    match strategy {
        SlicingStrategy::Extend { window } => *window,
        SlicingStrategy::Multi { windows } => windows.iter().copied().max().unwrap_or(1),
        SlicingStrategy::Contextual { lookahead, window } => window * (lookahead + 1),
    }
}

fn is_goal(loaded: &Loaded, template: &ActionTemplate, answer: Option<&Response>) -> bool {
    template.action == Action::ReadData
        && template.target == loaded.scenario.goal
        && answer.is_some_and(|r| r.status.value == StatusValue::Success)
}

/// Plays one episode from a fresh engine and a reset representation.
pub fn run_episode(
    loaded: &Loaded,
    repr: &mut dyn Representation,
    chooser: &mut dyn Chooser,
    rng: &mut ChaCha8Rng,
    episode: usize,
) -> Result<EpisodeOutcome, HarnessError> {
    run_episode_from(loaded, repr, chooser, rng, episode, 1)
}

/// As [`run_episode`], numbering requests from `first_id`.
pub fn run_episode_from(
    loaded: &Loaded,
    repr: &mut dyn Representation,
    chooser: &mut dyn Chooser,
    rng: &mut ChaCha8Rng,
    episode: usize,
    first_id: u32,
) -> Result<EpisodeOutcome, HarnessError> {
    let sc = &loaded.scenario;
    let learner = &sc.learner;
    let sweep = loaded.sweep();
    let settle = settle_ticks(&sc.slicing);
    let mut engine = Engine::new(loaded.topology.clone(), loaded.vulns.clone(), sc.seed);
    engine.start_ids_at(first_id);
    let mut perception = Perception::new(loaded, episode)?;
    repr.reset();

    let mut snapshots = Vec::new();
    let mut steps = Vec::new();
    let mut total_reward = 0.0;
    let mut reached_goal = false;
    let mut tap_requested = false;
    let mut known = 0usize;
    let mut since_new = 0u32;

    let mut grounding = repr.grounding();
    let mut templates = enumerate_actions(&grounding, &sweep, learner.max_actions);
    for step in 1..=learner.step_cap {
        if templates.is_empty() {
            break;
        }
        let s = repr.state_key();
        let chosen = templates[chooser.choose(s, &templates, rng).min(templates.len() - 1)].clone();
        let request = engine.new_request(chosen.action.clone(), chosen.target.clone(), chosen.session.clone());
        let id = request.msg.id;
        engine.submit_request(request.clone())?;

        let start = engine.current_tick();
        let mut pending = vec![request];
        let mut answer: Option<Response> = None;
        let mut arrived: Option<Tick> = None;
        let mut seen = false;
        loop {
            let responses = engine.step();
            let t = engine.current_tick();
            if let Some(r) = responses.iter().find(|r| r.msg.id == id) {
                answer = Some(r.clone());
                arrived = Some(t);
            }
            for snap in perception.tick(&engine, t, &std::mem::take(&mut pending), &responses) {
                seen |= snap.responses().any(|r| r.msg.id == id);
                repr.observe(&snap)?;
                snapshots.push(snap);
            }
            if seen || arrived.is_some_and(|a| t >= a + settle) || t - start >= MAX_WAIT {
                break;
            }
        }

        let goal = is_goal(loaded, &chosen, answer.as_ref());
        let reward = learner.step_reward + if goal { learner.goal_reward } else { 0.0 };
        total_reward += reward;

        grounding = repr.grounding();
        let now = engine.current_tick();
        if grounding.machines.len() > known {
            known = grounding.machines.len();
            since_new = 0;
            perception.release_tap(now)?;
        } else {
            since_new += 1;
            if since_new > learner.tap_after && !tap_requested {
                tap_requested = true;
                perception.request_tap(now)?;
            }
        }
        templates = enumerate_actions(&grounding, &sweep, learner.max_actions);
        let s_next = repr.state_key();
        let next: Vec<ActionId> = if goal { Vec::new() } else { templates.iter().map(ActionTemplate::id).collect() };
        chooser.learn(s, &chosen.id(), reward, s_next, &next);

        steps.push(StepRecord {
            episode,
            step,
            tick: now,
            state_key: format!("{s:016x}"),
            action: chosen.action,
            target: chosen.target,
            outcome: answer.map(|r| r.status.value),
            reward,
        });
        if goal {
            reached_goal = true;
            break;
        }
    }

    let end = engine.current_tick();
    for snap in perception.flush(end) {
        repr.observe(&snap)?;
        snapshots.push(snap);
    }
    let record = EpisodeRecord {
        episode,
        steps: steps.len() as u32,
        reached_goal,
        total_reward,
        final_tick: end,
        last_id: engine.trace().iter().map(|r| r.message.id()).max().unwrap_or(first_id),
        split_pairs: count_split_pairs(&snapshots) as u64,
        dropped_percepts: perception.dropped(),
        untrusted_fields: perception.untrusted_fields,
        tap_requested,
    };
    Ok(EpisodeOutcome { record, steps, snapshots, budget: perception.budget })
}
