//! Power envelope over the sensor set: base-set planning, the degradation
//! ladder and on-demand activation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::pipeline::{Sensor, SensorConfig, SensorMode};
use crate::sim::Tick;

const EPS: f64 = 1e-9;
/// Interval growth cap, as a multiple of the base interval.
pub const MAX_STRETCH: u64 = 8;
/// Power factor of a sensor running in push mode.
pub const PUSH_DISCOUNT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("sensor {0:?} is not in the on-demand pool")]
    NotOnDemand(String),
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("duplicate importance rank {0}")]
    DuplicateRank(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetEnvelope {
    pub power_limit: f64,
    pub bandwidth_limit: u32,
}

impl BudgetEnvelope {
    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.power_limit.is_nan() || self.power_limit <= 0.0 || self.bandwidth_limit == 0 {
            return Err(BudgetError::InvalidEnvelope("limits must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorState {
    Active,
    Degraded,
    Off,
}

/// Why an off sensor is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffReason {
    /// Configured outside the base set by the user.
    User,
    /// Did not fit when the base set was planned.
    Planned,
    /// Shed by the degradation ladder.
    Shed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorSpec {
    pub id: String,
    pub importance: u32,
    pub power_cost: f64,
    pub bandwidth_per_slice: u32,
    pub base_mode: SensorMode,
    pub base_interval: u64,
    pub mode: SensorMode,
    pub interval: u64,
    pub enabled: bool,
    pub off_reason: Option<OffReason>,
    /// Activated on demand and not yet released.
    pub held: bool,
}

impl SensorSpec {
    pub fn from_config(c: &SensorConfig) -> Self {
        SensorSpec {
            id: c.id.clone(),
            importance: c.importance,
            power_cost: c.power_cost,
            bandwidth_per_slice: c.bandwidth_per_slice,
            base_mode: c.mode,
            base_interval: c.interval.max(1),
            mode: c.mode,
            interval: c.interval.max(1),
            enabled: c.base,
            off_reason: (!c.base).then_some(OffReason::User),
            held: false,
        }
    }

    pub fn state(&self) -> SensorState {
        if !self.enabled {
            SensorState::Off
        } else if self.interval > self.base_interval || self.mode != self.base_mode {
            SensorState::Degraded
        } else {
            SensorState::Active
        }
    }

    fn setting(&self) -> Setting {
        Setting { state: self.state(), mode: self.mode, interval: self.interval }
    }

    fn reset_to_base(&mut self) {
        self.mode = self.base_mode;
        self.interval = self.base_interval;
    }

    /// Applies one ladder step. `may_turn_off` is false for the top-ranked sensor.
    fn step_down(&mut self, may_turn_off: bool) -> bool {
        if !self.enabled {
            return false;
        }
        if self.interval < self.base_interval * MAX_STRETCH {
            self.interval = (self.interval * 2).min(self.base_interval * MAX_STRETCH);
        } else if self.mode == SensorMode::Pull {
            self.mode = SensorMode::Push;
        } else if may_turn_off {
            self.enabled = false;
            self.held = false;
            self.off_reason = Some(OffReason::Shed);
        } else {
            return false;
        }
        true
    }

    /// Reverses one ladder step.
    fn step_up(&mut self) -> bool {
        if !self.enabled {
            if self.off_reason != Some(OffReason::Shed) {
                return false;
            }
            self.enabled = true;
            self.off_reason = None;
        } else if self.mode != self.base_mode {
            self.mode = self.base_mode;
        } else if self.interval > self.base_interval {
            self.interval = (self.interval / 2).max(self.base_interval);
        } else {
            return false;
        }
        true
    }
}

/// off → 0, otherwise cost × base/current interval, halved in push mode.
pub fn effective_power(s: &SensorSpec) -> f64 {
    if !s.enabled {
        return 0.0;
    }
    let stretch = s.base_interval as f64 / s.interval as f64;
    let push = if s.mode == SensorMode::Push { PUSH_DISCOUNT } else { 1.0 };
    s.power_cost * stretch * push
}

pub fn total_power(specs: &[SensorSpec]) -> f64 {
    specs.iter().map(effective_power).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Setting {
    pub state: SensorState,
    pub mode: SensorMode,
    pub interval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetOp {
    Plan,
    Degrade,
    Restore,
    Activate,
    Deny,
    Release,
}

/// One line of the budget event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetEvent {
    pub tick: Tick,
    pub op: BudgetOp,
    pub sensor: String,
    pub before: Setting,
    pub after: Setting,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Activation {
    Granted,
    Denied(String),
}

/// Runtime budget state of the whole sensor set. Sensors are kept in
/// ascending importance rank.
#[derive(Debug, Clone)]
pub struct PowerBudget {
    envelope: BudgetEnvelope,
    specs: Vec<SensorSpec>,
    events: Vec<BudgetEvent>,
}

impl PowerBudget {
    /// Plans the base set: sensors are activated greedily by rank until the
    /// next one would exceed the envelope; the rest form the on-demand pool.
    pub fn plan(configs: &[SensorConfig], envelope: BudgetEnvelope) -> Result<Self, BudgetError> {
        envelope.validate()?;
        let mut specs: Vec<SensorSpec> = configs.iter().map(SensorSpec::from_config).collect();
        specs.sort_by_key(|s| s.importance);
        if let Some(w) = specs.windows(2).find(|w| w[0].importance == w[1].importance) {
            return Err(BudgetError::DuplicateRank(w[0].importance));
        }
        let mut total = 0.0;
        let mut full = false;
        let mut first = true;
        for s in specs.iter_mut().filter(|s| s.enabled) {
            let p = effective_power(s);
            if first && p > envelope.power_limit + EPS {
                return Err(BudgetError::InfeasibleBudget(format!(
                    "{} alone needs {p} of {}",
                    s.id, envelope.power_limit
                )));
            }
            first = false;
            if !full && total + p <= envelope.power_limit + EPS {
                total += p;
            } else {
                full = true;
                s.enabled = false;
                s.off_reason = Some(OffReason::Planned);
            }
        }
        let mut budget = PowerBudget { envelope, specs, events: Vec::new() };
        let initial: Vec<SensorSpec> = configs.iter().map(SensorSpec::from_config).collect();
        for s in &budget.specs {
            if let Some(before) = initial.iter().find(|i| i.id == s.id) {
                let (b, a) = (before.setting(), s.setting());
                budget.events.push(BudgetEvent {
                    tick: 0,
                    op: BudgetOp::Plan,
                    sensor: s.id.clone(),
                    before: b,
                    after: a,
                    reason: None,
                });
            }
        }
        Ok(budget)
    }

    pub fn envelope(&self) -> BudgetEnvelope {
        self.envelope
    }

    pub fn specs(&self) -> &[SensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: &str) -> Option<&SensorSpec> {
        self.specs.iter().find(|s| s.id == id)
    }

    pub fn total_power(&self) -> f64 {
        total_power(&self.specs)
    }

    pub fn within_envelope(&self) -> bool {
        self.total_power() <= self.envelope.power_limit + EPS
    }

    pub fn events(&self) -> &[BudgetEvent] {
        &self.events
    }

    fn index(&self, id: &str) -> Result<usize, BudgetError> {
        self.specs.iter().position(|s| s.id == id).ok_or_else(|| BudgetError::UnknownSensor(id.into()))
    }

    fn log_changes(
        &mut self,
        before: &[SensorSpec],
        tick: Tick,
        op_for: impl Fn(&SensorSpec, &SensorSpec) -> BudgetOp,
    ) {
        for (b, a) in before.iter().zip(&self.specs) {
            if b.setting() != a.setting() {
                self.events.push(BudgetEvent {
                    tick,
                    op: op_for(b, a),
                    sensor: a.id.clone(),
                    before: b.setting(),
                    after: a.setting(),
                    reason: None,
                });
            }
        }
    }

    /// Ladder over sensors ranked below `floor` (all when `None`), least
    /// important first, until the envelope holds. The top-ranked sensor is
    /// never turned off.
    fn ladder(&mut self, floor: Option<u32>) -> bool {
        let limit = self.envelope.power_limit + EPS;
        let top = self.specs.first().map(|s| s.importance);
        for i in (0..self.specs.len()).rev() {
            if floor.is_some_and(|f| self.specs[i].importance <= f) {
                break;
            }
            let may_turn_off = Some(self.specs[i].importance) != top;
            while total_power(&self.specs) > limit {
                if !self.specs[i].step_down(may_turn_off) {
                    break;
                }
            }
            if total_power(&self.specs) <= limit {
                return true;
            }
        }
        total_power(&self.specs) <= limit
    }

    /// Brings the sensor set back within the envelope.
    pub fn degrade(&mut self, tick: Tick) -> Result<(), BudgetError> {
        if self.within_envelope() {
            return Ok(());
        }
        let before = self.specs.clone();
        if !self.ladder(None) {
            self.specs = before;
            return Err(BudgetError::InfeasibleBudget(format!(
                "{:.3} exceeds {} with every sensor degraded",
                self.total_power(),
                self.envelope.power_limit
            )));
        }
        self.log_changes(&before, tick, |_, _| BudgetOp::Degrade);
        Ok(())
    }

    /// Undoes ladder steps, most important sensor first, while the envelope
    /// allows. Stops at the first step that does not fit.
    pub fn restore(&mut self, tick: Tick) {
        let before = self.specs.clone();
        let limit = self.envelope.power_limit + EPS;
        'outer: for i in 0..self.specs.len() {
            loop {
                let saved = self.specs[i].clone();
                if !self.specs[i].step_up() {
                    break;
                }
                if total_power(&self.specs) > limit {
                    self.specs[i] = saved;
                    break 'outer;
                }
            }
        }
        self.log_changes(&before, tick, |_, _| BudgetOp::Restore);
    }

    /// Changes the power limit, degrading or restoring as needed. On an
    /// infeasible limit nothing changes.
    pub fn set_power_limit(&mut self, limit: f64, tick: Tick) -> Result<(), BudgetError> {
        let candidate = BudgetEnvelope { power_limit: limit, ..self.envelope };
        candidate.validate()?;
        let old = self.envelope;
        self.envelope = candidate;
        if let Err(e) = self.degrade(tick) {
            self.envelope = old;
            return Err(e);
        }
        self.restore(tick);
        Ok(())
    }

    /// Activates a pooled sensor if the envelope holds after at most one
    /// ladder pass over less important sensors.
    pub fn activate_on_demand(&mut self, id: &str, tick: Tick) -> Result<Activation, BudgetError> {
        let i = self.index(id)?;
        let s = &self.specs[i];
        if s.enabled || !matches!(s.off_reason, Some(OffReason::User | OffReason::Planned)) {
            return Err(BudgetError::NotOnDemand(id.into()));
        }
        let rank = s.importance;
        if let Some(better) =
            self.specs[..i].iter().find(|b| b.off_reason != Some(OffReason::User) && b.state() != SensorState::Active)
        {
            return Ok(self.deny(i, tick, format!("more important sensor {} is {:?}", better.id, better.state())));
        }
        let before = self.specs.clone();
        let s = &mut self.specs[i];
        s.reset_to_base();
        s.enabled = true;
        s.off_reason = None;
        s.held = true;
        if !self.ladder(Some(rank)) {
            self.specs = before;
            return Ok(self.deny(i, tick, "envelope cannot absorb it".into()));
        }
        self.log_changes(&before, tick, |b, _| if b.id == id { BudgetOp::Activate } else { BudgetOp::Degrade });
        Ok(Activation::Granted)
    }

    fn deny(&mut self, i: usize, tick: Tick, reason: String) -> Activation {
        let s = &self.specs[i];
        self.events.push(BudgetEvent {
            tick,
            op: BudgetOp::Deny,
            sensor: s.id.clone(),
            before: s.setting(),
            after: s.setting(),
            reason: Some(reason.clone()),
        });
        Activation::Denied(reason)
    }

    /// Returns an on-demand sensor to the pool and restores what the
    /// envelope allows.
    pub fn release(&mut self, id: &str, tick: Tick) -> Result<(), BudgetError> {
        let i = self.index(id)?;
        if !self.specs[i].held {
            return Err(BudgetError::NotOnDemand(id.into()));
        }
        let before = self.specs.clone();
        let s = &mut self.specs[i];
        s.held = false;
        s.enabled = false;
        s.reset_to_base();
        s.off_reason = Some(OffReason::User);
        self.log_changes(&before, tick, |_, _| BudgetOp::Release);
        self.restore(tick);
        Ok(())
    }

    /// Pushes the planned settings into runtime sensors with matching ids.
    pub fn apply_to(&self, sensors: &mut [Sensor]) {
        for sensor in sensors {
            if let Some(spec) = self.spec(sensor.id()) {
                sensor.set_enabled(spec.enabled);
                sensor.set_mode(spec.mode);
                sensor.set_interval(spec.interval);
            }
        }
    }

    pub fn write_events(&self, out: &mut impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut *out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(id: &str, rank: u32, cost: f64, mode: SensorMode, base: bool) -> SensorConfig {
        SensorConfig {
            id: id.into(),
            kind: Some(crate::pipeline::SensorKind::HostProbe),
            mode,
            interval: 1,
            offset: 0,
            bandwidth_per_slice: 8,
            power_cost: cost,
            importance: rank,
            base,
        }
    }

    fn abc() -> Vec<SensorConfig> {
        vec![
            cfg("a", 1, 4.0, SensorMode::Pull, true),
            cfg("b", 2, 5.0, SensorMode::Pull, true),
            cfg("c", 3, 3.0, SensorMode::Pull, true),
        ]
    }

    fn envelope(limit: f64) -> BudgetEnvelope {
        BudgetEnvelope { power_limit: limit, bandwidth_limit: 64 }
    }

    #[test]
    fn power_model() {
        let mut s = SensorSpec::from_config(&cfg("a", 1, 4.0, SensorMode::Pull, true));
        assert_eq!(effective_power(&s), 4.0);
        s.interval = 2;
        assert_eq!(effective_power(&s), 2.0);
        s.interval = 1;
        s.mode = SensorMode::Push;
        assert_eq!(effective_power(&s), 2.0);
        s.enabled = false;
        assert_eq!(effective_power(&s), 0.0);
    }

    #[test]
    fn greedy_base_set() {
        let b = PowerBudget::plan(&abc(), envelope(10.0)).unwrap();
        let on: Vec<_> = b.specs().iter().filter(|s| s.enabled).map(|s| s.id.as_str()).collect();
        assert_eq!(on, ["a", "b"]);
        assert_eq!(b.spec("c").unwrap().off_reason, Some(OffReason::Planned));
        assert!(matches!(PowerBudget::plan(&abc(), envelope(3.0)), Err(BudgetError::InfeasibleBudget(_))));
        assert!(PowerBudget::plan(&abc(), envelope(100.0)).unwrap().specs().iter().all(|s| s.enabled));
    }

    #[test]
    fn ladder_doubles_interval_first() {
        // all three active at 12, limit 10: c goes 3 -> 1.5 -> 0.75
        let mut b = PowerBudget::plan(&abc(), envelope(12.0)).unwrap();
        b.envelope.power_limit = 10.0;
        b.degrade(5).unwrap();
        let c = b.spec("c").unwrap();
        assert_eq!((c.interval, c.mode, c.enabled), (4, SensorMode::Pull, true));
        assert!((b.total_power() - 9.75).abs() < 1e-9);
        assert_eq!(b.events().iter().filter(|e| e.op == BudgetOp::Degrade).count(), 1);
    }

    #[test]
    fn top_rank_is_degraded_last_and_never_off() {
        let mut b = PowerBudget::plan(&[cfg("a", 1, 4.0, SensorMode::Pull, true)], envelope(4.0)).unwrap();
        b.envelope.power_limit = 0.25;
        b.degrade(1).unwrap();
        let a = b.spec("a").unwrap();
        assert_eq!((a.interval, a.mode, a.enabled), (8, SensorMode::Push, true));
        b.envelope.power_limit = 0.2;
        assert!(matches!(b.degrade(2), Err(BudgetError::InfeasibleBudget(_))));
    }

    #[test]
    fn on_demand_with_headroom() {
        let configs = vec![cfg("a", 1, 4.0, SensorMode::Pull, true), cfg("t", 2, 3.0, SensorMode::Pull, false)];
        let mut b = PowerBudget::plan(&configs, envelope(8.0)).unwrap();
        assert_eq!(b.activate_on_demand("t", 3).unwrap(), Activation::Granted);
        assert!(b.spec("t").unwrap().held);
        b.release("t", 4).unwrap();
        assert!(!b.spec("t").unwrap().enabled);
    }

    #[test]
    fn on_demand_after_degrading_less_important() {
        // headroom 1, t costs 3, c can shed 2.5 by doubling its interval
        let configs = vec![
            cfg("a", 1, 1.0, SensorMode::Pull, true),
            cfg("t", 2, 3.0, SensorMode::Pull, false),
            cfg("c", 3, 5.0, SensorMode::Pull, true),
        ];
        let mut b = PowerBudget::plan(&configs, envelope(7.0)).unwrap();
        assert_eq!(b.activate_on_demand("t", 3).unwrap(), Activation::Granted);
        assert_eq!(b.spec("c").unwrap().interval, 2);
        assert!(b.within_envelope());
        b.release("t", 9).unwrap();
        assert_eq!(b.spec("c").unwrap().interval, 1);
    }

    #[test]
    fn on_demand_without_room_is_denied() {
        let configs = vec![cfg("a", 1, 4.0, SensorMode::Pull, true), cfg("t", 2, 3.0, SensorMode::Pull, false)];
        let mut b = PowerBudget::plan(&configs, envelope(4.0)).unwrap();
        assert!(matches!(b.activate_on_demand("t", 1).unwrap(), Activation::Denied(_)));
        assert!(!b.spec("t").unwrap().enabled);
        assert_eq!(b.events().last().unwrap().op, BudgetOp::Deny);
        assert!(matches!(b.activate_on_demand("zz", 1), Err(BudgetError::UnknownSensor(_))));
        assert!(matches!(b.activate_on_demand("a", 1), Err(BudgetError::NotOnDemand(_))));
    }

    #[test]
    fn duplicate_ranks_rejected() {
        let configs = vec![cfg("a", 1, 1.0, SensorMode::Pull, true), cfg("b", 1, 1.0, SensorMode::Pull, true)];
        assert_eq!(PowerBudget::plan(&configs, envelope(8.0)).unwrap_err(), BudgetError::DuplicateRank(1));
    }

    #[test]
    fn event_log_is_jsonl() {
        let mut b = PowerBudget::plan(&abc(), envelope(10.0)).unwrap();
        b.activate_on_demand("c", 4).unwrap();
        let mut out = Vec::new();
        b.write_events(&mut out).unwrap();
        for line in String::from_utf8(out).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["tick", "op", "sensor", "before", "after"] {
                assert!(v.get(key).is_some(), "{key} missing in {line}");
            }
        }
    }

    #[derive(Debug, Clone)]
    enum Op {
        Activate(usize),
        Release(usize),
        Limit(f64),
        Degrade,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..6).prop_map(Op::Activate),
            (0usize..6).prop_map(Op::Release),
            (0.5f64..30.0).prop_map(Op::Limit),
            Just(Op::Degrade),
        ]
    }

    fn sensors() -> impl Strategy<Value = Vec<SensorConfig>> {
        proptest::collection::vec((0.5f64..8.0, any::<bool>(), proptest::bool::weighted(0.7), 1u64..4), 1..6).prop_map(
            |v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (cost, pull, base, interval))| {
                        let mode = if pull { SensorMode::Pull } else { SensorMode::Push };
                        let mut c = cfg(&format!("s{i}"), i as u32 + 1, cost, mode, base || i == 0);
                        c.interval = interval;
                        c
                    })
                    .collect()
            },
        )
    }

    /// Independent check: a non-user sensor that is off or degraded never
    /// sits above an active, undegraded sensor of worse rank.
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

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn safety_and_priority(configs in sensors(), limit in 0.5f64..30.0, ops in proptest::collection::vec(op(), 0..20)) {
            let Ok(mut b) = PowerBudget::plan(&configs, envelope(limit)) else { return Ok(()) };
            prop_assert!(oracle_power(b.specs()) <= b.envelope().power_limit + 1e-9);
            prop_assert!(priority_holds(b.specs()));
            let ids: Vec<String> = b.specs().iter().map(|s| s.id.clone()).collect();
            for (t, op) in ops.into_iter().enumerate() {
                let t = t as Tick;
                let _ = match op {
                    Op::Activate(i) => b.activate_on_demand(&ids[i % ids.len()], t).map(|_| ()),
                    Op::Release(i) => b.release(&ids[i % ids.len()], t),
                    Op::Limit(l) => b.set_power_limit(l, t),
                    Op::Degrade => b.degrade(t),
                };
                prop_assert!(oracle_power(b.specs()) <= b.envelope().power_limit + 1e-9);
                prop_assert!(priority_holds(b.specs()), "{:#?}", b.specs());
                for s in b.specs() {
                    prop_assert!(s.interval >= s.base_interval && s.interval <= s.base_interval * MAX_STRETCH);
                }
            }
        }

        #[test]
        fn planning_is_deterministic(configs in sensors(), limit in 0.5f64..30.0) {
            let a = PowerBudget::plan(&configs, envelope(limit)).map(|b| b.specs().to_vec());
            let b = PowerBudget::plan(&configs, envelope(limit)).map(|b| b.specs().to_vec());
            prop_assert_eq!(a, b);
        }
    }
}
