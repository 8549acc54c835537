//! Tabular Q-learning attacker over the simulated network, one learner per
//! representation, with comparable metrics.

mod episode;
mod experiment;
mod output;

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::message::{Action, Endpoint, NetAddress, Session};
use crate::repr::{Grounding, ReprError};
use crate::sim::node_target;

pub use episode::{
    run_episode, Chooser, EpisodeOutcome, EpisodeRecord, Greedy, Learner, Perception, RandomPolicy, StepRecord,
};
pub use experiment::{
    build_replay, replay_metrics, run_experiment, BaselineReport, ExperimentResult, Replay, ReplayEntry, RunMetrics,
    TaggedBudgetEvent,
};
pub use output::{compare_table, file_stem, write_compare, write_metrics_csv, write_outputs};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Engine(#[from] crate::sim::EngineError),
    #[error(transparent)]
    Budget(#[from] crate::budget::BudgetError),
    #[error(transparent)]
    Trust(#[from] crate::trust::TrustError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("episodes must be >= 1")]
    NoEpisodes,
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Stable identity of a grounded action, used as the learner's action key.
/// Ordering is by action, then target.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ActionId {
    pub action: Action,
    pub target: Endpoint,
}

impl std::fmt::Display for ActionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.action, self.target)
    }
}

/// An action with every parameter filled from the current world view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionTemplate {
    pub action: Action,
    pub target: Endpoint,
    pub session: Option<Session>,
}

impl ActionTemplate {
    pub fn id(&self) -> ActionId {
        ActionId { action: self.action.clone(), target: self.target.clone() }
    }
}

/// Grounded actions for one step. Known machines come first when the cap
/// bites, newest first; ping targets of the bootstrap sweep fill what is
/// left. The result is sorted by action id.
pub fn enumerate_actions(grounding: &Grounding, sweep: &[NetAddress], max: usize) -> Vec<ActionTemplate> {
    let mut out = Vec::new();
    let mut known = BTreeSet::new();
    for m in &grounding.machines {
        known.insert(m.ip);
        out.push(ActionTemplate { action: Action::Ping, target: node_target(m.ip), session: None });
        out.push(ActionTemplate { action: Action::ListServices, target: node_target(m.ip), session: None });
        for s in m.services.iter().filter(|s| !s.is_node()) {
            out.push(ActionTemplate { action: Action::Exploit, target: Endpoint::new(m.ip, s.clone()), session: None });
        }
        for s in &m.sessions {
            out.push(ActionTemplate { action: Action::ReadData, target: s.end.clone(), session: Some(s.clone()) });
        }
    }
    for &ip in sweep {
        if !known.contains(&ip) {
            out.push(ActionTemplate { action: Action::Ping, target: node_target(ip), session: None });
        }
    }
    let mut seen = BTreeSet::new();
    out.retain(|t| seen.insert(t.id()));
    out.truncate(max);
    out.sort_by_key(ActionTemplate::id);
    out
}

/// One temporal-difference step.
pub fn q_update(q: f64, reward: f64, next_max: f64, alpha: f64, gamma: f64) -> f64 {
    q + alpha * (reward + gamma * next_max - q)
}

/// Action values keyed by (state key, action); missing entries are 0.
#[derive(Debug, Clone, Default)]
pub struct QTable {
    values: HashMap<(u64, ActionId), f64>,
}

impl QTable {
    pub fn get(&self, state: u64, action: &ActionId) -> f64 {
        self.values.get(&(state, action.clone())).copied().unwrap_or(0.0)
    }

    /// Index of the best action; ties go to the lowest action id.
    pub fn best(&self, state: u64, actions: &[ActionId]) -> Option<usize> {
        let mut best: Option<(usize, &ActionId, f64)> = None;
        for (i, a) in actions.iter().enumerate() {
            let v = self.get(state, a);
            let better = match best {
                None => true,
                Some((_, ba, bv)) => v > bv || (v == bv && a < ba),
            };
            if better {
                best = Some((i, a, v));
            }
        }
        best.map(|(i, _, _)| i)
    }

    /// Highest value over `actions`, 0 when there are none.
    pub fn max_value(&self, state: u64, actions: &[ActionId]) -> f64 {
        actions
            .iter()
            .map(|a| self.get(state, a))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    /// Updates q(s, a) towards `reward` plus the discounted best value of `next`.
    /// A terminal step passes no next actions.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        s: u64,
        a: &ActionId,
        reward: f64,
        s_next: u64,
        next: &[ActionId],
        alpha: f64,
        gamma: f64,
    ) -> f64 {
        let next_max = self.max_value(s_next, next);
        let v = q_update(self.get(s, a), reward, next_max, alpha, gamma);
        self.values.insert((s, a.clone()), v);
        v
    }

    pub fn states(&self) -> BTreeSet<u64> {
        self.values.keys().map(|(s, _)| *s).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::GroundMachine;

    fn ip(d: u8) -> NetAddress {
        NetAddress::v4(10, 0, 1, d)
    }

    #[test]
    fn empty_world_offers_the_sweep() {
        let sweep = [ip(1), ip(2)];
        let t = enumerate_actions(&Grounding::default(), &sweep, 64);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|t| t.action == Action::Ping));
    }

    #[test]
    fn one_machine_two_services() {
        let g = Grounding {
            machines: vec![GroundMachine { ip: ip(4), services: vec!["http".into(), "ssh".into()], sessions: vec![] }],
            stale_index_events: 0,
        };
        let t = enumerate_actions(&g, &[], 64);
        let names: Vec<String> = t.iter().map(|t| t.action.to_string()).collect();
        assert_eq!(names, ["ping", "list_services", "exploit", "exploit"]);
    }

    #[test]
    fn sessions_ground_read_data_and_cap_keeps_newest() {
        let session =
            Session { start: Endpoint::new(NetAddress::v4(10, 0, 0, 10), "aica"), end: Endpoint::new(ip(4), "smb") };
        let g = Grounding {
            machines: vec![
                GroundMachine { ip: ip(4), services: vec!["smb".into()], sessions: vec![session.clone()] },
                GroundMachine { ip: ip(3), services: vec![], sessions: vec![] },
            ],
            stale_index_events: 0,
        };
        let t = enumerate_actions(&g, &[ip(1), ip(2)], 4);
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|t| t.target.ip == ip(4)));
        let read = t.iter().find(|t| t.action == Action::ReadData).unwrap();
        assert_eq!(read.session.as_ref(), Some(&session));
        let ids: Vec<ActionId> = t.iter().map(ActionTemplate::id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn td_rule() {
        assert_eq!(q_update(0.0, 1.0, 0.0, 0.5, 0.9), 0.5);
        assert_eq!(q_update(0.0, 0.0, 0.0, 0.1, 0.9), 0.0);
        assert!((q_update(1.0, 1.0, 1.0, 0.1, 0.9) - 1.09).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let a = ActionId { action: Action::Ping, target: node_target(ip(2)) };
        let b = ActionId { action: Action::Ping, target: node_target(ip(1)) };
        let mut q = QTable::default();
        assert_eq!(q.best(0, &[a.clone(), b.clone()]), Some(1));
        q.update(0, &b, -1.0, 0, &[], 0.5, 0.9);
        assert_eq!(q.best(0, &[a, b]), Some(0));
    }
}
