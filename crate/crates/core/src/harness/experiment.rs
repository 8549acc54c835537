use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode, run_episode_from, EpisodeRecord, Learner, RandomPolicy, StepRecord};
use super::{HarnessError, QTable};
use crate::budget::BudgetEvent;
use crate::message::{Action, Endpoint};
use crate::pipeline::{SensorKind, Snapshot};
use crate::repr::{Representation, RepresentationRegistry};
use crate::scenario::Loaded;
use crate::sim::Engine;
use crate::trust::{probe_baseline, record_baseline, FaultInjector, Verdict};

/// Per-representation results, in the column order of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub representation: String,
    pub encoded_width_bits: Option<u32>,
    pub distinct_states: usize,
    pub index_evictions: u64,
    pub stale_index_events: u64,
    pub split_pairs: u64,
    pub dropped_percepts: u64,
    /// 1-based episode of the first success.
    pub episodes_to_goal: Option<usize>,
    pub steps_per_episode: Vec<u32>,
    /// Seconds; not part of the CSV so reruns compare byte for byte.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedBudgetEvent {
    pub representation: String,
    pub episode: usize,
    #[serde(flatten)]
    pub event: BudgetEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub episode: usize,
    pub action: Action,
    pub target: Endpoint,
    /// Empty when the probe matched.
    pub deviation: Vec<&'static str>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub episode: usize,
    pub snapshot: Snapshot,
}

/// Snapshot stream every representation is evaluated on.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    pub entries: Vec<ReplayEntry>,
    pub baselines: Vec<BaselineReport>,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub metrics: RunMetrics,
    pub episodes: Vec<EpisodeRecord>,
    pub steps: Vec<StepRecord>,
    pub budget_events: Vec<TaggedBudgetEvent>,
    pub q: QTable,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cells: Vec<Cell>,
    pub replay: Replay,
}

impl ExperimentResult {
    pub fn metrics(&self) -> Vec<RunMetrics> {
        self.cells.iter().map(|c| c.metrics.clone()).collect()
    }
}

fn epsilon(loaded: &Loaded, episode: usize, episodes: usize) -> f64 {
    let l = &loaded.scenario.learner;
    if episodes <= 1 {
        return l.epsilon_start;
    }
    l.epsilon_start + (l.epsilon_end - l.epsilon_start) * episode as f64 / (episodes - 1) as f64
}

/// Builds the shared replay with a uniform random policy, seen through the
/// restructured view, and probes the trust baselines after each episode.
pub fn build_replay(loaded: &Loaded, seed: u64) -> Result<Replay, HarnessError> {
    let sc = &loaded.scenario;
    let registry = RepresentationRegistry::with_builtins();
    let mut view = registry.create("restructured", &loaded.context())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f7e_91a7);
    let mut replay = Replay::default();

    let mut probe_engine = Engine::new(loaded.topology.clone(), loaded.vulns.clone(), sc.seed);
    let baselines: Vec<_> = sc
        .trust
        .baselines
        .iter()
        .filter_map(|b| record_baseline(&mut probe_engine, b.action.clone(), b.target.clone()))
        .collect();
    // faults that voting cannot mask are the ones a baseline probe must catch
    let response_sensors: Vec<&str> = sc
        .sensors
        .iter()
        .filter(|s| s.kind().ok() == Some(SensorKind::ResponseSensor))
        .map(|s| s.id.as_str())
        .collect();
    let upstream: Vec<_> = sc
        .trust
        .faults
        .iter()
        .filter(|f| (f.replica.is_none() || sc.trust.replicas < 3) && response_sensors.contains(&f.sensor.as_str()))
        .collect();

    // ids continue across episodes so the replay reads as one stream
    let mut next_id = 1;
    for episode in 0..sc.learner.eval_episodes.max(1) {
        let out = run_episode_from(loaded, view.as_mut(), &mut RandomPolicy, &mut rng, episode, next_id)?;
        next_id = out.record.last_id.wrapping_add(1);
        replay.entries.extend(out.snapshots.into_iter().map(|snapshot| ReplayEntry { episode, snapshot }));
        for b in &baselines {
            let mut injectors = upstream
                .iter()
                .map(|f| {
                    let mut f = (*f).clone();
                    f.seed = f.seed.wrapping_add(episode as u64);
                    FaultInjector::new(&f)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let verdict = match injectors.first_mut() {
                Some(f) => probe_baseline(&mut probe_engine, b, Some(f)),
                None => probe_baseline(&mut probe_engine, b, None),
            };
            let deviation = match verdict {
                Verdict::Match => Vec::new(),
                Verdict::Deviation(fields) => fields,
            };
            replay.baselines.push(BaselineReport {
                episode,
                action: b.action.clone(),
                target: b.target.clone(),
                matched: deviation.is_empty(),
                deviation,
            });
        }
    }
    Ok(replay)
}

/// Codec metrics of one representation over the replay, observed as one
/// continuous stream.
pub fn replay_metrics(repr: &mut dyn Representation, replay: &Replay) -> Result<crate::repr::ReprStats, HarnessError> {
    repr.reset();
    for e in &replay.entries {
        repr.observe(&e.snapshot)?;
    }
    repr.grounding();
    Ok(repr.stats())
}

fn run_cell(
    loaded: &Loaded,
    selector: &str,
    episodes: usize,
    seed: u64,
    replay: &Replay,
) -> Result<Cell, HarnessError> {
    let started = Instant::now();
    let sc = &loaded.scenario;
    let registry = RepresentationRegistry::with_builtins();
    let ctx = loaded.context();
    let mut repr = registry.create(selector, &ctx)?;
    let mut learner = Learner {
        q: QTable::default(),
        epsilon: sc.learner.epsilon_start,
        alpha: sc.learner.alpha,
        gamma: sc.learner.gamma,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut records = Vec::with_capacity(episodes);
    let mut steps = Vec::new();
    let mut budget_events = Vec::new();
    for episode in 0..episodes {
        learner.epsilon = epsilon(loaded, episode, episodes);
        let out = run_episode(loaded, repr.as_mut(), &mut learner, &mut rng, episode)?;
        // the planning events repeat every episode; keep them once
        let skip = if episode == 0 { 0 } else { loaded.budget.events().len() };
        budget_events.extend(out.budget.events().iter().skip(skip).cloned().map(|event| TaggedBudgetEvent {
            representation: selector.to_string(),
            episode,
            event,
        }));
        records.push(out.record);
        steps.extend(out.steps);
    }

    let mut fresh = registry.create(selector, &ctx)?;
    let stats = replay_metrics(fresh.as_mut(), replay)?;
    let metrics = RunMetrics {
        representation: selector.to_string(),
        encoded_width_bits: repr.width_bits(),
        distinct_states: stats.distinct_states,
        index_evictions: stats.evictions,
        stale_index_events: stats.stale_index_events,
        split_pairs: records.iter().map(|r| r.split_pairs).sum(),
        dropped_percepts: records.iter().map(|r| r.dropped_percepts).sum(),
        episodes_to_goal: records.iter().position(|r| r.reached_goal).map(|i| i + 1),
        steps_per_episode: records.iter().map(|r| r.steps).collect(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(Cell { metrics, episodes: records, steps, budget_events, q: learner.q })
}

/// Trains one learner per selector for `episodes` episodes. Cells run in
/// parallel; results come back in selector order.
pub fn run_experiment(
    loaded: &Loaded,
    selectors: &[String],
    episodes: usize,
    seed: u64,
) -> Result<ExperimentResult, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::NoEpisodes);
    }
    let registry = RepresentationRegistry::with_builtins();
    for s in selectors {
        registry.create(s, &loaded.context())?;
    }
    let replay = build_replay(loaded, seed)?;
    let cells =
        selectors.par_iter().map(|s| run_cell(loaded, s, episodes, seed, &replay)).collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentResult { cells, replay })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Payload;
    use crate::scenario::Scenario;
    use std::collections::BTreeSet;

    fn loaded() -> Loaded {
        let mut s = Scenario::reference();
        s.learner.step_cap = 30;
        s.learner.eval_episodes = 2;
        s.load().unwrap()
    }

    #[test]
    fn six_rows_in_selector_order() {
        let l = loaded();
        let sel = l.default_selectors();
        let r = run_experiment(&l, &sel, 2, 1).unwrap();
        let names: Vec<_> = r.metrics().iter().map(|m| m.representation.clone()).collect();
        assert_eq!(names, sel);
        let widths: Vec<_> = r.metrics().iter().map(|m| m.encoded_width_bits).collect();
        assert_eq!(widths, [Some(2070), Some(1161), Some(68), None, None, None]);
    }

    #[test]
    fn reruns_agree() {
        let l = loaded();
        let sel = vec!["history".to_string(), "indexed".to_string()];
        let strip = |r: ExperimentResult| -> Vec<RunMetrics> {
            r.metrics().into_iter().map(|m| RunMetrics { wall_time: 0.0, ..m }).collect()
        };
        assert_eq!(strip(run_experiment(&l, &sel, 3, 4).unwrap()), strip(run_experiment(&l, &sel, 3, 4).unwrap()));
    }

    #[test]
    fn verbatim_counts_every_message_and_indexed_collapses_only_duplicates() {
        let l = loaded();
        let replay = build_replay(&l, 3).unwrap();
        let responses: Vec<_> = replay
            .entries
            .iter()
            .flat_map(|e| e.snapshot.percepts.iter())
            .filter_map(|p| match &p.payload {
                Payload::Response(r) => Some(r.clone()),
                _ => None,
            })
            .collect();
        let ids: BTreeSet<u32> = responses.iter().map(|r| r.msg.id).collect();
        assert!(responses.len() >= 2);
        let registry = RepresentationRegistry::with_builtins();
        let mut verbatim = registry.create("verbatim", &l.context()).unwrap();
        let v = replay_metrics(verbatim.as_mut(), &replay).unwrap();
        assert_eq!(v.distinct_states, ids.len());

        let mut indexed = registry.create("indexed", &l.context()).unwrap();
        let i = replay_metrics(indexed.as_mut(), &replay).unwrap();
        assert_eq!(i.evictions, 0);
        assert!(i.distinct_states <= v.distinct_states);
    }

    #[test]
    fn epsilon_anneals_linearly() {
        let l = loaded();
        assert_eq!(epsilon(&l, 0, 5), 0.3);
        assert!((epsilon(&l, 4, 5) - 0.05).abs() < 1e-12);
        assert!((epsilon(&l, 2, 5) - 0.175).abs() < 1e-12);
    }

    #[test]
    fn baselines_match_when_only_a_replica_is_faulty() {
        let l = loaded();
        let replay = build_replay(&l, 1).unwrap();
        assert_eq!(replay.baselines.len(), 2);
        assert!(replay.baselines.iter().all(|b| b.matched));
    }

    #[test]
    fn upstream_flip_shows_in_baselines() {
        let mut s = Scenario::reference();
        s.learner.step_cap = 10;
        s.learner.eval_episodes = 1;
        s.trust.faults = vec![serde_json::from_str(
            r#"{"sensor": "response_sensor", "seed": 7, "mode": "flip", "fields": ["status.value"]}"#,
        )
        .unwrap()];
        let replay = build_replay(&s.load().unwrap(), 1).unwrap();
        assert_eq!(replay.baselines[0].deviation, ["status.value"]);
    }
}
