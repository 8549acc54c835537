use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::experiment::{ExperimentResult, RunMetrics};
use super::HarnessError;

const METRIC_COLUMNS: [&str; 9] = [
    "representation",
    "encoded_width_bits",
    "distinct_states",
    "index_evictions",
    "stale_index_events",
    "split_pairs",
    "dropped_percepts",
    "episodes_to_goal",
    "steps_per_episode",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per representation; steps are `;`-separated.
pub fn write_metrics_csv(out: impl Write, metrics: &[RunMetrics]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_COLUMNS)?;
    for m in metrics {
        let steps: Vec<String> = m.steps_per_episode.iter().map(u32::to_string).collect();
        w.write_record([
            m.representation.clone(),
            opt(m.encoded_width_bits),
            m.distinct_states.to_string(),
            m.index_evictions.to_string(),
            m.stale_index_events.to_string(),
            m.split_pairs.to_string(),
            m.dropped_percepts.to_string(),
            opt(m.episodes_to_goal),
            steps.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of the side-by-side comparison. View-based representations have no
/// vector width and report the size of their hashed key space instead.
pub fn compare_table(metrics: &[RunMetrics]) -> Vec<[String; 9]> {
    metrics
        .iter()
        .map(|m| {
            let n = m.steps_per_episode.len().max(1) as f64;
            let mean = m.steps_per_episode.iter().map(|&s| f64::from(s)).sum::<f64>() / n;
            [
                m.representation.clone(),
                opt(m.encoded_width_bits),
                match m.encoded_width_bits {
                    Some(w) => format!("2^{w}"),
                    None => "2^64 keyed".to_string(),
                },
                m.distinct_states.to_string(),
                m.index_evictions.to_string(),
                m.stale_index_events.to_string(),
                m.split_pairs.to_string(),
                opt(m.episodes_to_goal),
                format!("{mean:.2}"),
            ]
        })
        .collect()
}

pub fn write_compare(out: impl Write, metrics: &[RunMetrics]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "representation",
        "encoded_width_bits",
        "state_space",
        "distinct_states",
        "index_evictions",
        "stale_index_events",
        "split_pairs",
        "episodes_to_goal",
        "mean_steps",
    ])?;
    for row in compare_table(metrics) {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// File-name-safe form of a selector.
pub fn file_stem(selector: &str) -> String {
    selector.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '-' }).collect()
}

fn jsonl<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `metrics.json`, `budget_events.jsonl` and `traces/`
/// under `dir`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<(), HarnessError> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)?;
    let metrics = result.metrics();
    write_metrics_csv(File::create(dir.join("metrics.csv"))?, &metrics)?;
    let mut json = BufWriter::new(File::create(dir.join("metrics.json"))?);
    serde_json::to_writer_pretty(&mut json, &metrics)?;
    json.write_all(b"\n")?;
    json.flush()?;
    jsonl(&dir.join("budget_events.jsonl"), result.cells.iter().flat_map(|c| &c.budget_events))?;
    for c in &result.cells {
        let stem = file_stem(&c.metrics.representation);
        jsonl(&traces.join(format!("{stem}.steps.jsonl")), &c.steps)?;
        jsonl(&traces.join(format!("{stem}.episodes.jsonl")), &c.episodes)?;
    }
    jsonl(&traces.join("replay.jsonl"), &result.replay.entries)?;
    jsonl(&traces.join("baselines.jsonl"), &result.replay.baselines)?;
    Ok(())
}
