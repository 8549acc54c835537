//! Command-line driver. Exit codes: 0 success, 2 bad input, 3 infeasible
//! configuration, 1 anything else.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::harness::{run_experiment, write_compare, write_outputs, HarnessError, ReplayEntry};
use crate::pipeline::SlicingStrategy;
use crate::repr::{ReprError, Representation, RepresentationRegistry};
use crate::scenario::{Loaded, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "percept-lab", version, about = "Compare world representations of a simulated autonomous attacker")]
pub struct Cli {
    /// More progress output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and measure the selected representations.
    Run(RunArgs),
    /// Run all six configurations with shared seeds and write compare.csv.
    Compare(CommonArgs),
    /// Print a representation's state from a previous run's replay trace.
    Inspect(InspectArgs),
    /// Check a scenario file and print a validation report.
    Validate(ScenarioArg),
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    /// Scenario JSON; the bundled reference scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// Defaults to the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training episodes per representation; defaults to the scenario's.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, env = "PERCEPT_LAB_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Slicing override, e.g. `extend:4` or `contextual:2,1`.
    #[arg(long)]
    pub slicing: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Representation selector; repeat for several. Defaults to all six.
    #[arg(long = "representation")]
    pub representations: Vec<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[arg(long = "representation")]
    pub representation: String,
    /// Tick within the chosen episode; the episode's last tick by default.
    #[arg(long, allow_negative_numbers = true)]
    pub tick: Option<i64>,
    /// Replay episode; the last one by default.
    #[arg(long)]
    pub episode: Option<usize>,
    #[arg(long, env = "PERCEPT_LAB_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        if e.is_infeasible() {
            CliError::Infeasible(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Repr(r @ (ReprError::UnknownSelector(_) | ReprError::UnknownChain(_))) => {
                CliError::Invalid(r.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

/// Accepts dashes in selector names, e.g. `static-elim`.
pub fn normalize_selector(s: &str) -> String {
    match s.split_once(':') {
        Some((name, arg)) => format!("{}:{arg}", name.replace('-', "_")),
        None => s.replace('-', "_"),
    }
}

fn read_scenario(arg: &ScenarioArg) -> Result<Scenario, ScenarioError> {
    match &arg.scenario {
        Some(p) => Scenario::from_path(p),
        None => Ok(Scenario::reference()),
    }
}

fn load(common: &CommonArgs) -> Result<Loaded, CliError> {
    let mut scenario = read_scenario(&common.scenario)?;
    if let Some(s) = &common.slicing {
        scenario.slicing = s.parse::<SlicingStrategy>().map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(scenario.load()?)
}

fn check_selectors(loaded: &Loaded, selectors: &[String]) -> Result<(), CliError> {
    let registry = RepresentationRegistry::with_builtins();
    for s in selectors {
        registry
            .create(s, &loaded.context())
            .map_err(|e| CliError::Invalid(format!("bad representation {s:?}: {e}")))?;
    }
    Ok(())
}

fn experiment(
    common: &CommonArgs,
    selectors: Vec<String>,
    verbose: u8,
    err: &mut dyn Write,
) -> Result<crate::harness::ExperimentResult, CliError> {
    let loaded = load(common)?;
    let selectors = if selectors.is_empty() { loaded.default_selectors() } else { selectors };
    check_selectors(&loaded, &selectors)?;
    let episodes = common.episodes.unwrap_or(loaded.scenario.learner.episodes);
    let seed = common.seed.unwrap_or(loaded.scenario.seed);
    if verbose > 0 {
        writeln!(err, "running {} x {episodes} episodes, seed {seed}", selectors.join(", "))?;
    }
    let result = run_experiment(&loaded, &selectors, episodes, seed)?;
    write_outputs(&common.out, &result)?;
    Ok(result)
}

fn cmd_run(args: RunArgs, verbose: u8, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let selectors = args.representations.iter().map(|s| normalize_selector(s)).collect();
    let result = experiment(&args.common, selectors, verbose, err)?;
    for m in result.metrics() {
        let goal = m.episodes_to_goal.map_or("never".to_string(), |e| format!("episode {e}"));
        writeln!(out, "{}: {} distinct states, goal first reached {goal}", m.representation, m.distinct_states)?;
    }
    writeln!(out, "wrote {}", args.common.out.display())?;
    Ok(())
}

fn cmd_compare(args: CommonArgs, verbose: u8, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let result = experiment(&args, Vec::new(), verbose, err)?;
    let path = args.out.join("compare.csv");
    write_compare(File::create(&path)?, &result.metrics())?;
    out.write_all(&fs::read(&path)?)?;
    Ok(())
}

fn read_replay(path: &Path) -> Result<Vec<ReplayEntry>, CliError> {
    let file =
        File::open(path).map_err(|e| CliError::Invalid(format!("no replay trace at {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?);
    }
    Ok(entries)
}

fn render(repr: &mut dyn Representation, tick: u64, out: &mut dyn Write) -> std::io::Result<()> {
    let dump = repr.dump();
    writeln!(out, "representation  {}", dump.representation)?;
    writeln!(out, "layout          {}", dump.layout_id)?;
    writeln!(out, "width_bits      {}", dump.width_bits.map_or("-".to_string(), |w| w.to_string()))?;
    writeln!(out, "state_key       {}", dump.state_key)?;
    writeln!(out, "tick            {tick}")?;
    let grounding = repr.grounding();
    writeln!(out, "\nmachines ({}):", grounding.machines.len())?;
    writeln!(out, "  {:<18} {:<28} sessions", "ip", "services")?;
    for m in &grounding.machines {
        let services: Vec<&str> = m.services.iter().map(|s| s.as_str()).collect();
        let sessions: Vec<String> = m.sessions.iter().map(|s| format!("{} -> {}", s.start, s.end)).collect();
        writeln!(out, "  {:<18} {:<28} {}", m.ip.to_string(), services.join(","), sessions.join("; "))?;
    }
    if grounding.stale_index_events > 0 {
        writeln!(out, "  ({} entries no longer resolve)", grounding.stale_index_events)?;
    }
    if !dump.fields.is_null() {
        writeln!(out, "\nfields:\n{}", serde_json::to_string_pretty(&dump.fields).unwrap_or_default())?;
    }
    if !dump.side_channel.is_null() {
        writeln!(out, "\nside channel:\n{}", serde_json::to_string_pretty(&dump.side_channel).unwrap_or_default())?;
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = read_scenario(&args.scenario)?.load()?;
    let selector = normalize_selector(&args.representation);
    check_selectors(&loaded, std::slice::from_ref(&selector))?;
    let entries = read_replay(&args.out.join("traces").join("replay.jsonl"))?;
    let last = entries.last().map(|e| e.episode).ok_or_else(|| CliError::Invalid("replay trace is empty".into()))?;
    let episode = args.episode.unwrap_or(last);
    let in_episode: Vec<&ReplayEntry> = entries.iter().filter(|e| e.episode == episode).collect();
    let end = in_episode
        .iter()
        .map(|e| e.snapshot.window.1)
        .max()
        .ok_or_else(|| CliError::Invalid(format!("episode {episode} is not in the replay")))?;
    let tick = match args.tick {
        None => end,
        Some(t) if t < 0 || t as u64 > end => {
            return Err(CliError::Invalid(format!("tick {t} out of range 0..={end} for episode {episode}")))
        }
        Some(t) => t as u64,
    };
    let mut repr = RepresentationRegistry::with_builtins()
        .create(&selector, &loaded.context())
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    for e in entries.iter().filter(|e| e.episode < episode || (e.episode == episode && e.snapshot.window.1 <= tick)) {
        repr.observe(&e.snapshot).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    render(repr.as_mut(), tick, out)?;
    Ok(())
}

fn cmd_validate(args: ScenarioArg, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = read_scenario(&args)?;
    let report = scenario.validate();
    if !report.is_ok() {
        return Err(CliError::Invalid(report.to_string()));
    }
    scenario.load()?;
    writeln!(out, "{report}")?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, verbose, out, err),
        Command::Compare(a) => cmd_compare(a, verbose, out, err),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Validate(a) => cmd_validate(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}
