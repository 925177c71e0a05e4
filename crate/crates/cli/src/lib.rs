//! File handling and command dispatch behind the `madf` binary.
//!
//! [`run`] never writes to disk or stdout itself; it returns the rendered
//! document and an exit code, and the caller decides where they go.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use madf::csdf::GraphAnalysis;
use madf::generate::{generate, GeneratorConfig};
use madf::report::{self, Report, TraceSummary};
use madf::sim::{self_timed_transitions, Protocol, Regime};
use madf::transition::{analyze_transition, Allocation, SchedulerPolicy, TransitionAnalysis};
use madf::{
    analyze_graph, simulate, validate_graph, verify_trace, AnalysisError, GraphError, MadfGraph, Scenario,
    SimError, TransitionError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Analyze,
    Transition,
    Simulate,
    Report,
    Generate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Json,
    #[default]
    Text,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown format `{s}` (expected json, text or csv)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub command: Option<Command>,
    /// Graph file, or a saved JSON report for `report --load`.
    pub input: Option<PathBuf>,
    pub alloc: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub scheduler: Option<SchedulerPolicy>,
    pub protocol: Option<Protocol>,
    pub regime: Option<Regime>,
    pub format: Format,
    /// `report` only: treat `input` as a previously written JSON report.
    pub load_report: bool,
    pub seed: Option<u64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// 0 when there are no diagnostics or violations, 1 otherwise.
    pub code: u8,
    pub body: String,
}

impl Outcome {
    fn new(clean: bool, body: String) -> Self {
        Self {
            code: if clean { 0 } else { 1 },
            body,
        }
    }
}

/// Machine-readable form of a failed run.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<madf::Diagnostic>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<String>,
}

fn graph_kind(e: &GraphError) -> &'static str {
    match e {
        GraphError::Parse { .. } => "parse",
        GraphError::UnknownMode(_) => "unknown-mode",
        GraphError::UnboundParameter { .. } => "unbound-parameter",
        GraphError::NegativeValue { .. } => "negative-value",
        GraphError::Invalid(_) => "invalid-graph",
    }
}

fn analysis_kind(e: &AnalysisError) -> &'static str {
    match e {
        AnalysisError::Graph(g) => graph_kind(g),
        AnalysisError::Inconsistent { .. } => "inconsistent",
        AnalysisError::Deadlock { .. } => "deadlock",
        AnalysisError::UnsupportedStructure { .. } => "unsupported-structure",
        AnalysisError::MissingWcet { .. } => "missing-wcet",
        AnalysisError::UnknownActor { .. } => "unknown-actor",
    }
}

fn transition_kind(e: &TransitionError) -> &'static str {
    match e {
        TransitionError::McrBeforeStart { .. } => "request-before-start",
        TransitionError::SinkNotLast { .. } => "sink-not-last",
        TransitionError::InvalidAllocation(_) => "invalid-allocation",
        TransitionError::Overload { .. } => "overload",
        TransitionError::MissingMode(_) => "missing-mode",
    }
}

impl ErrorReport {
    pub fn from_error(err: &anyhow::Error) -> Self {
        let mut context: Vec<String> = err.chain().map(|c| c.to_string()).collect();
        let message = context.pop().unwrap_or_default();
        let mut out = Self {
            kind: "error",
            message,
            line: None,
            column: None,
            diagnostics: Vec::new(),
            context,
        };
        let graph = |out: &mut Self, g: &GraphError| {
            out.kind = graph_kind(g);
            match g {
                GraphError::Parse { line, column, .. } => {
                    out.line = Some(*line);
                    out.column = Some(*column);
                }
                GraphError::Invalid(d) => out.diagnostics = d.clone(),
                _ => {}
            }
        };
        for cause in err.chain() {
            if let Some(g) = cause.downcast_ref::<GraphError>() {
                graph(&mut out, g);
            } else if let Some(a) = cause.downcast_ref::<AnalysisError>() {
                match a {
                    AnalysisError::Graph(g) => graph(&mut out, g),
                    _ => out.kind = analysis_kind(a),
                }
            } else if let Some(t) = cause.downcast_ref::<TransitionError>() {
                out.kind = transition_kind(t);
            } else if let Some(s) = cause.downcast_ref::<SimError>() {
                match s {
                    SimError::InvalidScenario(_) => out.kind = "invalid-scenario",
                    SimError::Unsupported(_) => out.kind = "unsupported",
                    SimError::Analysis(a) => out.kind = analysis_kind(a),
                    SimError::Transition(t) => out.kind = transition_kind(t),
                }
            } else if let Some(j) = cause.downcast_ref::<serde_json::Error>() {
                out.kind = "parse";
                out.line = Some(j.line());
                out.column = Some(j.column());
            } else if cause.downcast_ref::<std::io::Error>().is_some() {
                out.kind = "io";
            } else {
                continue;
            }
            break;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "error": self })).expect("error serializes")
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn load_graph(path: &Path) -> Result<MadfGraph> {
    let text = read(path)?;
    MadfGraph::from_json(&text).with_context(|| format!("in graph file {}", path.display()))
}

pub fn load_allocation(path: &Path) -> Result<Allocation> {
    let text = read(path)?;
    serde_json::from_str(&text).with_context(|| format!("in allocation file {}", path.display()))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = read(path)?;
    serde_json::from_str(&text).with_context(|| format!("in scenario file {}", path.display()))
}

fn input(cfg: &RunConfig) -> Result<&Path> {
    cfg.input.as_deref().context("an input file is required")
}

fn allocation(cfg: &RunConfig) -> Result<Option<Allocation>> {
    let Some(path) = &cfg.alloc else {
        if cfg.scheduler.is_some() {
            bail!("--scheduler needs an allocation (--alloc)");
        }
        return Ok(None);
    };
    let mut a = load_allocation(path)?;
    if let Some(s) = cfg.scheduler {
        a.scheduler = s;
        a.pe_schedulers.clear();
    }
    Ok(Some(a))
}

fn analyze(cfg: &RunConfig) -> Result<(MadfGraph, GraphAnalysis)> {
    let path = input(cfg)?;
    let graph = load_graph(path)?;
    let analysis = analyze_graph(&graph).with_context(|| format!("analyzing {}", path.display()))?;
    log::info!("analyzed {} modes of {}", analysis.modes.len(), path.display());
    Ok((graph, analysis))
}

/// Every ordered mode pair. Pairs that cannot be analyzed are logged and
/// left out, so a simulation that exercises them reports a missing analysis.
fn transition_rows(analysis: &GraphAnalysis, alloc: Option<&Allocation>) -> Result<Vec<TransitionAnalysis>> {
    if let Some(a) = alloc {
        let schedules: Vec<_> = analysis.modes.values().map(|m| &m.schedule).collect();
        a.validate(&schedules)?;
    }
    let mut rows = Vec::new();
    for o in analysis.modes.values().map(|m| &m.schedule) {
        for l in analysis.modes.values().map(|m| &m.schedule).filter(|l| l.mode != o.mode) {
            match analyze_transition(o, l, alloc) {
                Ok(t) => rows.push(t),
                Err(e) => log::warn!("{}->{}: {e}", o.mode, l.mode),
            }
        }
    }
    Ok(rows)
}

fn schedule_csv(report: &Report) -> String {
    let mut out = String::from("mode,actor,repetitions,wcet,period,start,utilization\n");
    for (m, s) in &report.modes {
        for (a, q) in &s.repetition.q {
            let opt = |v: Option<&u64>| v.map_or(String::new(), u64::to_string);
            let _ = writeln!(
                out,
                "{m},{a},{q},{},{},{},{}",
                opt(s.wcet.get(a)),
                opt(s.periods.get(a)),
                opt(s.start.get(a)),
                s.utilization.get(a).map_or(String::new(), madf::rational::format)
            );
        }
    }
    out
}

fn transition_csv(rows: &[TransitionAnalysis]) -> String {
    let mut out = String::from("old,new,delay_min,delay_max,x,delta\n");
    for t in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", t.old, t.new, t.delta_min, t.delta_max, t.x, t.delta);
    }
    out
}

fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let path = input(cfg)?;
    let graph = load_graph(path)?;
    let report = Report {
        diagnostics: validate_graph(&graph),
        ..Report::default()
    };
    if report.diagnostics.is_empty() {
        analyze_graph(&graph).with_context(|| format!("analyzing {}", path.display()))?;
    }
    let body = match cfg.format {
        Format::Json => report.to_json(),
        Format::Csv => {
            let mut out = String::from("kind,subject,message\n");
            for d in &report.diagnostics {
                let _ = writeln!(out, "{},{},\"{}\"", d.kind, d.subject, d.message.replace('"', "\"\""));
            }
            out
        }
        Format::Text if report.diagnostics.is_empty() => format!(
            "{}: {} actors, {} edges, {} modes, no problems found\n",
            path.display(),
            graph.actors.len(),
            graph.edges.len(),
            graph.control.modes.len()
        ),
        Format::Text => report::diagnostics_text(&report.diagnostics),
    };
    Ok(Outcome::new(report.is_clean(), body))
}

fn analyze_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let (_, analysis) = analyze(cfg)?;
    let report = Report::from_analysis(&analysis);
    let body = match cfg.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
        Format::Csv => schedule_csv(&report),
    };
    Ok(Outcome::new(true, body))
}

fn transition_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let (_, analysis) = analyze(cfg)?;
    let alloc = allocation(cfg)?;
    let rows = madf::transition::analyze_all(&analysis, alloc.as_ref())?;
    let body = match cfg.format {
        Format::Json => Report {
            transitions: rows,
            ..Report::default()
        }
        .to_json(),
        Format::Text => report::transition_table(&rows),
        Format::Csv => transition_csv(&rows),
    };
    Ok(Outcome::new(true, body))
}

/// Runs the configured scenario and fills the simulation part of a report.
fn run_scenario(cfg: &RunConfig, graph: &MadfGraph, analysis: &GraphAnalysis, report: &mut Report) -> Result<madf::SimTrace> {
    let path = cfg.scenario.as_deref().context("a scenario file is required (--scenario)")?;
    let mut scenario = load_scenario(path)?;
    if let Some(p) = cfg.protocol {
        scenario.protocol = p;
    }
    if let Some(r) = cfg.regime {
        scenario.regime = r;
    }
    let alloc = allocation(cfg)?;
    let trace = simulate(analysis, alloc.as_ref(), &scenario)?;
    let bounds = match scenario.regime {
        Regime::Sps => transition_rows(analysis, alloc.as_ref())?,
        Regime::SelfTimed => self_timed_transitions(analysis)?,
    };
    report.violations = verify_trace(&trace, analysis, &bounds);
    report.simulation = Some(TraceSummary::new(&trace, &graph.source, &graph.sink));
    if report.transitions.is_empty() {
        report.transitions = bounds;
    }
    Ok(trace)
}

fn simulate_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let (graph, analysis) = analyze(cfg)?;
    let mut report = Report::default();
    let trace = run_scenario(cfg, &graph, &analysis, &mut report)?;
    let body = match cfg.format {
        Format::Csv => report::trace_csv(&trace),
        Format::Json => report.to_json(),
        Format::Text => {
            let mut out = report::simulation_text(report.simulation.as_ref().expect("simulation ran"));
            for v in &report.violations {
                let _ = writeln!(out, "violation: {v}");
            }
            out
        }
    };
    Ok(Outcome::new(report.is_clean(), body))
}

fn report_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let report = if cfg.load_report {
        let path = input(cfg)?;
        let text = read(path)?;
        serde_json::from_str::<Report>(&text).with_context(|| format!("in report file {}", path.display()))?
    } else {
        let (graph, analysis) = analyze(cfg)?;
        let mut report = Report::from_analysis(&analysis);
        let alloc = allocation(cfg)?;
        report.transitions = transition_rows(&analysis, alloc.as_ref())?;
        if cfg.scenario.is_some() {
            run_scenario(cfg, &graph, &analysis, &mut report)?;
        }
        report
    };
    let body = match cfg.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
        Format::Csv => bail!("the combined report has no CSV form; use json or text"),
    };
    Ok(Outcome::new(report.is_clean(), body))
}

#[derive(Serialize)]
struct GeneratedFile<'a> {
    seed: u64,
    graph: &'a MadfGraph,
    allocation: &'a Allocation,
}

fn generate_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let seed = cfg.seed.context("--seed is required")?;
    let count = cfg.count.max(1);
    let generator = GeneratorConfig::default();
    let cases: Vec<_> = (0..count as u64).map(|i| generate(seed + i, &generator)).collect();
    let files: Vec<_> = cases
        .iter()
        .map(|c| GeneratedFile {
            seed: c.seed,
            graph: &c.graph,
            allocation: &c.allocation,
        })
        .collect();
    let body = match cfg.format {
        Format::Json if count == 1 => cases[0].graph.to_json(),
        Format::Json => serde_json::to_string_pretty(&files)?,
        Format::Text => {
            let mut out = String::new();
            for c in &cases {
                let _ = writeln!(
                    out,
                    "seed {}: {} actors, {} edges, {} modes ({} draws)",
                    c.seed,
                    c.graph.actors.len(),
                    c.graph.edges.len(),
                    c.graph.control.modes.len(),
                    c.attempts
                );
            }
            out
        }
        Format::Csv => bail!("generated graphs have no CSV form; use json or text"),
    };
    Ok(Outcome::new(true, body))
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command.context("no command given")? {
        Command::Validate => validate(cfg),
        Command::Analyze => analyze_cmd(cfg),
        Command::Transition => transition_cmd(cfg),
        Command::Simulate => simulate_cmd(cfg),
        Command::Report => report_cmd(cfg),
        Command::Generate => generate_cmd(cfg),
    }
}
