//! The MADF multi-graph: dataflow actors with parameterized port rates, a
//! control actor holding the mode table, and data edges between ports.
//!
//! A graph is turned into a concrete cyclo-static graph for one mode with
//! [`instantiate_mode`]; [`validate_graph`] reports every structural problem
//! that would make instantiation fail.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;

pub type ActorId = String;
pub type ModeId = String;
pub type EdgeId = String;
pub type PortId = String;

/// Parameter valuation of one actor in one mode.
pub type Valuation = BTreeMap<String, i64>;

/// A count or a value inside a rate sequence: a literal or a parameter name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expr {
    Lit(u64),
    Param(String),
}

impl Expr {
    fn bind(&self, valuation: &Valuation) -> Result<i64, BindError> {
        match self {
            Expr::Lit(v) => Ok(*v as i64),
            Expr::Param(name) => valuation
                .get(name)
                .copied()
                .ok_or_else(|| BindError::Unbound(name.clone())),
        }
    }

    fn param(&self) -> Option<&str> {
        match self {
            Expr::Lit(_) => None,
            Expr::Param(name) => Some(name),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Param(p) => f.write_str(p),
        }
    }
}

impl From<u64> for Expr {
    fn from(v: u64) -> Self {
        Expr::Lit(v)
    }
}

impl From<&str> for Expr {
    fn from(p: &str) -> Self {
        Expr::Param(p.to_string())
    }
}

/// A parameterized rate sequence `[n1[m1], n2[m2], ...]`, where segment
/// `n[m]` stands for `n` repetitions of the value `m`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSeq {
    pub segments: Vec<(Expr, Expr)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum BindError {
    Unbound(String),
    Negative(String, i64),
}

impl ParamSeq {
    pub fn new(segments: impl IntoIterator<Item = (Expr, Expr)>) -> Self {
        Self {
            segments: segments.into_iter().collect(),
        }
    }

    /// A sequence of literal values, one segment per element.
    pub fn literal(values: &[u64]) -> Self {
        Self::new(values.iter().map(|&v| (Expr::Lit(1), Expr::Lit(v))))
    }

    pub fn params(&self) -> impl Iterator<Item = &str> {
        self.segments
            .iter()
            .flat_map(|(n, m)| n.param().into_iter().chain(m.param()))
    }

    pub(crate) fn try_flatten(&self, valuation: &Valuation) -> Result<Vec<u64>, BindError> {
        let mut out = Vec::new();
        for (count, value) in &self.segments {
            let n = count.bind(valuation)?;
            let m = value.bind(valuation)?;
            for (expr, v) in [(count, n), (value, m)] {
                if v < 0 {
                    return Err(BindError::Negative(expr.to_string(), v));
                }
            }
            out.extend(std::iter::repeat_n(m as u64, n as usize));
        }
        Ok(out)
    }

    /// Binds every parameter and expands the segments into a flat sequence.
    pub fn flatten(&self, valuation: &Valuation) -> Result<Vec<u64>, GraphError> {
        self.try_flatten(valuation).map_err(|e| match e {
            BindError::Unbound(param) => GraphError::UnboundParameter {
                actor: String::new(),
                mode: String::new(),
                param,
            },
            BindError::Negative(param, value) => GraphError::NegativeValue {
                actor: String::new(),
                mode: String::new(),
                param,
                value,
            },
        })
    }
}

impl fmt::Display for ParamSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (n, m)) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}[{m}]")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub id: PortId,
    pub rates: ParamSeq,
}

impl Port {
    pub fn new(id: &str, rates: ParamSeq) -> Self {
        Self {
            id: id.to_string(),
            rates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowActor {
    pub id: ActorId,
    /// Ordered parameter vector read from the control input port.
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<Port>,
    #[serde(default)]
    pub outputs: Vec<Port>,
    /// Worst-case execution time per mode, in clock cycles.
    #[serde(default)]
    pub wcet: IndexMap<ModeId, u64>,
}

impl DataflowActor {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            params: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wcet: IndexMap::new(),
        }
    }

    fn ports(&self) -> impl Iterator<Item = (&Port, Direction)> {
        self.inputs
            .iter()
            .map(|p| (p, Direction::Input))
            .chain(self.outputs.iter().map(|p| (p, Direction::Output)))
    }

    fn port(&self, id: &str, dir: Direction) -> Option<&Port> {
        match dir {
            Direction::Input => self.inputs.iter().find(|p| p.id == id),
            Direction::Output => self.outputs.iter().find(|p| p.id == id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Direction {
    Input,
    Output,
}

/// The control actor: one parameter valuation per actor for every mode.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlActor {
    pub modes: IndexMap<ModeId, IndexMap<ActorId, Valuation>>,
}

impl ControlActor {
    /// Actors that receive a parameter vector over a control edge.
    pub fn targets(&self) -> BTreeSet<&str> {
        self.modes
            .values()
            .flat_map(|m| m.iter().filter(|(_, v)| !v.is_empty()).map(|(a, _)| a.as_str()))
            .collect()
    }

    pub fn mode_ids(&self) -> impl Iterator<Item = &str> {
        self.modes.keys().map(String::as_str)
    }
}

/// `actor.port` endpoint of an edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PortRef {
    pub actor: ActorId,
    pub port: PortId,
}

impl PortRef {
    pub fn new(actor: &str, port: &str) -> Self {
        Self {
            actor: actor.to_string(),
            port: port.to_string(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.actor, self.port)
    }
}

impl FromStr for PortRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((a, p)) if !a.is_empty() && !p.is_empty() && !p.contains('.') => {
                Ok(PortRef::new(a, p))
            }
            _ => Err(format!("expected `actor.port`, got `{s}`")),
        }
    }
}

impl TryFrom<String> for PortRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PortRef> for String {
    fn from(p: PortRef) -> Self {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: PortRef,
    pub to: PortRef,
    /// Initial tokens on the FIFO.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tokens: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl Edge {
    pub fn new(id: &str, from: PortRef, to: PortRef) -> Self {
        Self {
            id: id.to_string(),
            from,
            to,
            tokens: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MadfGraph {
    pub actors: Vec<DataflowActor>,
    pub edges: Vec<Edge>,
    #[serde(rename = "modes")]
    pub control: ControlActor,
    pub source: ActorId,
    pub sink: ActorId,
}

impl MadfGraph {
    pub fn actor(&self, id: &str) -> Option<&DataflowActor> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn mode_ids(&self) -> Vec<ModeId> {
        self.control.modes.keys().cloned().collect()
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| {
            let full = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            GraphError::Parse {
                line: e.line(),
                column: e.column(),
                message: full.strip_suffix(&suffix).unwrap_or(&full).to_string(),
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    NoModes,
    DuplicateActor,
    DuplicatePort,
    DuplicateEdge,
    UnknownActor,
    UnknownPort,
    DuplicatePortConnection,
    UnconnectedPort,
    UnknownParameter,
    UnboundParameter,
    NegativeValue,
    PhaseMismatch,
    MissingWcet,
    ZeroWcet,
    UnknownSource,
    UnknownSink,
    SourceHasPredecessor,
    SinkHasSuccessor,
    InactiveEndpoint,
    Disconnected,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Actor, port, edge or mode the problem is attached to.
    pub subject: String,
    pub message: String,
}

impl Diagnostic {
    fn new(kind: DiagnosticKind, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind,
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.kind, self.subject, self.message)
    }
}

/// Checks every structural invariant of the graph and its mode table.
/// An empty result means every mode can be instantiated.
pub fn validate_graph(graph: &MadfGraph) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut diags = Vec::new();

    if graph.control.modes.is_empty() {
        diags.push(Diagnostic::new(NoModes, "modes", "mode table is empty"));
    }

    let mut seen = BTreeSet::new();
    for actor in &graph.actors {
        if !seen.insert(actor.id.as_str()) {
            diags.push(Diagnostic::new(DuplicateActor, &actor.id, "actor id declared twice"));
        }
        let mut ports = BTreeSet::new();
        for (port, _) in actor.ports() {
            if !ports.insert(port.id.as_str()) {
                diags.push(Diagnostic::new(
                    DuplicatePort,
                    format!("{}.{}", actor.id, port.id),
                    "port id declared twice on the actor",
                ));
            }
            for param in port.rates.params() {
                if !actor.params.iter().any(|p| p == param) {
                    diags.push(Diagnostic::new(
                        UnknownParameter,
                        format!("{}.{}", actor.id, port.id),
                        format!("`{param}` is not in the parameter vector of {}", actor.id),
                    ));
                }
            }
        }
    }

    let mut edge_ids = BTreeSet::new();
    let mut uses: BTreeMap<(&str, &str, Direction), Vec<&str>> = BTreeMap::new();
    for edge in &graph.edges {
        if !edge_ids.insert(edge.id.as_str()) {
            diags.push(Diagnostic::new(DuplicateEdge, &edge.id, "edge id declared twice"));
        }
        for (end, dir) in [(&edge.from, Direction::Output), (&edge.to, Direction::Input)] {
            match graph.actor(&end.actor) {
                None => diags.push(Diagnostic::new(
                    UnknownActor,
                    &edge.id,
                    format!("edge endpoint `{end}` names an unknown actor"),
                )),
                Some(a) if a.port(&end.port, dir).is_none() => diags.push(Diagnostic::new(
                    UnknownPort,
                    &edge.id,
                    format!(
                        "`{end}` is not an {} port",
                        if dir == Direction::Input { "input" } else { "output" }
                    ),
                )),
                Some(_) => uses
                    .entry((end.actor.as_str(), end.port.as_str(), dir))
                    .or_default()
                    .push(&edge.id),
            }
        }
    }
    for actor in &graph.actors {
        for (port, dir) in actor.ports() {
            match uses.get(&(actor.id.as_str(), port.id.as_str(), dir)) {
                None => diags.push(Diagnostic::new(
                    UnconnectedPort,
                    format!("{}.{}", actor.id, port.id),
                    "port is not connected to any edge",
                )),
                Some(edges) if edges.len() > 1 => diags.push(Diagnostic::new(
                    DuplicatePortConnection,
                    format!("{}.{}", actor.id, port.id),
                    format!("port is connected to edges {}", edges.join(", ")),
                )),
                Some(_) => {}
            }
        }
    }

    let source_known = graph.actor(&graph.source).is_some();
    let sink_known = graph.actor(&graph.sink).is_some();
    if !source_known {
        diags.push(Diagnostic::new(UnknownSource, &graph.source, "source actor is not declared"));
    }
    if !sink_known {
        diags.push(Diagnostic::new(UnknownSink, &graph.sink, "sink actor is not declared"));
    }
    for edge in &graph.edges {
        if edge.to.actor == graph.source {
            diags.push(Diagnostic::new(
                SourceHasPredecessor,
                &edge.id,
                format!("edge feeds the source actor {}", graph.source),
            ));
        }
        if edge.from.actor == graph.sink {
            diags.push(Diagnostic::new(
                SinkHasSuccessor,
                &edge.id,
                format!("edge leaves the sink actor {}", graph.sink),
            ));
        }
    }

    // Per-mode binding problems are only meaningful once the structure is sound.
    let structural = !diags.is_empty();
    for (mode, table) in &graph.control.modes {
        for actor_id in table.keys() {
            if graph.actor(actor_id).is_none() {
                diags.push(Diagnostic::new(
                    UnknownActor,
                    mode,
                    format!("mode table assigns parameters to unknown actor {actor_id}"),
                ));
            }
        }
        let mut mode_ok = true;
        let mut bound: Vec<BoundActor> = Vec::with_capacity(graph.actors.len());
        for actor in &graph.actors {
            let valuation = table.get(&actor.id).cloned().unwrap_or_default();
            match bind_actor(actor, &valuation) {
                Ok(b) => bound.push(b),
                Err(e) => {
                    mode_ok = false;
                    let (kind, msg) = match e {
                        BindError::Unbound(p) => {
                            (UnboundParameter, format!("mode {mode} gives no value for `{p}`"))
                        }
                        BindError::Negative(p, v) => {
                            (NegativeValue, format!("`{p}` binds to {v} in mode {mode}"))
                        }
                    };
                    diags.push(Diagnostic::new(kind, &actor.id, msg));
                }
            }
        }
        if !mode_ok || structural {
            continue;
        }
        for (actor, b) in graph.actors.iter().zip(&bound) {
            if !b.active {
                continue;
            }
            if b.phase_mismatch {
                diags.push(Diagnostic::new(
                    PhaseMismatch,
                    &actor.id,
                    format!("rate sequences have different lengths in mode {mode}"),
                ));
            }
            match actor.wcet.get(mode) {
                None => diags.push(Diagnostic::new(
                    MissingWcet,
                    &actor.id,
                    format!("no WCET for mode {mode} although the actor is active"),
                )),
                Some(0) => diags.push(Diagnostic::new(
                    ZeroWcet,
                    &actor.id,
                    format!("WCET in mode {mode} must be positive"),
                )),
                Some(_) => {}
            }
        }
        let active: BTreeSet<&str> = graph
            .actors
            .iter()
            .zip(&bound)
            .filter(|(_, b)| b.active)
            .map(|(a, _)| a.id.as_str())
            .collect();
        for end in [&graph.source, &graph.sink] {
            if !active.contains(end.as_str()) {
                diags.push(Diagnostic::new(
                    InactiveEndpoint,
                    end,
                    format!("{end} is inactive in mode {mode}"),
                ));
            }
        }
        if let Some(unreached) = unreachable_active(graph, &active) {
            diags.push(Diagnostic::new(
                Disconnected,
                mode,
                format!(
                    "active actors {} are not connected to {} in mode {mode}",
                    unreached.join(", "),
                    graph.source
                ),
            ));
        }
    }
    diags
}

fn unreachable_active(graph: &MadfGraph, active: &BTreeSet<&str>) -> Option<Vec<String>> {
    let start = active.iter().next()?;
    let start = if active.contains(graph.source.as_str()) {
        graph.source.as_str()
    } else {
        start
    };
    let mut reached = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(a) = stack.pop() {
        for e in &graph.edges {
            let (f, t) = (e.from.actor.as_str(), e.to.actor.as_str());
            if !active.contains(f) || !active.contains(t) {
                continue;
            }
            for (x, y) in [(f, t), (t, f)] {
                if x == a && reached.insert(y) {
                    stack.push(y);
                }
            }
        }
    }
    let missing: Vec<String> = active
        .iter()
        .filter(|a| !reached.contains(*a))
        .map(|a| a.to_string())
        .collect();
    (!missing.is_empty()).then_some(missing)
}

struct BoundActor {
    inputs: Vec<Vec<u64>>,
    outputs: Vec<Vec<u64>>,
    phases: usize,
    active: bool,
    phase_mismatch: bool,
}

fn bind_actor(actor: &DataflowActor, valuation: &Valuation) -> Result<BoundActor, BindError> {
    let inputs = actor
        .inputs
        .iter()
        .map(|p| p.rates.try_flatten(valuation))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = actor
        .outputs
        .iter()
        .map(|p| p.rates.try_flatten(valuation))
        .collect::<Result<Vec<_>, _>>()?;
    let all = || inputs.iter().chain(&outputs);
    // An actor without ports (a lone source/sink) is always active.
    let has_ports = all().next().is_some();
    let active = !has_ports || all().any(|s| s.iter().any(|&v| v > 0));
    let lengths: BTreeSet<usize> = all().map(Vec::len).collect();
    let phases = lengths.iter().copied().max().unwrap_or(1).max(1);
    let phase_mismatch = lengths.len() > 1 || lengths.contains(&0);
    Ok(BoundActor {
        inputs,
        outputs,
        phases,
        active,
        phase_mismatch,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceActor {
    pub id: ActorId,
    /// Phase count of the bound rate sequences.
    pub phases: usize,
    pub active: bool,
    pub wcet: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceEdge {
    pub id: EdgeId,
    pub producer: ActorId,
    pub producer_port: PortId,
    pub consumer: ActorId,
    pub consumer_port: PortId,
    pub production: Vec<u64>,
    pub consumption: Vec<u64>,
    #[serde(default)]
    pub initial_tokens: u64,
}

impl InstanceEdge {
    pub fn production_per_cycle(&self) -> u64 {
        self.production.iter().sum()
    }

    pub fn consumption_per_cycle(&self) -> u64 {
        self.consumption.iter().sum()
    }
}

/// A mode-instantiated cyclo-static dataflow graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsdfInstance {
    pub mode: ModeId,
    pub actors: Vec<InstanceActor>,
    pub edges: Vec<InstanceEdge>,
    pub source: ActorId,
    pub sink: ActorId,
}

impl CsdfInstance {
    pub fn actor(&self, id: &str) -> Option<&InstanceActor> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.actor(id).is_some_and(|a| a.active)
    }

    pub fn active_actors(&self) -> impl Iterator<Item = &InstanceActor> {
        self.actors.iter().filter(|a| a.active)
    }

    pub fn edge(&self, id: &str) -> Option<&InstanceEdge> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Edges whose producer and consumer are both active.
    pub fn active_edges(&self) -> impl Iterator<Item = &InstanceEdge> {
        self.edges
            .iter()
            .filter(|e| self.is_active(&e.producer) && self.is_active(&e.consumer))
    }

    pub fn consumption(&self, actor: &str, port: &str) -> Option<&[u64]> {
        self.edges
            .iter()
            .find(|e| e.consumer == actor && e.consumer_port == port)
            .map(|e| e.consumption.as_slice())
    }

    pub fn production(&self, actor: &str, port: &str) -> Option<&[u64]> {
        self.edges
            .iter()
            .find(|e| e.producer == actor && e.producer_port == port)
            .map(|e| e.production.as_slice())
    }
}

/// Binds the mode's parameter valuation into every port and returns the
/// resulting cyclo-static graph. Fails unless the whole graph validates.
pub fn instantiate_mode(graph: &MadfGraph, mode: &str) -> Result<CsdfInstance, GraphError> {
    let table = graph
        .control
        .modes
        .get(mode)
        .ok_or_else(|| GraphError::UnknownMode(mode.to_string()))?;

    let mut bound = Vec::with_capacity(graph.actors.len());
    for actor in &graph.actors {
        let valuation = table.get(&actor.id).cloned().unwrap_or_default();
        let b = bind_actor(actor, &valuation).map_err(|e| match e {
            BindError::Unbound(param) => GraphError::UnboundParameter {
                actor: actor.id.clone(),
                mode: mode.to_string(),
                param,
            },
            BindError::Negative(param, value) => GraphError::NegativeValue {
                actor: actor.id.clone(),
                mode: mode.to_string(),
                param,
                value,
            },
        })?;
        bound.push(b);
    }

    let diags = validate_graph(graph);
    if !diags.is_empty() {
        return Err(GraphError::Invalid(diags));
    }

    let actors = graph
        .actors
        .iter()
        .zip(&bound)
        .map(|(a, b)| InstanceActor {
            id: a.id.clone(),
            phases: b.phases,
            active: b.active,
            wcet: if b.active { a.wcet.get(mode).copied() } else { None },
        })
        .collect();

    let lookup = |r: &PortRef, dir: Direction| -> Vec<u64> {
        let idx = graph.actors.iter().position(|a| a.id == r.actor).expect("validated");
        let (actor, b) = (&graph.actors[idx], &bound[idx]);
        let (ports, seqs) = match dir {
            Direction::Input => (&actor.inputs, &b.inputs),
            Direction::Output => (&actor.outputs, &b.outputs),
        };
        let p = ports.iter().position(|p| p.id == r.port).expect("validated");
        seqs[p].clone()
    };

    let edges = graph
        .edges
        .iter()
        .map(|e| InstanceEdge {
            id: e.id.clone(),
            producer: e.from.actor.clone(),
            producer_port: e.from.port.clone(),
            consumer: e.to.actor.clone(),
            consumer_port: e.to.port.clone(),
            production: lookup(&e.from, Direction::Output),
            consumption: lookup(&e.to, Direction::Input),
            initial_tokens: e.tokens,
        })
        .collect();

    Ok(CsdfInstance {
        mode: mode.to_string(),
        actors,
        edges,
        source: graph.source.clone(),
        sink: graph.sink.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::g1;

    #[test]
    fn flattens_segments() {
        let seq = ParamSeq::new([(Expr::Lit(1), "p5".into()), (Expr::Lit(1), Expr::Lit(0))]);
        let v = Valuation::from([("p5".to_string(), 2)]);
        assert_eq!(seq.flatten(&v).unwrap(), vec![2, 0]);

        let seq = ParamSeq::new([("p2".into(), Expr::Lit(1))]);
        let v = Valuation::from([("p2".to_string(), 3)]);
        assert_eq!(seq.flatten(&v).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn flatten_rejects_negative_and_unbound() {
        let seq = ParamSeq::new([(Expr::Lit(1), "p".into())]);
        assert!(matches!(
            seq.flatten(&Valuation::new()),
            Err(GraphError::UnboundParameter { .. })
        ));
        let v = Valuation::from([("p".to_string(), -1)]);
        assert!(matches!(seq.flatten(&v), Err(GraphError::NegativeValue { value: -1, .. })));
    }

    #[test]
    fn port_ref_parses() {
        assert_eq!("A1.OP1".parse::<PortRef>().unwrap(), PortRef::new("A1", "OP1"));
        assert!("A1".parse::<PortRef>().is_err());
        assert!("A1.".parse::<PortRef>().is_err());
    }

    #[test]
    fn g1_validates_clean() {
        assert_eq!(validate_graph(&g1()), vec![]);
    }

    #[test]
    fn g1_mode_si1() {
        let inst = instantiate_mode(&g1(), "SI1").unwrap();
        assert_eq!(inst.consumption("A5", "IP1").unwrap(), &[2, 0]);
        assert_eq!(inst.consumption("A5", "IP2").unwrap(), &[0, 0]);
        assert!(!inst.is_active("A4"));
        assert_eq!(inst.actor("A4").unwrap().wcet, None);
        assert_eq!(inst.actor("A2").unwrap().phases, 2);
        assert_eq!(inst.actor("A2").unwrap().wcet, Some(4));
    }

    #[test]
    fn g1_mode_si2() {
        let inst = instantiate_mode(&g1(), "SI2").unwrap();
        assert!(inst.actors.iter().all(|a| a.active));
        assert_eq!(inst.consumption("A5", "IP1").unwrap(), &[1, 0]);
        assert_eq!(inst.consumption("A5", "IP2").unwrap(), &[0, 1]);
        assert_eq!(inst.actor("A2").unwrap().phases, 1);
    }

    #[test]
    fn zero_count_parameter_deactivates_actor() {
        let mut g = g1();
        // p4 is both the count and the value on A4's ports here.
        let a4 = g.actors.iter_mut().find(|a| a.id == "A4").unwrap();
        for p in a4.inputs.iter_mut().chain(a4.outputs.iter_mut()) {
            p.rates = ParamSeq::new([("p4".into(), Expr::Lit(1))]);
        }
        let inst = instantiate_mode(&g, "SI1").unwrap();
        assert!(!inst.is_active("A4"));
        assert!(inst.is_active("A5"));
    }

    #[test]
    fn unknown_mode() {
        assert!(matches!(instantiate_mode(&g1(), "SI9"), Err(GraphError::UnknownMode(_))));
    }

    #[test]
    fn duplicate_port_connection_is_reported_once() {
        let mut g = g1();
        let a3 = g.actors.iter_mut().find(|a| a.id == "A3").unwrap();
        a3.inputs.push(Port::new("IP2", ParamSeq::literal(&[1])));
        g.edges.push(Edge::new("E6", PortRef::new("A1", "OP1"), PortRef::new("A3", "IP2")));
        let diags = validate_graph(&g);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].kind, DiagnosticKind::DuplicatePortConnection);
        assert_eq!(diags[0].subject, "A1.OP1");
    }

    #[test]
    fn missing_parameter_is_reported_once() {
        let mut g = g1();
        g.control.modes["SI1"]["A2"].clear();
        let diags = validate_graph(&g);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].kind, DiagnosticKind::UnboundParameter);
        assert_eq!(diags[0].subject, "A2");
        assert!(matches!(
            instantiate_mode(&g, "SI1"),
            Err(GraphError::UnboundParameter { .. })
        ));
        // The graph as a whole is invalid, so no mode instantiates.
        assert!(matches!(instantiate_mode(&g, "SI2"), Err(GraphError::Invalid(_))));
    }

    #[test]
    fn negative_valuation() {
        let mut g = g1();
        g.control.modes["SI2"]["A4"].insert("p4".into(), -2);
        let diags = validate_graph(&g);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::NegativeValue);
        assert!(matches!(
            instantiate_mode(&g, "SI2"),
            Err(GraphError::NegativeValue { value: -2, .. })
        ));
    }

    #[test]
    fn structural_diagnostics() {
        let mut g = g1();
        g.edges.push(Edge::new("E9", PortRef::new("A5", "OP9"), PortRef::new("A1", "IP9")));
        g.actors[0].wcet.shift_remove("SI2");
        let kinds: BTreeSet<_> = validate_graph(&g).into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::UnknownPort));
        assert!(kinds.contains(&DiagnosticKind::SourceHasPredecessor));
        assert!(kinds.contains(&DiagnosticKind::SinkHasSuccessor));

        let mut g = g1();
        g.actors[1].wcet.shift_remove("SI2");
        let diags = validate_graph(&g);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::MissingWcet);
    }

    #[test]
    fn disconnected_active_actor() {
        let mut g = g1();
        let mut lone = DataflowActor::new("A6");
        lone.wcet.insert("SI1".into(), 1);
        lone.wcet.insert("SI2".into(), 1);
        g.actors.push(lone);
        let diags = validate_graph(&g);
        let kinds: Vec<_> = diags.iter().map(|d| d.kind).collect();
        assert_eq!(kinds, vec![DiagnosticKind::Disconnected; 2]);
        assert!(diags[0].message.contains("A6"));
    }

}
