//! Discrete-event execution of a MADF graph across mode changes, with token
//! accounting on every edge.
//!
//! Two timing regimes are supported. Under [`Regime::Sps`] every actor is a
//! strictly periodic task: a firing reads its tokens at release and writes
//! them at its deadline, one period later. Under [`Regime::SelfTimed`] an
//! actor fires as soon as its inputs are available and writes its outputs
//! when the firing completes.

mod engine;
mod verify;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::csdf::{GraphAnalysis, ModeAnalysis, ModeTiming};
use crate::error::SimError;
use crate::graph::{ActorId, EdgeId, ModeId};
use crate::transition::{analyze_timing, Allocation, TransitionAnalysis};
use crate::Time;

pub use verify::{verify_trace, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// New source offset by the maximum-overlap offset (or `δ` on an allocation).
    #[default]
    Moo,
    /// Self-timed: new-mode firings start as soon as data allows.
    St,
    /// New mode waits for the old sink to finish.
    Sync,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "moo" => Ok(Protocol::Moo),
            "st" => Ok(Protocol::St),
            "sync" => Ok(Protocol::Sync),
            _ => Err(format!("unknown protocol `{s}` (expected moo, st or sync)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    #[default]
    Sps,
    SelfTimed,
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sps" => Ok(Regime::Sps),
            "self-timed" | "selftimed" | "self_timed" => Ok(Regime::SelfTimed),
            _ => Err(format!("unknown regime `{s}` (expected sps or self-timed)")),
        }
    }
}

/// Where a mode change request falls relative to source releases at the
/// same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McrTie {
    /// The request is seen before the iteration released at that instant,
    /// so that iteration already belongs to the new mode.
    #[default]
    BeforeRelease,
    /// The iteration released at that instant still runs in the old mode.
    AfterRelease,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mcr {
    pub time: Time,
    pub mode: ModeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub initial_mode: ModeId,
    #[serde(default)]
    pub mcrs: Vec<Mcr>,
    pub horizon: Time,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub mcr_tie: McrTie,
}

impl Scenario {
    pub fn new(initial_mode: &str, horizon: Time) -> Self {
        Self {
            initial_mode: initial_mode.to_string(),
            mcrs: Vec::new(),
            horizon,
            protocol: Protocol::Moo,
            regime: Regime::Sps,
            mcr_tie: McrTie::BeforeRelease,
        }
    }

    pub fn with_mcr(mut self, time: Time, mode: &str) -> Self {
        self.mcrs.push(Mcr {
            time,
            mode: mode.to_string(),
        });
        self
    }

    pub fn protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = protocol;
        self
    }

    pub fn regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn mcr_tie(mut self, tie: McrTie) -> Self {
        self.mcr_tie = tie;
        self
    }

    fn validate(&self, analysis: &GraphAnalysis) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        let known = |m: &str| analysis.modes.contains_key(m);
        if !known(&self.initial_mode) {
            return bad(format!("unknown initial mode `{}`", self.initial_mode));
        }
        for pair in self.mcrs.windows(2) {
            if pair[1].time <= pair[0].time {
                return bad(format!(
                    "request times must strictly increase ({} then {})",
                    pair[0].time, pair[1].time
                ));
            }
        }
        for m in &self.mcrs {
            if !known(&m.mode) {
                return bad(format!("request at {} names unknown mode `{}`", m.time, m.mode));
            }
        }
        if let Some(last) = self.mcrs.last() {
            let h = analysis.modes[&last.mode].schedule.hyper_period;
            if self.horizon <= last.time + h {
                return bad(format!(
                    "horizon {} must exceed the last request time plus one hyper-period ({})",
                    self.horizon,
                    last.time + h
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Release,
    Complete,
    ModeSwitch,
    McrAccepted,
    McrIgnored,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Release => "release",
            EventKind::Complete => "complete",
            EventKind::ModeSwitch => "mode-switch",
            EventKind::McrAccepted => "mcr-accepted",
            EventKind::McrIgnored => "mcr-ignored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: Time,
    /// Empty for mode change requests.
    pub actor: ActorId,
    pub mode: ModeId,
    /// One-based firing count of the actor over the whole run; 0 for requests.
    pub firing: u64,
    pub kind: EventKind,
    /// Index into [`SimTrace::segments`].
    pub segment: usize,
}

/// A stretch of execution in one mode. `origin` is when its source's first
/// iteration may start; `iterations` is set once a later request bounds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub mode: ModeId,
    pub origin: Time,
    pub iterations: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Underflow {
    pub edge: EdgeId,
    pub time: Time,
    pub actor: ActorId,
    pub firing: u64,
    pub available: i64,
    pub required: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadlineMiss {
    pub actor: ActorId,
    pub mode: ModeId,
    pub firing: u64,
    pub release: Time,
    pub deadline: Time,
    /// `None` if the firing had not finished by the horizon.
    pub completion: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverloadRecord {
    pub pe: String,
    pub time: Time,
    pub utilization: String,
    pub tasks: u32,
}

/// A transition as it was observed in the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedTransition {
    pub mcr_time: Time,
    pub from: ModeId,
    pub to: ModeId,
    /// Time the old source completes its last old-mode iteration.
    pub source_completion: Time,
    pub new_source_start: Option<Time>,
    pub new_sink_start: Option<Time>,
    pub delay: Option<Time>,
    pub latency: Option<Time>,
}

impl ObservedTransition {
    pub fn label(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub regime: Regime,
    pub protocol: Protocol,
    pub horizon: Time,
    pub segments: Vec<Segment>,
    pub events: Vec<TraceEvent>,
    pub fifo_min: IndexMap<EdgeId, i64>,
    pub underflows: Vec<Underflow>,
    pub deadline_misses: Vec<DeadlineMiss>,
    pub overloads: Vec<OverloadRecord>,
    pub transitions: Vec<ObservedTransition>,
}

impl SimTrace {
    /// Iteration latency of a segment: its sink's first start minus its
    /// source's first start.
    pub fn segment_latency(&self, segment: usize, source: &str, sink: &str) -> Option<Time> {
        let first = |actor: &str| {
            self.events
                .iter()
                .find(|e| e.segment == segment && e.kind == EventKind::Release && e.actor == actor)
                .map(|e| e.time)
        };
        Some(first(sink)? - first(source)?)
    }
}

/// Start offsets of the first iteration of a mode executed self-timed from
/// an empty history, and the source iteration interval used to gate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfTimedProfile {
    pub mode: ModeId,
    pub source: ActorId,
    pub sink: ActorId,
    pub start: IndexMap<ActorId, Time>,
    /// `max_i q_i · μ_i`: the busiest actor's work per iteration.
    pub hyper_period: Time,
    pub latency: Time,
}

impl ModeTiming for SelfTimedProfile {
    fn mode(&self) -> &str {
        &self.mode
    }
    fn start_times(&self) -> &IndexMap<ActorId, Time> {
        &self.start
    }
    fn hyper_period(&self) -> Time {
        self.hyper_period
    }
    fn source(&self) -> &str {
        &self.source
    }
    fn sink(&self) -> &str {
        &self.sink
    }
}

pub fn self_timed_profile(mode: &ModeAnalysis) -> Result<SelfTimedProfile, SimError> {
    engine::profile(mode)
}

/// Transition bounds for every ordered mode pair, computed from the
/// self-timed profiles instead of the strictly periodic schedules.
pub fn self_timed_transitions(analysis: &GraphAnalysis) -> Result<Vec<TransitionAnalysis>, SimError> {
    let profiles = analysis
        .modes
        .values()
        .map(self_timed_profile)
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for o in &profiles {
        for l in profiles.iter().filter(|l| l.mode != o.mode) {
            out.push(analyze_timing(o, l)?);
        }
    }
    Ok(out)
}

/// Runs the scenario. Without an allocation every actor has a processor of
/// its own and a firing takes exactly its WCET.
pub fn simulate(
    analysis: &GraphAnalysis,
    allocation: Option<&Allocation>,
    scenario: &Scenario,
) -> Result<SimTrace, SimError> {
    scenario.validate(analysis)?;
    match (scenario.regime, scenario.protocol, allocation) {
        (Regime::Sps, Protocol::St, _) => Err(SimError::Unsupported(
            "the self-timed transition protocol needs the self-timed regime".into(),
        )),
        (Regime::SelfTimed, _, Some(_)) => Err(SimError::Unsupported(
            "processor allocations are only simulated in the strictly periodic regime".into(),
        )),
        _ => engine::run(analysis, allocation, scenario),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csdf::analyze_graph;
    use crate::fixtures::{alloc_3pe, g1, scenario_two_mcr};

    #[test]
    fn scenario_validation() {
        let a = analyze_graph(&g1()).unwrap();
        let s = Scenario::new("SI2", 100).with_mcr(5, "SI1").with_mcr(5, "SI2");
        assert!(matches!(simulate(&a, None, &s), Err(SimError::InvalidScenario(_))));
        let s = Scenario::new("SI3", 100);
        assert!(matches!(simulate(&a, None, &s), Err(SimError::InvalidScenario(_))));
        let s = Scenario::new("SI2", 20).with_mcr(13, "SI1");
        assert!(matches!(simulate(&a, None, &s), Err(SimError::InvalidScenario(_))));
        let s = Scenario::new("SI2", 100).protocol(Protocol::St);
        assert!(matches!(simulate(&a, None, &s), Err(SimError::Unsupported(_))));
        let s = scenario_two_mcr();
        assert!(matches!(
            simulate(&a, Some(&alloc_3pe()), &s),
            Err(SimError::Unsupported(_))
        ));
    }

    #[test]
    fn profiles() {
        let a = analyze_graph(&g1()).unwrap();
        let p1 = self_timed_profile(&a.modes["SI1"]).unwrap();
        let p2 = self_timed_profile(&a.modes["SI2"]).unwrap();
        assert_eq!(p1.start.values().copied().collect::<Vec<_>>(), vec![0, 1, 5, 10]);
        assert_eq!(p2.start.values().copied().collect::<Vec<_>>(), vec![0, 1, 9, 2, 10]);
        assert_eq!((p1.hyper_period, p1.latency), (8, 10));
        assert_eq!((p2.hyper_period, p2.latency), (8, 10));
    }

    fn delays(trace: &SimTrace) -> Vec<(Option<Time>, Option<Time>)> {
        trace.transitions.iter().map(|t| (t.delay, t.latency)).collect()
    }

    #[test]
    fn self_timed_protocols() {
        let a = analyze_graph(&g1()).unwrap();
        let s = scenario_two_mcr();
        let moo = simulate(&a, None, &s).unwrap();
        assert_eq!(delays(&moo), vec![(Some(21), Some(10)), (Some(15), Some(10))]);
        assert_eq!(moo.transitions[1].new_sink_start, Some(38));

        let st = simulate(&a, None, &s.clone().protocol(Protocol::St)).unwrap();
        assert_eq!(delays(&st), vec![(Some(17), Some(16)), (Some(19), Some(19))]);
        assert_eq!(st.transitions[0].new_sink_start, Some(18));
        assert_eq!(st.transitions[1].new_sink_start, Some(42));
        for t in [&moo, &st] {
            assert!(t.underflows.is_empty());
            assert!(t.fifo_min.values().all(|&m| m >= 0));
        }
    }

    #[test]
    fn sync_waits_for_old_sink() {
        let a = analyze_graph(&g1()).unwrap();
        let s = scenario_two_mcr().protocol(Protocol::Sync);
        let t = simulate(&a, None, &s).unwrap();
        // F = 8, old sink offset 10, new latency 10
        assert_eq!(t.transitions[0].new_source_start, Some(18));
        assert_eq!(t.transitions[0].delay, Some(27));
    }

    #[test]
    fn sps_moo_transition() {
        let a = analyze_graph(&g1()).unwrap();
        let s = Scenario::new("SI2", 80).with_mcr(13, "SI1");
        let t = simulate(&a, Some(&alloc_3pe()), &s).unwrap();
        let obs = &t.transitions[0];
        assert_eq!(obs.source_completion, 16);
        assert_eq!(obs.new_source_start, Some(24));
        assert_eq!(obs.delay, Some(24 + 14 - 13));
        assert_eq!(obs.latency, Some(14));
        assert!(t.underflows.is_empty(), "{:?}", t.underflows);
        assert!(t.deadline_misses.is_empty(), "{:?}", t.deadline_misses);
        assert!(t.overloads.is_empty(), "{:?}", t.overloads);
    }

    #[test]
    fn requests_during_transition_are_ignored() {
        let a = analyze_graph(&g1()).unwrap();
        let s = Scenario::new("SI2", 120)
            .with_mcr(13, "SI1")
            .with_mcr(20, "SI2")
            .with_mcr(60, "SI1")
            .with_mcr(70, "SI2");
        let t = simulate(&a, None, &s).unwrap();
        let kinds: Vec<_> = t
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::McrAccepted | EventKind::McrIgnored))
            .map(|e| (e.time, e.kind))
            .collect();
        assert_eq!(
            kinds,
            vec![
                (13, EventKind::McrAccepted),
                (20, EventKind::McrIgnored),
                (60, EventKind::McrIgnored),
                (70, EventKind::McrAccepted),
            ]
        );
    }

    #[test]
    fn deterministic() {
        let a = analyze_graph(&g1()).unwrap();
        let s = scenario_two_mcr();
        let x = serde_json::to_string(&simulate(&a, None, &s).unwrap()).unwrap();
        let y = serde_json::to_string(&simulate(&a, None, &s).unwrap()).unwrap();
        assert_eq!(x, y);
    }
}
