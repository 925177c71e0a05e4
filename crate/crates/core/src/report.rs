//! Plain-text tables, CSV traces and the combined JSON report.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::csdf::{GraphAnalysis, SteadyStateSchedule};
use crate::graph::{Diagnostic, ModeId};
use crate::rational;
use crate::sim::{ObservedTransition, Protocol, Regime, Segment, SimTrace, Violation};
use crate::transition::TransitionAnalysis;
use crate::Time;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSummary {
    #[serde(flatten)]
    pub segment: Segment,
    /// Observed iteration latency of the segment's first iteration.
    pub latency: Option<Time>,
}

/// The parts of a trace worth keeping without the event list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub regime: Regime,
    pub protocol: Protocol,
    pub horizon: Time,
    pub events: usize,
    pub segments: Vec<SegmentSummary>,
    pub fifo_min: IndexMap<String, i64>,
    pub underflows: usize,
    pub deadline_misses: usize,
    pub overloads: usize,
    pub transitions: Vec<ObservedTransition>,
}

impl TraceSummary {
    pub fn new(trace: &SimTrace, source: &str, sink: &str) -> Self {
        Self {
            regime: trace.regime,
            protocol: trace.protocol,
            horizon: trace.horizon,
            events: trace.events.len(),
            segments: trace
                .segments
                .iter()
                .enumerate()
                .map(|(i, s)| SegmentSummary {
                    segment: s.clone(),
                    latency: trace.segment_latency(i, source, sink),
                })
                .collect(),
            fifo_min: trace.fifo_min.clone(),
            underflows: trace.underflows.len(),
            deadline_misses: trace.deadline_misses.len(),
            overloads: trace.overloads.len(),
            transitions: trace.transitions.clone(),
        }
    }
}

/// Everything the command-line front end emits in JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Report {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub modes: IndexMap<ModeId, SteadyStateSchedule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<TransitionAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<TraceSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl Report {
    pub fn from_analysis(analysis: &GraphAnalysis) -> Self {
        Self {
            modes: analysis
                .modes
                .iter()
                .map(|(k, m)| (k.clone(), m.schedule.clone()))
                .collect(),
            ..Self::default()
        }
    }

    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty() && self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.diagnostics.is_empty() {
            out.push_str(&diagnostics_text(&self.diagnostics));
        }
        if !self.modes.is_empty() {
            let schedules: Vec<&SteadyStateSchedule> = self.modes.values().collect();
            out.push_str(&schedule_table(&schedules));
        }
        if !self.transitions.is_empty() {
            out.push('\n');
            out.push_str(&transition_table(&self.transitions));
        }
        if let Some(sim) = &self.simulation {
            out.push('\n');
            out.push_str(&simulation_text(sim));
        }
        if !self.violations.is_empty() {
            out.push('\n');
            for v in &self.violations {
                let _ = writeln!(out, "violation: {v}");
            }
        }
        out
    }
}

pub fn diagnostics_text(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("{d}\n")).collect()
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One block per mode with a column per actor; `-` marks inactive actors.
pub fn schedule_table(schedules: &[&SteadyStateSchedule]) -> String {
    let mut out = String::new();
    for (i, s) in schedules.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let actors: Vec<&String> = s.repetition.q.keys().collect();
        let cell = |f: &dyn Fn(&str) -> Option<String>| -> Vec<String> {
            actors.iter().map(|a| f(a).unwrap_or_else(|| "-".into())).collect()
        };
        let mut rows = vec![std::iter::once(format!("mode {}", s.mode))
            .chain(actors.iter().map(|a| a.to_string()))
            .collect::<Vec<_>>()];
        let mut row = |label: &str, cells: Vec<String>| {
            rows.push(std::iter::once(label.to_string()).chain(cells).collect());
        };
        row("repetitions", cell(&|a| Some(s.repetition.get(a).to_string())));
        row("wcet", cell(&|a| s.wcet.get(a).map(u64::to_string)));
        row("period", cell(&|a| s.periods.get(a).map(u64::to_string)));
        row("start", cell(&|a| s.start.get(a).map(u64::to_string)));
        row("utilization", cell(&|a| s.utilization.get(a).map(rational::format)));
        out.push_str(&render(&rows));
        let _ = writeln!(out, "hyper-period {}, latency {}", s.hyper_period, s.latency);
    }
    out
}

pub fn transition_table(rows: &[TransitionAnalysis]) -> String {
    let mut table = vec![vec![
        "transition".to_string(),
        "delay min".into(),
        "delay max".into(),
        "x".into(),
        "delta".into(),
    ]];
    for t in rows {
        table.push(vec![
            t.label(),
            t.delta_min.to_string(),
            t.delta_max.to_string(),
            t.x.to_string(),
            t.delta.to_string(),
        ]);
    }
    render(&table)
}

pub fn simulation_text(sim: &TraceSummary) -> String {
    let regime = match sim.regime {
        Regime::Sps => "strictly periodic",
        Regime::SelfTimed => "self-timed",
    };
    let protocol = match sim.protocol {
        Protocol::Moo => "moo",
        Protocol::St => "st",
        Protocol::Sync => "sync",
    };
    let mut out = format!(
        "simulation: {regime}, protocol {protocol}, horizon {}, {} events\n",
        sim.horizon, sim.events
    );
    let opt = |v: Option<Time>| v.map_or("-".to_string(), |v| v.to_string());
    let mut rows = vec![vec![
        "request".to_string(),
        "transition".into(),
        "source done".into(),
        "new source".into(),
        "new sink".into(),
        "delay".into(),
        "latency".into(),
    ]];
    for t in &sim.transitions {
        rows.push(vec![
            t.mcr_time.to_string(),
            t.label(),
            t.source_completion.to_string(),
            opt(t.new_source_start),
            opt(t.new_sink_start),
            opt(t.delay),
            opt(t.latency),
        ]);
    }
    if sim.transitions.is_empty() {
        out.push_str("no transitions\n");
    } else {
        out.push_str(&render(&rows));
    }
    let fifo: Vec<String> = sim.fifo_min.iter().map(|(e, m)| format!("{e}={m}")).collect();
    let _ = writeln!(
        out,
        "fifo minimum: {}\nunderflows {}, deadline misses {}, overloads {}",
        fifo.join(" "),
        sim.underflows,
        sim.deadline_misses,
        sim.overloads
    );
    out
}

/// One line per event: `time,actor,mode,firing,kind`.
pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = String::from("time,actor,mode,firing,kind\n");
    for e in &trace.events {
        let _ = writeln!(out, "{},{},{},{},{}", e.time, e.actor, e.mode, e.firing, e.kind.as_str());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csdf::analyze_graph;
    use crate::fixtures::{alloc_3pe, g1, scenario_two_mcr};
    use crate::sim::simulate;
    use crate::transition::analyze_all;

    #[test]
    fn schedule_table_layout() {
        let a = analyze_graph(&g1()).unwrap();
        let text = Report::from_analysis(&a).to_text();
        assert!(text.contains("mode SI1"));
        let start = text.lines().find(|l| l.starts_with("start")).unwrap();
        assert_eq!(start.split_whitespace().collect::<Vec<_>>(), ["start", "0", "2", "6", "-", "14"]);
        let u = text.lines().find(|l| l.starts_with("utilization")).unwrap();
        assert_eq!(u.split_whitespace().collect::<Vec<_>>(), ["utilization", "1/2", "1", "1/4", "-", "1/4"]);
    }

    #[test]
    fn transition_table_layout() {
        let a = analyze_graph(&g1()).unwrap();
        let rows = analyze_all(&a, Some(&alloc_3pe())).unwrap();
        let text = transition_table(&rows);
        let row = text.lines().find(|l| l.starts_with("SI2->SI1")).unwrap();
        assert_eq!(row.split_whitespace().collect::<Vec<_>>(), ["SI2->SI1", "22", "30", "6", "8"]);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let a = analyze_graph(&g1()).unwrap();
        let trace = simulate(&a, None, &scenario_two_mcr()).unwrap();
        let csv = trace_csv(&trace);
        assert!(csv.starts_with("time,actor,mode,firing,kind\n0,A1,SI2,1,release\n"));
        assert_eq!(csv.lines().count(), trace.events.len() + 1);

        let mut report = Report::from_analysis(&a);
        report.transitions = analyze_all(&a, None).unwrap();
        report.simulation = Some(TraceSummary::new(&trace, "A1", "A5"));
        let json = report.to_json();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json(), json);
    }
}
