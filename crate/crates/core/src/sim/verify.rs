//! Cross-checks a simulated trace against the closed-form analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EventKind, Regime, SimTrace};
use crate::csdf::GraphAnalysis;
use crate::graph::{ActorId, EdgeId, ModeId};
use crate::transition::TransitionAnalysis;
use crate::Time;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    FifoUnderflow {
        edge: EdgeId,
        first_time: Time,
        occurrences: usize,
        min_occupancy: i64,
    },
    DeadlineMiss {
        actor: ActorId,
        firing: u64,
        deadline: Time,
        completion: Option<Time>,
    },
    Overload {
        pe: String,
        time: Time,
        utilization: String,
    },
    Aperiodic {
        actor: ActorId,
        segment: usize,
        time: Time,
        expected: Time,
    },
    DelayOutOfBounds {
        mcr_time: Time,
        transition: String,
        observed: Time,
        min: Time,
        max: Time,
    },
    LatencyMismatch {
        mcr_time: Time,
        mode: ModeId,
        observed: Time,
        expected: Time,
    },
    IncompleteTransition {
        mcr_time: Time,
        transition: String,
    },
    MissingAnalysis {
        transition: String,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::FifoUnderflow {
                edge,
                first_time,
                occurrences,
                min_occupancy,
            } => write!(
                f,
                "FIFO underflow on {edge}: first at {first_time}, {occurrences} reads short, minimum occupancy {min_occupancy}"
            ),
            Violation::DeadlineMiss {
                actor,
                firing,
                deadline,
                completion,
            } => match completion {
                Some(c) => write!(f, "{actor} firing {firing} completed at {c} after its deadline {deadline}"),
                None => write!(f, "{actor} firing {firing} unfinished at its deadline {deadline}"),
            },
            Violation::Overload { pe, time, utilization } => {
                write!(f, "{pe} demand {utilization} exceeds its bound at {time}")
            }
            Violation::Aperiodic {
                actor,
                segment,
                time,
                expected,
            } => write!(
                f,
                "{actor} released at {time} in segment {segment}, expected {expected}"
            ),
            Violation::DelayOutOfBounds {
                mcr_time,
                transition,
                observed,
                min,
                max,
            } => write!(
                f,
                "{transition} requested at {mcr_time}: delay {observed} outside [{min}, {max}]"
            ),
            Violation::LatencyMismatch {
                mcr_time,
                mode,
                observed,
                expected,
            } => write!(
                f,
                "after the request at {mcr_time}, {mode} ran with latency {observed} instead of {expected}"
            ),
            Violation::IncompleteTransition { mcr_time, transition } => write!(
                f,
                "{transition} requested at {mcr_time} did not reach the new sink before the horizon"
            ),
            Violation::MissingAnalysis { transition } => {
                write!(f, "no analysis supplied for {transition}")
            }
        }
    }
}

/// Checks token safety, deadlines, processor demand, strict periodicity (in
/// the periodic regime), and that every observed transition delay and
/// post-transition latency agrees with `transitions`.
pub fn verify_trace(
    trace: &SimTrace,
    analysis: &GraphAnalysis,
    transitions: &[TransitionAnalysis],
) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut per_edge: BTreeMap<&str, (Time, usize)> = BTreeMap::new();
    for u in &trace.underflows {
        per_edge.entry(&u.edge).or_insert((u.time, 0)).1 += 1;
    }
    for (edge, (first_time, occurrences)) in per_edge {
        out.push(Violation::FifoUnderflow {
            edge: edge.to_string(),
            first_time,
            occurrences,
            min_occupancy: trace.fifo_min.get(edge).copied().unwrap_or(0),
        });
    }
    for m in &trace.deadline_misses {
        out.push(Violation::DeadlineMiss {
            actor: m.actor.clone(),
            firing: m.firing,
            deadline: m.deadline,
            completion: m.completion,
        });
    }
    for o in &trace.overloads {
        out.push(Violation::Overload {
            pe: o.pe.clone(),
            time: o.time,
            utilization: o.utilization.clone(),
        });
    }

    if trace.regime == Regime::Sps {
        let mut next: BTreeMap<(usize, &str), Time> = BTreeMap::new();
        for e in trace.events.iter().filter(|e| e.kind == EventKind::Release) {
            let Some(schedule) = analysis.schedule(&e.mode) else {
                continue;
            };
            let (Some(&s), Some(&period)) = (schedule.start.get(&e.actor), schedule.periods.get(&e.actor))
            else {
                continue;
            };
            let expected = *next
                .entry((e.segment, &e.actor))
                .or_insert(trace.segments[e.segment].origin + s);
            if e.time != expected {
                out.push(Violation::Aperiodic {
                    actor: e.actor.clone(),
                    segment: e.segment,
                    time: e.time,
                    expected,
                });
            }
            next.insert((e.segment, &e.actor), e.time + period);
        }
    }

    for obs in &trace.transitions {
        let label = obs.label();
        let Some(ta) = transitions.iter().find(|t| t.old == obs.from && t.new == obs.to) else {
            out.push(Violation::MissingAnalysis { transition: label });
            continue;
        };
        let (Some(delay), Some(latency)) = (obs.delay, obs.latency) else {
            out.push(Violation::IncompleteTransition {
                mcr_time: obs.mcr_time,
                transition: label,
            });
            continue;
        };
        if delay < ta.delta_min || delay > ta.delta_max {
            out.push(Violation::DelayOutOfBounds {
                mcr_time: obs.mcr_time,
                transition: label,
                observed: delay,
                min: ta.delta_min,
                max: ta.delta_max,
            });
        }
        if latency != ta.new_latency {
            out.push(Violation::LatencyMismatch {
                mcr_time: obs.mcr_time,
                mode: obs.to.clone(),
                observed: latency,
                expected: ta.new_latency,
            });
        }
    }
    out
}
