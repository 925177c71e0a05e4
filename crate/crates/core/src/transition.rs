//! Mode transitions under the maximum-overlap offset protocol: the offset
//! `x`, the allocation-aware delay `δ`, start-time bounds of the new mode and
//! the resulting transition-delay interval.
//!
//! All relative times are measured from the completion of the old source's
//! last iteration, `F_src`.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};
use serde::{Deserialize, Serialize};

use crate::csdf::{GraphAnalysis, ModeTiming, SteadyStateSchedule};
use crate::error::TransitionError;
use crate::graph::{ActorId, ModeId};
use crate::rational::{self, Rational};
use crate::Time;

pub type PeId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerPolicy {
    #[default]
    Edf,
    Rm,
}

impl SchedulerPolicy {
    /// Whether total utilization `u` of `tasks` tasks passes the bound.
    pub fn admits(self, u: Rational, tasks: u32) -> bool {
        match self {
            SchedulerPolicy::Edf => u <= Rational::one(),
            SchedulerPolicy::Rm => {
                if tasks == 0 {
                    return u.is_zero();
                }
                // u <= n (2^(1/n) - 1)  <=>  (u/n + 1)^n <= 2
                let n = BigInt::from(tasks);
                let base = rational::to_big(u) / BigRational::from_integer(n) + BigRational::one();
                base.pow(tasks) <= BigRational::from_integer(BigInt::from(2))
            }
        }
    }

    pub fn bound_label(self, tasks: u32) -> String {
        match self {
            SchedulerPolicy::Edf => "1".into(),
            SchedulerPolicy::Rm => format!("{tasks}(2^(1/{tasks})-1)"),
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerPolicy::Edf => "edf",
            SchedulerPolicy::Rm => "rm",
        })
    }
}

impl std::str::FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "edf" => Ok(SchedulerPolicy::Edf),
            "rm" | "fpps" => Ok(SchedulerPolicy::Rm),
            _ => Err(format!("unknown scheduler `{s}` (expected edf or rm)")),
        }
    }
}

/// Partition of the actors over processing elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub partitions: IndexMap<PeId, Vec<ActorId>>,
    #[serde(default)]
    pub scheduler: SchedulerPolicy,
    /// Per-PE override of `scheduler`.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub pe_schedulers: IndexMap<PeId, SchedulerPolicy>,
    /// Fixed task count for the rate-monotonic bound; otherwise the number
    /// of tasks contributing at the instant being checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm_task_count: Option<u32>,
}

impl Allocation {
    /// One PE per actor, named after the actor.
    pub fn one_per_actor<'a>(actors: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            partitions: actors
                .into_iter()
                .map(|a| (format!("PE_{a}"), vec![a.to_string()]))
                .collect(),
            scheduler: SchedulerPolicy::Edf,
            pe_schedulers: IndexMap::new(),
            rm_task_count: None,
        }
    }

    pub fn policy(&self, pe: &str) -> SchedulerPolicy {
        self.pe_schedulers.get(pe).copied().unwrap_or(self.scheduler)
    }

    pub fn pe_of(&self, actor: &str) -> Option<&str> {
        self.partitions
            .iter()
            .find(|(_, actors)| actors.iter().any(|a| a == actor))
            .map(|(pe, _)| pe.as_str())
    }

    fn admits(&self, pe: &str, u: Rational, tasks: u32) -> bool {
        self.policy(pe).admits(u, self.rm_task_count.unwrap_or(tasks))
    }

    /// Disjointness and coverage of the given modes' active actors, plus the
    /// steady-state utilization bound on every PE in every mode.
    pub fn validate(&self, schedules: &[&SteadyStateSchedule]) -> Result<(), TransitionError> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for (pe, actors) in &self.partitions {
            for a in actors {
                if !seen.insert(a.as_str()) {
                    problems.push(format!("{a} is assigned to more than one PE (again on {pe})"));
                }
            }
        }
        for pe in self.pe_schedulers.keys() {
            if !self.partitions.contains_key(pe) {
                problems.push(format!("scheduler override for unknown PE {pe}"));
            }
        }
        for s in schedules {
            for a in s.periods.keys() {
                if !seen.contains(a.as_str()) {
                    problems.push(format!("{a} (active in {}) is not allocated", s.mode));
                }
            }
        }
        if !problems.is_empty() {
            return Err(TransitionError::InvalidAllocation(problems));
        }
        for s in schedules {
            self.check_mode(s)?;
        }
        Ok(())
    }

    fn check_mode(&self, s: &SteadyStateSchedule) -> Result<(), TransitionError> {
        for (pe, actors) in &self.partitions {
            let active: Vec<&ActorId> = actors.iter().filter(|a| s.is_active(a)).collect();
            let u = active
                .iter()
                .fold(Rational::zero(), |acc, a| acc + s.utilization[a.as_str()]);
            if !self.admits(pe, u, active.len() as u32) {
                return Err(TransitionError::Overload {
                    pe: pe.clone(),
                    mode: s.mode.clone(),
                    utilization: rational::format(&u),
                    bound: self.policy(pe).bound_label(active.len() as u32),
                });
            }
        }
        Ok(())
    }
}

/// Largest lag of a shared actor's old start behind its new start, or 0.
pub fn moo_offset(old: &impl ModeTiming, new: &impl ModeTiming) -> Time {
    old.start_times()
        .iter()
        .filter_map(|(a, &so)| new.start_times().get(a).map(|&sl| so.saturating_sub(sl)))
        .max()
        .unwrap_or(0)
}

/// Completion time of the old source's last iteration after an MCR at
/// `t_mcr`, for a mode whose source started at `t_start`.
pub fn source_completion(t_start: Time, t_mcr: Time, hyper_period: Time) -> Result<Time, TransitionError> {
    if t_mcr < t_start {
        return Err(TransitionError::McrBeforeStart {
            start: t_start,
            mcr: t_mcr,
        });
    }
    Ok(t_start + (t_mcr - t_start).div_ceil(hyper_period) * hyper_period)
}

/// Start of each new-mode actor when the new mode waits for the old sink.
pub fn start_upper_bound(
    old: &impl ModeTiming,
    new: &impl ModeTiming,
    source_completion: Time,
) -> IndexMap<ActorId, Time> {
    let base = source_completion + old.start_times()[old.sink()];
    new.start_times()
        .iter()
        .map(|(a, &s)| (a.clone(), base + s))
        .collect()
}

/// Start of each new-mode actor when the new source is offset by `x`.
pub fn start_lower_bound(
    new: &impl ModeTiming,
    source_completion: Time,
    x: Time,
) -> IndexMap<ActorId, Time> {
    new.start_times()
        .iter()
        .map(|(a, &s)| (a.clone(), source_completion + x + s))
        .collect()
}

/// Total utilization demanded from `pe` at relative time `k` when the new
/// source starts at relative time `t`. Old-mode actors release their share
/// at their old start offset; new-mode actors claim theirs from `t` plus
/// their new start offset.
pub fn utilization_at(
    k: Time,
    t: Time,
    allocation: &Allocation,
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
    pe: &str,
) -> Rational {
    demand_at(k, t, allocation, old, new, pe).0
}

fn demand_at(
    k: Time,
    t: Time,
    allocation: &Allocation,
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
    pe: &str,
) -> (Rational, u32) {
    let step = |z: i128| z >= 0;
    let mut u = Rational::zero();
    let mut tasks = 0;
    for a in allocation.partitions.get(pe).into_iter().flatten() {
        if let Some(&s) = old.start.get(a) {
            if !step(k as i128 - s as i128) {
                u += old.utilization[a];
                tasks += 1;
            }
        }
        if let Some(&s) = new.start.get(a) {
            if step(k as i128 - s as i128 - t as i128) {
                u += new.utilization[a];
                tasks += 1;
            }
        }
    }
    (u, tasks)
}

fn check_sink_last(s: &impl ModeTiming) -> Result<(), TransitionError> {
    let sink = s.start_times()[s.sink()];
    match s.start_times().iter().find(|(_, &v)| v > sink) {
        Some((a, &v)) => Err(TransitionError::SinkNotLast {
            mode: s.mode().to_string(),
            actor: a.clone(),
            start: v,
            sink,
        }),
        None => Ok(()),
    }
}

/// Whether starting the new source at relative `t` keeps every PE within
/// its bound over `[t, S_snk^o]`.
pub fn offset_admissible(
    t: Time,
    allocation: &Allocation,
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
) -> bool {
    first_overload(t, allocation, old, new).is_none()
}

/// First PE and instant in `[t, S_snk^o]` whose demand exceeds the bound.
/// Only instants where some summand changes are checked, since the demand
/// is constant in between.
fn first_overload<'a>(
    t: Time,
    allocation: &'a Allocation,
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
) -> Option<(&'a str, Time, Rational)> {
    let end = old.sink_start();
    let mut instants: BTreeSet<Time> = BTreeSet::from([t]);
    instants.extend(old.start.values().copied());
    instants.extend(new.start.values().map(|s| t + s));
    allocation.partitions.keys().find_map(|pe| {
        instants.range(t..=end).find_map(|&k| {
            let (u, n) = demand_at(k, t, allocation, old, new, pe);
            (!allocation.admits(pe, u, n)).then_some((pe.as_str(), k, u))
        })
    })
}

/// Smallest offset in `[x, S_snk^o]` at which no PE is overloaded while the
/// two modes overlap.
pub fn allocation_delta(
    allocation: &Allocation,
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
    x: Time,
) -> Result<Time, TransitionError> {
    check_sink_last(old)?;
    allocation.validate(&[old, new])?;
    let end = old.sink_start();
    if let Some(t) = (x..=end).find(|&t| offset_admissible(t, allocation, old, new)) {
        return Ok(t);
    }
    let (pe, k, u) = first_overload(end, allocation, old, new).expect("no offset was admissible");
    Err(TransitionError::Overload {
        pe: pe.to_string(),
        mode: format!("{}->{} at relative time {k}", old.mode, new.mode),
        utilization: rational::format(&u),
        bound: allocation.policy(pe).to_string(),
    })
}

/// `(Δ_min, Δ_max)` for a new-mode source offset `delta`.
pub fn delay_bounds(old: &impl ModeTiming, new: &impl ModeTiming, delta: Time) -> (Time, Time) {
    let min = delta + new.start_times()[new.sink()];
    (min, min + old.hyper_period())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionAnalysis {
    pub old: ModeId,
    pub new: ModeId,
    pub x: Time,
    pub delta: Time,
    /// New-mode start offsets relative to `F_src` when the source is offset by `x`.
    pub sigma_lower: IndexMap<ActorId, Time>,
    /// New-mode start offsets relative to `F_src` when waiting for the old sink.
    pub sigma_upper: IndexMap<ActorId, Time>,
    pub delta_min: Time,
    pub delta_max: Time,
    pub old_hyper_period: Time,
    pub old_sink_start: Time,
    pub new_latency: Time,
}

impl TransitionAnalysis {
    pub fn label(&self) -> String {
        format!("{}->{}", self.old, self.new)
    }
}

/// Offsets and bounds for one ordered mode pair from start offsets alone,
/// with every actor on a PE of its own so that `δ = x`.
pub fn analyze_timing(
    old: &impl ModeTiming,
    new: &impl ModeTiming,
) -> Result<TransitionAnalysis, TransitionError> {
    check_sink_last(old)?;
    let x = moo_offset(old, new);
    let (delta_min, delta_max) = delay_bounds(old, new, x);
    Ok(TransitionAnalysis {
        old: old.mode().to_string(),
        new: new.mode().to_string(),
        x,
        delta: x,
        sigma_lower: start_lower_bound(new, 0, x),
        sigma_upper: start_upper_bound(old, new, 0),
        delta_min,
        delta_max,
        old_hyper_period: old.hyper_period(),
        old_sink_start: old.start_times()[old.sink()],
        new_latency: new.latency(),
    })
}

/// Offsets and bounds for one ordered mode pair. Without an allocation
/// every actor is assumed to have a PE of its own, so `δ = x`.
pub fn analyze_transition(
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
    allocation: Option<&Allocation>,
) -> Result<TransitionAnalysis, TransitionError> {
    let mut t = analyze_timing(old, new)?;
    if let Some(a) = allocation {
        t.delta = allocation_delta(a, old, new, t.x)?;
        (t.delta_min, t.delta_max) = delay_bounds(old, new, t.delta);
    }
    Ok(t)
}

/// Every ordered pair of distinct modes, analyzed concurrently and returned
/// in mode-table order.
pub fn analyze_all(
    analysis: &GraphAnalysis,
    allocation: Option<&Allocation>,
) -> Result<Vec<TransitionAnalysis>, TransitionError> {
    let schedules: Vec<&SteadyStateSchedule> = analysis.modes.values().map(|m| &m.schedule).collect();
    if let Some(a) = allocation {
        a.validate(&schedules)?;
    }
    let pairs: Vec<(&SteadyStateSchedule, &SteadyStateSchedule)> = schedules
        .iter()
        .flat_map(|o| schedules.iter().filter(move |l| l.mode != o.mode).map(move |l| (*o, *l)))
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = pairs
            .iter()
            .map(|&(o, l)| scope.spawn(move || analyze_transition(o, l, allocation)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("transition analysis panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csdf::analyze_graph;
    use crate::fixtures::{alloc_3pe, g1};

    fn schedules() -> (SteadyStateSchedule, SteadyStateSchedule) {
        let a = analyze_graph(&g1()).unwrap();
        (a.schedule("SI1").unwrap().clone(), a.schedule("SI2").unwrap().clone())
    }

    #[test]
    fn completion_of_old_source() {
        assert_eq!(source_completion(8, 13, 8).unwrap(), 16);
        assert_eq!(source_completion(8, 16, 8).unwrap(), 16);
        assert_eq!(source_completion(0, 1, 8).unwrap(), 8);
        assert!(source_completion(8, 7, 8).is_err());
    }

    #[test]
    fn offsets_under_sps() {
        let (si1, si2) = schedules();
        assert_eq!(moo_offset(&si2, &si1), 6);
        assert_eq!(moo_offset(&si1, &si2), 0);
    }

    #[test]
    fn start_bounds() {
        let (si1, si2) = schedules();
        let f = source_completion(8, 13, 8).unwrap();
        assert_eq!(start_upper_bound(&si2, &si1, f)["A5"], 50);
        assert_eq!(start_lower_bound(&si1, f, 6)["A5"], 36);
    }

    #[test]
    fn utilization_worked_steps() {
        let (si1, si2) = schedules();
        let alloc = alloc_3pe();
        // old-mode part only: push the new mode out of the window
        assert_eq!(utilization_at(6, 100, &alloc, &si2, &si1, "PE1"), Rational::new(3, 4));
        assert_eq!(utilization_at(8, 100, &alloc, &si2, &si1, "PE1"), Rational::new(3, 8));
        assert_eq!(utilization_at(14, 8, &alloc, &si2, &si1, "PE1"), Rational::new(1, 1));
        assert_eq!(utilization_at(6, 6, &alloc, &si2, &si1, "PE1"), Rational::new(5, 4));
    }

    #[test]
    fn delta_on_three_pes() {
        let (si1, si2) = schedules();
        let d = allocation_delta(&alloc_3pe(), &si2, &si1, 6).unwrap();
        assert_eq!(d, 8);
        assert_eq!(delay_bounds(&si2, &si1, d), (22, 30));
    }

    #[test]
    fn delta_with_private_pes() {
        let (si1, si2) = schedules();
        let alloc = Allocation::one_per_actor(["A1", "A2", "A3", "A4", "A5"]);
        let t = analyze_transition(&si2, &si1, Some(&alloc)).unwrap();
        assert_eq!((t.x, t.delta, t.delta_min, t.delta_max), (6, 6, 20, 28));
    }

    #[test]
    fn same_mode_degenerates() {
        let (si1, _) = schedules();
        let t = analyze_transition(&si1, &si1, None).unwrap();
        assert_eq!((t.delta, t.delta_min, t.delta_max), (0, 14, 22));
    }

    #[test]
    fn rm_bound() {
        assert!(SchedulerPolicy::Rm.admits(Rational::new(1, 1), 1));
        // 2(sqrt 2 - 1) ~ 0.828
        assert!(SchedulerPolicy::Rm.admits(Rational::new(82, 100), 2));
        assert!(!SchedulerPolicy::Rm.admits(Rational::new(83, 100), 2));
        assert!(SchedulerPolicy::Edf.admits(Rational::new(1, 1), 7));
        assert!(!SchedulerPolicy::Edf.admits(Rational::new(9, 8), 1));
    }

    #[test]
    fn allocation_validation() {
        let (si1, si2) = schedules();
        let mut alloc = alloc_3pe();
        alloc.partitions["PE2"].push("A1".into());
        assert!(matches!(
            alloc.validate(&[&si1, &si2]),
            Err(TransitionError::InvalidAllocation(_))
        ));
        let mut alloc = alloc_3pe();
        alloc.partitions["PE1"].push("A2".into());
        alloc.partitions["PE2"].clear();
        assert!(matches!(
            alloc.validate(&[&si1, &si2]),
            Err(TransitionError::Overload { .. })
        ));
    }

    #[test]
    fn all_pairs() {
        let a = analyze_graph(&g1()).unwrap();
        let rows = analyze_all(&a, Some(&alloc_3pe())).unwrap();
        let labels: Vec<_> = rows.iter().map(|r| r.label()).collect();
        assert_eq!(labels, ["SI1->SI2", "SI2->SI1"]);
        assert_eq!((rows[1].x, rows[1].delta), (6, 8));
        assert_eq!((rows[0].x, rows[0].delta), (0, 0));
    }
}
