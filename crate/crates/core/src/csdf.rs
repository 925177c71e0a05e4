//! Per-mode steady-state analysis of a cyclo-static instance: balance
//! equations, liveness, strictly periodic periods and earliest start times.

use std::collections::{BTreeMap, VecDeque};

use indexmap::IndexMap;
use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::graph::{instantiate_mode, ActorId, CsdfInstance, InstanceEdge, MadfGraph, ModeId};
use crate::rational::{self, Rational};
use crate::Time;

/// Firings per actor in one graph iteration; zero for inactive actors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RepetitionVector {
    pub q: IndexMap<ActorId, u64>,
}

impl RepetitionVector {
    pub fn get(&self, actor: &str) -> u64 {
        self.q.get(actor).copied().unwrap_or(0)
    }

    pub fn values(&self) -> Vec<u64> {
        self.q.values().copied().collect()
    }

    /// Least common multiple of the nonzero entries.
    pub fn lcm(&self) -> u64 {
        self.q.values().filter(|&&v| v > 0).fold(1, |acc, &v| acc.lcm(&v))
    }
}

/// Sum of the first `n` entries of the infinitely repeated `rates` sequence.
pub(crate) fn prefix_sum(rates: &[u64], n: u64) -> u64 {
    if rates.is_empty() {
        return 0;
    }
    let phi = rates.len() as u64;
    let total: u64 = rates.iter().sum();
    (n / phi) * total + rates[..(n % phi) as usize].iter().sum::<u64>()
}

/// Smallest `m` with `prefix_sum(rates, m) >= need`, if any.
fn firings_to_reach(rates: &[u64], need: u64) -> Option<u64> {
    if need == 0 {
        return Some(0);
    }
    let total: u64 = rates.iter().sum();
    if total == 0 {
        return None;
    }
    let phi = rates.len() as u64;
    let cycles = (need - 1) / total;
    let mut m = cycles * phi;
    let mut acc = cycles * total;
    for &r in rates {
        m += 1;
        acc += r;
        if acc >= need {
            return Some(m);
        }
    }
    unreachable!("a full cycle always covers the remainder")
}

pub fn repetition_vector(inst: &CsdfInstance) -> Result<RepetitionVector, AnalysisError> {
    let inconsistent = |edge: &InstanceEdge| AnalysisError::Inconsistent {
        mode: inst.mode.clone(),
        edge: edge.id.clone(),
    };

    for e in &inst.edges {
        let (p, c) = (inst.is_active(&e.producer), inst.is_active(&e.consumer));
        if p != c {
            let live_side = if p {
                e.production_per_cycle()
            } else {
                e.consumption_per_cycle()
            };
            if live_side > 0 {
                return Err(inconsistent(e));
            }
        }
    }

    // Cycle counts r_i as rationals, propagated per connected component.
    let mut cycles: BTreeMap<&str, Ratio<u64>> = BTreeMap::new();
    let active: Vec<&str> = inst.active_actors().map(|a| a.id.as_str()).collect();
    for &root in &active {
        if cycles.contains_key(root) {
            continue;
        }
        let mut component = vec![root];
        cycles.insert(root, Ratio::from_integer(1));
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            for e in inst.active_edges() {
                let (prd, cns) = (e.production_per_cycle(), e.consumption_per_cycle());
                if prd == 0 || cns == 0 {
                    continue;
                }
                let next = if e.producer == a {
                    Some((e.consumer.as_str(), cycles[a] * Ratio::new(prd, cns)))
                } else if e.consumer == a {
                    Some((e.producer.as_str(), cycles[a] * Ratio::new(cns, prd)))
                } else {
                    None
                };
                if let Some((other, r)) = next {
                    if !cycles.contains_key(other) {
                        cycles.insert(other, r);
                        component.push(other);
                        queue.push_back(other);
                    }
                }
            }
        }
        let denom_lcm = component.iter().fold(1u64, |acc, a| acc.lcm(cycles[a].denom()));
        let scaled: Vec<u64> = component
            .iter()
            .map(|a| cycles[a].numer() * (denom_lcm / cycles[a].denom()))
            .collect();
        let g = scaled.iter().fold(0u64, |acc, v| acc.gcd(v));
        for (a, v) in component.iter().zip(scaled) {
            cycles.insert(a, Ratio::from_integer(v / g));
        }
    }

    for e in inst.active_edges() {
        let rp = cycles[e.producer.as_str()].to_integer();
        let rc = cycles[e.consumer.as_str()].to_integer();
        if rp * e.production_per_cycle() != rc * e.consumption_per_cycle() {
            return Err(inconsistent(e));
        }
    }

    let q = inst
        .actors
        .iter()
        .map(|a| {
            let q = if a.active {
                cycles[a.id.as_str()].to_integer() * a.phases as u64
            } else {
                0
            };
            (a.id.clone(), q)
        })
        .collect();
    Ok(RepetitionVector { q })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Liveness {
    Live,
    Deadlock { stuck: Vec<ActorId> },
}

impl Liveness {
    pub fn is_live(&self) -> bool {
        matches!(self, Liveness::Live)
    }
}

/// Executes one iteration with zero-duration firings, firing any enabled
/// actor that still owes firings, until all are done or nothing can fire.
pub fn check_liveness(inst: &CsdfInstance, q: &RepetitionVector) -> Liveness {
    let edges: Vec<&InstanceEdge> = inst.active_edges().collect();
    let mut tokens: Vec<u64> = edges.iter().map(|e| e.initial_tokens).collect();
    let mut fired: IndexMap<&str, u64> = inst.active_actors().map(|a| (a.id.as_str(), 0)).collect();

    loop {
        let mut progress = false;
        for (actor, count) in fired.iter_mut() {
            if *count >= q.get(actor) {
                continue;
            }
            let n = *count as usize;
            let enabled = edges.iter().zip(&tokens).all(|(e, &t)| {
                e.consumer != *actor || t >= e.consumption[n % e.consumption.len()]
            });
            if !enabled {
                continue;
            }
            for (e, t) in edges.iter().zip(tokens.iter_mut()) {
                if e.consumer == *actor {
                    *t -= e.consumption[n % e.consumption.len()];
                }
                if e.producer == *actor {
                    *t += e.production[n % e.production.len()];
                }
            }
            *count += 1;
            progress = true;
        }
        if !progress {
            break;
        }
    }

    let stuck: Vec<ActorId> = fired
        .iter()
        .filter(|(a, &n)| n < q.get(a))
        .map(|(a, _)| a.to_string())
        .collect();
    if stuck.is_empty() {
        Liveness::Live
    } else {
        Liveness::Deadlock { stuck }
    }
}

fn active_wcets(inst: &CsdfInstance) -> Result<IndexMap<ActorId, u64>, AnalysisError> {
    inst.active_actors()
        .map(|a| match a.wcet {
            Some(w) if w > 0 => Ok((a.id.clone(), w)),
            _ => Err(AnalysisError::MissingWcet {
                mode: inst.mode.clone(),
                actor: a.id.clone(),
            }),
        })
        .collect()
}

/// Minimum strictly periodic periods of the active actors.
pub fn sps_periods(
    inst: &CsdfInstance,
    q: &RepetitionVector,
) -> Result<IndexMap<ActorId, Time>, AnalysisError> {
    let wcet = active_wcets(inst)?;
    let lcm = q.lcm();
    let demand = wcet.iter().map(|(a, &w)| w * q.get(a)).max().unwrap_or(0);
    let scale = demand.div_ceil(lcm);
    Ok(wcet
        .keys()
        .map(|a| (a.clone(), (lcm / q.get(a)) * scale))
        .collect())
}

/// Tokens produced on a port by the strictly periodic firings released at
/// `start + n * period`, counting firings released at or after `from` whose
/// production instant (release plus one period) is at or before `to`.
pub fn tokens_produced(rates: &[u64], start: Time, period: Time, from: Time, to: Time) -> u64 {
    if period == 0 || to < start + period {
        return 0;
    }
    let first = from.saturating_sub(start).div_ceil(period);
    let end = (to - start) / period; // exclusive: firing n completes at start + (n+1)*period
    if end <= first {
        return 0;
    }
    prefix_sum(rates, end) - prefix_sum(rates, first)
}

/// Tokens consumed by the firings released in the closed interval `[from, to]`.
pub fn tokens_consumed(rates: &[u64], start: Time, period: Time, from: Time, to: Time) -> u64 {
    if period == 0 || to < start || to < from {
        return 0;
    }
    let first = from.saturating_sub(start).div_ceil(period);
    let end = (to - start) / period + 1;
    if end <= first {
        return 0;
    }
    prefix_sum(rates, end) - prefix_sum(rates, first)
}

fn endpoint<'a>(
    inst: &'a CsdfInstance,
    schedule: &SteadyStateSchedule,
    actor: &str,
    edge: &str,
    producer: bool,
) -> Result<(&'a [u64], Time, Time), AnalysisError> {
    let unknown = || AnalysisError::UnknownActor {
        mode: inst.mode.clone(),
        actor: actor.to_string(),
    };
    let e = inst.edge(edge).ok_or_else(unknown)?;
    let rates = match (producer, e.producer == actor, e.consumer == actor) {
        (true, true, _) => &e.production,
        (false, _, true) => &e.consumption,
        _ => return Err(unknown()),
    };
    match (schedule.start.get(actor), schedule.periods.get(actor)) {
        (Some(&s), Some(&t)) => Ok((rates.as_slice(), s, t)),
        _ => Ok((&[], 0, 0)),
    }
}

/// Tokens `actor` writes to `edge` over the half-open window `[from, to)`.
pub fn cumulative_produced(
    inst: &CsdfInstance,
    schedule: &SteadyStateSchedule,
    actor: &str,
    edge: &str,
    from: Time,
    to: Time,
) -> Result<u64, AnalysisError> {
    let (rates, s, t) = endpoint(inst, schedule, actor, edge, true)?;
    Ok(tokens_produced(rates, s, t, from, to))
}

/// Tokens `actor` reads from `edge` over the closed window `[from, to]`.
pub fn cumulative_consumed(
    inst: &CsdfInstance,
    schedule: &SteadyStateSchedule,
    actor: &str,
    edge: &str,
    from: Time,
    to: Time,
) -> Result<u64, AnalysisError> {
    let (rates, s, t) = endpoint(inst, schedule, actor, edge, false)?;
    Ok(tokens_consumed(rates, s, t, from, to))
}

/// Active actors in dependency order; any cycle is rejected.
fn topological_order(inst: &CsdfInstance) -> Result<Vec<ActorId>, AnalysisError> {
    let mut indegree: IndexMap<&str, usize> = inst.active_actors().map(|a| (a.id.as_str(), 0)).collect();
    for e in inst.active_edges() {
        indegree[e.consumer.as_str()] += 1;
    }
    let mut ready: VecDeque<&str> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(a, _)| *a)
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(a) = ready.pop_front() {
        order.push(a.to_string());
        for e in inst.active_edges().filter(|e| e.producer == a) {
            let d = &mut indegree[e.consumer.as_str()];
            *d -= 1;
            if *d == 0 {
                ready.push_back(&e.consumer);
            }
        }
    }
    if order.len() < indegree.len() {
        let cyclic: Vec<&str> = indegree
            .iter()
            .filter(|(a, _)| !order.iter().any(|o| o == *a))
            .map(|(a, _)| *a)
            .collect();
        return Err(AnalysisError::UnsupportedStructure {
            mode: inst.mode.clone(),
            message: format!(
                "cyclic data dependencies through {} are not supported",
                cyclic.join(", ")
            ),
        });
    }
    Ok(order)
}

/// Earliest offset of the consumer of `edge` relative to time zero such that
/// it never reads a token before the producer has written it.
fn edge_offset(
    edge: &InstanceEdge,
    producer_start: Time,
    producer_period: Time,
    consumer_period: Time,
    consumer_firings: u64,
) -> Time {
    let per_cycle = edge.consumption_per_cycle();
    if per_cycle == 0 {
        return 0;
    }
    let per_iteration =
        prefix_sum(&edge.consumption, consumer_firings).max(1);
    // Past the initial tokens, the constraints repeat every iteration.
    let horizon = consumer_firings * (2 + edge.initial_tokens / per_iteration);
    let mut offset: i128 = 0;
    for n in 0..horizon {
        let need = prefix_sum(&edge.consumption, n + 1);
        if need <= edge.initial_tokens {
            continue;
        }
        let m = firings_to_reach(&edge.production, need - edge.initial_tokens)
            .expect("consistent edge produces tokens");
        let ready = producer_start as i128 + (m * producer_period) as i128;
        offset = offset.max(ready - (n * consumer_period) as i128);
    }
    offset as Time
}

/// Earliest start offsets of the active actors, relative to the source.
pub fn earliest_start_times(
    inst: &CsdfInstance,
    q: &RepetitionVector,
    periods: &IndexMap<ActorId, Time>,
) -> Result<IndexMap<ActorId, Time>, AnalysisError> {
    let order = topological_order(inst)?;
    let mut start: IndexMap<ActorId, Time> = IndexMap::new();
    for actor in &order {
        let s = inst
            .active_edges()
            .filter(|e| &e.consumer == actor)
            .map(|e| {
                edge_offset(
                    e,
                    start[&e.producer],
                    periods[&e.producer],
                    periods[actor],
                    q.get(actor),
                )
            })
            .max()
            .unwrap_or(0);
        start.insert(actor.clone(), s);
    }
    // Report in declaration order.
    Ok(inst
        .active_actors()
        .map(|a| (a.id.clone(), start[&a.id]))
        .collect())
}

/// Strictly periodic schedule of one mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteadyStateSchedule {
    pub mode: ModeId,
    pub source: ActorId,
    pub sink: ActorId,
    pub repetition: RepetitionVector,
    pub wcet: IndexMap<ActorId, Time>,
    pub periods: IndexMap<ActorId, Time>,
    pub start: IndexMap<ActorId, Time>,
    pub hyper_period: Time,
    pub latency: Time,
    #[serde(with = "rational::map")]
    pub utilization: IndexMap<ActorId, Rational>,
}

impl SteadyStateSchedule {
    pub fn is_active(&self, actor: &str) -> bool {
        self.periods.contains_key(actor)
    }

    pub fn sink_start(&self) -> Time {
        self.start[&self.sink]
    }
}

pub fn steady_state(inst: &CsdfInstance) -> Result<SteadyStateSchedule, AnalysisError> {
    let repetition = repetition_vector(inst)?;
    if let Liveness::Deadlock { stuck } = check_liveness(inst, &repetition) {
        return Err(AnalysisError::Deadlock {
            mode: inst.mode.clone(),
            stuck,
        });
    }
    let periods = sps_periods(inst, &repetition)?;
    let start = earliest_start_times(inst, &repetition, &periods)?;
    let wcet = active_wcets(inst)?;
    let hyper_period = periods
        .iter()
        .map(|(a, t)| repetition.get(a) * t)
        .next()
        .unwrap_or(0);
    let utilization = wcet
        .iter()
        .map(|(a, &w)| (a.clone(), Rational::new(w, periods[a])))
        .collect();
    let latency = start[&inst.sink] - start[&inst.source];
    Ok(SteadyStateSchedule {
        mode: inst.mode.clone(),
        source: inst.source.clone(),
        sink: inst.sink.clone(),
        repetition,
        wcet,
        periods,
        start,
        hyper_period,
        latency,
        utilization,
    })
}

/// Start offsets and iteration length of a mode, whichever way they were
/// obtained (strictly periodic analysis or a measured self-timed run).
pub trait ModeTiming {
    fn mode(&self) -> &str;
    fn start_times(&self) -> &IndexMap<ActorId, Time>;
    fn hyper_period(&self) -> Time;
    fn source(&self) -> &str;
    fn sink(&self) -> &str;

    fn latency(&self) -> Time {
        self.start_times()[self.sink()] - self.start_times()[self.source()]
    }
}

impl ModeTiming for SteadyStateSchedule {
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

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeAnalysis {
    pub instance: CsdfInstance,
    pub schedule: SteadyStateSchedule,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphAnalysis {
    pub modes: IndexMap<ModeId, ModeAnalysis>,
}

impl GraphAnalysis {
    pub fn schedule(&self, mode: &str) -> Option<&SteadyStateSchedule> {
        self.modes.get(mode).map(|m| &m.schedule)
    }

    pub fn instance(&self, mode: &str) -> Option<&CsdfInstance> {
        self.modes.get(mode).map(|m| &m.instance)
    }
}

/// Instantiates and analyzes every mode of the graph.
pub fn analyze_graph(graph: &MadfGraph) -> Result<GraphAnalysis, AnalysisError> {
    let mut modes = IndexMap::new();
    for mode in graph.control.mode_ids() {
        let instance = instantiate_mode(graph, mode)?;
        let schedule = steady_state(&instance)?;
        log::debug!(
            "mode {mode}: H={} L={} q={:?}",
            schedule.hyper_period,
            schedule.latency,
            schedule.repetition.values()
        );
        modes.insert(mode.to_string(), ModeAnalysis { instance, schedule });
    }
    Ok(GraphAnalysis { modes })
}
