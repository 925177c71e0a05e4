//! Unit-step event engine shared by both timing regimes.
//!
//! Each instant is processed in a fixed order: completions and token
//! writes, mode change requests (unless they tie after releases), releases,
//! mode-switch notices, then one unit of execution on every processor.
//! Within a phase actors are visited in lexicographic id order.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use num_traits::Zero;

use super::{
    DeadlineMiss, EventKind, McrTie, ObservedTransition, OverloadRecord, Protocol, Regime,
    Scenario, Segment, SelfTimedProfile, SimTrace, TraceEvent, Underflow,
};
use crate::csdf::{GraphAnalysis, ModeAnalysis};
use crate::error::SimError;
use crate::rational::{self, Rational};
use crate::transition::{analyze_transition, moo_offset, Allocation, SchedulerPolicy};
use crate::Time;

/// Per-mode data the engine needs, independent of regime.
struct ModeCtx<'a> {
    analysis: &'a ModeAnalysis,
    /// Start offsets used to release actors (strictly periodic regime) or to
    /// place the synchronous protocol's new source (both regimes).
    start: IndexMap<String, Time>,
    hyper: Time,
    /// Input and output edge indices with their rate sequences, per actor.
    inputs: HashMap<&'a str, Vec<(usize, &'a [u64])>>,
    outputs: HashMap<&'a str, Vec<(usize, &'a [u64])>>,
}

impl<'a> ModeCtx<'a> {
    fn new(analysis: &'a ModeAnalysis, start: IndexMap<String, Time>, hyper: Time) -> Self {
        let mut inputs: HashMap<&str, Vec<_>> = HashMap::new();
        let mut outputs: HashMap<&str, Vec<_>> = HashMap::new();
        for (i, e) in analysis.instance.edges.iter().enumerate() {
            inputs
                .entry(e.consumer.as_str())
                .or_default()
                .push((i, e.consumption.as_slice()));
            outputs
                .entry(e.producer.as_str())
                .or_default()
                .push((i, e.production.as_slice()));
        }
        Self {
            analysis,
            start,
            hyper,
            inputs,
            outputs,
        }
    }

    fn q(&self, actor: &str) -> u64 {
        self.analysis.schedule.repetition.get(actor)
    }

    fn wcet(&self, actor: &str) -> Time {
        self.analysis.schedule.wcet[actor]
    }

    fn period(&self, actor: &str) -> Time {
        self.analysis.schedule.periods[actor]
    }
}

fn rate(seq: &[u64], n: u64) -> u64 {
    if seq.is_empty() {
        0
    } else {
        seq[(n % seq.len() as u64) as usize]
    }
}

struct Pending {
    actor: String,
    segment: usize,
    n: u64,
    firing: u64,
    release: Time,
    deadline: Option<Time>,
}

struct Job {
    pending: Pending,
    remaining: Time,
    period: Time,
}

struct Accepted {
    mcr_time: Time,
    from: String,
    to: String,
    segment: usize,
    source_completion: Time,
}

struct Engine<'a> {
    regime: Regime,
    protocol: Protocol,
    tie: McrTie,
    horizon: Time,
    modes: IndexMap<&'a str, ModeCtx<'a>>,
    /// Source offset of the new mode relative to the old source's completion.
    offsets: HashMap<(String, String), Time>,
    allocation: Option<&'a Allocation>,
    actors: Vec<String>,
    source: String,
    sink: String,
    edge_ids: Vec<String>,
    tokens: Vec<i64>,
    fifo_min: Vec<i64>,
    segments: Vec<Segment>,
    awaiting_sink: Option<usize>,
    firing_count: HashMap<String, u64>,
    first_release: HashMap<(usize, String), Time>,
    completions: BTreeMap<Time, Vec<Pending>>,
    productions: BTreeMap<Time, Vec<(usize, u64)>>,
    /// Self-timed position per actor: segment and firing index within it.
    cursor: HashMap<String, (usize, u64)>,
    busy: HashMap<String, bool>,
    jobs: IndexMap<String, Vec<Job>>,
    last_overload: HashMap<String, Rational>,
    accepted: Vec<Accepted>,
    events: Vec<TraceEvent>,
    underflows: Vec<Underflow>,
    misses: Vec<DeadlineMiss>,
    overloads: Vec<OverloadRecord>,
}

impl<'a> Engine<'a> {
    fn new(
        analysis: &'a GraphAnalysis,
        modes: IndexMap<&'a str, ModeCtx<'a>>,
        initial: &str,
        regime: Regime,
        horizon: Time,
    ) -> Self {
        let first = &analysis.modes[initial].instance;
        let mut actors: Vec<String> = first.actors.iter().map(|a| a.id.clone()).collect();
        actors.sort();
        let edge_ids: Vec<String> = first.edges.iter().map(|e| e.id.clone()).collect();
        let tokens: Vec<i64> = first.edges.iter().map(|e| e.initial_tokens as i64).collect();
        Self {
            regime,
            protocol: Protocol::Moo,
            tie: McrTie::BeforeRelease,
            horizon,
            modes,
            offsets: HashMap::new(),
            allocation: None,
            source: first.source.clone(),
            sink: first.sink.clone(),
            fifo_min: tokens.clone(),
            tokens,
            edge_ids,
            segments: vec![Segment {
                mode: initial.to_string(),
                origin: 0,
                iterations: None,
            }],
            awaiting_sink: None,
            firing_count: HashMap::new(),
            first_release: HashMap::new(),
            completions: BTreeMap::new(),
            productions: BTreeMap::new(),
            cursor: actors.iter().map(|a| (a.clone(), (0, 0))).collect(),
            busy: actors.iter().map(|a| (a.clone(), false)).collect(),
            jobs: IndexMap::new(),
            last_overload: HashMap::new(),
            accepted: Vec::new(),
            actors,
            events: Vec::new(),
            underflows: Vec::new(),
            misses: Vec::new(),
            overloads: Vec::new(),
        }
    }

    fn ctx(&self, segment: usize) -> &ModeCtx<'a> {
        &self.modes[self.segments[segment].mode.as_str()]
    }

    fn event(&mut self, time: Time, actor: &str, segment: usize, firing: u64, kind: EventKind) {
        self.events.push(TraceEvent {
            time,
            actor: actor.to_string(),
            mode: self.segments[segment].mode.clone(),
            firing,
            kind,
            segment,
        });
    }

    fn run(&mut self, mcrs: &[super::Mcr]) {
        let mut mcrs = mcrs.iter().peekable();
        for t in 0..=self.horizon {
            self.complete(t);
            let due: Vec<_> = std::iter::from_fn(|| mcrs.next_if(|m| m.time == t)).collect();
            if self.tie == McrTie::BeforeRelease {
                due.iter().for_each(|m| self.request(t, &m.mode));
            }
            if t < self.horizon {
                match self.regime {
                    Regime::Sps => self.release_periodic(t),
                    Regime::SelfTimed => self.release_self_timed(t),
                }
            }
            if self.tie == McrTie::AfterRelease {
                due.iter().for_each(|m| self.request(t, &m.mode));
            }
            if self.allocation.is_some() {
                self.check_demand(t);
                self.execute(t);
            }
        }
        for jobs in self.jobs.values() {
            for j in jobs {
                if let Some(d) = j.pending.deadline.filter(|&d| d <= self.horizon) {
                    self.misses.push(DeadlineMiss {
                        actor: j.pending.actor.clone(),
                        mode: self.segments[j.pending.segment].mode.clone(),
                        firing: j.pending.firing,
                        release: j.pending.release,
                        deadline: d,
                        completion: None,
                    });
                }
            }
        }
    }

    fn complete(&mut self, t: Time) {
        if let Some(writes) = self.productions.remove(&t) {
            for (edge, amount) in writes {
                self.tokens[edge] += amount as i64;
            }
        }
        let mut done = self.completions.remove(&t).unwrap_or_default();
        done.sort_by(|a, b| a.actor.cmp(&b.actor));
        for p in done {
            self.event(t, &p.actor, p.segment, p.firing, EventKind::Complete);
            if self.regime == Regime::SelfTimed {
                let outs = self.ctx(p.segment).outputs.get(p.actor.as_str()).cloned();
                for (edge, seq) in outs.unwrap_or_default() {
                    self.tokens[edge] += rate(seq, p.n) as i64;
                }
                self.busy.insert(p.actor.clone(), false);
            }
            if let Some(d) = p.deadline.filter(|&d| t > d) {
                self.misses.push(DeadlineMiss {
                    actor: p.actor.clone(),
                    mode: self.segments[p.segment].mode.clone(),
                    firing: p.firing,
                    release: p.release,
                    deadline: d,
                    completion: Some(t),
                });
            }
        }
    }

    fn request(&mut self, t: Time, target: &str) {
        let current = self.segments.len() - 1;
        let seg = &self.segments[current];
        let origin = seg.origin;
        let from = seg.mode.clone();
        if self.awaiting_sink.is_some() || from == target || t < origin {
            log::debug!("t={t}: request for {target} ignored");
            self.event(t, "", current, 0, EventKind::McrIgnored);
            self.events.last_mut().expect("just pushed").mode = target.to_string();
            return;
        }
        let old = self.ctx(current);
        let h = old.hyper;
        let elapsed = t - origin;
        let iterations = match self.tie {
            McrTie::BeforeRelease => elapsed.div_ceil(h),
            McrTie::AfterRelease => elapsed / h + 1,
        };
        let completion = origin + iterations * h;
        let new_origin = match self.protocol {
            Protocol::Moo => completion + self.offsets[&(from.clone(), target.to_string())],
            Protocol::Sync => completion + old.start[self.sink.as_str()],
            Protocol::St => {
                let busy = old.q(&self.source) * old.wcet(&self.source);
                if iterations == 0 {
                    t
                } else {
                    t.max(origin + (iterations - 1) * h + busy)
                }
            }
        };
        let source_completion = match self.protocol {
            Protocol::St if iterations > 0 => {
                origin + (iterations - 1) * h + old.q(&self.source) * old.wcet(&self.source)
            }
            Protocol::St => t,
            _ => completion,
        };
        log::debug!(
            "t={t}: {from}->{target} accepted, {iterations} old iterations, new origin {new_origin}"
        );
        self.segments[current].iterations = Some(iterations);
        self.segments.push(Segment {
            mode: target.to_string(),
            origin: new_origin,
            iterations: None,
        });
        let segment = self.segments.len() - 1;
        self.awaiting_sink = Some(segment);
        self.accepted.push(Accepted {
            mcr_time: t,
            from,
            to: target.to_string(),
            segment,
            source_completion,
        });
        self.event(t, "", segment, 0, EventKind::McrAccepted);
    }

    /// Bookkeeping shared by both regimes when a firing starts.
    fn start_firing(&mut self, t: Time, actor: &str, segment: usize, n: u64, switches: &mut Vec<(String, usize)>) -> u64 {
        let count = self.firing_count.entry(actor.to_string()).or_insert(0);
        *count += 1;
        let firing = *count;
        if n == 0 {
            self.first_release.insert((segment, actor.to_string()), t);
            if segment > 0 {
                switches.push((actor.to_string(), segment));
            }
            if self.awaiting_sink == Some(segment) && actor == self.sink {
                self.awaiting_sink = None;
            }
        }
        self.event(t, actor, segment, firing, EventKind::Release);
        firing
    }

    fn consume(&mut self, t: Time, actor: &str, segment: usize, n: u64, firing: u64) {
        let ins = self.ctx(segment).inputs.get(actor).cloned().unwrap_or_default();
        for (edge, seq) in ins {
            let need = rate(seq, n);
            if need == 0 {
                continue;
            }
            let available = self.tokens[edge];
            self.tokens[edge] -= need as i64;
            self.fifo_min[edge] = self.fifo_min[edge].min(self.tokens[edge]);
            if available < need as i64 {
                self.underflows.push(Underflow {
                    edge: self.edge_ids[edge].clone(),
                    time: t,
                    actor: actor.to_string(),
                    firing,
                    available,
                    required: need,
                });
            }
        }
    }

    fn release_periodic(&mut self, t: Time) {
        let mut switches = Vec::new();
        for segment in 0..self.segments.len() {
            let seg = &self.segments[segment];
            if t < seg.origin {
                continue;
            }
            let (origin, limit) = (seg.origin, seg.iterations);
            for ai in 0..self.actors.len() {
                let actor = self.actors[ai].clone();
                let ctx = self.ctx(segment);
                let Some(&s) = ctx.start.get(actor.as_str()) else {
                    continue;
                };
                let period = ctx.period(&actor);
                let first = origin + s;
                if t < first || !(t - first).is_multiple_of(period) {
                    continue;
                }
                let n = (t - first) / period;
                if limit.is_some_and(|it| n >= it * ctx.q(&actor)) {
                    continue;
                }
                let wcet = ctx.wcet(&actor);
                let outs = ctx.outputs.get(actor.as_str()).cloned().unwrap_or_default();
                let firing = self.start_firing(t, &actor, segment, n, &mut switches);
                self.consume(t, &actor, segment, n, firing);
                for (edge, seq) in outs {
                    let amount = rate(seq, n);
                    if amount > 0 {
                        self.productions.entry(t + period).or_default().push((edge, amount));
                    }
                }
                let pending = Pending {
                    actor: actor.clone(),
                    segment,
                    n,
                    firing,
                    release: t,
                    deadline: Some(t + period),
                };
                match self.allocation.and_then(|a| a.pe_of(&actor)) {
                    Some(pe) => self.jobs.entry(pe.to_string()).or_default().push(Job {
                        pending,
                        remaining: wcet,
                        period,
                    }),
                    None => self.completions.entry(t + wcet).or_default().push(pending),
                }
            }
        }
        self.announce(t, switches);
    }

    /// Next firing owed by `actor` in self-timed order, if any segment has one.
    fn next_firing(&mut self, actor: &str) -> Option<(usize, u64)> {
        let (mut segment, mut n) = self.cursor[actor];
        loop {
            let q = self.ctx(segment).q(actor);
            let exhausted = q == 0 || self.segments[segment].iterations.is_some_and(|it| n >= it * q);
            if !exhausted {
                self.cursor.insert(actor.to_string(), (segment, n));
                return Some((segment, n));
            }
            if segment + 1 >= self.segments.len() {
                self.cursor.insert(actor.to_string(), (segment, n));
                return None;
            }
            segment += 1;
            n = 0;
        }
    }

    fn release_self_timed(&mut self, t: Time) {
        let mut switches = Vec::new();
        for ai in 0..self.actors.len() {
            let actor = self.actors[ai].clone();
            if self.busy[&actor] {
                continue;
            }
            let Some((segment, n)) = self.next_firing(&actor) else {
                continue;
            };
            let ctx = self.ctx(segment);
            let iteration = n / ctx.q(&actor);
            if t < self.segments[segment].origin + iteration * ctx.hyper {
                continue;
            }
            let ins = ctx.inputs.get(actor.as_str()).cloned().unwrap_or_default();
            if ins.iter().any(|&(edge, seq)| self.tokens[edge] < rate(seq, n) as i64) {
                continue;
            }
            let wcet = ctx.wcet(&actor);
            let firing = self.start_firing(t, &actor, segment, n, &mut switches);
            self.consume(t, &actor, segment, n, firing);
            self.busy.insert(actor.clone(), true);
            self.cursor.insert(actor.clone(), (segment, n + 1));
            self.completions.entry(t + wcet).or_default().push(Pending {
                actor,
                segment,
                n,
                firing,
                release: t,
                deadline: None,
            });
        }
        self.announce(t, switches);
    }

    fn announce(&mut self, t: Time, mut switches: Vec<(String, usize)>) {
        switches.sort();
        for (actor, segment) in switches {
            let firing = self.firing_count[&actor];
            self.event(t, &actor, segment, firing, EventKind::ModeSwitch);
        }
    }

    /// Utilization claimed on every PE at `t`: a task holds its share from
    /// its first release in a segment until the deadline of its last firing
    /// there.
    fn check_demand(&mut self, t: Time) {
        let Some(alloc) = self.allocation else { return };
        for (pe, actors) in &alloc.partitions {
            let mut u = Rational::zero();
            let mut tasks = 0u32;
            for seg in &self.segments {
                let ctx = &self.modes[seg.mode.as_str()];
                for a in actors {
                    let Some(&s) = ctx.start.get(a.as_str()) else {
                        continue;
                    };
                    let first = seg.origin + s;
                    let end = seg.iterations.map(|it| first + it * ctx.q(a) * ctx.period(a));
                    if t >= first && end.is_none_or(|e| t < e) {
                        u += ctx.analysis.schedule.utilization[a.as_str()];
                        tasks += 1;
                    }
                }
            }
            let n = alloc.rm_task_count.unwrap_or(tasks);
            if alloc.policy(pe).admits(u, n) {
                self.last_overload.remove(pe);
            } else if self.last_overload.get(pe) != Some(&u) {
                self.last_overload.insert(pe.clone(), u);
                self.overloads.push(OverloadRecord {
                    pe: pe.clone(),
                    time: t,
                    utilization: rational::format(&u),
                    tasks: n,
                });
            }
        }
    }

    /// One unit of preemptive execution on every PE.
    fn execute(&mut self, t: Time) {
        let Some(alloc) = self.allocation else { return };
        for (pe, jobs) in self.jobs.iter_mut() {
            let pick = match alloc.policy(pe) {
                SchedulerPolicy::Edf => jobs
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, j)| (j.pending.deadline, j.pending.release, j.pending.actor.clone())),
                SchedulerPolicy::Rm => jobs
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, j)| (j.period, j.pending.actor.clone(), j.pending.release)),
            }
            .map(|(i, _)| i);
            if let Some(i) = pick {
                jobs[i].remaining -= 1;
                if jobs[i].remaining == 0 {
                    let job = jobs.remove(i);
                    self.completions.entry(t + 1).or_default().push(job.pending);
                }
            }
        }
    }

    fn finish(self, scenario: &Scenario) -> SimTrace {
        let transitions = self
            .accepted
            .iter()
            .map(|a| {
                let src = self.first_release.get(&(a.segment, self.source.clone())).copied();
                let snk = self.first_release.get(&(a.segment, self.sink.clone())).copied();
                ObservedTransition {
                    mcr_time: a.mcr_time,
                    from: a.from.clone(),
                    to: a.to.clone(),
                    source_completion: a.source_completion,
                    new_source_start: src,
                    new_sink_start: snk,
                    delay: snk.map(|s| s - a.mcr_time),
                    latency: src.zip(snk).map(|(a, b)| b - a),
                }
            })
            .collect();
        SimTrace {
            regime: self.regime,
            protocol: scenario.protocol,
            horizon: self.horizon,
            segments: self.segments,
            events: self.events,
            fifo_min: self.edge_ids.into_iter().zip(self.fifo_min).collect(),
            underflows: self.underflows,
            deadline_misses: self.misses,
            overloads: self.overloads,
            transitions,
        }
    }
}

fn self_timed_hyper(mode: &ModeAnalysis) -> Time {
    let s = &mode.schedule;
    s.wcet.iter().map(|(a, w)| s.repetition.get(a) * w).max().unwrap_or(1).max(1)
}

pub(super) fn profile(mode: &ModeAnalysis) -> Result<SelfTimedProfile, SimError> {
    let s = &mode.schedule;
    let hyper = self_timed_hyper(mode);
    let work: Time = s.wcet.iter().map(|(a, w)| s.repetition.get(a) * w).sum();
    let name = s.mode.as_str();
    let mut analysis = GraphAnalysis::default();
    analysis.modes.insert(name.to_string(), mode.clone());
    let modes = IndexMap::from([(name, ModeCtx::new(mode, IndexMap::new(), hyper))]);
    let mut engine = Engine::new(&analysis, modes, name, Regime::SelfTimed, work + 1);
    engine.segments[0].iterations = Some(1);
    engine.run(&[]);
    let mut start = IndexMap::new();
    for a in s.periods.keys() {
        match engine.first_release.get(&(0, a.clone())) {
            Some(&t) => {
                start.insert(a.clone(), t);
            }
            None => {
                return Err(SimError::Analysis(crate::error::AnalysisError::Deadlock {
                    mode: name.to_string(),
                    stuck: vec![a.clone()],
                }))
            }
        }
    }
    let latency = start[&s.sink] - start[&s.source];
    Ok(SelfTimedProfile {
        mode: name.to_string(),
        source: s.source.clone(),
        sink: s.sink.clone(),
        start,
        hyper_period: hyper,
        latency,
    })
}

pub(super) fn run(
    analysis: &GraphAnalysis,
    allocation: Option<&Allocation>,
    scenario: &Scenario,
) -> Result<SimTrace, SimError> {
    let mut modes = IndexMap::new();
    let mut timings: HashMap<&str, SelfTimedProfile> = HashMap::new();
    for (name, m) in &analysis.modes {
        let ctx = match scenario.regime {
            Regime::Sps => ModeCtx::new(m, m.schedule.start.clone(), m.schedule.hyper_period),
            Regime::SelfTimed => {
                let p = profile(m)?;
                let ctx = ModeCtx::new(m, p.start.clone(), p.hyper_period);
                timings.insert(name, p);
                ctx
            }
        };
        modes.insert(name.as_str(), ctx);
    }
    if let Some(a) = allocation {
        let schedules: Vec<_> = analysis.modes.values().map(|m| &m.schedule).collect();
        a.validate(&schedules)?;
    }

    let mut used: Vec<&String> = vec![&scenario.initial_mode];
    for m in &scenario.mcrs {
        if !used.contains(&&m.mode) {
            used.push(&m.mode);
        }
    }
    let mut offsets = HashMap::new();
    if scenario.protocol == Protocol::Moo {
        for &o in &used {
            for &l in used.iter().filter(|l| **l != o) {
                let offset = match scenario.regime {
                    Regime::Sps => {
                        let (so, sl) = (&analysis.modes[o.as_str()].schedule, &analysis.modes[l.as_str()].schedule);
                        analyze_transition(so, sl, allocation)?.delta
                    }
                    Regime::SelfTimed => moo_offset(&timings[o.as_str()], &timings[l.as_str()]),
                };
                offsets.insert((o.clone(), l.clone()), offset);
            }
        }
    }

    let mut engine = Engine::new(analysis, modes, &scenario.initial_mode, scenario.regime, scenario.horizon);
    engine.protocol = scenario.protocol;
    engine.tie = scenario.mcr_tie;
    engine.offsets = offsets;
    engine.allocation = allocation;
    engine.run(&scenario.mcrs);
    Ok(engine.finish(scenario))
}
