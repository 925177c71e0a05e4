//! Brute-force reference computations shared by the integration tests.
//! Nothing here calls into the closed-form code it is compared against.

#![allow(dead_code)]

use indexmap::IndexMap;
use madf::csdf::SteadyStateSchedule;
use madf::graph::CsdfInstance;
use madf::transition::{Allocation, SchedulerPolicy};
use madf::{Rational, Time};

/// Tokens on `rates` written by firings released at or after `from` whose
/// writes (one period after release) land no later than `to`, counted one
/// firing at a time.
pub fn enumerate_produced(rates: &[u64], start: Time, period: Time, from: Time, to: Time) -> u64 {
    let mut total = 0;
    if period == 0 {
        return 0;
    }
    for n in 0.. {
        let release = start + n * period;
        if release + period > to {
            break;
        }
        if release >= from {
            total += rates[n as usize % rates.len()];
        }
    }
    total
}

/// Tokens read by firings released in `[from, to]`, one firing at a time.
pub fn enumerate_consumed(rates: &[u64], start: Time, period: Time, from: Time, to: Time) -> u64 {
    let mut total = 0;
    if period == 0 {
        return 0;
    }
    for n in 0.. {
        let release = start + n * period;
        if release > to {
            break;
        }
        if release >= from {
            total += rates[n as usize % rates.len()];
        }
    }
    total
}

/// Whether consumer firings released from `consumer_start` on never read
/// more than the initial tokens plus what the producer has written, checked
/// firing by firing over `iterations` consumer iterations.
fn edge_feasible(
    production: &[u64],
    consumption: &[u64],
    initial: u64,
    producer: (Time, Time),
    consumer: (Time, Time),
    firings: u64,
) -> bool {
    let (sp, tp) = producer;
    let (sc, tc) = consumer;
    let mut need = 0;
    for n in 0..firings {
        need += consumption[n as usize % consumption.len()];
        let release = sc + n * tc;
        let mut written = 0;
        let mut m = 0;
        while sp + (m + 1) * tp <= release {
            written += production[m as usize % production.len()];
            m += 1;
        }
        if need > initial + written {
            return false;
        }
    }
    true
}

/// Earliest start offsets found by scanning every candidate offset upward
/// until all incoming edges are feasible, repeated to a fixpoint.
pub fn scan_start_times(
    inst: &CsdfInstance,
    q: &IndexMap<String, u64>,
    periods: &IndexMap<String, Time>,
) -> IndexMap<String, Time> {
    let mut start: IndexMap<String, Time> = inst.active_actors().map(|a| (a.id.clone(), 0)).collect();
    let hyper = periods.iter().map(|(a, t)| q[a] * t).max().unwrap_or(0);
    loop {
        let mut changed = false;
        for j in inst.active_actors().map(|a| a.id.clone()).collect::<Vec<_>>() {
            let incoming: Vec<_> = inst.active_edges().filter(|e| e.consumer == j).collect();
            let limit = incoming.iter().map(|e| start[&e.producer]).max().unwrap_or(0) + 4 * hyper + 1;
            let firings = q[&j] * 4;
            let s = (0..=limit)
                .find(|&s| {
                    incoming.iter().all(|e| {
                        edge_feasible(
                            &e.production,
                            &e.consumption,
                            e.initial_tokens,
                            (start[&e.producer], periods[&e.producer]),
                            (s, periods[&j]),
                            firings,
                        )
                    })
                })
                .expect("no feasible start offset within the scan range");
            if s != start[&j] {
                start[&j] = s;
                changed = true;
            }
        }
        if !changed {
            return start;
        }
    }
}

/// Largest lag of a shared actor's old start behind its new start.
pub fn overlap_offset(old: &SteadyStateSchedule, new: &SteadyStateSchedule) -> Time {
    old.start
        .iter()
        .filter_map(|(a, so)| new.start.get(a).map(|sl| so.saturating_sub(*sl)))
        .max()
        .unwrap_or(0)
}

fn within_bound(policy: SchedulerPolicy, u: Rational, tasks: u32) -> bool {
    let u = *u.numer() as f64 / *u.denom() as f64;
    match policy {
        SchedulerPolicy::Edf => u <= 1.0 + 1e-12,
        SchedulerPolicy::Rm => {
            let n = f64::from(tasks.max(1));
            u <= n * (2f64.powf(1.0 / n) - 1.0) + 1e-12
        }
    }
}

/// Demand on `pe` at every integer instant `k`: old actors count while
/// `k` is before their old start, new actors once `k` reaches `t` plus their
/// new start.
pub fn demand(
    k: Time,
    t: Time,
    alloc: &Allocation,
    old: &SteadyStateSchedule,
    new: &SteadyStateSchedule,
    pe: &str,
) -> (Rational, u32) {
    let mut u = Rational::from_integer(0);
    let mut n = 0;
    for a in &alloc.partitions[pe] {
        if let Some(s) = old.start.get(a) {
            if k < *s {
                u += old.utilization[a];
                n += 1;
            }
        }
        if let Some(s) = new.start.get(a) {
            if k >= t + *s {
                u += new.utilization[a];
                n += 1;
            }
        }
    }
    (u, n)
}

/// Smallest offset in `[x, old sink start]` at which every PE stays within
/// its bound at every integer instant of the overlap, or `None`.
pub fn scan_delta(alloc: &Allocation, old: &SteadyStateSchedule, new: &SteadyStateSchedule) -> Option<Time> {
    let x = overlap_offset(old, new);
    let end = old.start[&old.sink];
    (x..=end).find(|&t| {
        (t..=end).all(|k| {
            alloc.partitions.keys().all(|pe| {
                let (u, n) = demand(k, t, alloc, old, new, pe);
                let tasks = alloc.rm_task_count.unwrap_or(n);
                within_bound(alloc.policy(pe), u, tasks)
            })
        })
    })
}
