use madf::csdf::{GraphAnalysis, SteadyStateSchedule};
use madf::fixtures::{alloc_3pe, g1, scenario_two_mcr};
use madf::generate::{corpus, GeneratorConfig};
use madf::report::trace_csv;
use madf::sim::{self_timed_transitions, EventKind, McrTie, Protocol, Regime, Violation};
use madf::transition::analyze_all;
use madf::{analyze_graph, simulate, verify_trace, Scenario, Time};

/// Long enough for three iterations after the last actor starts, plus the
/// iterations it takes to drain any initial tokens.
fn steady_horizon(s: &SteadyStateSchedule, analysis: &GraphAnalysis) -> Time {
    let inst = analysis.instance(&s.mode).unwrap();
    let backlog = inst
        .active_edges()
        .map(|e| {
            let per_iteration = s.repetition.get(&e.producer) / e.production.len() as u64
                * e.production.iter().sum::<u64>();
            e.initial_tokens.div_ceil(per_iteration.max(1))
        })
        .max()
        .unwrap_or(0);
    let last = s.start.values().max().copied().unwrap_or(0);
    last + (3 + backlog) * s.hyper_period
}

#[test]
fn computed_schedules_never_underflow() {
    for case in corpus(1000, 100, &GeneratorConfig::default()) {
        for s in case.analysis.modes.values().map(|m| &m.schedule) {
            let scenario = Scenario::new(&s.mode, steady_horizon(s, &case.analysis));
            let trace = simulate(&case.analysis, None, &scenario).unwrap();
            assert!(trace.underflows.is_empty(), "seed {} mode {}", case.seed, s.mode);
            assert!(trace.fifo_min.values().all(|&m| m >= 0));
            assert!(verify_trace(&trace, &case.analysis, &[]).is_empty());
        }
    }
}

#[test]
fn starting_any_actor_earlier_underflows() {
    let mut checked = 0;
    for case in corpus(2000, 60, &GeneratorConfig::default()) {
        for (mode, ma) in &case.analysis.modes {
            let s = &ma.schedule;
            for (actor, &start) in &s.start {
                if actor == &s.source || start == 0 {
                    continue;
                }
                let mut early = case.analysis.clone();
                early.modes[mode].schedule.start[actor] = start - 1;
                let scenario = Scenario::new(mode, steady_horizon(s, &case.analysis));
                let trace = simulate(&early, None, &scenario).unwrap();
                assert!(
                    trace.underflows.iter().any(|u| u.actor == *actor),
                    "seed {} mode {mode} actor {actor}",
                    case.seed
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn g1_earlier_a2_reports_one_underflow() {
    let mut a = analyze_graph(&g1()).unwrap();
    a.modes["SI1"].schedule.start["A2"] = 1;
    let trace = simulate(&a, None, &Scenario::new("SI1", 40)).unwrap();
    let violations = verify_trace(&trace, &a, &[]);
    let underflows: Vec<_> = violations
        .iter()
        .filter(|v| matches!(v, Violation::FifoUnderflow { .. }))
        .collect();
    assert_eq!(underflows.len(), 1, "{violations:?}");
    assert!(matches!(underflows[0], Violation::FifoUnderflow { edge, .. } if edge == "E1"));
}

#[test]
fn moo_transitions_stay_within_bounds() {
    let mut runs = 0;
    for case in corpus(4000, 80, &GeneratorConfig::default()) {
        let Ok(rows) = analyze_all(&case.analysis, Some(&case.allocation)) else {
            continue;
        };
        for t in &rows {
            let old = case.analysis.schedule(&t.old).unwrap();
            let new = case.analysis.schedule(&t.new).unwrap();
            for phase in [0, 1, old.hyper_period / 2, old.hyper_period - 1] {
                let mcr = old.hyper_period + phase;
                let horizon = mcr + t.delta_max + steady_horizon(new, &case.analysis);
                let scenario = Scenario::new(&t.old, horizon).with_mcr(mcr, &t.new);
                let trace = simulate(&case.analysis, Some(&case.allocation), &scenario).unwrap();
                let violations = verify_trace(&trace, &case.analysis, &rows);
                assert!(violations.is_empty(), "seed {} {} at {mcr}: {violations:?}", case.seed, t.label());
                assert_eq!(trace.transitions.len(), 1);
                runs += 1;
            }
        }
    }
    assert!(runs > 100);
}

#[test]
fn g1_sweep_attains_both_delay_bounds() {
    let a = analyze_graph(&g1()).unwrap();
    let alloc = alloc_3pe();
    let rows = analyze_all(&a, Some(&alloc)).unwrap();
    let bound = rows.iter().find(|t| t.old == "SI2" && t.new == "SI1").unwrap();
    let mut seen = Vec::new();
    let runs = (0..8)
        .map(|phase| (8 + phase, McrTie::BeforeRelease))
        .chain([(8, McrTie::AfterRelease)]);
    for (mcr, tie) in runs {
        let scenario = Scenario::new("SI2", 80).with_mcr(mcr, "SI1").mcr_tie(tie);
        let trace = simulate(&a, Some(&alloc), &scenario).unwrap();
        assert!(verify_trace(&trace, &a, &rows).is_empty());
        seen.push(trace.transitions[0].delay.unwrap());
    }
    assert_eq!(seen.iter().min(), Some(&bound.delta_min));
    assert_eq!(seen.iter().max(), Some(&bound.delta_max));
}

#[test]
fn self_timed_protocol_breaks_latency_preservation() {
    let a = analyze_graph(&g1()).unwrap();
    let bounds = self_timed_transitions(&a).unwrap();
    let st = scenario_two_mcr();
    let st = Scenario { protocol: Protocol::St, ..st };
    let trace = simulate(&a, None, &st).unwrap();
    let violations = verify_trace(&trace, &a, &bounds);
    let latency: Vec<_> = violations
        .iter()
        .filter(|v| matches!(v, Violation::LatencyMismatch { .. }))
        .collect();
    assert_eq!(latency.len(), 2, "{violations:?}");

    let moo = simulate(&a, None, &scenario_two_mcr()).unwrap();
    assert!(verify_trace(&moo, &a, &bounds).is_empty());
}

#[test]
fn protocol_and_regime_combinations() {
    let a = analyze_graph(&g1()).unwrap();
    let base = Scenario::new("SI2", 80).with_mcr(13, "SI1");
    assert!(simulate(&a, None, &base.clone().protocol(Protocol::St)).is_err());
    assert!(simulate(&a, Some(&alloc_3pe()), &base.clone().regime(Regime::SelfTimed)).is_err());
    let sync = simulate(&a, Some(&alloc_3pe()), &base.clone().protocol(Protocol::Sync)).unwrap();
    let moo = simulate(&a, Some(&alloc_3pe()), &base).unwrap();
    // Waiting for the old sink is never faster than the offset protocol.
    assert!(sync.transitions[0].delay >= moo.transitions[0].delay);
    assert!(sync.underflows.is_empty() && sync.overloads.is_empty());
}

#[test]
fn traces_are_reproducible() {
    let a = analyze_graph(&g1()).unwrap();
    let scenario = Scenario::new("SI2", 120).with_mcr(13, "SI1").with_mcr(50, "SI2");
    let one = simulate(&a, Some(&alloc_3pe()), &scenario).unwrap();
    let two = simulate(&a, Some(&alloc_3pe()), &scenario).unwrap();
    assert_eq!(trace_csv(&one), trace_csv(&two));
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&two).unwrap());
}

#[test]
fn events_are_time_ordered_and_requests_logged() {
    let a = analyze_graph(&g1()).unwrap();
    let scenario = Scenario::new("SI2", 120).with_mcr(13, "SI1").with_mcr(20, "SI2").with_mcr(70, "SI2");
    let trace = simulate(&a, None, &scenario).unwrap();
    assert!(trace.events.windows(2).all(|w| w[0].time <= w[1].time));
    let kinds: Vec<_> = trace
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::McrAccepted | EventKind::McrIgnored))
        .map(|e| (e.time, e.kind))
        .collect();
    assert_eq!(
        kinds,
        [(13, EventKind::McrAccepted), (20, EventKind::McrIgnored), (70, EventKind::McrAccepted)]
    );
}
