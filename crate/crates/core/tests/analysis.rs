mod common;

use indexmap::IndexMap;
use madf::csdf::{earliest_start_times, repetition_vector, sps_periods, tokens_consumed, tokens_produced};
use madf::fixtures::g1;
use madf::generate::{corpus, GeneratorConfig};
use madf::graph::{Expr, ParamSeq, Valuation};
use madf::{analyze_graph, instantiate_mode, MadfGraph, Rational};
use num_integer::Integer;
use proptest::prelude::*;

fn ratio(n: u64, d: u64) -> Rational {
    Rational::new(n, d)
}

#[test]
fn g1_repetition_vectors() {
    let g = g1();
    let q = |m: &str| repetition_vector(&instantiate_mode(&g, m).unwrap()).unwrap().values();
    assert_eq!(q("SI1"), [4, 2, 2, 0, 2]);
    assert_eq!(q("SI2"), [2, 1, 1, 1, 2]);
}

#[test]
fn g1_schedules() {
    let a = analyze_graph(&g1()).unwrap();
    let s1 = a.schedule("SI1").unwrap();
    let s2 = a.schedule("SI2").unwrap();
    let ids = ["A1", "A2", "A3", "A4", "A5"];
    let col = |m: &IndexMap<String, u64>| ids.map(|a| m.get(a).copied());
    assert_eq!(col(&s1.periods), [Some(2), Some(4), Some(4), None, Some(4)]);
    assert_eq!(col(&s2.periods), [Some(4), Some(8), Some(8), Some(8), Some(4)]);
    assert_eq!(col(&s1.start), [Some(0), Some(2), Some(6), None, Some(14)]);
    assert_eq!(col(&s2.start), [Some(0), Some(4), Some(12), Some(8), Some(20)]);
    let u = |s: &madf::SteadyStateSchedule| ids.map(|a| s.utilization.get(a).copied());
    assert_eq!(u(s1), [Some(ratio(1, 2)), Some(ratio(1, 1)), Some(ratio(1, 4)), None, Some(ratio(1, 4))]);
    assert_eq!(u(s2), [Some(ratio(1, 4)), Some(ratio(1, 1)), Some(ratio(1, 8)), Some(ratio(3, 8)), Some(ratio(1, 4))]);
    assert_eq!((s1.hyper_period, s2.hyper_period), (8, 8));
    assert_eq!((s1.latency, s2.latency), (14, 20));
}

#[test]
fn g1_start_times_match_scan() {
    let g = g1();
    for m in ["SI1", "SI2"] {
        let inst = instantiate_mode(&g, m).unwrap();
        let q = repetition_vector(&inst).unwrap();
        let t = sps_periods(&inst, &q).unwrap();
        let s = earliest_start_times(&inst, &q, &t).unwrap();
        assert_eq!(s, common::scan_start_times(&inst, &q.q, &t), "mode {m}");
    }
}

#[test]
fn corpus_start_times_match_scan() {
    for case in corpus(1, 120, &GeneratorConfig::default()) {
        for (m, ma) in &case.analysis.modes {
            let s = &ma.schedule;
            let oracle = common::scan_start_times(&ma.instance, &s.repetition.q, &s.periods);
            assert_eq!(s.start, oracle, "seed {} mode {m}", case.seed);
        }
    }
}

#[test]
fn corpus_repetition_vectors_are_balanced_and_minimal() {
    for case in corpus(500, 120, &GeneratorConfig::default()) {
        for (m, ma) in &case.analysis.modes {
            let q = &ma.schedule.repetition.q;
            for e in ma.instance.active_edges() {
                let produced = q[&e.producer] / e.production.len() as u64 * e.production.iter().sum::<u64>();
                let consumed = q[&e.consumer] / e.consumption.len() as u64 * e.consumption.iter().sum::<u64>();
                assert_eq!(produced, consumed, "seed {} mode {m} edge {}", case.seed, e.id);
            }
            // A common factor would make a smaller solution.
            let g = q
                .iter()
                .filter(|(a, _)| ma.instance.is_active(a))
                .map(|(a, v)| v / ma.instance.actor(a).unwrap().phases as u64)
                .fold(0, |g: u64, v| g.gcd(&v));
            assert_eq!(g, 1, "seed {} mode {m}", case.seed);
            for a in &ma.instance.actors {
                assert_eq!(q[&a.id] == 0, !a.active);
            }
        }
    }
}

#[test]
fn hyper_period_is_shared_and_periods_fit_wcet() {
    for case in corpus(900, 80, &GeneratorConfig::default()) {
        for s in case.analysis.modes.values().map(|m| &m.schedule) {
            for (a, t) in &s.periods {
                assert_eq!(s.repetition.get(a) * t, s.hyper_period);
                assert!(s.wcet[a] <= *t);
                assert_eq!(s.utilization[a], Rational::new(s.wcet[a], *t));
            }
            assert_eq!(s.latency, s.start[&s.sink] - s.start[&s.source]);
        }
    }
}

#[test]
fn analysis_is_deterministic() {
    for case in corpus(40, 20, &GeneratorConfig::default()) {
        let again = analyze_graph(&case.graph).unwrap();
        let a: Vec<_> = case.analysis.modes.values().map(|m| &m.schedule).collect();
        let b: Vec<_> = again.modes.values().map(|m| &m.schedule).collect();
        assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn produced_tokens_match_enumeration(
        rates in prop::collection::vec(0u64..5, 1..4),
        start in 0u64..20,
        period in 1u64..6,
        from in 0u64..60,
        len in 0u64..60,
    ) {
        let to = from + len;
        prop_assert_eq!(
            tokens_produced(&rates, start, period, from, to),
            common::enumerate_produced(&rates, start, period, from, to)
        );
        prop_assert_eq!(
            tokens_consumed(&rates, start, period, from, to),
            common::enumerate_consumed(&rates, start, period, from, to)
        );
    }

    #[test]
    fn windows_add_up(
        rates in prop::collection::vec(0u64..5, 1..4),
        start in 0u64..20,
        period in 1u64..6,
        a in 0u64..40,
        b in 0u64..40,
        c in 0u64..40,
    ) {
        let mut w = [a, b, c];
        w.sort();
        let [a, b, c] = w;
        // Reads over [a, c] split at b: [a, b] plus (b, c].
        let whole = tokens_consumed(&rates, start, period, a, c);
        let left = tokens_consumed(&rates, start, period, a, b);
        let right = if b < c { tokens_consumed(&rates, start, period, b + 1, c) } else { 0 };
        prop_assert_eq!(whole, left + right);
    }

    #[test]
    fn flatten_expands_segments(
        segs in prop::collection::vec((0u64..4, 0u64..6), 1..4),
    ) {
        let mut valuation = Valuation::new();
        let seq = ParamSeq::new(segs.iter().enumerate().map(|(i, &(c, v))| {
            let p = format!("p{i}");
            valuation.insert(p.clone(), v as i64);
            (Expr::Lit(c), Expr::Param(p))
        }));
        let expected: Vec<u64> = segs.iter().flat_map(|&(c, v)| std::iter::repeat_n(v, c as usize)).collect();
        prop_assert_eq!(seq.flatten(&valuation).unwrap(), expected);
        let text = serde_json::to_string(&seq).unwrap();
        prop_assert_eq!(serde_json::from_str::<ParamSeq>(&text).unwrap(), seq);
    }
}

#[test]
fn generated_graphs_round_trip() {
    for case in corpus(3000, 50, &GeneratorConfig::default()) {
        let text = case.graph.to_json();
        let back = MadfGraph::from_json(&text).unwrap();
        assert_eq!(back, case.graph);
        assert_eq!(back.to_json(), text);
    }
}
