//! Seeded random MADF graphs for property testing.
//!
//! Graphs are acyclic, with one source (`A1`) and one sink (`An`). Rates are
//! drawn per mode so every mode is consistent by construction; candidates
//! that fail validation or analysis are discarded and redrawn.

use indexmap::IndexMap;
use num_integer::Integer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csdf::{analyze_graph, GraphAnalysis};
use crate::graph::{validate_graph, DataflowActor, Edge, Expr, MadfGraph, ParamSeq, Port, PortRef, Valuation};
use crate::transition::{analyze_all, Allocation};

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub min_actors: usize,
    pub max_actors: usize,
    pub max_modes: usize,
    pub max_phases: usize,
    pub max_wcet: u64,
    /// Chance that an edge carries initial tokens.
    pub initial_token_chance: f64,
    /// Chance that an intermediate actor is switched off in a mode.
    pub inactive_chance: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_actors: 2,
            max_actors: 6,
            max_modes: 3,
            max_phases: 2,
            max_wcet: 6,
            initial_token_chance: 0.15,
            inactive_chance: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub seed: u64,
    pub graph: MadfGraph,
    pub allocation: Allocation,
    pub analysis: GraphAnalysis,
    /// Candidates drawn before one was accepted.
    pub attempts: u32,
}

/// Splits `total` into `parts` non-negative integers.
fn compose(rng: &mut impl Rng, total: u64, parts: usize) -> Vec<u64> {
    let mut out = vec![0; parts];
    for _ in 0..total {
        out[rng.gen_range(0..parts)] += 1;
    }
    out
}

struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
}

fn topology(rng: &mut impl Rng, n: usize) -> Topology {
    let mut edges = Vec::new();
    for c in 1..n {
        let p = rng.gen_range(0..c);
        edges.push((p, c));
        for extra in 0..c {
            if extra != p && rng.gen_bool(0.25) {
                edges.push((extra, c));
            }
        }
    }
    for p in 1..n.saturating_sub(1) {
        if !edges.iter().any(|&(from, _)| from == p) {
            let c = rng.gen_range(p + 1..n);
            edges.push((p, c));
        }
    }
    edges.sort();
    edges.dedup();
    Topology { n, edges }
}

fn candidate(rng: &mut impl Rng, cfg: &GeneratorConfig) -> MadfGraph {
    let n = rng.gen_range(cfg.min_actors..=cfg.max_actors);
    let modes: Vec<String> = (1..=rng.gen_range(1..=cfg.max_modes)).map(|m| format!("M{m}")).collect();
    let topo = topology(rng, n);
    let phases: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=cfg.max_phases)).collect();
    // Uniform actors repeat one rate per port; their phase count is a parameter.
    let uniform: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();

    let mut active = vec![vec![true; n]; modes.len()];
    let mut cycles = vec![vec![1u64; n]; modes.len()];
    for (flags, counts) in active.iter_mut().zip(cycles.iter_mut()) {
        for f in flags.iter_mut().take(n.saturating_sub(1)).skip(1) {
            *f = !rng.gen_bool(cfg.inactive_chance);
        }
        for c in counts.iter_mut() {
            *c = rng.gen_range(1..=3);
        }
    }

    // Per-mode, per-edge rate sequences on both ends.
    let mut prd = vec![vec![Vec::new(); topo.edges.len()]; modes.len()];
    let mut cns = vec![vec![Vec::new(); topo.edges.len()]; modes.len()];
    for m in 0..modes.len() {
        for (e, &(p, c)) in topo.edges.iter().enumerate() {
            if !(active[m][p] && active[m][c]) {
                prd[m][e] = vec![0; phases[p]];
                cns[m][e] = vec![0; phases[c]];
                continue;
            }
            let w = cycles[m][p].lcm(&cycles[m][c]) * rng.gen_range(1..=2);
            let (tp, tc) = (w / cycles[m][p], w / cycles[m][c]);
            prd[m][e] = if uniform[p] && tp % phases[p] as u64 == 0 {
                vec![tp / phases[p] as u64; phases[p]]
            } else {
                compose(rng, tp, phases[p])
            };
            cns[m][e] = if uniform[c] && tc % phases[c] as u64 == 0 {
                vec![tc / phases[c] as u64; phases[c]]
            } else {
                compose(rng, tc, phases[c])
            };
        }
    }

    let mut actors: Vec<DataflowActor> = (0..n).map(|i| DataflowActor::new(&format!("A{}", i + 1))).collect();
    let mut table: IndexMap<String, IndexMap<String, Valuation>> =
        modes.iter().map(|m| (m.clone(), IndexMap::new())).collect();

    // Emits a port for actor `i` whose sequence in mode m is `seqs[m]`.
    let port = |i: usize,
                name: String,
                seqs: Vec<&Vec<u64>>,
                actor: &mut DataflowActor,
                table: &mut IndexMap<String, IndexMap<String, Valuation>>| {
        let is_uniform = seqs
            .iter()
            .all(|s| s.iter().all(|&v| v == s[0]));
        let constant = seqs.windows(2).all(|w| w[0] == w[1]);
        let rates = if constant && !seqs[0].iter().all(|&v| v == 0) {
            ParamSeq::literal(seqs[0])
        } else if uniform[i] && is_uniform {
            let count = format!("c{}", i + 1);
            let value = format!("{}_{}", name.to_lowercase(), i + 1);
            for (mi, (m, s)) in modes.iter().zip(&seqs).enumerate() {
                let (c, v) = if active[mi][i] { (s.len() as i64, s[0] as i64) } else { (0, 0) };
                let vals = table[m].entry(actor.id.clone()).or_default();
                vals.insert(count.clone(), c);
                vals.insert(value.clone(), v);
            }
            for p in [&count, &value] {
                if !actor.params.contains(p) {
                    actor.params.push(p.clone());
                }
            }
            ParamSeq::new([(Expr::Param(count), Expr::Param(value))])
        } else {
            let names: Vec<String> = (0..phases[i])
                .map(|k| format!("{}_{}_{k}", name.to_lowercase(), i + 1))
                .collect();
            for (m, s) in modes.iter().zip(&seqs) {
                let vals = table[m].entry(actor.id.clone()).or_default();
                for (p, &v) in names.iter().zip(s.iter()) {
                    vals.insert(p.clone(), v as i64);
                }
            }
            actor.params.extend(names.iter().cloned());
            ParamSeq::new(names.into_iter().map(|p| (Expr::Lit(1), Expr::Param(p))))
        };
        Port::new(&name, rates)
    };

    let mut edges = Vec::new();
    for (e, &(p, c)) in topo.edges.iter().enumerate() {
        let out_name = format!("OP{}", actors[p].outputs.len() + 1);
        let in_name = format!("IP{}", actors[c].inputs.len() + 1);
        let o = port(p, out_name.clone(), prd.iter().map(|m| &m[e]).collect(), &mut actors[p], &mut table);
        actors[p].outputs.push(o);
        let i = port(c, in_name.clone(), cns.iter().map(|m| &m[e]).collect(), &mut actors[c], &mut table);
        actors[c].inputs.push(i);
        let mut edge = Edge::new(
            &format!("E{}", e + 1),
            PortRef::new(&actors[p].id, &out_name),
            PortRef::new(&actors[c].id, &in_name),
        );
        if rng.gen_bool(cfg.initial_token_chance) {
            edge.tokens = rng.gen_range(1..=3);
        }
        edges.push(edge);
    }
    for a in actors.iter_mut() {
        for m in &modes {
            a.wcet.insert(m.clone(), rng.gen_range(1..=cfg.max_wcet));
        }
    }
    // Uniform counts were registered even for actors that ended up with
    // only literal ports; drop parameters no port refers to.
    for a in actors.iter_mut() {
        let used: Vec<String> = a
            .inputs
            .iter()
            .chain(&a.outputs)
            .flat_map(|p| p.rates.params().map(str::to_string).collect::<Vec<_>>())
            .collect();
        a.params.retain(|p| used.contains(p));
        for m in &modes {
            if let Some(v) = table[m].get_mut(&a.id) {
                v.retain(|k, _| used.contains(k));
            }
        }
    }
    for m in table.values_mut() {
        m.retain(|_, v| !v.is_empty());
    }

    MadfGraph {
        source: actors[0].id.clone(),
        sink: actors[topo.n - 1].id.clone(),
        actors,
        edges,
        control: crate::graph::ControlActor { modes: table },
    }
}

fn allocation(rng: &mut impl Rng, graph: &MadfGraph, analysis: &GraphAnalysis) -> Allocation {
    let ids: Vec<&str> = graph.actors.iter().map(|a| a.id.as_str()).collect();
    let schedules: Vec<_> = analysis.modes.values().map(|m| &m.schedule).collect();
    for _ in 0..8 {
        let pes = rng.gen_range(1..=ids.len());
        let mut partitions: IndexMap<String, Vec<String>> =
            (1..=pes).map(|p| (format!("PE{p}"), Vec::new())).collect();
        let mut order = ids.clone();
        order.shuffle(rng);
        for a in order {
            let pe = rng.gen_range(0..pes);
            partitions[pe].push(a.to_string());
        }
        let alloc = Allocation {
            partitions,
            ..Allocation::one_per_actor(std::iter::empty())
        };
        if alloc.validate(&schedules).is_ok() {
            return alloc;
        }
    }
    Allocation::one_per_actor(ids)
}

/// Draws candidates from `seed` until one validates and analyzes cleanly.
pub fn generate(seed: u64, cfg: &GeneratorConfig) -> GeneratedCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempts in 1.. {
        let graph = candidate(&mut rng, cfg);
        if !validate_graph(&graph).is_empty() {
            continue;
        }
        let Ok(analysis) = analyze_graph(&graph) else {
            continue;
        };
        if analyze_all(&analysis, None).is_err() {
            continue;
        }
        let allocation = allocation(&mut rng, &graph, &analysis);
        return GeneratedCase {
            seed,
            graph,
            allocation,
            analysis,
            attempts,
        };
    }
    unreachable!()
}

/// `count` cases from consecutive seeds starting at `seed`.
pub fn corpus(seed: u64, count: usize, cfg: &GeneratorConfig) -> Vec<GeneratedCase> {
    (0..count as u64).map(|i| generate(seed + i, cfg)).collect()
}
