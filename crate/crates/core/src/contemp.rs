//! Same-step edge discovery and orientation on top of sparse GP fits.
//!
//! Adjacencies come from two rounds of fits per target: one on a design
//! that also carries the other series at lag 0, and a second on the
//! target's own lagged parents from the first round. Orientation then
//! compares the two lagged graphs along unshielded lagged triples.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{embed_all, embed_contemporaneous, LagColumn, TimeSeriesSystem};
use crate::error::{Error, Result};
use crate::gpsic::{fit_design, gpsic_parent_set, GpsicConfig};
use crate::graph::{CausalGraph, Mark};
use crate::seeding::derive_seed;

#[derive(Debug, Clone)]
pub struct ContempConfig {
    pub gpsic: GpsicConfig,
    /// Repeat the same-step propagation rule until nothing changes; when
    /// false it runs a single pass.
    pub propagate_to_fixpoint: bool,
}

impl Default for ContempConfig {
    fn default() -> Self {
        ContempConfig {
            gpsic: GpsicConfig::default(),
            propagate_to_fixpoint: true,
        }
    }
}

/// `a` at `t − lag` drives `c`, `c` and `b` share an undirected same-step
/// edge, and `a` at `t − lag` does not drive `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaggedTriple {
    pub a: usize,
    pub lag: usize,
    pub c: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Collider,
    Chain,
    NoContempCollider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFiring {
    pub rule: Rule,
    pub src: usize,
    pub dst: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationTrace {
    /// Unshielded lagged triples that survived the ambiguity filter, in
    /// the order the rules saw them.
    pub triples_considered: Vec<LaggedTriple>,
    pub rules_fired: Vec<RuleFiring>,
    /// Unordered pairs marked conflicted.
    pub conflicts: Vec<(usize, usize)>,
}

/// Output of the adjacency phase.
#[derive(Debug, Clone)]
pub struct Adjacencies {
    /// Lagged and same-step parents from the augmented fits.
    pub g_prime: CausalGraph,
    /// Lagged edges after refitting on lagged parents only, plus the
    /// same-step adjacencies of `g_prime`, all undirected.
    pub g_triple: CausalGraph,
    /// Number of GP fits performed.
    pub fits: usize,
}

#[derive(Debug, Clone)]
pub struct ContempResult {
    pub graph: CausalGraph,
    pub trace: OrientationTrace,
    pub adjacencies: Adjacencies,
}

/// Builds the two lagged graphs and the same-step skeleton. Same-step
/// adjacency between two series is declared when either one's fit keeps
/// the other's lag-0 column.
pub fn contemp_adjacencies(system: &TimeSeriesSystem, m: usize, config: &ContempConfig, seed: u64) -> Result<Adjacencies> {
    if m == 0 {
        return Err(Error::invalid("lag order must be at least 1"));
    }
    let n_t = system.n_series();
    let names = system.names().to_vec();
    let first: Vec<Vec<LagColumn>> = (0..n_t)
        .into_par_iter()
        .map(|b| {
            let design = embed_contemporaneous(system, b, m)?;
            let fit = fit_design(&design, &config.gpsic, derive_seed(seed, &[0, b as u64]))?;
            gpsic_parent_set(&design, &fit, config.gpsic.threshold)
        })
        .collect::<Result<_>>()?;

    let mut g_prime = CausalGraph::new(names.clone());
    for (b, parents) in first.iter().enumerate() {
        for p in parents {
            if p.lag == 0 {
                g_prime.add_undirected(p.series, b)?;
            } else {
                g_prime.add_lagged(p.series, b, p.lag)?;
            }
        }
    }

    let second: Vec<Option<Vec<LagColumn>>> = first
        .par_iter()
        .enumerate()
        .map(|(b, parents)| {
            let lagged: BTreeSet<LagColumn> = parents.iter().copied().filter(|p| p.lag > 0).collect();
            if lagged.is_empty() {
                return Ok(None);
            }
            let full = embed_all(system, b, m)?;
            let cols: Vec<usize> = (0..full.column_map.len()).filter(|&j| lagged.contains(&full.column_map[j])).collect();
            let design = full.select_columns(&cols)?;
            let fit = fit_design(&design, &config.gpsic, derive_seed(seed, &[1, b as u64]))?;
            gpsic_parent_set(&design, &fit, config.gpsic.threshold).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut g_triple = CausalGraph::new(names);
    let mut fits = n_t;
    for (b, parents) in second.into_iter().enumerate() {
        if let Some(parents) = parents {
            fits += 1;
            for p in parents {
                g_triple.add_lagged(p.series, b, p.lag)?;
            }
        }
    }
    for ((a, b), _) in g_prime.contemporaneous_edges() {
        g_triple.add_undirected(a, b)?;
    }
    Ok(Adjacencies { g_prime, g_triple, fits })
}

/// Neighbours of `v` over same-step edges.
fn neighbours(graph: &CausalGraph, v: usize) -> Vec<usize> {
    graph
        .contemporaneous_edges()
        .filter_map(|((a, b), _)| match (a == v, b == v) {
            (true, _) => Some(b),
            (_, true) => Some(a),
            _ => None,
        })
        .collect()
}

/// Unshielded lagged triples of `graph`, sorted, with every `(a, lag, b)`
/// reachable through two or more middle nodes removed.
pub fn unshielded_lagged_triples(graph: &CausalGraph) -> Vec<LaggedTriple> {
    let mut triples = Vec::new();
    for e in graph.lagged_edges() {
        for b in neighbours(graph, e.dst) {
            if !graph.has_lagged(e.src, b, e.lag) {
                triples.push(LaggedTriple {
                    a: e.src,
                    lag: e.lag,
                    c: e.dst,
                    b,
                });
            }
        }
    }
    let mut middles: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for t in &triples {
        *middles.entry((t.a, t.lag, t.b)).or_default() += 1;
    }
    triples.retain(|t| middles[&(t.a, t.lag, t.b)] == 1);
    triples.sort();
    triples
}

/// Applies proposed orientations to undirected edges. Agreeing proposals
/// orient the edge; disagreeing ones mark it conflicted.
fn apply(graph: &mut CausalGraph, proposals: &[RuleFiring], trace: &mut OrientationTrace) -> bool {
    let mut by_edge: BTreeMap<(usize, usize), BTreeSet<(usize, usize)>> = BTreeMap::new();
    for f in proposals {
        by_edge
            .entry((f.src.min(f.dst), f.src.max(f.dst)))
            .or_default()
            .insert((f.src, f.dst));
    }
    let mut changed = false;
    for (pair, dirs) in by_edge {
        if graph.mark(pair.0, pair.1) != Some(Mark::Undirected) {
            continue;
        }
        let mark = if dirs.len() == 1 {
            let (src, dst) = *dirs.iter().next().expect("one direction");
            Mark::Directed { src, dst }
        } else {
            trace.conflicts.push(pair);
            Mark::Conflicted
        };
        graph.set_mark(pair.0, pair.1, mark).expect("pair already present");
        changed = true;
    }
    changed
}

/// Orients the same-step edges of `g_triple`. Lagged edges and the
/// skeleton are left unchanged.
pub fn orient(g_prime: &CausalGraph, g_triple: &CausalGraph, propagate_to_fixpoint: bool) -> Result<(CausalGraph, OrientationTrace)> {
    if g_prime.n_nodes() != g_triple.n_nodes() {
        return Err(Error::invalid("graphs have different node counts"));
    }
    let mut graph = g_triple.clone();
    for ((a, b), mark) in g_triple.contemporaneous_edges() {
        if mark != Mark::Undirected {
            graph.set_mark(a, b, Mark::Undirected)?;
        }
    }
    let mut trace = OrientationTrace {
        triples_considered: unshielded_lagged_triples(&graph),
        ..OrientationTrace::default()
    };

    let lagged_rules: Vec<RuleFiring> = trace
        .triples_considered
        .iter()
        .map(|t| {
            if g_prime.has_lagged(t.a, t.b, t.lag) {
                RuleFiring {
                    rule: Rule::Collider,
                    src: t.b,
                    dst: t.c,
                }
            } else {
                RuleFiring {
                    rule: Rule::Chain,
                    src: t.c,
                    dst: t.b,
                }
            }
        })
        .collect();
    trace.rules_fired.extend(&lagged_rules);
    apply(&mut graph, &lagged_rules, &mut trace);

    loop {
        let mut proposals = Vec::new();
        for ((u, v), mark) in graph.contemporaneous_edges() {
            let Mark::Directed { src: x, dst: c } = mark else { continue };
            debug_assert!((u, v) == (x.min(c), x.max(c)));
            for b in neighbours(&graph, c) {
                if b != x && graph.mark(c, b) == Some(Mark::Undirected) {
                    proposals.push(RuleFiring {
                        rule: Rule::NoContempCollider,
                        src: c,
                        dst: b,
                    });
                }
            }
        }
        if proposals.is_empty() {
            break;
        }
        trace.rules_fired.extend(&proposals);
        let changed = apply(&mut graph, &proposals, &mut trace);
        if !changed || !propagate_to_fixpoint {
            break;
        }
    }
    Ok((graph, trace))
}

/// Adjacency phase followed by orientation. `system` should be standardized.
pub fn contemp_graph(system: &TimeSeriesSystem, m: usize, config: &ContempConfig, seed: u64) -> Result<ContempResult> {
    let adjacencies = contemp_adjacencies(system, m, config, seed)?;
    let (graph, trace) = orient(&adjacencies.g_prime, &adjacencies.g_triple, config.propagate_to_fixpoint)?;
    Ok(ContempResult {
        graph,
        trace,
        adjacencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, lagged: &[(usize, usize, usize)], contemporaneous: &[(usize, usize)]) -> CausalGraph {
        let mut g = CausalGraph::with_nodes(n);
        for &(s, d, l) in lagged {
            g.add_lagged(s, d, l).unwrap();
        }
        for &(a, b) in contemporaneous {
            g.add_undirected(a, b).unwrap();
        }
        g
    }

    #[test]
    fn collider_rule() {
        let g_prime = graph(3, &[(0, 2, 1), (0, 1, 1)], &[(1, 2)]);
        let g_triple = graph(3, &[(0, 2, 1)], &[(1, 2)]);
        let (out, trace) = orient(&g_prime, &g_triple, true).unwrap();
        assert_eq!(out.mark(1, 2), Some(Mark::Directed { src: 1, dst: 2 }));
        assert_eq!(trace.triples_considered, vec![LaggedTriple { a: 0, lag: 1, c: 2, b: 1 }]);
        assert_eq!(trace.rules_fired[0].rule, Rule::Collider);
    }

    #[test]
    fn chain_rule() {
        let g = graph(3, &[(0, 2, 1)], &[(1, 2)]);
        let (out, trace) = orient(&g, &g, true).unwrap();
        assert_eq!(out.mark(1, 2), Some(Mark::Directed { src: 2, dst: 1 }));
        assert_eq!(trace.rules_fired[0].rule, Rule::Chain);
    }

    #[test]
    fn same_step_propagation() {
        // Chain orients 1 → 2; propagation then orients 2 → 3 and 3 → 4.
        let g = graph(5, &[(0, 1, 1)], &[(1, 2), (2, 3), (3, 4)]);
        let (out, trace) = orient(&g, &g, true).unwrap();
        assert_eq!(out.mark(1, 2), Some(Mark::Directed { src: 1, dst: 2 }));
        assert_eq!(out.mark(2, 3), Some(Mark::Directed { src: 2, dst: 3 }));
        assert_eq!(out.mark(3, 4), Some(Mark::Directed { src: 3, dst: 4 }));
        assert!(trace.rules_fired.iter().any(|f| f.rule == Rule::NoContempCollider));

        let (single, _) = orient(&g, &g, false).unwrap();
        assert_eq!(single.mark(2, 3), Some(Mark::Directed { src: 2, dst: 3 }));
        assert_eq!(single.mark(3, 4), Some(Mark::Undirected));
    }

    #[test]
    fn ambiguous_source_is_skipped() {
        let g_prime = graph(4, &[(0, 1, 1), (0, 2, 1), (0, 3, 1)], &[(1, 3), (2, 3)]);
        let g_triple = graph(4, &[(0, 1, 1), (0, 2, 1)], &[(1, 3), (2, 3)]);
        let (out, trace) = orient(&g_prime, &g_triple, true).unwrap();
        assert!(trace.triples_considered.iter().all(|t| t.b != 3));
        assert_eq!(out.mark(1, 3), Some(Mark::Undirected));
        assert_eq!(out.mark(2, 3), Some(Mark::Undirected));
    }

    #[test]
    fn contradictions_are_conflicted() {
        // 0(t−1) → 1 says 1 → 2 by the chain rule; 3(t−1) → 2 says 2 → 1.
        let g = graph(4, &[(0, 1, 1), (3, 2, 1)], &[(1, 2)]);
        let (out, trace) = orient(&g, &g, true).unwrap();
        assert_eq!(out.mark(1, 2), Some(Mark::Conflicted));
        assert_eq!(trace.conflicts, vec![(1, 2)]);
        let firings = trace.rules_fired.iter().filter(|f| (f.src.min(f.dst), f.src.max(f.dst)) == (1, 2)).count();
        assert!(firings >= 2);
    }

    #[test]
    fn skeleton_and_lagged_edges_are_preserved() {
        let g_prime = graph(4, &[(0, 1, 2), (2, 3, 1), (1, 3, 1)], &[(0, 1), (1, 2), (2, 3)]);
        let g_triple = graph(4, &[(0, 1, 2), (2, 3, 1)], &[(0, 1), (1, 2), (2, 3)]);
        let (out, _) = orient(&g_prime, &g_triple, true).unwrap();
        assert_eq!(out.lagged_edges().collect::<Vec<_>>(), g_triple.lagged_edges().collect::<Vec<_>>());
        let skel = |g: &CausalGraph| g.contemporaneous_edges().map(|(k, _)| k).collect::<Vec<_>>();
        assert_eq!(skel(&out), skel(&g_triple));
    }

    #[test]
    fn self_lag_forms_a_triple() {
        let g = graph(2, &[(0, 0, 1)], &[(0, 1)]);
        let triples = unshielded_lagged_triples(&g);
        assert_eq!(triples, vec![LaggedTriple { a: 0, lag: 1, c: 0, b: 1 }]);
    }
}
