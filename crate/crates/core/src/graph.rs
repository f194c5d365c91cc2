//! Lag-annotated causal graphs used both for estimates and for ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `src` at time `t − lag` drives `dst` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LaggedEdge {
    pub src: usize,
    pub dst: usize,
    pub lag: usize,
}

/// Orientation state of a same-step edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mark {
    Undirected,
    Directed { src: usize, dst: usize },
    Conflicted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    names: Vec<String>,
    lagged: BTreeSet<LaggedEdge>,
    contemporaneous: BTreeMap<(usize, usize), Mark>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl CausalGraph {
    pub fn new(names: Vec<String>) -> Self {
        CausalGraph {
            names,
            lagged: BTreeSet::new(),
            contemporaneous: BTreeMap::new(),
        }
    }

    pub fn with_nodes(n_t: usize) -> Self {
        Self::new((1..=n_t).map(|i| format!("x{i}")).collect())
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.n_nodes() {
            return Err(Error::invalid(format!("node {v} out of range")));
        }
        Ok(())
    }

    pub fn add_lagged(&mut self, src: usize, dst: usize, lag: usize) -> Result<()> {
        self.check_node(src)?;
        self.check_node(dst)?;
        if lag == 0 {
            return Err(Error::invalid("lagged edges need lag ≥ 1"));
        }
        self.lagged.insert(LaggedEdge { src, dst, lag });
        Ok(())
    }

    pub fn has_lagged(&self, src: usize, dst: usize, lag: usize) -> bool {
        self.lagged.contains(&LaggedEdge { src, dst, lag })
    }

    pub fn lagged_edges(&self) -> impl Iterator<Item = LaggedEdge> + '_ {
        self.lagged.iter().copied()
    }

    pub fn clear_lagged(&mut self) {
        self.lagged.clear();
    }

    /// Adds an undirected same-step adjacency, leaving an existing mark alone.
    pub fn add_undirected(&mut self, a: usize, b: usize) -> Result<()> {
        self.check_pair(a, b)?;
        self.contemporaneous.entry(key(a, b)).or_insert(Mark::Undirected);
        Ok(())
    }

    /// Adds or overwrites a directed same-step edge `src → dst`.
    pub fn add_directed(&mut self, src: usize, dst: usize) -> Result<()> {
        self.check_pair(src, dst)?;
        self.contemporaneous.insert(key(src, dst), Mark::Directed { src, dst });
        Ok(())
    }

    pub fn set_mark(&mut self, a: usize, b: usize, mark: Mark) -> Result<()> {
        self.check_pair(a, b)?;
        if let Mark::Directed { src, dst } = mark {
            if key(src, dst) != key(a, b) {
                return Err(Error::invalid("directed mark does not match the pair"));
            }
        }
        self.contemporaneous.insert(key(a, b), mark);
        Ok(())
    }

    fn check_pair(&self, a: usize, b: usize) -> Result<()> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Err(Error::invalid("same-step self edges are not allowed"));
        }
        Ok(())
    }

    pub fn mark(&self, a: usize, b: usize) -> Option<Mark> {
        self.contemporaneous.get(&key(a, b)).copied()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.contemporaneous.contains_key(&key(a, b))
    }

    /// Same-step edges keyed by `(min, max)` node pair.
    pub fn contemporaneous_edges(&self) -> impl Iterator<Item = ((usize, usize), Mark)> + '_ {
        self.contemporaneous.iter().map(|(&k, &m)| (k, m))
    }

    pub fn clear_contemporaneous(&mut self) {
        self.contemporaneous.clear();
    }

    /// Summary adjacency: does any lag of `src` drive `dst`?
    pub fn summary_edge(&self, src: usize, dst: usize) -> bool {
        self.lagged.range(
            LaggedEdge { src, dst, lag: 0 }..=LaggedEdge {
                src,
                dst,
                lag: usize::MAX,
            },
        )
        .next()
        .is_some()
    }

    pub fn max_lag(&self) -> usize {
        self.lagged.iter().map(|e| e.lag).max().unwrap_or(0)
    }

    /// Copy of the graph with nodes renamed; node count must match.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_nodes() {
            return Err(Error::invalid("name count does not match node count"));
        }
        self.names = names;
        Ok(self)
    }

    pub fn to_document(&self) -> GraphDocument {
        let name = |i: usize| self.names[i].clone();
        GraphDocument {
            nodes: self.names.clone(),
            lagged: self
                .lagged
                .iter()
                .map(|e| LaggedRecord {
                    src: name(e.src),
                    dst: name(e.dst),
                    lag: e.lag,
                })
                .collect(),
            contemporaneous: self
                .contemporaneous
                .iter()
                .map(|(&(a, b), &mark)| match mark {
                    Mark::Directed { src, dst } => ContemporaneousRecord {
                        a: name(src),
                        b: name(dst),
                        mark: MarkLabel::Directed,
                    },
                    Mark::Undirected => ContemporaneousRecord {
                        a: name(a),
                        b: name(b),
                        mark: MarkLabel::Undirected,
                    },
                    Mark::Conflicted => ContemporaneousRecord {
                        a: name(a),
                        b: name(b),
                        mark: MarkLabel::Conflicted,
                    },
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        let mut g = CausalGraph::new(doc.nodes.clone());
        let mut seen = BTreeSet::new();
        if let Some(dup) = doc.nodes.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate node {dup}")));
        }
        let index = |n: &str| {
            doc.nodes
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::invalid(format!("unknown node {n}")))
        };
        for e in &doc.lagged {
            g.add_lagged(index(&e.src)?, index(&e.dst)?, e.lag)?;
        }
        for e in &doc.contemporaneous {
            let (a, b) = (index(&e.a)?, index(&e.b)?);
            let mark = match e.mark {
                MarkLabel::Directed => Mark::Directed { src: a, dst: b },
                MarkLabel::Undirected => Mark::Undirected,
                MarkLabel::Conflicted => Mark::Conflicted,
            };
            if g.adjacent(a, b) {
                return Err(Error::invalid(format!("pair {}-{} listed twice", e.a, e.b)));
            }
            g.set_mark(a, b, mark)?;
        }
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("graph json: {e}")))?;
        Self::from_document(&doc)
    }
}

/// Serialized form: nodes by name, edges referencing names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<String>,
    pub lagged: Vec<LaggedRecord>,
    pub contemporaneous: Vec<ContemporaneousRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaggedRecord {
    pub src: String,
    pub dst: String,
    pub lag: usize,
}

/// For `directed` records `a` is the source and `b` the destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContemporaneousRecord {
    pub a: String,
    pub b: String,
    pub mark: MarkLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkLabel {
    Undirected,
    Directed,
    Conflicted,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut g = CausalGraph::new(vec!["a".into(), "b".into(), "c".into()]);
        g.add_lagged(0, 1, 2).unwrap();
        g.add_lagged(2, 2, 1).unwrap();
        g.add_directed(2, 0).unwrap();
        g.set_mark(1, 2, Mark::Conflicted).unwrap();
        let text = g.to_json();
        let back = CausalGraph::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), text);
        assert_eq!(back.mark(0, 2), Some(Mark::Directed { src: 2, dst: 0 }));
    }

    #[test]
    fn invalid_edges() {
        let mut g = CausalGraph::with_nodes(2);
        assert!(g.add_lagged(0, 1, 0).is_err());
        assert!(g.add_undirected(1, 1).is_err());
        assert!(g.add_lagged(0, 3, 1).is_err());
        assert!(CausalGraph::from_json(r#"{"nodes":["a"],"lagged":[{"src":"a","dst":"z","lag":1}],"contemporaneous":[]}"#).is_err());
    }

    #[test]
    fn summary_edges_any_lag() {
        let mut g = CausalGraph::with_nodes(3);
        g.add_lagged(0, 2, 3).unwrap();
        assert!(g.summary_edge(0, 2));
        assert!(!g.summary_edge(2, 0));
        assert_eq!(g.max_lag(), 3);
    }
}
