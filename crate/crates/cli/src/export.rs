//! Graph serializers: JSON documents, Graphviz DOT and a flat CSV edge list.

use std::fmt::Write as _;

use kgranger::graph::{GraphDocument, MarkLabel};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Dot,
    Csv,
}

pub fn render(doc: &GraphDocument, format: Format) -> CliResult<String> {
    match format {
        Format::Json => to_json(doc),
        Format::Dot => Ok(to_dot(doc)),
        Format::Csv => to_csv(doc),
    }
}

/// Pretty-printed with a trailing newline; parsing and re-rendering gives
/// the same bytes.
pub fn to_json(doc: &GraphDocument) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(doc)? + "\n")
}

pub fn from_json(text: &str) -> CliResult<GraphDocument> {
    let doc: GraphDocument = serde_json::from_str(text)?;
    // Validates node references and duplicate pairs.
    kgranger::graph::CausalGraph::from_document(&doc)?;
    Ok(doc)
}

fn dot_id(name: &str) -> String {
    let mut chars = name.chars();
    let bare = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !["graph", "digraph", "node", "edge", "strict", "subgraph"].contains(&name.to_ascii_lowercase().as_str());
    if bare {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

/// Lagged edges are solid and labelled with their lag. Same-step edges are
/// dashed: one arrowhead when oriented, none when undirected and two when
/// the orientation rules disagreed.
pub fn to_dot(doc: &GraphDocument) -> String {
    let mut out = String::from("digraph causal {\n");
    for node in &doc.nodes {
        let _ = writeln!(out, "  {};", dot_id(node));
    }
    for e in &doc.lagged {
        let _ = writeln!(out, "  {} -> {} [label=\"τ={}\"];", dot_id(&e.src), dot_id(&e.dst), e.lag);
    }
    for e in &doc.contemporaneous {
        let style = match e.mark {
            MarkLabel::Directed => "style=dashed",
            MarkLabel::Undirected => "style=dashed, dir=none",
            MarkLabel::Conflicted => "style=dashed, dir=both",
        };
        let _ = writeln!(out, "  {} -> {} [{style}];", dot_id(&e.a), dot_id(&e.b));
    }
    out.push_str("}\n");
    out
}

/// One row per edge: `src,dst,lag,kind`. Same-step edges have lag 0 and
/// kind `directed`, `undirected` or `conflicted`.
pub fn to_csv(doc: &GraphDocument) -> CliResult<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["src", "dst", "lag", "kind"])?;
    for e in &doc.lagged {
        writer.write_record([e.src.as_str(), e.dst.as_str(), &e.lag.to_string(), "lagged"])?;
    }
    for e in &doc.contemporaneous {
        let kind = match e.mark {
            MarkLabel::Directed => "directed",
            MarkLabel::Undirected => "undirected",
            MarkLabel::Conflicted => "conflicted",
        };
        writer.write_record([e.a.as_str(), e.b.as_str(), "0", kind])?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgranger::graph::{CausalGraph, Mark};

    fn sample() -> GraphDocument {
        let mut g = CausalGraph::new(vec!["a".into(), "b".into(), "c".into(), "my node".into()]);
        g.add_lagged(0, 1, 2).unwrap();
        g.add_directed(1, 2).unwrap();
        g.add_undirected(0, 2).unwrap();
        g.set_mark(2, 3, Mark::Conflicted).unwrap();
        g.to_document()
    }

    #[test]
    fn dot_marks_each_edge_kind() {
        let dot = to_dot(&sample());
        assert!(dot.contains("a -> b [label=\"τ=2\"]"), "{dot}");
        assert!(dot.contains("b -> c [style=dashed];"));
        assert!(dot.contains("a -> c [style=dashed, dir=none];"));
        assert!(dot.contains("c -> \"my node\" [style=dashed, dir=both];"));
    }

    #[test]
    fn keywords_and_digits_are_quoted() {
        assert_eq!(dot_id("node"), "\"node\"");
        assert_eq!(dot_id("1x"), "\"1x\"");
        assert_eq!(dot_id("x_1"), "x_1");
        assert_eq!(dot_id("a\"b"), "\"a\\\"b\"");
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let text = to_json(&sample()).unwrap();
        assert_eq!(to_json(&from_json(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn csv_lists_every_edge() {
        let csv = to_csv(&sample()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "src,dst,lag,kind");
        assert!(lines.contains(&"a,b,2,lagged"));
        assert!(lines.contains(&"b,c,0,directed"));
        assert!(lines.contains(&"c,my node,0,conflicted"));
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn dangling_references_are_rejected() {
        let text = r#"{"nodes":["a"],"lagged":[{"src":"a","dst":"z","lag":1}],"contemporaneous":[]}"#;
        assert!(from_json(text).is_err());
    }
}
