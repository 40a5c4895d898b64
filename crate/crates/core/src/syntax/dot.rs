use std::fmt::Write;

use super::{Diagram, Source, Target};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl Diagram {
    /// Renders the canonical form as a Graphviz digraph. Isomorphic diagrams
    /// render identically.
    pub fn to_dot(&self) -> String {
        let d = self.canonicalize();
        let mut s = String::new();
        s.push_str("digraph diagram {\n");
        s.push_str("  rankdir=TB;\n");
        s.push_str("  node [fontname=\"monospace\"];\n");
        for (i, w) in d.dom().iter().enumerate() {
            let _ = writeln!(s, "  in{i} [shape=plaintext, label={}];", quote(&format!("in{i}: {}", w.name)));
        }
        for (k, node) in d.nodes().iter().enumerate() {
            let shape = if node.generator.is_structural() { "ellipse" } else { "box" };
            let _ = writeln!(s, "  n{k} [shape={shape}, label={}];", quote(&node.generator.name));
        }
        for (i, src) in d.outputs().iter().enumerate() {
            let _ = writeln!(s, "  out{i} [shape=plaintext, label={}];", quote(&format!("out{i}: {}", d.source_type(*src).name)));
        }
        for (src, tgt) in d.edges() {
            let from = match src {
                Source::Input(i) => format!("in{i}"),
                Source::Node { node, .. } => format!("n{node}"),
            };
            let to = match tgt {
                Target::Output(i) => format!("out{i}"),
                Target::Node { node, .. } => format!("n{node}"),
            };
            let _ = writeln!(s, "  {from} -> {to} [label={}];", quote(&d.source_type(src).name));
        }
        s.push_str("}\n");
        s
    }
}
