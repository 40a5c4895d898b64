//! Line-oriented `.cmod` files.
//!
//! ```text
//! cmod 1
//! config presence-flags=false
//! wire features vector 4
//! gen classifier features -> logits
//! box classifier d4 -> d4 linear 4 4 0.0 0.7 ...
//! inputs features
//! node classifier in:0
//! outputs n0.0
//! label animal-mechanism maps animal features to animal logits
//! ic animal-mechanism d2 -> d2 linear 2 2 0.9 -0.4 0.3 1.1
//! ```
//!
//! Structural generators are named `copy[A]`, `discard[A]`, `swap[A,B]`
//! and `id[A]` and need no declaration or box. Nodes are listed in
//! canonical order and may only refer to earlier nodes. Lines starting with
//! `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Bundle, Result, ZooError};
use crate::interpret::{ExplanationSignature, Label, PostHocInterpretation, Reconstruction, SyntacticInterpretation};
use crate::mdl::Quantizer;
use crate::semantics::{BoxOp, Model, PointwiseKind, Representation, SemanticBox, WireSpec};
use crate::syntax::{Diagram, Generator, GeneratorKind, Node, Source, StructuralKind, WireKind, WireType};

pub const FILE_VERSION: u32 = 1;

fn spec_token(s: &WireSpec) -> String {
    match s {
        WireSpec::Dim(n) => format!("d{n}"),
        WireSpec::Finite(n) => format!("f{n}"),
    }
}

fn list<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn box_text(b: &SemanticBox) -> String {
    let mut s = format!("{} -> {}", list(b.dom().iter().map(spec_token)), list(b.cod().iter().map(spec_token)));
    s = s.trim().to_string();
    let body = match b.op() {
        BoxOp::Linear(w) => {
            let mut out = format!("linear {} {}", w.nrows(), w.ncols());
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    out.push(' ');
                    out.push_str(&float(w[(i, j)]));
                }
            }
            out
        }
        BoxOp::Bias(v) => format!("bias {}", list(v.iter().map(|x| float(*x)))),
        BoxOp::Pointwise(k) => k.name().to_string(),
        BoxOp::FiniteTable(t) => format!("table {}", list(t)),
        BoxOp::Permutation(p) => format!("perm {}", list(p)),
        BoxOp::Structural(k) => k.name().to_string(),
    };
    format!("{s} {body}").trim_end().to_string()
}

fn check_name(name: &str, what: &str) -> Result<()> {
    let bad = name.is_empty() || name.chars().any(|c| c.is_whitespace() || matches!(c, '[' | ']' | ',' | '#'));
    if bad || name == "->" {
        return Err(ZooError::Precondition(format!("{what} name `{name}` cannot be written")));
    }
    Ok(())
}

fn source_text(s: &Source) -> String {
    s.to_string()
}

/// Serializes a bundle; the diagram is written in canonical order.
pub fn to_text(b: &Bundle) -> Result<String> {
    let mut out = format!("cmod {FILE_VERSION}\n");
    for (k, v) in &b.config {
        writeln!(out, "config {k}={v}").unwrap();
    }
    for (k, v) in &b.meta {
        writeln!(out, "meta {k}={v}").unwrap();
    }
    let d = b.model.diagram.canonicalize();
    let sig = d.signature();
    for w in sig.objects.values() {
        check_name(&w.name, "wire")?;
        match &w.kind {
            WireKind::Vector { dim } => writeln!(out, "wire {} vector {dim}", w.name).unwrap(),
            WireKind::Finite { values } => {
                for v in values {
                    check_name(v, "value")?;
                }
                writeln!(out, "wire {} finite {}", w.name, list(values)).unwrap()
            }
        }
    }
    for g in sig.generators.values().filter(|g| !g.is_structural()) {
        check_name(&g.name, "generator")?;
        let line = format!("gen {} {} -> {}", g.name, list(g.dom.iter().map(|w| &w.name)), list(g.cod.iter().map(|w| &w.name)));
        writeln!(out, "{}", line.split_whitespace().collect::<Vec<_>>().join(" ")).unwrap();
    }
    for g in sig.generators.values().filter(|g| !g.is_structural()) {
        writeln!(out, "box {} {}", g.name, box_text(b.model.rep.box_semantics(&g.name)?)).unwrap();
    }
    writeln!(out, "{}", format!("inputs {}", list(d.dom().iter().map(|w| &w.name))).trim_end()).unwrap();
    for n in d.nodes() {
        writeln!(out, "{}", format!("node {} {}", n.generator.name, list(n.inputs.iter().map(source_text))).trim_end()).unwrap();
    }
    writeln!(out, "{}", format!("outputs {}", list(d.outputs().iter().map(source_text))).trim_end()).unwrap();
    for l in b.vocab.labels() {
        check_name(&l.name, "label")?;
        match &l.gloss {
            Some(g) if g.contains('\n') || g.trim() != g || g.is_empty() => {
                return Err(ZooError::Precondition(format!("gloss of `{}` cannot be written on one line", l.name)));
            }
            Some(g) => writeln!(out, "label {} {g}", l.name).unwrap(),
            None => writeln!(out, "label {}", l.name).unwrap(),
        }
    }
    for (g, l) in &b.is_.map {
        writeln!(out, "is {g} {l}").unwrap();
    }
    for (_, bx, l) in b.ic.entries() {
        writeln!(out, "ic {l} {}", box_text(bx)).unwrap();
    }
    for (l, bx) in &b.recon.map {
        writeln!(out, "recon {l} {}", box_text(bx)).unwrap();
    }
    Ok(out)
}

pub fn save(b: &Bundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_text(b)?).map_err(|e| ZooError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn load(path: impl AsRef<Path>) -> Result<Bundle> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| ZooError::Io { path: path.display().to_string(), message: e.to_string() })?;
    from_text(&text)
}

struct Parser {
    line: usize,
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(ZooError::Parse { line: self.line, message: message.into() })
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&str>, what: &str) -> Result<T> {
        match tok.map(str::parse) {
            Some(Ok(v)) => Ok(v),
            Some(Err(_)) => self.err(format!("bad {what} `{}`", tok.unwrap_or_default())),
            None => self.err(format!("missing {what}")),
        }
    }

    fn spec(&self, tok: &str) -> Result<WireSpec> {
        let (kind, n) = (tok.get(..1).unwrap_or(""), tok.get(1..).unwrap_or(""));
        let n: usize = self.num(Some(n), "wire spec")?;
        match kind {
            "d" => Ok(WireSpec::Dim(n)),
            "f" => Ok(WireSpec::Finite(n)),
            _ => self.err(format!("bad wire spec `{tok}`")),
        }
    }

    fn semantic_box(&self, toks: &[&str]) -> Result<SemanticBox> {
        let Some(arrow) = toks.iter().position(|t| *t == "->") else {
            return self.err("box needs `->`");
        };
        let dom = toks[..arrow].iter().map(|t| self.spec(t)).collect::<Result<Vec<_>>>()?;
        let rest = &toks[arrow + 1..];
        let is_spec = |t: &str| t.len() > 1 && matches!(t.get(..1), Some("d" | "f")) && t[1..].chars().all(|c| c.is_ascii_digit());
        let Some(kpos) = rest.iter().position(|t| !is_spec(t)) else {
            return self.err("box needs a kind");
        };
        let cod = rest[..kpos].iter().map(|t| self.spec(t)).collect::<Result<Vec<_>>>()?;
        let kind = rest[kpos];
        let args = &rest[kpos + 1..];
        let floats = |xs: &[&str]| xs.iter().map(|t| self.num::<f64>(Some(t), "number")).collect::<Result<Vec<_>>>();
        let ints = |xs: &[&str]| xs.iter().map(|t| self.num::<usize>(Some(t), "index")).collect::<Result<Vec<_>>>();
        let op = match kind {
            "linear" => {
                let r: usize = self.num(args.first().copied(), "row count")?;
                let c: usize = self.num(args.get(1).copied(), "column count")?;
                let vals = floats(&args[2.min(args.len())..])?;
                if vals.len() != r * c {
                    return self.err(format!("linear box expects {} entries, found {}", r * c, vals.len()));
                }
                BoxOp::Linear(DMatrix::from_row_slice(r, c, &vals))
            }
            "bias" => BoxOp::Bias(floats(args)?),
            "table" => BoxOp::FiniteTable(ints(args)?),
            "perm" => BoxOp::Permutation(ints(args)?),
            other => {
                if let Some(k) = PointwiseKind::from_name(other) {
                    BoxOp::Pointwise(k)
                } else if let Some(k) = StructuralKind::from_name(other) {
                    BoxOp::Structural(k)
                } else {
                    return self.err(format!("unknown box kind `{other}`"));
                }
            }
        };
        if !matches!(op, BoxOp::Linear(_) | BoxOp::Bias(_) | BoxOp::FiniteTable(_) | BoxOp::Permutation(_)) && !args.is_empty() {
            return self.err(format!("box kind `{kind}` takes no arguments"));
        }
        SemanticBox::new(dom, cod, op).or_else(|e| self.err(e.to_string()))
    }

    fn source(&self, tok: &str, inputs: usize, nodes: &[Node]) -> Result<Source> {
        if let Some(i) = tok.strip_prefix("in:") {
            let i: usize = self.num(Some(i), "input index")?;
            if i >= inputs {
                return self.err(format!("input port `{tok}` does not exist"));
            }
            return Ok(Source::Input(i));
        }
        let Some((n, p)) = tok.strip_prefix('n').and_then(|r| r.split_once('.')) else {
            return self.err(format!("bad port `{tok}`"));
        };
        let node: usize = self.num(Some(n), "node index")?;
        let port: usize = self.num(Some(p), "port index")?;
        match nodes.get(node) {
            Some(nd) if port < nd.generator.cod.len() => Ok(Source::Node { node, port }),
            _ => self.err(format!("port `{tok}` does not exist")),
        }
    }
}

fn structural(name: &str, wires: &BTreeMap<String, WireType>) -> Option<Generator> {
    let (kind, rest) = name.split_once('[')?;
    let args = rest.strip_suffix(']')?;
    let kind = match kind {
        "copy" => StructuralKind::Copy,
        "discard" => StructuralKind::Discard,
        "swap" => StructuralKind::Swap,
        "id" => StructuralKind::Identity,
        _ => return None,
    };
    let dom = args.split(',').map(|a| wires.get(a).cloned()).collect::<Option<Vec<_>>>()?;
    Generator::structural(kind, &dom).ok().filter(|g| g.name == name)
}

/// Parses a bundle written by [`to_text`].
pub fn from_text(text: &str) -> Result<Bundle> {
    let mut p = Parser { line: 0 };
    let mut seen_header = false;
    let mut config = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut wires: BTreeMap<String, WireType> = BTreeMap::new();
    let mut gens: BTreeMap<String, Generator> = BTreeMap::new();
    let mut rep = Representation::new();
    let mut inputs: Option<Vec<WireType>> = None;
    let mut nodes: Vec<Node> = Vec::new();
    let mut outputs: Option<Vec<Source>> = None;
    let mut labels = Vec::new();
    let mut is_ = SyntacticInterpretation::new();
    let mut ic_lines: Vec<(usize, String, SemanticBox)> = Vec::new();
    let mut recon = Reconstruction::new();

    for (i, raw) in text.lines().enumerate() {
        p.line = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let key = toks[0];
        let args = &toks[1..];
        if !seen_header {
            if key != "cmod" {
                return p.err("missing `cmod` version line");
            }
            let v: u32 = p.num(args.first().copied(), "version")?;
            if v != FILE_VERSION || args.len() != 1 {
                return Err(ZooError::Version {
                    line: p.line,
                    message: format!("file version {v} is not supported (expected {FILE_VERSION})"),
                });
            }
            seen_header = true;
            continue;
        }
        let kv = |p: &Parser| -> Result<(String, String)> {
            match args {
                [a] => match a.split_once('=') {
                    Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
                    _ => p.err("expected key=value"),
                },
                _ => p.err("expected key=value"),
            }
        };
        let wire = |p: &Parser, name: &str| -> Result<WireType> {
            wires.get(name).cloned().map_or_else(|| p.err(format!("unknown wire `{name}`")), Ok)
        };
        match key {
            "config" => {
                let (k, v) = kv(&p)?;
                config.insert(k, v);
            }
            "meta" => {
                let (k, v) = kv(&p)?;
                meta.insert(k, v);
            }
            "wire" => {
                let w = match args {
                    [name, "vector", dim] => WireType::vector(*name, p.num(Some(dim), "dimension")?),
                    [name, "finite", values @ ..] => WireType::finite(*name, values.iter().copied()),
                    _ => return p.err("expected `wire NAME vector DIM` or `wire NAME finite VALUES...`"),
                };
                if w.validate().is_err() {
                    return p.err(format!("invalid wire `{}`", w.name));
                }
                if wires.insert(w.name.clone(), w).is_some() {
                    return p.err("duplicate wire");
                }
            }
            "gen" => {
                let Some(arrow) = args.iter().position(|t| *t == "->") else {
                    return p.err("gen needs `->`");
                };
                if arrow == 0 {
                    return p.err("gen needs a name");
                }
                let dom = args[1..arrow].iter().map(|n| wire(&p, n)).collect::<Result<Vec<_>>>()?;
                let cod = args[arrow + 1..].iter().map(|n| wire(&p, n)).collect::<Result<Vec<_>>>()?;
                let g = Generator::opaque(args[0], dom, cod);
                if gens.insert(g.name.clone(), g).is_some() {
                    return p.err("duplicate generator");
                }
            }
            "box" => {
                let Some((name, rest)) = args.split_first() else { return p.err("box needs a generator name") };
                if !gens.contains_key(*name) {
                    return p.err(format!("box for undeclared generator `{name}`"));
                }
                let b = p.semantic_box(rest)?;
                if rep.boxes.insert(name.to_string(), b).is_some() {
                    return p.err("duplicate box");
                }
            }
            "inputs" => {
                if inputs.is_some() {
                    return p.err("duplicate inputs line");
                }
                inputs = Some(args.iter().map(|n| wire(&p, n)).collect::<Result<_>>()?);
            }
            "node" => {
                let Some(ins) = inputs.as_ref() else { return p.err("node before inputs") };
                let Some((name, srcs)) = args.split_first() else { return p.err("node needs a generator") };
                let g = match gens.get(*name) {
                    Some(g) => g.clone(),
                    None => match structural(name, &wires) {
                        Some(g) => g,
                        None => return p.err(format!("unknown generator `{name}`")),
                    },
                };
                if srcs.len() != g.dom.len() {
                    return p.err(format!("generator `{name}` takes {} inputs, found {}", g.dom.len(), srcs.len()));
                }
                let srcs = srcs.iter().map(|s| p.source(s, ins.len(), &nodes)).collect::<Result<Vec<_>>>()?;
                nodes.push(Node { generator: g, inputs: srcs });
            }
            "outputs" => {
                let Some(ins) = inputs.as_ref() else { return p.err("outputs before inputs") };
                if outputs.is_some() {
                    return p.err("duplicate outputs line");
                }
                outputs = Some(args.iter().map(|s| p.source(s, ins.len(), &nodes)).collect::<Result<_>>()?);
            }
            "label" => {
                let Some(name) = args.first() else { return p.err("label needs a name") };
                let gloss = line["label".len()..].trim_start()[name.len()..].trim();
                labels.push(if gloss.is_empty() { Label::new(*name) } else { Label::glossed(*name, gloss) });
            }
            "is" => match args {
                [g, l] => is_.insert(*g, *l),
                _ => return p.err("expected `is GENERATOR LABEL`"),
            },
            "ic" | "recon" => {
                let Some((label, rest)) = args.split_first() else { return p.err(format!("{key} needs a label")) };
                let b = p.semantic_box(rest)?;
                if key == "ic" {
                    ic_lines.push((p.line, label.to_string(), b));
                } else {
                    recon.insert(*label, b);
                }
            }
            other => {
                return Err(ZooError::Version {
                    line: p.line,
                    message: format!("unknown field `{other}` for file version {FILE_VERSION}"),
                });
            }
        }
    }
    if !seen_header {
        return Err(ZooError::Parse { line: 0, message: "empty file".into() });
    }
    let (Some(inputs), Some(outputs)) = (inputs, outputs) else {
        return Err(ZooError::Parse { line: p.line, message: "missing inputs or outputs line".into() });
    };
    let diagram = Diagram::new(inputs, nodes, outputs)?;
    for g in diagram.signature().generators.values() {
        if g.kind == GeneratorKind::Opaque && !rep.boxes.contains_key(&g.name) {
            return Err(ZooError::Parse { line: p.line, message: format!("generator `{}` has no box", g.name) });
        }
    }
    let model = Model::new(diagram, rep)?;
    if let Some(v) = model.check_functorial()?.violations.first() {
        return Err(ZooError::Parse { line: 0, message: format!("box `{}` does not fit its generator: {}", v.generator, v.reason) });
    }
    let mut bundle = Bundle::from_model(model);
    bundle.config = config;
    bundle.meta = meta;
    bundle.vocab = ExplanationSignature::new(labels)?;
    bundle.is_ = is_;
    bundle.recon = recon;
    let q = bundle.scheme()?.q();
    let mut ic = PostHocInterpretation::new(Quantizer::new(q));
    for (line, label, b) in ic_lines {
        ic.insert(b, label).map_err(|e| ZooError::Parse { line, message: e.to_string() })?;
    }
    bundle.ic = ic;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdl::Fingerprint;
    use crate::zoo::{build_fig1, random_model, Backend};

    fn fingerprints(m: &Model) -> Vec<(String, Fingerprint)> {
        m.rep.boxes.iter().map(|(k, b)| (k.clone(), Fingerprint::of(b, &Quantizer::default()))).collect()
    }

    #[test]
    fn fig1_round_trips() {
        let b = build_fig1().unwrap();
        let text = to_text(&b).unwrap();
        let back = from_text(&text).unwrap();
        assert_eq!(back, b);
        assert_eq!(to_text(&back).unwrap(), text);
    }

    #[test]
    fn random_models_round_trip() {
        for seed in 0..40 {
            for backend in [Backend::Real, Backend::Finite] {
                let b = Bundle::from_model(random_model(seed, 10, backend).unwrap());
                let back = from_text(&to_text(&b).unwrap()).unwrap();
                assert_eq!(fingerprints(&back.model), fingerprints(&b.model));
                assert_eq!(back.model, b.model);
            }
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let text = to_text(&build_fig1().unwrap()).unwrap().replacen("cmod 1", "cmod 2", 1);
        assert!(matches!(from_text(&text), Err(ZooError::Version { line: 1, .. })));
        let text = to_text(&build_fig1().unwrap()).unwrap() + "future thing\n";
        assert!(matches!(from_text(&text), Err(ZooError::Version { .. })));
    }

    #[test]
    fn missing_port_names_the_line() {
        let text = to_text(&build_fig1().unwrap()).unwrap();
        let bad = text.replace("outputs n0.0", "outputs n0.3");
        let line = bad.lines().position(|l| l.starts_with("outputs")).unwrap() + 1;
        match from_text(&bad) {
            Err(ZooError::Parse { line: l, message }) => {
                assert_eq!(l, line);
                assert!(message.contains("n0.3"));
            }
            other => panic!("{other:?}"),
        }
    }
}
