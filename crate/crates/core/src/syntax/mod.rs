//! Typed string diagrams stored as port graphs.
//!
//! A [`Diagram`] is a directed acyclic port graph over generators. Every
//! source port (an input boundary port or a node output) feeds exactly one
//! target port (a node input or an output boundary port); copying and
//! discarding are explicit structural generators. Equality "up to the
//! monoidal axioms" is connectivity isomorphism, decided by comparing
//! canonical forms (see [`Diagram::canonicalize`]).

mod canon;
mod dot;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntaxError {
    #[error("type mismatch at port {index}: expected `{expected}`, found `{found}`")]
    TypeMismatch { index: usize, expected: String, found: String },
    #[error("arity mismatch: left side has {left} ports, right side has {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("invalid wire type `{0}`: vector wires need dim >= 1, finite wires at least one value")]
    InvalidWire(String),
    #[error("wire type `{0}` declared twice with different payloads")]
    ConflictingWire(String),
    #[error("generator `{0}` declared twice with different types")]
    ConflictingGenerator(String),
    #[error("generator `{0}` references a wire type missing from the signature")]
    UnknownWire(String),
    #[error("structural generator `{0}` has the wrong arity for its kind")]
    StructuralArity(String),
    #[error("source {0} is not used exactly once")]
    DanglingSource(String),
    #[error("source {0} does not exist")]
    MissingSource(String),
    #[error("node {node} expects {expected} inputs, got {found}")]
    InputCount { node: usize, expected: usize, found: usize },
    #[error("the diagram contains a cycle")]
    Cycle,
}

pub type Result<T> = std::result::Result<T, SyntaxError>;

/// Payload of a wire type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WireKind {
    Vector { dim: usize },
    Finite { values: Vec<String> },
}

/// A named wire type, i.e. an object of the syntactic category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WireType {
    pub name: String,
    pub kind: WireKind,
}

impl WireType {
    pub fn vector(name: impl Into<String>, dim: usize) -> Self {
        WireType { name: name.into(), kind: WireKind::Vector { dim } }
    }

    pub fn finite<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        WireType {
            name: name.into(),
            kind: WireKind::Finite { values: values.into_iter().map(Into::into).collect() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.kind {
            WireKind::Vector { dim } => *dim >= 1,
            WireKind::Finite { values } => !values.is_empty(),
        };
        if ok && !self.name.is_empty() {
            Ok(())
        } else {
            Err(SyntaxError::InvalidWire(self.name.clone()))
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, WireKind::Finite { .. })
    }
}

impl fmt::Display for WireType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StructuralKind {
    Copy,
    Discard,
    Swap,
    Identity,
}

impl StructuralKind {
    pub fn name(self) -> &'static str {
        match self {
            StructuralKind::Copy => "copy",
            StructuralKind::Discard => "discard",
            StructuralKind::Swap => "swap",
            StructuralKind::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "copy" => StructuralKind::Copy,
            "discard" => StructuralKind::Discard,
            "swap" => StructuralKind::Swap,
            "identity" => StructuralKind::Identity,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeneratorKind {
    Opaque,
    Structural(StructuralKind),
}

/// A box of the signature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Generator {
    pub name: String,
    pub dom: Vec<WireType>,
    pub cod: Vec<WireType>,
    pub kind: GeneratorKind,
}

impl Generator {
    pub fn opaque(name: impl Into<String>, dom: Vec<WireType>, cod: Vec<WireType>) -> Self {
        Generator { name: name.into(), dom, cod, kind: GeneratorKind::Opaque }
    }

    pub fn copy(a: &WireType) -> Self {
        Generator {
            name: format!("copy[{}]", a.name),
            dom: vec![a.clone()],
            cod: vec![a.clone(), a.clone()],
            kind: GeneratorKind::Structural(StructuralKind::Copy),
        }
    }

    pub fn discard(a: &WireType) -> Self {
        Generator {
            name: format!("discard[{}]", a.name),
            dom: vec![a.clone()],
            cod: vec![],
            kind: GeneratorKind::Structural(StructuralKind::Discard),
        }
    }

    pub fn swap(a: &WireType, b: &WireType) -> Self {
        Generator {
            name: format!("swap[{},{}]", a.name, b.name),
            dom: vec![a.clone(), b.clone()],
            cod: vec![b.clone(), a.clone()],
            kind: GeneratorKind::Structural(StructuralKind::Swap),
        }
    }

    pub fn identity(a: &WireType) -> Self {
        Generator {
            name: format!("id[{}]", a.name),
            dom: vec![a.clone()],
            cod: vec![a.clone()],
            kind: GeneratorKind::Structural(StructuralKind::Identity),
        }
    }

    /// Builds the structural generator of `kind` over `dom`.
    pub fn structural(kind: StructuralKind, dom: &[WireType]) -> Result<Self> {
        match (kind, dom) {
            (StructuralKind::Copy, [a]) => Ok(Self::copy(a)),
            (StructuralKind::Discard, [a]) => Ok(Self::discard(a)),
            (StructuralKind::Identity, [a]) => Ok(Self::identity(a)),
            (StructuralKind::Swap, [a, b]) => Ok(Self::swap(a, b)),
            _ => Err(SyntaxError::StructuralArity(kind.name().to_string())),
        }
    }

    pub fn is_structural(&self) -> bool {
        matches!(self.kind, GeneratorKind::Structural(_))
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.dom.iter().chain(&self.cod) {
            w.validate()?;
        }
        if let GeneratorKind::Structural(kind) = self.kind {
            let ok = match kind {
                StructuralKind::Copy => {
                    self.dom.len() == 1 && self.cod.len() == 2 && self.cod[0] == self.dom[0] && self.cod[1] == self.dom[0]
                }
                StructuralKind::Discard => self.dom.len() == 1 && self.cod.is_empty(),
                StructuralKind::Identity => self.dom.len() == 1 && self.cod == self.dom,
                StructuralKind::Swap => {
                    self.dom.len() == 2 && self.cod.len() == 2 && self.cod[0] == self.dom[1] && self.cod[1] == self.dom[0]
                }
            };
            if !ok {
                return Err(SyntaxError::StructuralArity(self.name.clone()));
            }
        }
        Ok(())
    }
}

/// Wire types and generators, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Signature {
    pub objects: BTreeMap<String, WireType>,
    pub generators: BTreeMap<String, Generator>,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_wire(&mut self, w: &WireType) -> Result<()> {
        w.validate()?;
        match self.objects.get(&w.name) {
            Some(existing) if existing != w => Err(SyntaxError::ConflictingWire(w.name.clone())),
            Some(_) => Ok(()),
            None => {
                self.objects.insert(w.name.clone(), w.clone());
                Ok(())
            }
        }
    }

    /// Adds `g` together with every wire type it mentions.
    pub fn add_generator(&mut self, g: &Generator) -> Result<()> {
        g.validate()?;
        for w in g.dom.iter().chain(&g.cod) {
            self.add_wire(w)?;
        }
        match self.generators.get(&g.name) {
            Some(existing) if existing != g => Err(SyntaxError::ConflictingGenerator(g.name.clone())),
            Some(_) => Ok(()),
            None => {
                self.generators.insert(g.name.clone(), g.clone());
                Ok(())
            }
        }
    }

    /// Union of two signatures, failing on name clashes.
    pub fn union(&self, other: &Signature) -> Result<Signature> {
        let mut out = self.clone();
        for w in other.objects.values() {
            out.add_wire(w)?;
        }
        for g in other.generators.values() {
            out.add_generator(g)?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for g in self.generators.values() {
            g.validate()?;
            for w in g.dom.iter().chain(&g.cod) {
                if self.objects.get(&w.name) != Some(w) {
                    return Err(SyntaxError::UnknownWire(g.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn generator_index(&self, name: &str) -> Option<usize> {
        self.generators.keys().position(|k| k == name)
    }
}

/// Where a wire comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    /// Input boundary port.
    Input(usize),
    /// Output `port` of node `node`.
    Node { node: usize, port: usize },
}

/// Where a wire goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    /// Output boundary port.
    Output(usize),
    /// Input `port` of node `node`.
    Node { node: usize, port: usize },
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Input(i) => write!(f, "in:{i}"),
            Source::Node { node, port } => write!(f, "n{node}.{port}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub generator: Generator,
    /// One source per input port of the generator.
    pub inputs: Vec<Source>,
}

/// A string diagram `dom -> cod` stored as a port graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Diagram {
    inputs: Vec<WireType>,
    nodes: Vec<Node>,
    outputs: Vec<Source>,
}

impl Diagram {
    /// Validates and builds a diagram.
    pub fn new(inputs: Vec<WireType>, nodes: Vec<Node>, outputs: Vec<Source>) -> Result<Self> {
        let d = Diagram { inputs, nodes, outputs };
        d.validate()?;
        Ok(d)
    }

    /// The empty diagram on the monoidal unit.
    pub fn empty() -> Self {
        Diagram { inputs: vec![], nodes: vec![], outputs: vec![] }
    }

    /// Bare wires on `types`; no boxes.
    pub fn identity(types: &[WireType]) -> Self {
        Diagram {
            inputs: types.to_vec(),
            nodes: vec![],
            outputs: (0..types.len()).map(Source::Input).collect(),
        }
    }

    /// A single box with its ports wired to the boundary in order.
    pub fn from_generator(g: &Generator) -> Self {
        Diagram {
            inputs: g.dom.clone(),
            nodes: vec![Node { generator: g.clone(), inputs: (0..g.dom.len()).map(Source::Input).collect() }],
            outputs: (0..g.cod.len()).map(|port| Source::Node { node: 0, port }).collect(),
        }
    }

    pub fn dom(&self) -> &[WireType] {
        &self.inputs
    }

    pub fn cod(&self) -> Vec<WireType> {
        self.outputs.iter().map(|s| self.source_type(*s).clone()).collect()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[Source] {
        &self.outputs
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Type carried by a source port. Panics on a dangling reference, which
    /// validation rules out.
    pub fn source_type(&self, s: Source) -> &WireType {
        match s {
            Source::Input(i) => &self.inputs[i],
            Source::Node { node, port } => &self.nodes[node].generator.cod[port],
        }
    }

    fn source_exists(&self, s: Source) -> bool {
        match s {
            Source::Input(i) => i < self.inputs.len(),
            Source::Node { node, port } => node < self.nodes.len() && port < self.nodes[node].generator.cod.len(),
        }
    }

    /// All source ports in a fixed order: boundary inputs, then node outputs.
    pub fn sources(&self) -> Vec<Source> {
        let mut out: Vec<Source> = (0..self.inputs.len()).map(Source::Input).collect();
        for (node, n) in self.nodes.iter().enumerate() {
            out.extend((0..n.generator.cod.len()).map(|port| Source::Node { node, port }));
        }
        out
    }

    /// Every edge as `(source, target)`, ordered by target.
    pub fn edges(&self) -> Vec<(Source, Target)> {
        let mut out = Vec::new();
        for (node, n) in self.nodes.iter().enumerate() {
            for (port, s) in n.inputs.iter().enumerate() {
                out.push((*s, Target::Node { node, port }));
            }
        }
        for (i, s) in self.outputs.iter().enumerate() {
            out.push((*s, Target::Output(i)));
        }
        out
    }

    /// Map from each source port to the unique target it feeds.
    pub fn consumers(&self) -> BTreeMap<Source, Target> {
        self.edges().into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        for w in &self.inputs {
            w.validate()?;
        }
        let mut used: BTreeMap<Source, usize> = self.sources().into_iter().map(|s| (s, 0)).collect();
        for (node, n) in self.nodes.iter().enumerate() {
            n.generator.validate()?;
            if n.inputs.len() != n.generator.dom.len() {
                return Err(SyntaxError::InputCount { node, expected: n.generator.dom.len(), found: n.inputs.len() });
            }
        }
        for (i, (src, tgt)) in self.edges().into_iter().enumerate() {
            if !self.source_exists(src) {
                return Err(SyntaxError::MissingSource(src.to_string()));
            }
            let expected = match tgt {
                Target::Node { node, port } => &self.nodes[node].generator.dom[port],
                Target::Output(_) => self.source_type(src),
            };
            let found = self.source_type(src);
            if expected != found {
                return Err(SyntaxError::TypeMismatch {
                    index: i,
                    expected: expected.name.clone(),
                    found: found.name.clone(),
                });
            }
            *used.get_mut(&src).expect("source exists") += 1;
        }
        if let Some((s, _)) = used.iter().find(|(_, c)| **c != 1) {
            return Err(SyntaxError::DanglingSource(s.to_string()));
        }
        self.topo_order().map(|_| ())
    }

    /// A topological order of the nodes (Kahn's algorithm, lowest index first).
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (v, node) in self.nodes.iter().enumerate() {
            for s in &node.inputs {
                if let Source::Node { node: u, .. } = s {
                    if *u >= n {
                        return Err(SyntaxError::MissingSource(s.to_string()));
                    }
                    indegree[v] += 1;
                    succ[*u].push(v);
                }
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|v| indegree[*v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &w in &succ[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.insert(w);
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(SyntaxError::Cycle)
        }
    }

    /// The wire types and generators occurring in the diagram, boundary
    /// wires included.
    pub fn signature(&self) -> Signature {
        let mut sig = Signature::new();
        for w in &self.inputs {
            sig.objects.insert(w.name.clone(), w.clone());
        }
        for n in &self.nodes {
            for w in n.generator.dom.iter().chain(&n.generator.cod) {
                sig.objects.insert(w.name.clone(), w.clone());
            }
            sig.generators.insert(n.generator.name.clone(), n.generator.clone());
        }
        sig
    }

    /// Sequential composition `self ; next`.
    pub fn compose_seq(&self, next: &Diagram) -> Result<Diagram> {
        let cod = self.cod();
        if cod.len() != next.inputs.len() {
            return Err(SyntaxError::ArityMismatch { left: cod.len(), right: next.inputs.len() });
        }
        for (i, (a, b)) in cod.iter().zip(&next.inputs).enumerate() {
            if a != b {
                return Err(SyntaxError::TypeMismatch { index: i, expected: b.name.clone(), found: a.name.clone() });
            }
        }
        self.signature().union(&next.signature())?;
        let offset = self.nodes.len();
        let remap = |s: Source| match s {
            Source::Input(i) => self.outputs[i],
            Source::Node { node, port } => Source::Node { node: node + offset, port },
        };
        let mut nodes = self.nodes.clone();
        nodes.extend(next.nodes.iter().map(|n| Node {
            generator: n.generator.clone(),
            inputs: n.inputs.iter().map(|s| remap(*s)).collect(),
        }));
        let outputs = next.outputs.iter().map(|s| remap(*s)).collect();
        Ok(Diagram { inputs: self.inputs.clone(), nodes, outputs })
    }

    /// Parallel composition `self ⊗ other`.
    pub fn compose_par(&self, other: &Diagram) -> Diagram {
        let in_off = self.inputs.len();
        let node_off = self.nodes.len();
        let remap = |s: Source| match s {
            Source::Input(i) => Source::Input(i + in_off),
            Source::Node { node, port } => Source::Node { node: node + node_off, port },
        };
        let mut inputs = self.inputs.clone();
        inputs.extend(other.inputs.iter().cloned());
        let mut nodes = self.nodes.clone();
        nodes.extend(other.nodes.iter().map(|n| Node {
            generator: n.generator.clone(),
            inputs: n.inputs.iter().map(|s| remap(*s)).collect(),
        }));
        let mut outputs = self.outputs.clone();
        outputs.extend(other.outputs.iter().map(|s| remap(*s)));
        Diagram { inputs, nodes, outputs }
    }

    /// Reorders nodes by `order` (a permutation of node indices; position
    /// `k` of the result holds old node `order[k]`).
    pub fn permute_nodes(&self, order: &[usize]) -> Diagram {
        let mut new_index = vec![0usize; order.len()];
        for (k, &old) in order.iter().enumerate() {
            new_index[old] = k;
        }
        let remap = |s: Source| match s {
            Source::Input(i) => Source::Input(i),
            Source::Node { node, port } => Source::Node { node: new_index[node], port },
        };
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                Node { generator: n.generator.clone(), inputs: n.inputs.iter().map(|s| remap(*s)).collect() }
            })
            .collect();
        Diagram { inputs: self.inputs.clone(), nodes, outputs: self.outputs.iter().map(|s| remap(*s)).collect() }
    }

    /// Equality up to relabelling of nodes: same boundary, and a bijection of
    /// nodes preserving generators and typed connectivity.
    pub fn is_connectivity_isomorphic(&self, other: &Diagram) -> bool {
        self.inputs == other.inputs
            && self.outputs.len() == other.outputs.len()
            && self.nodes.len() == other.nodes.len()
            && self.canonicalize() == other.canonicalize()
    }

    pub fn is_canonical(&self) -> bool {
        *self == self.canonicalize()
    }
}

/// Incremental construction of diagrams.
///
/// ```
/// use cmod_core::syntax::{DiagramBuilder, Generator, WireType};
/// let a = WireType::vector("A", 2);
/// let f = Generator::opaque("f", vec![a.clone()], vec![a.clone()]);
/// let mut b = DiagramBuilder::new(vec![a.clone()]);
/// let x = b.input(0);
/// let y = b.add(&f, &[x]).unwrap();
/// let d = b.finish(&y).unwrap();
/// assert_eq!(d.node_count(), 1);
/// ```
#[derive(Debug, Clone)]
pub struct DiagramBuilder {
    inputs: Vec<WireType>,
    nodes: Vec<Node>,
}

impl DiagramBuilder {
    pub fn new(inputs: Vec<WireType>) -> Self {
        DiagramBuilder { inputs, nodes: vec![] }
    }

    pub fn input(&self, i: usize) -> Source {
        Source::Input(i)
    }

    pub fn inputs(&self) -> Vec<Source> {
        (0..self.inputs.len()).map(Source::Input).collect()
    }

    fn source_type(&self, s: Source) -> Option<&WireType> {
        match s {
            Source::Input(i) => self.inputs.get(i),
            Source::Node { node, port } => self.nodes.get(node).and_then(|n| n.generator.cod.get(port)),
        }
    }

    /// Adds a node fed by `inputs` and returns its output ports.
    pub fn add(&mut self, g: &Generator, inputs: &[Source]) -> Result<Vec<Source>> {
        if inputs.len() != g.dom.len() {
            return Err(SyntaxError::InputCount { node: self.nodes.len(), expected: g.dom.len(), found: inputs.len() });
        }
        for (i, (s, want)) in inputs.iter().zip(&g.dom).enumerate() {
            let have = self.source_type(*s).ok_or_else(|| SyntaxError::MissingSource(s.to_string()))?;
            if have != want {
                return Err(SyntaxError::TypeMismatch { index: i, expected: want.name.clone(), found: have.name.clone() });
            }
        }
        let node = self.nodes.len();
        self.nodes.push(Node { generator: g.clone(), inputs: inputs.to_vec() });
        Ok((0..g.cod.len()).map(|port| Source::Node { node, port }).collect())
    }

    pub fn finish(self, outputs: &[Source]) -> Result<Diagram> {
        Diagram::new(self.inputs, self.nodes, outputs.to_vec())
    }
}
