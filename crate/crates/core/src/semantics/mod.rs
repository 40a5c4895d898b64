//! Numeric semantics: boxes, the representation functor, and evaluation of
//! whole diagrams.
//!
//! Two backends share one box type. Vector wires carry `f64` activations and
//! parallel vector wires compose by concatenation (direct sum). Finite wires
//! carry a symbol index and parallel finite wires compose by cartesian
//! product, so [`BoxOp::FiniteTable`] is indexed in mixed radix with the
//! first wire most significant.

mod metric;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::syntax::{Diagram, GeneratorKind, Signature, Source, StructuralKind, SyntaxError, WireKind, WireType};

pub use metric::{
    behavioural_distortion, distortion, enumerate_finite_domain, MetricKind, MetricSpec, SampleDistribution,
    SampleSource, Semantic,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticsError {
    #[error("no semantic box for generator `{0}`")]
    MissingGenerator(String),
    #[error("no object-map entry for wire type `{0}`")]
    MissingObject(String),
    #[error("shape mismatch at node {node:?}: {detail}")]
    ShapeMismatch { node: Option<usize>, detail: String },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("incompatible arities: {0}")]
    IncompatibleArity(String),
    #[error("output is not row-stochastic")]
    NonStochastic,
    #[error("metric {0} is not applicable here")]
    UnsupportedMetric(&'static str),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
}

pub type Result<T> = std::result::Result<T, SemanticsError>;

/// The image of a wire type under the object map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WireSpec {
    /// `R^n`
    Dim(usize),
    /// A finite set with `n` elements.
    Finite(usize),
}

impl WireSpec {
    pub fn of(w: &WireType) -> WireSpec {
        match &w.kind {
            WireKind::Vector { dim } => WireSpec::Dim(*dim),
            WireKind::Finite { values } => WireSpec::Finite(values.len()),
        }
    }

    /// Dimension for vector wires, cardinality for finite ones.
    pub fn size(self) -> usize {
        match self {
            WireSpec::Dim(n) | WireSpec::Finite(n) => n,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, WireSpec::Finite(_))
    }
}

/// A value travelling on one wire.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Vector(Vec<f64>),
    Symbol(usize),
}

impl Value {
    pub fn conforms(&self, spec: WireSpec) -> bool {
        match (self, spec) {
            (Value::Vector(v), WireSpec::Dim(n)) => v.len() == n,
            (Value::Symbol(s), WireSpec::Finite(n)) => *s < n,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointwiseKind {
    Relu,
    Sigmoid,
    /// One-hot of the first maximal coordinate.
    ArgmaxOneHot,
}

impl PointwiseKind {
    pub fn name(self) -> &'static str {
        match self {
            PointwiseKind::Relu => "relu",
            PointwiseKind::Sigmoid => "sigmoid",
            PointwiseKind::ArgmaxOneHot => "argmax",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => PointwiseKind::Relu,
            "sigmoid" => PointwiseKind::Sigmoid,
            "argmax" => PointwiseKind::ArgmaxOneHot,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoxOp {
    /// Matrix of shape (total cod dim) x (total dom dim).
    Linear(DMatrix<f64>),
    /// Adds a constant vector.
    Bias(Vec<f64>),
    Pointwise(PointwiseKind),
    /// `table[input index] = output index`, both in mixed radix.
    FiniteTable(Vec<usize>),
    /// `out[i] = in[indices[i]]` on the concatenated vector.
    Permutation(Vec<usize>),
    Structural(StructuralKind),
}

/// A semantic instantiation of one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBox {
    dom: Vec<WireSpec>,
    cod: Vec<WireSpec>,
    op: BoxOp,
}

fn total_dim(specs: &[WireSpec]) -> Option<usize> {
    specs
        .iter()
        .map(|s| match s {
            WireSpec::Dim(n) => Some(*n),
            WireSpec::Finite(_) => None,
        })
        .sum()
}

fn cardinality(specs: &[WireSpec]) -> Option<usize> {
    specs
        .iter()
        .map(|s| match s {
            WireSpec::Finite(n) => Some(*n),
            WireSpec::Dim(_) => None,
        })
        .product()
}

impl SemanticBox {
    /// Validates shape invariants for `op` against `dom`/`cod`.
    pub fn new(dom: Vec<WireSpec>, cod: Vec<WireSpec>, op: BoxOp) -> Result<Self> {
        let invalid = |m: &str| Err(SemanticsError::InvalidBox(m.to_string()));
        match &op {
            BoxOp::Linear(m) => {
                let (Some(n), Some(r)) = (total_dim(&dom), total_dim(&cod)) else {
                    return invalid("linear boxes need vector wires");
                };
                if m.nrows() != r || m.ncols() != n {
                    return invalid("matrix shape disagrees with the wire dimensions");
                }
            }
            BoxOp::Bias(b) => {
                if dom != cod || total_dim(&dom) != Some(b.len()) {
                    return invalid("bias length must match its vector wires");
                }
            }
            BoxOp::Pointwise(_) => {
                if dom != cod || total_dim(&dom).is_none() {
                    return invalid("pointwise boxes map vector wires to themselves");
                }
            }
            BoxOp::FiniteTable(t) => {
                let (Some(n), Some(k)) = (cardinality(&dom), cardinality(&cod)) else {
                    return invalid("tables need finite wires");
                };
                if t.len() != n || t.iter().any(|v| *v >= k) {
                    return invalid("table is not total over its domain");
                }
            }
            BoxOp::Permutation(p) => {
                let (Some(n), Some(m)) = (total_dim(&dom), total_dim(&cod)) else {
                    return invalid("permutations need vector wires");
                };
                let mut seen = vec![false; p.len()];
                if n != p.len() || m != p.len() || p.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
                    return invalid("permutation is not a bijection of the wire coordinates");
                }
            }
            BoxOp::Structural(kind) => {
                let ok = match kind {
                    StructuralKind::Copy => dom.len() == 1 && cod.len() == 2 && cod[0] == dom[0] && cod[1] == dom[0],
                    StructuralKind::Discard => dom.len() == 1 && cod.is_empty(),
                    StructuralKind::Identity => dom.len() == 1 && cod == dom,
                    StructuralKind::Swap => dom.len() == 2 && cod.len() == 2 && cod[0] == dom[1] && cod[1] == dom[0],
                };
                if !ok {
                    return invalid("structural arity");
                }
            }
        }
        Ok(SemanticBox { dom, cod, op })
    }

    /// Linear box on a single input wire and a single output wire.
    pub fn dense(m: DMatrix<f64>) -> Self {
        let dom = if m.ncols() == 0 { vec![] } else { vec![WireSpec::Dim(m.ncols())] };
        let cod = if m.nrows() == 0 { vec![] } else { vec![WireSpec::Dim(m.nrows())] };
        SemanticBox { dom, cod, op: BoxOp::Linear(m) }
    }

    pub fn structural(kind: StructuralKind, dom: &[WireSpec]) -> Result<Self> {
        let cod = match (kind, dom) {
            (StructuralKind::Copy, [a]) => vec![*a, *a],
            (StructuralKind::Discard, [_]) => vec![],
            (StructuralKind::Identity, [a]) => vec![*a],
            (StructuralKind::Swap, [a, b]) => vec![*b, *a],
            _ => return Err(SemanticsError::InvalidBox("structural arity".into())),
        };
        SemanticBox::new(dom.to_vec(), cod, BoxOp::Structural(kind))
    }

    pub fn dom(&self) -> &[WireSpec] {
        &self.dom
    }

    pub fn cod(&self) -> &[WireSpec] {
        &self.cod
    }

    pub fn op(&self) -> &BoxOp {
        &self.op
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.op {
            BoxOp::Linear(m) => Some(m),
            _ => None,
        }
    }

    /// Same wires, different operation. Validates.
    pub fn with_op(&self, op: BoxOp) -> Result<Self> {
        SemanticBox::new(self.dom.clone(), self.cod.clone(), op)
    }

    pub fn apply(&self, inputs: &[Value]) -> Result<Vec<Value>> {
        if inputs.len() != self.dom.len() || inputs.iter().zip(&self.dom).any(|(v, s)| !v.conforms(*s)) {
            return Err(SemanticsError::ShapeMismatch { node: None, detail: "input does not conform to box domain".into() });
        }
        Ok(match &self.op {
            BoxOp::Linear(m) => split(&self.cod, (m * DVector::from_vec(concat(inputs))).as_slice()),
            BoxOp::Bias(b) => {
                let x: Vec<f64> = concat(inputs).iter().zip(b).map(|(x, b)| x + b).collect();
                split(&self.cod, &x)
            }
            BoxOp::Pointwise(kind) => {
                let x = concat(inputs);
                let y: Vec<f64> = match kind {
                    PointwiseKind::Relu => x.iter().map(|v| v.max(0.0)).collect(),
                    PointwiseKind::Sigmoid => x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                    PointwiseKind::ArgmaxOneHot => {
                        let mut best = 0;
                        for (i, v) in x.iter().enumerate() {
                            if *v > x[best] {
                                best = i;
                            }
                        }
                        (0..x.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
                    }
                };
                split(&self.cod, &y)
            }
            BoxOp::FiniteTable(t) => {
                let mut idx = 0usize;
                for (v, s) in inputs.iter().zip(&self.dom) {
                    let Value::Symbol(k) = v else { unreachable!("conformance checked") };
                    idx = idx * s.size() + k;
                }
                let mut out_idx = t[idx];
                let mut out = vec![Value::Symbol(0); self.cod.len()];
                for (slot, s) in out.iter_mut().zip(&self.cod).rev() {
                    *slot = Value::Symbol(out_idx % s.size());
                    out_idx /= s.size();
                }
                out
            }
            BoxOp::Permutation(p) => {
                let x = concat(inputs);
                let y: Vec<f64> = p.iter().map(|&i| x[i]).collect();
                split(&self.cod, &y)
            }
            BoxOp::Structural(kind) => match kind {
                StructuralKind::Copy => vec![inputs[0].clone(), inputs[0].clone()],
                StructuralKind::Discard => vec![],
                StructuralKind::Swap => vec![inputs[1].clone(), inputs[0].clone()],
                StructuralKind::Identity => vec![inputs[0].clone()],
            },
        })
    }
}

pub(crate) fn concat(values: &[Value]) -> Vec<f64> {
    let mut out = Vec::new();
    for v in values {
        if let Value::Vector(x) = v {
            out.extend_from_slice(x);
        }
    }
    out
}

pub(crate) fn split(specs: &[WireSpec], data: &[f64]) -> Vec<Value> {
    let mut at = 0;
    specs
        .iter()
        .map(|s| {
            let n = s.size();
            let v = Value::Vector(data[at..at + n].to_vec());
            at += n;
            v
        })
        .collect()
}

/// The representation functor: an object map and a generator map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Representation {
    pub objects: BTreeMap<String, WireSpec>,
    pub boxes: BTreeMap<String, SemanticBox>,
}

impl Representation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Object map read off the declared wire payloads.
    pub fn for_signature(sig: &Signature) -> Self {
        Representation {
            objects: sig.objects.values().map(|w| (w.name.clone(), WireSpec::of(w))).collect(),
            boxes: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, generator: impl Into<String>, b: SemanticBox) {
        self.boxes.insert(generator.into(), b);
    }

    pub fn image(&self, wires: &[WireType]) -> Result<Vec<WireSpec>> {
        wires
            .iter()
            .map(|w| self.objects.get(&w.name).copied().ok_or_else(|| SemanticsError::MissingObject(w.name.clone())))
            .collect()
    }

    /// `[[f]]` for a generator name.
    pub fn box_semantics(&self, generator: &str) -> Result<&SemanticBox> {
        self.boxes.get(generator).ok_or_else(|| SemanticsError::MissingGenerator(generator.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctorialityViolation {
    pub generator: String,
    pub reason: String,
}

/// Generators whose boxes disagree with the object map. Empty means the
/// representation is functorial on objects.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctorialityReport {
    pub violations: Vec<FunctorialityViolation>,
}

impl FunctorialityReport {
    pub fn is_functorial(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_functorial(rep: &Representation, d: &Diagram) -> Result<FunctorialityReport> {
    let sig = d.signature();
    let mut report = FunctorialityReport::default();
    for g in sig.generators.values() {
        let b = rep.box_semantics(&g.name)?;
        let mut push = |reason: String| report.violations.push(FunctorialityViolation { generator: g.name.clone(), reason });
        match (rep.image(&g.dom), rep.image(&g.cod)) {
            (Ok(dom), Ok(cod)) => {
                if dom != b.dom {
                    push(format!("domain {:?} but box expects {:?}", dom, b.dom));
                }
                if cod != b.cod {
                    push(format!("codomain {:?} but box produces {:?}", cod, b.cod));
                }
            }
            (Err(e), _) | (_, Err(e)) => push(e.to_string()),
        }
        if let GeneratorKind::Structural(kind) = g.kind {
            if b.op != BoxOp::Structural(kind) {
                push(format!("structural {} mapped to a non-structural box", kind.name()));
            }
        }
    }
    Ok(report)
}

/// Evaluates `d` on `x` by propagation in the diagram's default topological order.
pub fn evaluate(rep: &Representation, d: &Diagram, x: &[Value]) -> Result<Vec<Value>> {
    let order = d.topo_order()?;
    evaluate_in_order(rep, d, x, &order)
}

/// Evaluation along an explicit topological order.
pub fn evaluate_in_order(rep: &Representation, d: &Diagram, x: &[Value], order: &[usize]) -> Result<Vec<Value>> {
    let dom = rep.image(d.dom())?;
    if x.len() != dom.len() || x.iter().zip(&dom).any(|(v, s)| !v.conforms(*s)) {
        return Err(SemanticsError::ShapeMismatch { node: None, detail: "input does not conform to the diagram domain".into() });
    }
    let mut inputs: Vec<Option<Value>> = x.iter().cloned().map(Some).collect();
    let mut outs: Vec<Vec<Option<Value>>> = vec![Vec::new(); d.nodes().len()];
    let mut done = vec![false; d.nodes().len()];
    let take = |s: Source, inputs: &mut Vec<Option<Value>>, outs: &mut Vec<Vec<Option<Value>>>, node: Option<usize>| {
        let slot = match s {
            Source::Input(i) => inputs.get_mut(i),
            Source::Node { node, port } => outs.get_mut(node).and_then(|o| o.get_mut(port)),
        };
        slot.and_then(Option::take).ok_or(SemanticsError::ShapeMismatch { node, detail: format!("source {s} unavailable") })
    };
    for &v in order {
        let node = &d.nodes()[v];
        if done[v] {
            return Err(SemanticsError::ShapeMismatch { node: Some(v), detail: "node visited twice".into() });
        }
        let args = node
            .inputs
            .iter()
            .map(|s| take(*s, &mut inputs, &mut outs, Some(v)))
            .collect::<Result<Vec<_>>>()?;
        let b = rep.box_semantics(&node.generator.name)?;
        let ys = b.apply(&args).map_err(|e| match e {
            SemanticsError::ShapeMismatch { detail, .. } => SemanticsError::ShapeMismatch { node: Some(v), detail },
            e => e,
        })?;
        if ys.len() != node.generator.cod.len() {
            return Err(SemanticsError::ShapeMismatch { node: Some(v), detail: "box arity differs from generator".into() });
        }
        outs[v] = ys.into_iter().map(Some).collect();
        done[v] = true;
    }
    d.outputs().iter().map(|s| take(*s, &mut inputs, &mut outs, None)).collect()
}

/// A compositional model: a diagram together with its representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub diagram: Diagram,
    pub rep: Representation,
}

impl Model {
    /// Completes the object map from the declared wire payloads, fills in
    /// boxes for structural generators, and drops boxes of generators the
    /// diagram no longer uses. Fails if an opaque generator has no box.
    pub fn new(diagram: Diagram, mut rep: Representation) -> Result<Model> {
        let sig = diagram.signature();
        for w in sig.objects.values() {
            rep.objects.entry(w.name.clone()).or_insert_with(|| WireSpec::of(w));
        }
        for g in sig.generators.values() {
            if rep.boxes.contains_key(&g.name) {
                continue;
            }
            match g.kind {
                GeneratorKind::Structural(kind) => {
                    let b = SemanticBox::structural(kind, &rep.image(&g.dom)?)?;
                    rep.boxes.insert(g.name.clone(), b);
                }
                GeneratorKind::Opaque => return Err(SemanticsError::MissingGenerator(g.name.clone())),
            }
        }
        rep.boxes.retain(|k, _| sig.generators.contains_key(k));
        rep.objects.retain(|k, _| sig.objects.contains_key(k));
        Ok(Model { diagram, rep })
    }

    pub fn signature(&self) -> Signature {
        self.diagram.signature()
    }

    pub fn evaluate(&self, x: &[Value]) -> Result<Vec<Value>> {
        evaluate(&self.rep, &self.diagram, x)
    }

    pub fn check_functorial(&self) -> Result<FunctorialityReport> {
        check_functorial(&self.rep, &self.diagram)
    }

    pub fn canonicalize(&self) -> Model {
        Model { diagram: self.diagram.canonicalize(), rep: self.rep.clone() }
    }

    pub fn dom_spec(&self) -> Result<Vec<WireSpec>> {
        self.rep.image(self.diagram.dom())
    }

    pub fn cod_spec(&self) -> Result<Vec<WireSpec>> {
        self.rep.image(&self.diagram.cod())
    }
}
