//! Syntactic refinements, the pass library, compressive search, and the
//! parsimony checks relating representation and interpretation costs.

mod parsimony;
mod passes;
mod search;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::interpret::InterpretError;
use crate::mdl::MdlError;
use crate::semantics::{behavioural_distortion, distortion, MetricKind, MetricSpec, Model, SemanticBox, SemanticsError, WireSpec};
use crate::syntax::{Diagram, Node, Source, SyntaxError, WireType};

pub use parsimony::{
    check_comonotonic, check_parsimony, check_parsimony_grounded, comonotonic_oracle, ComonotonicReport, ParsimonyReport,
};
pub use passes::{
    pass_block_diagonalize, pass_fuse, pass_global_refit, pass_identity, pass_rewire_simplify, pass_sparsify,
    pass_sparsify_refit, pass_svd_split, unfuse, FuseProvenance,
};
pub use search::{search_compressive, Grounding, RefinementTrace, SearchConfig, TraceStep};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("pass {pass} does not apply to `{target}`: {reason}")]
    NotApplicable { pass: &'static str, target: String, reason: String },
    #[error("refinement of `{generator}` changes its boundary")]
    NotFunctorial { generator: String },
    #[error("{pass}: distortion {distortion:e} exceeds the budget {budget:e} ({scope})")]
    ContractViolated { pass: String, scope: String, distortion: f64, budget: f64 },
    #[error("region is not convex")]
    NonConvex,
    #[error("region is not connected")]
    Disconnected,
    #[error("the two models carry different semantic groundings")]
    GroundingMismatch,
    #[error("pair {0} is not compressive")]
    NotCompressive(usize),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Mdl(#[from] MdlError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
}

pub type Result<T> = std::result::Result<T, RefineError>;

/// The distortion guarantee a pass declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Contract {
    /// No approximation: zero distortion on finite wires, rounding only on
    /// real ones.
    Exact,
    /// Each rewritten box stays within the local budget.
    PerBox,
    /// Only whole-model behaviour is constrained.
    Global,
}

/// Rounding allowance for exact passes on real-valued wires.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub pass: String,
    pub target: String,
    pub params: String,
}

/// A refinement functor together with the new semantics it needs.
///
/// Wire types map to themselves. Each generator in `generator_map` is
/// replaced by its diagram; `boxes` supplies semantics for new generators
/// and may override boxes of kept ones. Whole-diagram rewrites that are not
/// generator-wise carry the result in `rewrite`.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub generator_map: BTreeMap<String, Diagram>,
    pub boxes: BTreeMap<String, SemanticBox>,
    pub rewrite: Option<Diagram>,
    pub contract: Contract,
    pub provenance: Provenance,
}

impl Refinement {
    pub fn identity(pass: &str, target: &str) -> Self {
        Refinement {
            generator_map: BTreeMap::new(),
            boxes: BTreeMap::new(),
            rewrite: None,
            contract: Contract::Exact,
            provenance: Provenance { pass: pass.into(), target: target.into(), params: "identity".into() },
        }
    }

    pub fn is_identity(&self) -> bool {
        self.generator_map.is_empty() && self.boxes.is_empty() && self.rewrite.is_none()
    }

    /// `other ∘ self`: apply `self`, then `other`. Only defined for
    /// generator-wise refinements.
    pub fn then(&self, other: &Refinement) -> Result<Refinement> {
        if self.rewrite.is_some() || other.rewrite.is_some() {
            return Err(RefineError::NotApplicable {
                pass: "compose",
                target: self.provenance.target.clone(),
                reason: "whole-diagram rewrites do not compose generator-wise".into(),
            });
        }
        let mut generator_map: BTreeMap<String, Diagram> =
            self.generator_map.iter().map(|(k, d)| Ok((k.clone(), substitute(d, &other.generator_map)?))).collect::<Result<_>>()?;
        for (k, d) in &other.generator_map {
            generator_map.entry(k.clone()).or_insert_with(|| d.clone());
        }
        let mut boxes = self.boxes.clone();
        boxes.extend(other.boxes.iter().map(|(k, b)| (k.clone(), b.clone())));
        let contract = match (self.contract, other.contract) {
            (Contract::Exact, c) | (c, Contract::Exact) => c,
            (Contract::Global, _) | (_, Contract::Global) => Contract::Global,
            _ => Contract::PerBox,
        };
        Ok(Refinement {
            generator_map,
            boxes,
            rewrite: None,
            contract,
            provenance: Provenance {
                pass: format!("{}+{}", self.provenance.pass, other.provenance.pass),
                target: self.provenance.target.clone(),
                params: format!("{}; {}", self.provenance.params, other.provenance.params),
            },
        })
    }
}

/// Replaces every node whose generator is in `map` by its diagram.
pub fn substitute(d: &Diagram, map: &BTreeMap<String, Diagram>) -> Result<Diagram> {
    let order = d.topo_order()?;
    let mut nodes: Vec<Node> = Vec::new();
    let mut outs: Vec<Vec<Source>> = vec![Vec::new(); d.nodes().len()];
    let resolve = |s: Source, outs: &Vec<Vec<Source>>| match s {
        Source::Input(i) => Source::Input(i),
        Source::Node { node, port } => outs[node][port],
    };
    for v in order {
        let node = &d.nodes()[v];
        let ins: Vec<Source> = node.inputs.iter().map(|s| resolve(*s, &outs)).collect();
        match map.get(&node.generator.name) {
            Some(r) => {
                if r.dom() != node.generator.dom.as_slice() || r.cod() != node.generator.cod {
                    return Err(RefineError::NotFunctorial { generator: node.generator.name.clone() });
                }
                let base = nodes.len();
                let local = |s: Source| match s {
                    Source::Input(i) => ins[i],
                    Source::Node { node, port } => Source::Node { node: base + node, port },
                };
                for rn in r.nodes() {
                    nodes.push(Node { generator: rn.generator.clone(), inputs: rn.inputs.iter().map(|s| local(*s)).collect() });
                }
                outs[v] = r.outputs().iter().map(|s| local(*s)).collect();
            }
            None => {
                let k = nodes.len();
                nodes.push(Node { generator: node.generator.clone(), inputs: ins });
                outs[v] = (0..node.generator.cod.len()).map(|port| Source::Node { node: k, port }).collect();
            }
        }
    }
    let outputs = d.outputs().iter().map(|s| resolve(*s, &outs)).collect();
    Ok(Diagram::new(d.dom().to_vec(), nodes, outputs)?)
}

/// Distortion budgets for checking a refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub metric: MetricSpec,
    pub eps_local: f64,
    pub eps_global: f64,
}

/// Metric used on a single box: `kl-rows` and `sup-finite` only make sense
/// on some boxes, so other boxes fall back to expected l2 over the same
/// samples.
pub fn box_metric(metric: &MetricSpec, dom: &[WireSpec], cod: &[WireSpec]) -> MetricSpec {
    let finite = dom.iter().chain(cod).all(|s| s.is_finite());
    match metric.kind {
        MetricKind::SupFinite if finite => metric.clone(),
        MetricKind::L2Expected => metric.clone(),
        _ => MetricSpec { kind: MetricKind::L2Expected, distribution: metric.distribution.clone() },
    }
}

/// A refined model with the distortions measured while checking it.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub model: Model,
    /// Per rewritten generator, `d([[f]], [[R(f)]]')`.
    pub per_box: BTreeMap<String, f64>,
    /// Whole-model distortion against the reference model.
    pub global: f64,
}

/// Applies `r` to `m` and checks its declared contract against `m`.
pub fn apply_refinement(r: &Refinement, m: &Model, budget: &Budget) -> Result<Applied> {
    apply_against(r, m, m, budget)
}

fn exact_bound(m: &Model) -> Result<f64> {
    let finite = m.dom_spec()?.iter().chain(&m.cod_spec()?).all(|s| s.is_finite());
    Ok(if finite { 0.0 } else { EXACT_TOLERANCE })
}

/// As [`apply_refinement`], measuring global distortion against `reference`.
pub fn apply_against(r: &Refinement, m: &Model, reference: &Model, budget: &Budget) -> Result<Applied> {
    let diagram = match &r.rewrite {
        Some(d) => d.clone(),
        None => substitute(&m.diagram, &r.generator_map)?,
    };
    let mut rep = m.rep.clone();
    for (k, b) in &r.boxes {
        rep.boxes.insert(k.clone(), b.clone());
    }
    for w in diagram.signature().objects.values() {
        rep.objects.entry(w.name.clone()).or_insert_with(|| WireSpec::of(w));
    }
    let full = rep.clone();
    let model = Model::new(diagram.canonicalize(), rep)?;
    let report = model.check_functorial()?;
    if let Some(v) = report.violations.first() {
        return Err(RefineError::NotFunctorial { generator: v.generator.clone() });
    }

    let mut per_box = BTreeMap::new();
    for (name, sub) in &r.generator_map {
        let Ok(old) = m.rep.box_semantics(name) else { continue };
        let local = Model::new(sub.clone(), full.clone())?;
        let metric = box_metric(&budget.metric, old.dom(), old.cod());
        per_box.insert(name.clone(), distortion(old, &local, &metric)?);
    }
    for (name, b) in &r.boxes {
        if r.generator_map.contains_key(name) {
            continue;
        }
        if let Ok(old) = m.rep.box_semantics(name) {
            let metric = box_metric(&budget.metric, old.dom(), old.cod());
            per_box.insert(name.clone(), distortion(old, b, &metric)?);
        }
    }
    let global = behavioural_distortion(reference, &model, &budget.metric)?;

    let violated = |scope: &str, d: f64, bound: f64| RefineError::ContractViolated {
        pass: r.provenance.pass.clone(),
        scope: scope.to_string(),
        distortion: d,
        budget: bound,
    };
    match r.contract {
        Contract::Exact => {
            let bound = exact_bound(m)?;
            for (name, d) in &per_box {
                if *d > EXACT_TOLERANCE {
                    return Err(violated(name, *d, EXACT_TOLERANCE));
                }
            }
            let own = if std::ptr::eq(m, reference) { global } else { behavioural_distortion(m, &model, &budget.metric)? };
            if own > bound {
                return Err(violated("global", own, bound));
            }
        }
        Contract::PerBox => {
            for (name, d) in &per_box {
                if *d > budget.eps_local {
                    return Err(violated(name, *d, budget.eps_local));
                }
            }
        }
        Contract::Global => {
            if global > budget.eps_global {
                return Err(violated("global", global, budget.eps_global));
            }
        }
    }
    Ok(Applied { model, per_box, global })
}

/// A name derived from `base` that is not in `taken`.
pub(crate) fn fresh(taken: &BTreeSet<String>, base: &str) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..).map(|k| format!("{base}#{k}")).find(|n| !taken.contains(n)).expect("unbounded")
}

/// Generator and wire names in use by a model.
pub(crate) fn taken_names(m: &Model) -> BTreeSet<String> {
    let sig = m.signature();
    sig.generators.into_keys().chain(sig.objects.into_keys()).chain(m.rep.objects.keys().cloned()).collect()
}

pub(crate) fn fresh_wire(taken: &mut BTreeSet<String>, base: &str, dim: usize) -> WireType {
    let name = fresh(taken, base);
    taken.insert(name.clone());
    WireType::vector(name, dim)
}

pub(crate) fn fresh_generator_name(taken: &mut BTreeSet<String>, base: &str) -> String {
    let name = fresh(taken, base);
    taken.insert(name.clone());
    name
}
