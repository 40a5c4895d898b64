use std::fmt;

use rayon::prelude::*;

use super::{
    apply_against, pass_block_diagonalize, pass_fuse, pass_rewire_simplify, pass_sparsify, pass_sparsify_refit, pass_svd_split,
    Applied, Budget, Refinement, Result,
};
use crate::interpret::{induce_syntactic, ExplanationSignature, PostHocInterpretation};
use crate::mdl::{rep_complexity, total_cost, CodingScheme, CostReport, InterpretationCostOracle};
use crate::semantics::{MetricKind, MetricSpec, Model, SampleDistribution};
use crate::syntax::{GeneratorKind, Source};

/// Budgets, thresholds and the sampling setup for [`search_compressive`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub eps_global: f64,
    pub eps_local: f64,
    /// Sparsify threshold.
    pub tau: f64,
    /// Block threshold.
    pub tau_b: f64,
    pub max_iterations: usize,
    pub metric: MetricKind,
    pub samples: usize,
    pub seed: u64,
    pub scheme: CodingScheme,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            eps_global: 1e-6,
            eps_local: 1e-6,
            tau: 1e-3,
            tau_b: 1e-9,
            max_iterations: 32,
            metric: MetricKind::L2Expected,
            samples: 128,
            seed: 0,
            scheme: CodingScheme::default(),
        }
    }
}

impl SearchConfig {
    pub fn metric_spec(&self) -> MetricSpec {
        MetricSpec { kind: self.metric, distribution: SampleDistribution::seeded(self.seed, self.samples) }
    }

    pub fn budget(&self) -> Budget {
        Budget { metric: self.metric_spec(), eps_local: self.eps_local, eps_global: self.eps_global }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.eps_global >= 0.0 && self.eps_local >= 0.0 && self.tau >= 0.0 && self.tau_b >= 0.0) {
            return Err("budgets and thresholds must be non-negative".into());
        }
        if self.max_iterations == 0 {
            return Err("max-iterations must be at least 1".into());
        }
        Ok(())
    }
}

/// Labels used to price the interpretation side of the final report.
#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub ic: PostHocInterpretation,
    pub vocab: ExplanationSignature,
    pub oracle: InterpretationCostOracle,
}

impl Grounding {
    /// No labels; every element pays the oracle's unlabeled cost.
    pub fn unlabeled(scheme: &CodingScheme) -> Self {
        Grounding {
            ic: PostHocInterpretation::new(scheme.quantizer),
            vocab: ExplanationSignature::default(),
            oracle: InterpretationCostOracle::default(),
        }
    }

    pub fn cost(&self, m: &Model, scheme: &CodingScheme) -> Result<CostReport> {
        let is_ = induce_syntactic(&self.ic, &m.rep, &m.signature());
        Ok(total_cost(m, &is_, &self.ic, &self.vocab, scheme, &self.oracle)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub pass: String,
    pub target: String,
    /// Change in representation bits; negative for accepted steps.
    pub delta_rep: i64,
    /// Global distortion against the input model after this step.
    pub distortion: f64,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pass={} target={} delta_rep={} distortion={:.6e}", self.pass, self.target, self.delta_rep, self.distortion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace {
    pub steps: Vec<TraceStep>,
    pub initial_report: CostReport,
    pub final_report: CostReport,
}

impl RefinementTrace {
    /// One line per accepted step.
    pub fn to_lines(&self) -> String {
        self.steps.iter().map(|s| format!("{s}\n")).collect()
    }
}

#[derive(Debug, Clone)]
enum Candidate {
    SvdSplit(String),
    BlockDiagonalize(String),
    Sparsify(String),
    SparsifyRefit(String),
    Fuse(usize, usize),
    RewireSimplify,
}

impl Candidate {
    fn pass(&self) -> &'static str {
        match self {
            Candidate::SvdSplit(_) => "svd-split",
            Candidate::BlockDiagonalize(_) => "block-diagonalize",
            Candidate::Sparsify(_) => "sparsify",
            Candidate::SparsifyRefit(_) => "sparsify-refit",
            Candidate::Fuse(..) => "fuse",
            Candidate::RewireSimplify => "rewire-simplify",
        }
    }

    fn build(&self, current: &Model, original: &Model, config: &SearchConfig) -> Result<Refinement> {
        let metric = config.metric_spec();
        match self {
            Candidate::SvdSplit(g) => pass_svd_split(current, g, config.eps_local, &metric),
            Candidate::BlockDiagonalize(g) => pass_block_diagonalize(current, g, config.tau_b),
            Candidate::Sparsify(g) => pass_sparsify(current, g, config.tau),
            Candidate::SparsifyRefit(g) => pass_sparsify_refit(current, g, config.tau, original, &metric.distribution),
            Candidate::Fuse(u, v) => pass_fuse(current, &[*u, *v]).map(|(r, _)| r),
            Candidate::RewireSimplify => pass_rewire_simplify(current),
        }
    }
}

/// Candidates in enumeration order, each with the node index used to break
/// ties.
fn candidates(m: &Model) -> Vec<(usize, Candidate)> {
    let d = &m.diagram;
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (v, n) in d.nodes().iter().enumerate() {
        if n.generator.kind == GeneratorKind::Opaque && seen.insert(n.generator.name.clone()) {
            let g = &n.generator.name;
            out.push((v, Candidate::SvdSplit(g.clone())));
            out.push((v, Candidate::BlockDiagonalize(g.clone())));
            out.push((v, Candidate::Sparsify(g.clone())));
            out.push((v, Candidate::SparsifyRefit(g.clone())));
        }
    }
    for (v, n) in d.nodes().iter().enumerate() {
        if n.generator.kind != GeneratorKind::Opaque {
            continue;
        }
        let mut preds: Vec<usize> = n
            .inputs
            .iter()
            .filter_map(|s| match s {
                Source::Node { node, .. } if d.nodes()[*node].generator.kind == GeneratorKind::Opaque => Some(*node),
                _ => None,
            })
            .collect();
        preds.sort_unstable();
        preds.dedup();
        out.extend(preds.into_iter().map(|u| (u, Candidate::Fuse(u, v))));
    }
    out.push((0, Candidate::RewireSimplify));
    out
}

struct Scored {
    delta: i64,
    node: usize,
    pass: &'static str,
    target: String,
    applied: Applied,
}

/// Greedy compression under a hard distortion budget.
///
/// Every step scores all candidates, keeps those whose contract holds and
/// whose global distortion against the input stays within `eps_global`, and
/// accepts the largest reduction in representation bits, breaking ties by
/// node index and then pass name. Stops when nothing reduces the cost or
/// after `max_iterations` steps.
pub fn search_compressive(m: &Model, config: &SearchConfig, grounding: Option<&Grounding>) -> Result<(Model, RefinementTrace)> {
    let scheme = config.scheme;
    let budget = config.budget();
    let original = m.canonicalize();
    let mut current = original.clone();
    let mut rep = rep_complexity(&current, &scheme)?;
    let mut steps = Vec::new();

    for _ in 0..config.max_iterations {
        let cands = candidates(&current);
        let scored: Vec<Option<Scored>> = cands
            .par_iter()
            .map(|(node, c)| {
                let r = c.build(&current, &original, config).ok()?;
                if r.is_identity() {
                    return None;
                }
                let applied = apply_against(&r, &current, &original, &budget).ok()?;
                if !(applied.global <= config.eps_global) {
                    return None;
                }
                let after = rep_complexity(&applied.model, &scheme).ok()?;
                Some(Scored {
                    delta: after as i64 - rep as i64,
                    node: *node,
                    pass: c.pass(),
                    target: r.provenance.target.clone(),
                    applied,
                })
            })
            .collect();
        let best = scored
            .into_iter()
            .flatten()
            .filter(|s| s.delta < 0)
            .min_by(|a, b| (a.delta, a.node, a.pass, &a.target).cmp(&(b.delta, b.node, b.pass, &b.target)));
        let Some(best) = best else { break };
        rep = (rep as i64 + best.delta) as u64;
        steps.push(TraceStep {
            pass: best.pass.to_string(),
            target: best.target,
            delta_rep: best.delta,
            distortion: best.applied.global,
        });
        current = best.applied.model;
    }

    let fallback = Grounding::unlabeled(&scheme);
    let g = grounding.unwrap_or(&fallback);
    let initial_report = g.cost(&original, &scheme)?;
    let final_report = g.cost(&current, &scheme)?;
    Ok((current, RefinementTrace { steps, initial_report, final_report }))
}
