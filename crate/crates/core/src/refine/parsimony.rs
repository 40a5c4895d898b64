use std::collections::BTreeMap;

use super::{RefineError, Result};
use crate::interpret::{induce_syntactic, ExplanationSignature, PostHocInterpretation};
use crate::mdl::{box_cost, semantic_elements, total_cost, CodingScheme, CostReport, InterpretationCostOracle, OracleMode};
use crate::semantics::Model;

/// Both sides of the parsimony criterion for a refinement `m -> m2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsimonyReport {
    pub rep_before: u64,
    pub rep_after: u64,
    pub int_before: u64,
    pub int_after: u64,
    /// Representation saving, `rep_before - rep_after`.
    pub lhs: i64,
    /// Interpretation increase, `int_after - int_before`.
    pub rhs: i64,
    pub total_before: u64,
    pub total_after: u64,
    /// `total_after <= total_before`.
    pub verdict: bool,
    /// `lhs >= rhs`.
    pub criterion_holds: bool,
}

impl ParsimonyReport {
    fn new(before: &CostReport, after: &CostReport) -> Self {
        let lhs = before.rep_bits as i64 - after.rep_bits as i64;
        let rhs = after.int_bits as i64 - before.int_bits as i64;
        ParsimonyReport {
            rep_before: before.rep_bits,
            rep_after: after.rep_bits,
            int_before: before.int_bits,
            int_after: after.int_bits,
            lhs,
            rhs,
            total_before: before.total_bits,
            total_after: after.total_bits,
            verdict: after.total_bits <= before.total_bits,
            criterion_holds: lhs >= rhs,
        }
    }

    /// Whether the verdict and the criterion agree.
    pub fn iff_holds(&self) -> bool {
        self.verdict == self.criterion_holds
    }
}

fn grounded_cost(
    m: &Model,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<CostReport> {
    let is_ = induce_syntactic(ic, &m.rep, &m.signature());
    Ok(total_cost(m, &is_, ic, vocab, scheme, oracle)?)
}

/// Compares `m` and its refinement `m2` under one shared grounding `ic`.
pub fn check_parsimony(
    m: &Model,
    m2: &Model,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<ParsimonyReport> {
    let before = grounded_cost(m, ic, vocab, scheme, oracle)?;
    let after = grounded_cost(m2, ic, vocab, scheme, oracle)?;
    let report = ParsimonyReport::new(&before, &after);
    debug_assert!(report.iff_holds());
    Ok(report)
}

/// As [`check_parsimony`] when each model carries its own grounding; the two
/// must agree.
pub fn check_parsimony_grounded(
    m: &Model,
    ic: &PostHocInterpretation,
    m2: &Model,
    ic2: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<ParsimonyReport> {
    if ic != ic2 {
        return Err(RefineError::GroundingMismatch);
    }
    check_parsimony(m, m2, ic, vocab, scheme, oracle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComonotonicReport {
    pub pairs: Vec<ParsimonyReport>,
    /// Pairs whose representation cost did not grow but whose
    /// interpretation cost did.
    pub counterexamples: Vec<usize>,
    pub totals_non_increasing: bool,
}

impl ComonotonicReport {
    pub fn is_comonotonic(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Checks that interpretation cost moves with representation cost over a
/// corpus of compressive refinement pairs.
pub fn check_comonotonic(
    corpus: &[(Model, Model)],
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<ComonotonicReport> {
    let mut pairs = Vec::with_capacity(corpus.len());
    let mut counterexamples = Vec::new();
    for (i, (m, m2)) in corpus.iter().enumerate() {
        let r = check_parsimony(m, m2, ic, vocab, scheme, oracle)?;
        if r.rep_after > r.rep_before {
            return Err(RefineError::NotCompressive(i));
        }
        if r.int_after > r.int_before {
            counterexamples.push(i);
        }
        pairs.push(r);
    }
    let totals_non_increasing = pairs.iter().all(|r| r.total_after <= r.total_before);
    Ok(ComonotonicReport { pairs, counterexamples, totals_non_increasing })
}

/// An oracle that prices each semantic element at its own component cost,
/// so interpretation cost tracks the parameter part of representation cost.
pub fn comonotonic_oracle<'a>(models: impl IntoIterator<Item = &'a Model>, scheme: &CodingScheme) -> Result<InterpretationCostOracle> {
    let mut table = BTreeMap::new();
    for m in models {
        for (fp, b) in semantic_elements(m, &scheme.quantizer)? {
            table.insert(fp, box_cost(b, scheme));
        }
    }
    Ok(InterpretationCostOracle { mode: OracleMode::UserTable(table), ..InterpretationCostOracle::default() })
}
