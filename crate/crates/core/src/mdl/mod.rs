//! Description lengths as exact code lengths.
//!
//! Every cost here is the length of a concrete prefix code, and
//! [`encode`]/[`decode`] implement that code, so a reported total is
//! always achieved by an actual bitstring.
//!
//! The payload is three sections written back to back:
//!
//! * wiring: node count, then per node its generator id followed by one
//!   choice per input port among the still-unconsumed sources of the right
//!   type, then one such choice per output boundary port;
//! * components: one box per generator of the diagram, by generator name;
//! * interpretation: one codeword per distinct fingerprint, in order of
//!   first occurrence among the components.

mod bits;
mod codec;
mod quant;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::interpret::{check_commutes, CommutationReport, ExplanationSignature, InterpretError, PostHocInterpretation, SyntacticInterpretation};
use crate::semantics::{Model, SemanticBox, SemanticsError};
use crate::syntax::{Diagram, SyntaxError};

pub use bits::{count_len, gamma_len, pack, unpack, BitReader, BitWriter, Bits, MAGIC};
pub use codec::{decode, decode_bits, encode, encode_bits, DecodeContext, Decoded};
pub use quant::{kind_tag, Fingerprint, Quantizer, KIND_COUNT};

use bits::Counter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdlError {
    #[error("diagram is not in canonical form")]
    NotCanonical,
    #[error("bitstring ends early (at bit {at})")]
    Truncated { at: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("container version {found}, expected {expected}")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("corrupt bitstring: {0}")]
    Corrupt(String),
    #[error("{0} trailing bits after the last section")]
    TrailingBits(usize),
    #[error("groundings do not commute on {} generators", .0.conflicts.len())]
    CommutationConflict(CommutationReport),
    #[error("model is not functorial: {0}")]
    NotFunctorial(String),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
}

pub type Result<T> = std::result::Result<T, MdlError>;

pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodingScheme {
    pub quantizer: Quantizer,
    /// One bit per matrix entry marking it nonzero; only nonzero entries
    /// then carry a value.
    pub presence_flags: bool,
    pub version: u8,
}

impl CodingScheme {
    pub fn new(q: u32) -> Self {
        CodingScheme { quantizer: Quantizer::new(q), presence_flags: true, version: FORMAT_VERSION }
    }

    pub fn q(&self) -> u32 {
        self.quantizer.q
    }
}

impl Default for CodingScheme {
    fn default() -> Self {
        CodingScheme::new(16)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleMode {
    /// Labeled elements pay their label codeword, unlabeled ones `kappa`.
    LabelCode,
    /// Labeled elements pay a flat number of bits.
    ConstantPerElement(u64),
    /// Per-fingerprint costs; elements missing from the table fall back to
    /// the label code.
    UserTable(BTreeMap<Fingerprint, u64>),
}

/// Prices the interpretation of each distinct semantic element.
///
/// Costs are never below the label symbol width, since the symbol is
/// always written; the remainder is zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpretationCostOracle {
    pub mode: OracleMode,
    pub kappa: u64,
}

impl Default for InterpretationCostOracle {
    fn default() -> Self {
        InterpretationCostOracle { mode: OracleMode::LabelCode, kappa: 32 }
    }
}

/// How one element's codeword is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ElementLayout {
    pub bits: u64,
    pub gloss: bool,
}

impl InterpretationCostOracle {
    pub fn label_code(kappa: u64) -> Self {
        InterpretationCostOracle { mode: OracleMode::LabelCode, kappa }
    }

    pub(crate) fn layout(&self, fp: &Fingerprint, label: Option<&str>, vocab: &ExplanationSignature) -> Result<ElementLayout> {
        let lc = vocab.symbol_bits();
        let label_code = |label: Option<&str>| -> Result<ElementLayout> {
            Ok(match label {
                Some(l) => ElementLayout { bits: vocab.code_length(l)?, gloss: true },
                None => ElementLayout { bits: self.kappa.max(lc), gloss: false },
            })
        };
        if let Some(l) = label {
            vocab.code_length(l)?;
        }
        match &self.mode {
            OracleMode::LabelCode => label_code(label),
            OracleMode::ConstantPerElement(c) => Ok(match label {
                Some(_) => ElementLayout { bits: (*c).max(lc), gloss: false },
                None => ElementLayout { bits: self.kappa.max(lc), gloss: false },
            }),
            OracleMode::UserTable(t) => match t.get(fp) {
                Some(bits) => Ok(ElementLayout { bits: (*bits).max(lc), gloss: false }),
                None => label_code(label),
            },
        }
    }

    /// Bits charged for one element.
    pub fn element_cost(&self, fp: &Fingerprint, label: Option<&str>, vocab: &ExplanationSignature) -> Result<u64> {
        Ok(self.layout(fp, label, vocab)?.bits)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub wiring_bits: u64,
    /// Component cost per generator of the diagram.
    pub component_bits: BTreeMap<String, u64>,
    pub rep_bits: u64,
    pub int_bits: u64,
    pub total_bits: u64,
    /// Number of distinct semantic elements.
    pub elements: usize,
}

impl CostReport {
    pub fn component_total(&self) -> u64 {
        self.component_bits.values().sum()
    }
}

/// Length of the wiring section for a canonical diagram.
pub fn wiring_cost(d: &Diagram, _scheme: &CodingScheme) -> Result<u64> {
    if !d.is_canonical() {
        return Err(MdlError::NotCanonical);
    }
    let names: Vec<String> = d.signature().generators.into_keys().collect();
    let mut c = Counter::default();
    codec::wiring_walk(d, &names, &mut c)?;
    Ok(c.0)
}

pub fn box_cost(b: &SemanticBox, scheme: &CodingScheme) -> u64 {
    let mut c = Counter::default();
    codec::box_walk(b, scheme, &mut c);
    c.0
}

fn require_functorial(m: &Model) -> Result<()> {
    let report = m.check_functorial()?;
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(MdlError::NotFunctorial(format!("{}: {}", v.generator, v.reason))),
    }
}

/// `L(D) + Σ_{f ∈ S_D} L([[f]])`, itemized.
fn rep_parts(m: &Model, scheme: &CodingScheme) -> Result<(u64, BTreeMap<String, u64>)> {
    require_functorial(m)?;
    let d = m.diagram.canonicalize();
    let wiring = wiring_cost(&d, scheme)?;
    let mut parts = BTreeMap::new();
    for name in d.signature().generators.keys() {
        parts.insert(name.clone(), box_cost(m.rep.box_semantics(name)?, scheme));
    }
    Ok((wiring, parts))
}

pub fn rep_complexity(m: &Model, scheme: &CodingScheme) -> Result<u64> {
    let (w, parts) = rep_parts(m, scheme)?;
    Ok(w + parts.values().sum::<u64>())
}

/// The distinct semantic elements `C_D` with one exemplar each, in order of
/// first occurrence over the generators sorted by name.
pub fn semantic_elements<'a>(m: &'a Model, quant: &Quantizer) -> Result<Vec<(Fingerprint, &'a SemanticBox)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for name in m.diagram.signature().generators.keys() {
        let b = m.rep.box_semantics(name)?;
        let fp = Fingerprint::of(b, quant);
        if seen.insert(fp.clone()) {
            out.push((fp, b));
        }
    }
    Ok(out)
}

fn aligned(ic: &PostHocInterpretation, scheme: &CodingScheme) -> Result<PostHocInterpretation> {
    if ic.quantizer() == scheme.quantizer {
        Ok(ic.clone())
    } else {
        Ok(ic.requantize(scheme.quantizer)?)
    }
}

/// `L(I_C restricted to C_D)` under the oracle.
pub fn int_complexity(
    m: &Model,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<u64> {
    let ic = aligned(ic, scheme)?;
    let mut total = 0;
    for (fp, _) in semantic_elements(m, &scheme.quantizer)? {
        total += oracle.element_cost(&fp, ic.label_of_fingerprint(&fp), vocab)?;
    }
    Ok(total)
}

/// Full cost breakdown. Fails if `is_` and `ic` do not commute.
pub fn total_cost(
    m: &Model,
    is_: &SyntacticInterpretation,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<CostReport> {
    let ic = aligned(ic, scheme)?;
    let report = check_commutes(is_, &ic, &m.rep, &m.signature());
    if !report.commutes() {
        return Err(MdlError::CommutationConflict(report));
    }
    let (wiring_bits, component_bits) = rep_parts(m, scheme)?;
    let rep_bits = wiring_bits + component_bits.values().sum::<u64>();
    let int_bits = int_complexity(m, &ic, vocab, scheme, oracle)?;
    Ok(CostReport {
        wiring_bits,
        component_bits,
        rep_bits,
        int_bits,
        total_bits: rep_bits + int_bits,
        elements: semantic_elements(m, &scheme.quantizer)?.len(),
    })
}
