//! Groundings of a model in a vocabulary of explanations: the syntactic map
//! `I_S`, the post-hoc map `I_C` on semantic boxes, and the reconstruction
//! map from labels back to boxes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::mdl::{Fingerprint, Quantizer};
use crate::semantics::{distortion, MetricSpec, Representation, SemanticBox, SemanticsError};
use crate::syntax::Signature;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpretError {
    #[error("label `{0}` declared twice")]
    DuplicateLabel(String),
    #[error("label `{0}` is not in the explanation signature")]
    UnknownLabel(String),
    #[error("boxes with fingerprint {fingerprint} carry two labels: `{first}` and `{second}`")]
    FingerprintConflict { fingerprint: String, first: String, second: String },
    #[error("no reconstruction for label `{0}`")]
    MissingReconstruction(String),
    #[error("reconstruction of `{label}` does not fit the arity of generator `{generator}`")]
    ArityMismatch { generator: String, label: String },
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

pub type Result<T> = std::result::Result<T, InterpretError>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Label {
    pub name: String,
    pub gloss: Option<String>,
}

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Label { name: name.into(), gloss: None }
    }

    pub fn glossed(name: impl Into<String>, gloss: impl Into<String>) -> Self {
        Label { name: name.into(), gloss: Some(gloss.into()) }
    }

    pub fn gloss_bits(&self) -> u64 {
        8 * self.gloss.as_ref().map_or(0, |g| g.len() as u64)
    }
}

/// The vocabulary `H` with its prefix code.
///
/// Labels get fixed-width codewords over `|H| + 1` symbols; the extra
/// symbol marks an unlabeled element. A glossed label's codeword is
/// followed by the gloss bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExplanationSignature {
    labels: Vec<Label>,
}

impl ExplanationSignature {
    pub fn new(mut labels: Vec<Label>) -> Result<Self> {
        labels.sort();
        for w in labels.windows(2) {
            if w[0].name == w[1].name {
                return Err(InterpretError::DuplicateLabel(w[0].name.clone()));
            }
        }
        Ok(ExplanationSignature { labels })
    }

    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(names.into_iter().map(|n| Label::new(n)).collect())
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.name.as_str().cmp(name)).ok()
    }

    pub fn get(&self, name: &str) -> Option<&Label> {
        self.index_of(name).map(|i| &self.labels[i])
    }

    /// Width of the label symbol, escape included.
    pub fn symbol_bits(&self) -> u64 {
        ceil_log2(self.labels.len() as u64 + 1)
    }

    pub fn escape_symbol(&self) -> u64 {
        self.labels.len() as u64
    }

    pub fn code_length(&self, name: &str) -> Result<u64> {
        let l = self.get(name).ok_or_else(|| InterpretError::UnknownLabel(name.to_string()))?;
        Ok(self.symbol_bits() + l.gloss_bits())
    }

    /// `Σ 2^-len` over every codeword, escape included.
    pub fn kraft_sum(&self) -> f64 {
        let s = self.symbol_bits() as i32;
        let labels: f64 = self.labels.iter().map(|l| 2f64.powi(-(s + l.gloss_bits() as i32))).sum();
        labels + 2f64.powi(-s)
    }
}

pub(crate) fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - u64::from((n - 1).leading_zeros())
    }
}

/// Partial map from generator names to labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntacticInterpretation {
    pub map: BTreeMap<String, String>,
}

impl SyntacticInterpretation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&self, generator: &str) -> Option<&str> {
        self.map.get(generator).map(String::as_str)
    }

    pub fn insert(&mut self, generator: impl Into<String>, label: impl Into<String>) {
        self.map.insert(generator.into(), label.into());
    }
}

/// Partial map from semantic boxes to labels, keyed by fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct PostHocInterpretation {
    quantizer: Quantizer,
    entries: BTreeMap<Fingerprint, (SemanticBox, String)>,
}

impl PostHocInterpretation {
    pub fn new(quantizer: Quantizer) -> Self {
        PostHocInterpretation { quantizer, entries: BTreeMap::new() }
    }

    pub fn quantizer(&self) -> Quantizer {
        self.quantizer
    }

    /// Labels `b`. Re-labelling a fingerprint with a different label fails.
    pub fn insert(&mut self, b: SemanticBox, label: impl Into<String>) -> Result<()> {
        let label = label.into();
        let fp = Fingerprint::of(&b, &self.quantizer);
        match self.entries.get(&fp) {
            Some((_, existing)) if *existing != label => Err(InterpretError::FingerprintConflict {
                fingerprint: fp.to_string(),
                first: existing.clone(),
                second: label,
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert(fp, (b, label));
                Ok(())
            }
        }
    }

    pub fn label_of(&self, b: &SemanticBox) -> Option<&str> {
        self.label_of_fingerprint(&Fingerprint::of(b, &self.quantizer))
    }

    pub fn label_of_fingerprint(&self, fp: &Fingerprint) -> Option<&str> {
        self.entries.get(fp).map(|(_, l)| l.as_str())
    }

    /// `(exemplar box, label)` pairs in fingerprint order.
    pub fn entries(&self) -> impl Iterator<Item = (&Fingerprint, &SemanticBox, &str)> {
        self.entries.iter().map(|(fp, (b, l))| (fp, b, l.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Re-keys every exemplar at another resolution. Fails if two
    /// differently labeled boxes collapse to one fingerprint.
    pub fn requantize(&self, quantizer: Quantizer) -> Result<Self> {
        let mut out = PostHocInterpretation::new(quantizer);
        for (b, l) in self.entries.values() {
            out.insert(b.clone(), l.clone())?;
        }
        Ok(out)
    }

    /// Keeps only the entries whose fingerprint satisfies `keep`.
    pub fn restrict(&self, keep: impl Fn(&Fingerprint) -> bool) -> Self {
        PostHocInterpretation {
            quantizer: self.quantizer,
            entries: self.entries.iter().filter(|(fp, _)| keep(fp)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }
}

/// Partial map from labels back to canonical boxes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub map: BTreeMap<String, SemanticBox>,
}

impl Reconstruction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, b: SemanticBox) {
        self.map.insert(label.into(), b);
    }

    pub fn get(&self, label: &str) -> Option<&SemanticBox> {
        self.map.get(label)
    }
}

/// `I_S = I_C ∘ [[·]]` on the generators of `sig`.
pub fn induce_syntactic(ic: &PostHocInterpretation, rep: &Representation, sig: &Signature) -> SyntacticInterpretation {
    let mut out = SyntacticInterpretation::new();
    for name in sig.generators.keys() {
        if let Some(l) = rep.boxes.get(name).and_then(|b| ic.label_of(b)) {
            out.insert(name.clone(), l);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommutationConflict {
    pub generator: String,
    pub syntactic: Option<String>,
    pub post_hoc: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommutationReport {
    pub conflicts: Vec<CommutationConflict>,
}

impl CommutationReport {
    pub fn commutes(&self) -> bool {
        self.conflicts.is_empty()
    }
}

pub fn check_commutes(
    is_: &SyntacticInterpretation,
    ic: &PostHocInterpretation,
    rep: &Representation,
    sig: &Signature,
) -> CommutationReport {
    let mut report = CommutationReport::default();
    for name in sig.generators.keys() {
        let s = is_.label(name);
        let c = rep.boxes.get(name).and_then(|b| ic.label_of(b));
        if s != c {
            report.conflicts.push(CommutationConflict {
                generator: name.clone(),
                syntactic: s.map(str::to_string),
                post_hoc: c.map(str::to_string),
            });
        }
    }
    report
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaithfulnessReport {
    /// `d([[f]], I*_C(I_S(f)))` for each labeled generator.
    pub distortions: BTreeMap<String, f64>,
    pub max_distortion: f64,
    pub violations: Vec<String>,
    pub uncovered: Vec<String>,
    pub coverage: f64,
}

pub fn check_compositional_faithfulness(
    is_: &SyntacticInterpretation,
    recon: &Reconstruction,
    rep: &Representation,
    sig: &Signature,
    metric: &MetricSpec,
    eps: f64,
) -> Result<FaithfulnessReport> {
    let mut report = FaithfulnessReport { coverage: completeness(is_, sig), ..Default::default() };
    for name in sig.generators.keys() {
        let Some(label) = is_.label(name) else {
            report.uncovered.push(name.clone());
            continue;
        };
        let b = rep.box_semantics(name)?;
        let r = recon.get(label).ok_or_else(|| InterpretError::MissingReconstruction(label.to_string()))?;
        if r.dom() != b.dom() || r.cod() != b.cod() {
            return Err(InterpretError::ArityMismatch { generator: name.clone(), label: label.to_string() });
        }
        let d = distortion(b, r, metric)?;
        report.max_distortion = report.max_distortion.max(d);
        if d > eps {
            report.violations.push(name.clone());
        }
        report.distortions.insert(name.clone(), d);
    }
    Ok(report)
}

/// Fraction of the generators of `sig` that carry a label.
pub fn completeness(is_: &SyntacticInterpretation, sig: &Signature) -> f64 {
    if sig.generators.is_empty() {
        return 1.0;
    }
    let labeled = sig.generators.keys().filter(|g| is_.map.contains_key(*g)).count();
    labeled as f64 / sig.generators.len() as f64
}
