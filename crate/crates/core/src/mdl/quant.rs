use std::fmt;

use sha2::{Digest, Sha256};

use crate::semantics::{BoxOp, PointwiseKind, SemanticBox, WireSpec};
use crate::syntax::StructuralKind;

/// Fixed-point quantization of real parameters.
///
/// A `q`-bit level is a sign plus `q - 1` magnitude bits, of which
/// `int_bits` sit above the binary point, so the step is
/// `2^-(q - 1 - int_bits)` and magnitudes saturate near `2^int_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quantizer {
    pub q: u32,
    pub int_bits: u32,
}

impl Quantizer {
    pub const DEFAULT_INT_BITS: u32 = 5;

    pub fn new(q: u32) -> Self {
        assert!((2..=48).contains(&q), "quantization width must lie in 2..=48");
        Quantizer { q, int_bits: Self::DEFAULT_INT_BITS }
    }

    pub fn step(&self) -> f64 {
        2f64.powi(self.int_bits as i32 + 1 - self.q as i32)
    }

    pub fn max_level(&self) -> i64 {
        (1i64 << (self.q - 1)) - 1
    }

    pub fn level(&self, w: f64) -> i64 {
        let m = self.max_level();
        if w.is_nan() {
            return 0;
        }
        ((w / self.step()).round().clamp(-(m as f64), m as f64)) as i64
    }

    pub fn value(&self, level: i64) -> f64 {
        level as f64 * self.step()
    }

    pub fn quantize(&self, w: f64) -> f64 {
        self.value(self.level(w))
    }

    pub fn is_zero(&self, w: f64) -> bool {
        self.level(w) == 0
    }
}

impl Default for Quantizer {
    fn default() -> Self {
        Quantizer::new(16)
    }
}

/// Canonical bytes of a box at a quantization resolution. Boxes with equal
/// fingerprints count as the same semantic element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(Vec<u8>);

impl Fingerprint {
    pub fn of(b: &SemanticBox, quant: &Quantizer) -> Self {
        let mut out = Vec::new();
        let specs = |out: &mut Vec<u8>, s: &[WireSpec]| {
            out.extend((s.len() as u64).to_be_bytes());
            for w in s {
                let (tag, n) = match w {
                    WireSpec::Dim(n) => (0u8, *n),
                    WireSpec::Finite(n) => (1u8, *n),
                };
                out.push(tag);
                out.extend((n as u64).to_be_bytes());
            }
        };
        let levels = |out: &mut Vec<u8>, xs: &mut dyn Iterator<Item = f64>| {
            for x in xs {
                out.extend(quant.level(x).to_be_bytes());
            }
        };
        let (tag, _) = kind_tag(b.op());
        out.push(tag);
        specs(&mut out, b.dom());
        specs(&mut out, b.cod());
        match b.op() {
            BoxOp::Linear(m) => {
                out.extend((m.nrows() as u64).to_be_bytes());
                // row-major
                levels(&mut out, &mut (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])));
            }
            BoxOp::Bias(v) => levels(&mut out, &mut v.iter().copied()),
            BoxOp::FiniteTable(t) | BoxOp::Permutation(t) => {
                for v in t {
                    out.extend((*v as u64).to_be_bytes());
                }
            }
            BoxOp::Pointwise(_) | BoxOp::Structural(_) => {}
        }
        Fingerprint(out)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Short hex digest for display.
    pub fn digest(&self) -> String {
        Sha256::digest(&self.0).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.digest())
    }
}

/// Position of a box's kind in the flat kind alphabet, plus its name.
pub fn kind_tag(op: &BoxOp) -> (u8, &'static str) {
    match op {
        BoxOp::Linear(_) => (0, "linear"),
        BoxOp::Bias(_) => (1, "bias"),
        BoxOp::Pointwise(PointwiseKind::Relu) => (2, "relu"),
        BoxOp::Pointwise(PointwiseKind::Sigmoid) => (3, "sigmoid"),
        BoxOp::Pointwise(PointwiseKind::ArgmaxOneHot) => (4, "argmax"),
        BoxOp::FiniteTable(_) => (5, "table"),
        BoxOp::Permutation(_) => (6, "perm"),
        BoxOp::Structural(StructuralKind::Copy) => (7, "copy"),
        BoxOp::Structural(StructuralKind::Discard) => (8, "discard"),
        BoxOp::Structural(StructuralKind::Swap) => (9, "swap"),
        BoxOp::Structural(StructuralKind::Identity) => (10, "identity"),
    }
}

pub const KIND_COUNT: u64 = 11;
