use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::bits::{ceil_log2, pack, unpack, BitReader, BitWriter, Bits, Sink};
use super::{
    aligned, require_functorial, semantic_elements, CodingScheme, InterpretationCostOracle, MdlError, Result,
};
use crate::interpret::{check_commutes, induce_syntactic, ExplanationSignature, PostHocInterpretation, SyntacticInterpretation};
use crate::semantics::{BoxOp, Model, PointwiseKind, Representation, SemanticBox, WireSpec};
use crate::syntax::{Diagram, Generator, Node, Signature, Source, StructuralKind, WireType};

const MAX_NODES: u64 = 1 << 20;

fn put_level<S: Sink>(s: &mut S, level: i64, q: u32) {
    s.put(u64::from(level < 0), 1);
    s.put(level.unsigned_abs(), u64::from(q - 1));
}

fn put_entries<S: Sink>(s: &mut S, xs: &[f64], scheme: &CodingScheme) {
    let qz = &scheme.quantizer;
    if scheme.presence_flags {
        for x in xs {
            s.put(u64::from(!qz.is_zero(*x)), 1);
        }
        for x in xs.iter().filter(|x| !qz.is_zero(**x)) {
            put_level(s, qz.level(*x), qz.q);
        }
    } else {
        for x in xs {
            put_level(s, qz.level(*x), qz.q);
        }
    }
}

fn spec_total(specs: &[WireSpec]) -> u64 {
    specs.iter().map(|s| s.size() as u64).sum()
}

fn spec_product(specs: &[WireSpec]) -> u64 {
    specs.iter().map(|s| s.size() as u64).product()
}

/// Emits the codeword of one box: kind, shape, payload.
pub(crate) fn box_walk<S: Sink>(b: &SemanticBox, scheme: &CodingScheme, s: &mut S) {
    let (tag, _) = super::kind_tag(b.op());
    s.put(u64::from(tag), ceil_log2(super::KIND_COUNT));
    match b.op() {
        BoxOp::Linear(m) => {
            s.count(m.nrows() as u64);
            s.count(m.ncols() as u64);
            let row_major: Vec<f64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
            put_entries(s, &row_major, scheme);
        }
        BoxOp::Bias(v) => {
            s.count(v.len() as u64);
            put_entries(s, v, scheme);
        }
        BoxOp::Pointwise(_) => s.count(spec_total(b.dom())),
        BoxOp::FiniteTable(t) => {
            let k = spec_product(b.cod());
            s.count(spec_product(b.dom()));
            s.count(k);
            for v in t {
                s.put(*v as u64, ceil_log2(k));
            }
        }
        BoxOp::Permutation(p) => {
            let n = p.len();
            s.count(n as u64);
            let mut rest: Vec<usize> = (0..n).collect();
            for (i, v) in p.iter().enumerate() {
                let k = rest.iter().position(|r| r == v).expect("permutation is a bijection");
                rest.remove(k);
                s.put(k as u64, ceil_log2((n - i) as u64));
            }
        }
        BoxOp::Structural(_) => s.count(spec_total(b.dom())),
    }
}

/// Emits the wiring section. `names` is the sorted generator alphabet.
pub(crate) fn wiring_walk<S: Sink>(d: &Diagram, names: &[String], s: &mut S) -> Result<()> {
    let id_width = ceil_log2(names.len() as u64);
    s.count(d.nodes().len() as u64);
    let mut avail: Vec<(Source, WireType, bool)> =
        d.dom().iter().enumerate().map(|(i, w)| (Source::Input(i), w.clone(), false)).collect();
    let choose = |avail: &mut Vec<(Source, WireType, bool)>, src: Source, ty: &WireType, s: &mut S| -> Result<()> {
        let eligible: Vec<usize> = (0..avail.len()).filter(|&i| !avail[i].2 && avail[i].1 == *ty).collect();
        let k = eligible
            .iter()
            .position(|&i| avail[i].0 == src)
            .ok_or_else(|| MdlError::Corrupt(format!("source {src} is not available")))?;
        s.put(k as u64, ceil_log2(eligible.len() as u64));
        avail[eligible[k]].2 = true;
        Ok(())
    };
    for (v, node) in d.nodes().iter().enumerate() {
        let id = names
            .binary_search(&node.generator.name)
            .map_err(|_| MdlError::Corrupt(format!("generator {} outside the alphabet", node.generator.name)))?;
        s.put(id as u64, id_width);
        for (src, ty) in node.inputs.iter().zip(&node.generator.dom) {
            choose(&mut avail, *src, ty, s)?;
        }
        for (port, ty) in node.generator.cod.iter().enumerate() {
            avail.push((Source::Node { node: v, port }, ty.clone(), false));
        }
    }
    for src in d.outputs() {
        choose(&mut avail, *src, d.source_type(*src), s)?;
    }
    Ok(())
}

fn int_walk<S: Sink>(
    m: &Model,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
    s: &mut S,
) -> Result<()> {
    let lc = vocab.symbol_bits();
    for (fp, _) in semantic_elements(m, &scheme.quantizer)? {
        let label = ic.label_of_fingerprint(&fp);
        let layout = oracle.layout(&fp, label, vocab)?;
        let mut used = lc;
        match label {
            Some(l) => {
                s.put(vocab.index_of(l).expect("checked by layout") as u64, lc);
                if layout.gloss {
                    if let Some(g) = &vocab.get(l).expect("checked by layout").gloss {
                        for byte in g.bytes() {
                            s.put(u64::from(byte), 8);
                        }
                        used += 8 * g.len() as u64;
                    }
                }
            }
            None => s.put(vocab.escape_symbol(), lc),
        }
        let mut pad = layout.bits - used;
        while pad > 0 {
            let w = pad.min(64);
            s.put(0, w);
            pad -= w;
        }
    }
    Ok(())
}

/// Side information shared by encoder and decoder: the alphabet of
/// generators and wire types, the boundary, the label vocabulary and the
/// code parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeContext {
    pub signature: Signature,
    pub objects: BTreeMap<String, WireSpec>,
    pub inputs: Vec<WireType>,
    pub outputs: Vec<WireType>,
    pub vocabulary: ExplanationSignature,
    pub scheme: CodingScheme,
    pub oracle: InterpretationCostOracle,
}

impl DecodeContext {
    pub fn for_model(m: &Model, vocabulary: &ExplanationSignature, scheme: &CodingScheme, oracle: &InterpretationCostOracle) -> Self {
        DecodeContext {
            signature: m.signature(),
            objects: m.rep.objects.clone(),
            inputs: m.diagram.dom().to_vec(),
            outputs: m.diagram.cod(),
            vocabulary: vocabulary.clone(),
            scheme: *scheme,
            oracle: oracle.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub model: Model,
    pub is_: SyntacticInterpretation,
    /// The post-hoc interpretation restricted to the model's elements.
    pub ic: PostHocInterpretation,
}

/// The payload bits; their length equals the reported total.
pub fn encode_bits(
    m: &Model,
    is_: &SyntacticInterpretation,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<Bits> {
    if !m.diagram.is_canonical() {
        return Err(MdlError::NotCanonical);
    }
    require_functorial(m)?;
    let ic = aligned(ic, scheme)?;
    let report = check_commutes(is_, &ic, &m.rep, &m.signature());
    if !report.commutes() {
        return Err(MdlError::CommutationConflict(report));
    }
    let sig = m.signature();
    let names: Vec<String> = sig.generators.keys().cloned().collect();
    let mut w = BitWriter::new();
    wiring_walk(&m.diagram, &names, &mut w)?;
    for name in &names {
        box_walk(m.rep.box_semantics(name)?, scheme, &mut w);
    }
    int_walk(m, &ic, vocab, scheme, oracle, &mut w)?;
    Ok(w.into_bits())
}

/// [`encode_bits`] wrapped in the byte container.
pub fn encode(
    m: &Model,
    is_: &SyntacticInterpretation,
    ic: &PostHocInterpretation,
    vocab: &ExplanationSignature,
    scheme: &CodingScheme,
    oracle: &InterpretationCostOracle,
) -> Result<Vec<u8>> {
    Ok(pack(&encode_bits(m, is_, ic, vocab, scheme, oracle)?, scheme.version))
}

pub fn decode(bytes: &[u8], ctx: &DecodeContext) -> Result<Decoded> {
    let bits = unpack(bytes, ctx.scheme.version)?;
    decode_bits(&bits, ctx)
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(MdlError::Corrupt(msg.into()))
}

fn read_wiring(r: &mut BitReader<'_>, ctx: &DecodeContext) -> Result<Diagram> {
    let gens: Vec<&Generator> = ctx.signature.generators.values().collect();
    let id_width = ceil_log2(gens.len() as u64);
    let n = r.read_count()?;
    if n > MAX_NODES {
        return corrupt(format!("node count {n} is implausible"));
    }
    let mut avail: Vec<(Source, WireType, bool)> =
        ctx.inputs.iter().enumerate().map(|(i, w)| (Source::Input(i), w.clone(), false)).collect();
    let choose = |avail: &mut Vec<(Source, WireType, bool)>, ty: &WireType, r: &mut BitReader<'_>| -> Result<Source> {
        let eligible: Vec<usize> = (0..avail.len()).filter(|&i| !avail[i].2 && avail[i].1 == *ty).collect();
        if eligible.is_empty() {
            return corrupt(format!("no available source of type {ty}"));
        }
        let k = r.read(ceil_log2(eligible.len() as u64))? as usize;
        if k >= eligible.len() {
            return corrupt("source index out of range");
        }
        avail[eligible[k]].2 = true;
        Ok(avail[eligible[k]].0)
    };
    let mut nodes = Vec::with_capacity(n as usize);
    for v in 0..n as usize {
        let id = r.read(id_width)? as usize;
        let Some(g) = gens.get(id) else {
            return corrupt(format!("generator id {id} out of range"));
        };
        let inputs = g.dom.iter().map(|ty| choose(&mut avail, ty, r)).collect::<Result<Vec<_>>>()?;
        for (port, ty) in g.cod.iter().enumerate() {
            avail.push((Source::Node { node: v, port }, ty.clone(), false));
        }
        nodes.push(Node { generator: (*g).clone(), inputs });
    }
    let outputs = ctx.outputs.iter().map(|ty| choose(&mut avail, ty, r)).collect::<Result<Vec<_>>>()?;
    Diagram::new(ctx.inputs.clone(), nodes, outputs).map_err(|e| MdlError::Corrupt(e.to_string()))
}

fn read_level(r: &mut BitReader<'_>, scheme: &CodingScheme) -> Result<i64> {
    let neg = r.read(1)? == 1;
    let mag = r.read(u64::from(scheme.q() - 1))? as i64;
    if neg && mag == 0 {
        return corrupt("negative zero");
    }
    Ok(if neg { -mag } else { mag })
}

fn read_entries(r: &mut BitReader<'_>, n: usize, scheme: &CodingScheme) -> Result<Vec<f64>> {
    let qz = &scheme.quantizer;
    if scheme.presence_flags {
        let flags = (0..n).map(|_| r.read(1).map(|b| b == 1)).collect::<Result<Vec<_>>>()?;
        flags
            .into_iter()
            .map(|f| {
                if !f {
                    return Ok(0.0);
                }
                let level = read_level(r, scheme)?;
                if level == 0 {
                    return corrupt("flagged entry is zero");
                }
                Ok(qz.value(level))
            })
            .collect()
    } else {
        (0..n).map(|_| read_level(r, scheme).map(|l| qz.value(l))).collect()
    }
}

fn expect_count(r: &mut BitReader<'_>, want: u64, what: &str) -> Result<()> {
    let got = r.read_count()?;
    if got != want {
        return corrupt(format!("{what}: shape field {got}, expected {want}"));
    }
    Ok(())
}

fn read_box(r: &mut BitReader<'_>, g: &Generator, ctx: &DecodeContext) -> Result<SemanticBox> {
    let spec = |ws: &[WireType]| -> Result<Vec<WireSpec>> {
        ws.iter()
            .map(|w| ctx.objects.get(&w.name).copied().ok_or_else(|| MdlError::Corrupt(format!("no object for {w}"))))
            .collect()
    };
    let (dom, cod) = (spec(&g.dom)?, spec(&g.cod)?);
    let tag = r.read(ceil_log2(super::KIND_COUNT))?;
    let scheme = &ctx.scheme;
    let op = match tag {
        0 => {
            let (rows, cols) = (spec_total(&cod), spec_total(&dom));
            expect_count(r, rows, &g.name)?;
            expect_count(r, cols, &g.name)?;
            let xs = read_entries(r, (rows * cols) as usize, scheme)?;
            BoxOp::Linear(DMatrix::from_row_slice(rows as usize, cols as usize, &xs))
        }
        1 => {
            let n = spec_total(&dom);
            expect_count(r, n, &g.name)?;
            BoxOp::Bias(read_entries(r, n as usize, scheme)?)
        }
        2..=4 => {
            expect_count(r, spec_total(&dom), &g.name)?;
            BoxOp::Pointwise([PointwiseKind::Relu, PointwiseKind::Sigmoid, PointwiseKind::ArgmaxOneHot][tag as usize - 2])
        }
        5 => {
            let (n, k) = (spec_product(&dom), spec_product(&cod));
            expect_count(r, n, &g.name)?;
            expect_count(r, k, &g.name)?;
            let t = (0..n).map(|_| r.read(ceil_log2(k)).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            BoxOp::FiniteTable(t)
        }
        6 => {
            let n = spec_total(&dom) as usize;
            expect_count(r, n as u64, &g.name)?;
            let mut rest: Vec<usize> = (0..n).collect();
            let mut p = Vec::with_capacity(n);
            for i in 0..n {
                let k = r.read(ceil_log2((n - i) as u64))? as usize;
                if k >= rest.len() {
                    return corrupt("permutation index out of range");
                }
                p.push(rest.remove(k));
            }
            BoxOp::Permutation(p)
        }
        7..=10 => {
            expect_count(r, spec_total(&dom), &g.name)?;
            BoxOp::Structural(
                [StructuralKind::Copy, StructuralKind::Discard, StructuralKind::Swap, StructuralKind::Identity][tag as usize - 7],
            )
        }
        _ => return corrupt(format!("unknown box kind {tag}")),
    };
    SemanticBox::new(dom, cod, op).map_err(|e| MdlError::Corrupt(e.to_string()))
}

pub fn decode_bits(bits: &Bits, ctx: &DecodeContext) -> Result<Decoded> {
    let mut r = BitReader::new(bits);
    let diagram = read_wiring(&mut r, ctx)?;
    let mut rep = Representation { objects: ctx.objects.clone(), boxes: BTreeMap::new() };
    for g in ctx.signature.generators.values() {
        rep.boxes.insert(g.name.clone(), read_box(&mut r, g, ctx)?);
    }
    if diagram.signature().generators.len() != ctx.signature.generators.len() {
        return corrupt("diagram does not use every generator of the alphabet");
    }
    let model = Model::new(diagram, rep).map_err(|e| MdlError::Corrupt(e.to_string()))?;
    require_functorial(&model).map_err(|e| MdlError::Corrupt(e.to_string()))?;

    let vocab = &ctx.vocabulary;
    let lc = vocab.symbol_bits();
    let mut ic = PostHocInterpretation::new(ctx.scheme.quantizer);
    for (fp, b) in semantic_elements(&model, &ctx.scheme.quantizer)? {
        let sym = r.read(lc)?;
        let label = match sym {
            s if s == vocab.escape_symbol() => None,
            s if (s as usize) < vocab.len() => Some(&vocab.labels()[s as usize]),
            s => return corrupt(format!("label symbol {s} out of range")),
        };
        let layout = ctx.oracle.layout(&fp, label.map(|l| l.name.as_str()), vocab)?;
        let mut used = lc;
        if let Some(l) = label {
            if layout.gloss {
                if let Some(g) = &l.gloss {
                    for byte in g.bytes() {
                        if r.read(8)? != u64::from(byte) {
                            return corrupt(format!("gloss of {} does not match the vocabulary", l.name));
                        }
                    }
                    used += 8 * g.len() as u64;
                }
            }
            ic.insert(b.clone(), l.name.clone())?;
        }
        if layout.bits < used {
            return corrupt("codeword shorter than its label");
        }
        let mut pad = layout.bits - used;
        while pad > 0 {
            let w = pad.min(64);
            if r.read(w)? != 0 {
                return corrupt("nonzero padding in interpretation codeword");
            }
            pad -= w;
        }
    }
    if r.remaining() > 0 {
        return Err(MdlError::TrailingBits(r.remaining()));
    }
    let is_ = induce_syntactic(&ic, &model.rep, &model.signature());
    Ok(Decoded { model, is_, ic })
}
