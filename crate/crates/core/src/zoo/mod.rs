//! Example models with known structure, random model generators, and the
//! `.cmod` text format.

mod format;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::interpret::{
    induce_syntactic, ExplanationSignature, InterpretError, PostHocInterpretation, Reconstruction,
    SyntacticInterpretation,
};
use crate::mdl::{CodingScheme, InterpretationCostOracle, Quantizer};
use crate::semantics::{BoxOp, Model, PointwiseKind, Representation, SemanticBox, SemanticsError, WireSpec};
use crate::syntax::{Diagram, DiagramBuilder, Generator, Source, SyntaxError, WireType};

pub use format::{from_text, load, save, to_text, FILE_VERSION};

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("{0}")]
    Precondition(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Version { line: usize, message: String },
    #[error("bad config value `{key}={value}`")]
    Config { key: String, value: String },
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
}

pub type Result<T> = std::result::Result<T, ZooError>;

/// A model with its explanation layer and free-form settings.
///
/// `config` holds coding settings (`q`, `presence-flags`, `kappa`); `meta`
/// holds ground truth recorded by the builders.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub model: Model,
    pub vocab: ExplanationSignature,
    pub is_: SyntacticInterpretation,
    pub ic: PostHocInterpretation,
    pub recon: Reconstruction,
    pub config: BTreeMap<String, String>,
    pub meta: BTreeMap<String, String>,
}

impl Bundle {
    pub fn from_model(model: Model) -> Self {
        Bundle {
            model,
            vocab: ExplanationSignature::default(),
            is_: SyntacticInterpretation::new(),
            ic: PostHocInterpretation::new(Quantizer::default()),
            recon: Reconstruction::new(),
            config: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    fn config_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.config.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ZooError::Config { key: key.into(), value: v.clone() }),
        }
    }

    /// Coding scheme from `config`, defaulting to q = 16 with presence flags.
    pub fn scheme(&self) -> Result<CodingScheme> {
        let q: u32 = self.config_value("q")?.unwrap_or(16);
        if !(2..=48).contains(&q) {
            return Err(ZooError::Config { key: "q".into(), value: q.to_string() });
        }
        let mut s = CodingScheme::new(q);
        if let Some(flags) = self.config_value::<bool>("presence-flags")? {
            s.presence_flags = flags;
        }
        Ok(s)
    }

    pub fn oracle(&self) -> Result<InterpretationCostOracle> {
        let mut o = InterpretationCostOracle::default();
        if let Some(k) = self.config_value("kappa")? {
            o.kappa = k;
        }
        Ok(o)
    }

    /// Replaces the model and re-derives `is_` from the post-hoc labels.
    pub fn with_model(&self, model: Model) -> Bundle {
        let is_ = induce_syntactic(&self.ic, &model.rep, &model.signature());
        Bundle { model, is_, ..self.clone() }
    }
}

fn linear_model(name: &str, x: &WireType, y: &WireType, w: DMatrix<f64>) -> Result<Model> {
    let g = Generator::opaque(name, vec![x.clone()], vec![y.clone()]);
    let mut rep = Representation::new();
    rep.insert(name, SemanticBox::dense(w));
    Ok(Model::new(Diagram::from_generator(&g), rep)?)
}

pub const FIG1_ANIMAL: [[f64; 2]; 2] = [[0.9, -0.4], [0.3, 1.1]];
pub const FIG1_COLOUR: [[f64; 2]; 2] = [[0.7, 0.5], [-0.6, 0.8]];
/// Input coordinates and output coordinates of each mechanism.
pub const FIG1_ANIMAL_COLS: [usize; 2] = [0, 2];
pub const FIG1_ANIMAL_ROWS: [usize; 2] = [1, 3];
pub const FIG1_COLOUR_COLS: [usize; 2] = [1, 3];
pub const FIG1_COLOUR_ROWS: [usize; 2] = [0, 2];

fn block(b: &[[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| b[i][j])
}

/// The interleaved 4x4 weight matrix of the two-mechanism classifier.
pub fn fig1_matrix() -> DMatrix<f64> {
    let mut w = DMatrix::zeros(4, 4);
    for (b, rows, cols) in [(FIG1_ANIMAL, FIG1_ANIMAL_ROWS, FIG1_ANIMAL_COLS), (FIG1_COLOUR, FIG1_COLOUR_ROWS, FIG1_COLOUR_COLS)] {
        for i in 0..2 {
            for j in 0..2 {
                w[(rows[i], cols[j])] = b[i][j];
            }
        }
    }
    w
}

fn fig1_grounding(b: &mut Bundle) -> Result<()> {
    b.vocab = ExplanationSignature::from_names(["animal-mechanism", "colour-mechanism"])?;
    for (label, m) in [("animal-mechanism", FIG1_ANIMAL), ("colour-mechanism", FIG1_COLOUR)] {
        let exemplar = SemanticBox::dense(block(&m));
        b.ic.insert(exemplar.clone(), label)?;
        b.recon.insert(label, exemplar);
    }
    b.is_ = induce_syntactic(&b.ic, &b.model.rep, &b.model.signature());
    b.config.insert("q".into(), "16".into());
    b.config.insert("presence-flags".into(), "false".into());
    Ok(())
}

/// One dense linear box `features(4) -> logits(4)` mixing an animal and a
/// colour mechanism through interleaved coordinates, labeled on the block
/// semantics. Coding is dense, without presence flags.
pub fn build_fig1() -> Result<Bundle> {
    let x = WireType::vector("features", 4);
    let y = WireType::vector("logits", 4);
    let mut b = Bundle::from_model(linear_model("classifier", &x, &y, fig1_matrix())?);
    fig1_grounding(&mut b)?;
    b.meta.insert("truth.blocks".into(), "2,2".into());
    Ok(b)
}

/// The disentangled classifier built by hand: input permutation, the two
/// blocks side by side, output permutation.
pub fn build_fig1_reference() -> Result<Bundle> {
    let x = WireType::vector("features", 4);
    let y = WireType::vector("logits", 4);
    let wire = |n: &str| WireType::vector(n, 2);
    let (a_in, c_in, a_out, c_out) =
        (wire("classifier.b0.in"), wire("classifier.b1.in"), wire("classifier.b0.out"), wire("classifier.b1.out"));
    let pin = Generator::opaque("classifier.pin", vec![x.clone()], vec![a_in.clone(), c_in.clone()]);
    let animal = Generator::opaque("classifier.b0", vec![a_in], vec![a_out.clone()]);
    let colour = Generator::opaque("classifier.b1", vec![c_in], vec![c_out.clone()]);
    let pout = Generator::opaque("classifier.pout", vec![a_out, c_out], vec![y.clone()]);

    let mut bd = DiagramBuilder::new(vec![x]);
    let mid = bd.add(&pin, &[Source::Input(0)])?;
    let a = bd.add(&animal, &[mid[0]])?;
    let c = bd.add(&colour, &[mid[1]])?;
    let out = bd.add(&pout, &[a[0], c[0]])?;
    let d = bd.finish(&out)?;

    let in_order: Vec<usize> = FIG1_ANIMAL_COLS.iter().chain(&FIG1_COLOUR_COLS).copied().collect();
    let row_order: Vec<usize> = FIG1_ANIMAL_ROWS.iter().chain(&FIG1_COLOUR_ROWS).copied().collect();
    let mut out_perm = vec![0; 4];
    for (t, &r) in row_order.iter().enumerate() {
        out_perm[r] = t;
    }
    let d2 = || vec![WireSpec::Dim(2), WireSpec::Dim(2)];
    let mut rep = Representation::new();
    rep.insert("classifier.pin", SemanticBox::new(vec![WireSpec::Dim(4)], d2(), BoxOp::Permutation(in_order))?);
    rep.insert("classifier.b0", SemanticBox::dense(block(&FIG1_ANIMAL)));
    rep.insert("classifier.b1", SemanticBox::dense(block(&FIG1_COLOUR)));
    rep.insert("classifier.pout", SemanticBox::new(d2(), vec![WireSpec::Dim(4)], BoxOp::Permutation(out_perm))?);
    let mut b = Bundle::from_model(Model::new(d.canonicalize(), rep)?);
    fig1_grounding(&mut b)?;
    Ok(b)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// One linear box `x(n) -> y(n)` equal to `U V` with `U` n x r and `V`
/// r x n drawn uniformly from [-1, 1].
pub fn build_rank_deficient(n: usize, r: usize, seed: u64) -> Result<Bundle> {
    if !(r >= 1 && r < n && 2 * r * n < n * n) {
        return Err(ZooError::Precondition(format!("need 1 <= r < n and 2rn < n^2, got n={n}, r={r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = DMatrix::from_fn(n, r, |_, _| uniform(&mut rng, -1.0, 1.0));
    let v = DMatrix::from_fn(r, n, |_, _| uniform(&mut rng, -1.0, 1.0));
    let mut b = Bundle::from_model(linear_model("w", &WireType::vector("x", n), &WireType::vector("y", n), u * v)?);
    b.meta.insert("truth.rank".into(), r.to_string());
    Ok(b)
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// A block-diagonal linear box with the given block sizes, rows and columns
/// shuffled, plus `±noise` on every entry outside the blocks. Block entries
/// have magnitudes in [0.5, 1.5].
pub fn build_sparse_entangled(block_sizes: &[usize], noise: f64, seed: u64) -> Result<Bundle> {
    if !(noise >= 0.0) || block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(ZooError::Precondition("need non-negative noise and positive block sizes".into()));
    }
    let n: usize = block_sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group = Vec::with_capacity(n);
    for (k, &s) in block_sizes.iter().enumerate() {
        group.extend(std::iter::repeat_n(k, s));
    }
    let mut row_perm: Vec<usize> = (0..n).collect();
    let mut col_perm: Vec<usize> = (0..n).collect();
    row_perm.shuffle(&mut rng);
    col_perm.shuffle(&mut rng);
    // block-diagonal entry (i, j) lands at (row_perm[i], col_perm[j])
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            w[(row_perm[i], col_perm[j])] = if group[i] == group[j] { sign * uniform(&mut rng, 0.5, 1.5) } else { sign * noise };
        }
    }
    let mut b = Bundle::from_model(linear_model("w", &WireType::vector("x", n), &WireType::vector("y", n), w)?);
    b.meta.insert("truth.blocks".into(), join(block_sizes));
    b.meta.insert("truth.row-perm".into(), join(&row_perm));
    b.meta.insert("truth.col-perm".into(), join(&col_perm));
    Ok(b)
}

/// Which semantics a random model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Real,
    Finite,
}

fn wire_pool(backend: Backend) -> Vec<WireType> {
    match backend {
        Backend::Real => vec![WireType::vector("a", 2), WireType::vector("b", 3), WireType::vector("c", 1)],
        Backend::Finite => vec![WireType::finite("s", ["lo", "hi"]), WireType::finite("t", ["x", "y", "z"])],
    }
}

fn random_box(rng: &mut ChaCha8Rng, backend: Backend, dom: &[WireSpec], cod: &[WireSpec]) -> Result<SemanticBox> {
    let size = |s: &[WireSpec]| s.iter().map(|w| w.size()).sum::<usize>();
    let op = match backend {
        Backend::Finite => {
            let n: usize = dom.iter().map(|w| w.size()).product();
            let k: usize = cod.iter().map(|w| w.size()).product();
            BoxOp::FiniteTable((0..n).map(|_| rng.random_range(0..k)).collect())
        }
        Backend::Real if dom == cod && rng.random_range(0..4) == 0 => match rng.random_range(0..4) {
            0 => BoxOp::Bias((0..size(dom)).map(|_| uniform(rng, -1.0, 1.0)).collect()),
            1 => BoxOp::Pointwise(PointwiseKind::Relu),
            2 => BoxOp::Pointwise(PointwiseKind::Sigmoid),
            _ => {
                let mut p: Vec<usize> = (0..size(dom)).collect();
                p.shuffle(rng);
                BoxOp::Permutation(p)
            }
        },
        Backend::Real => {
            // some exact zeros so sparsity-driven passes have targets
            BoxOp::Linear(DMatrix::from_fn(size(cod), size(dom), |_, _| {
                if rng.random_range(0..5) == 0 {
                    0.0
                } else {
                    uniform(rng, -1.0, 1.0)
                }
            }))
        }
    };
    Ok(SemanticBox::new(dom.to_vec(), cod.to_vec(), op)?)
}

/// A random well-typed model with at most `max_nodes` nodes, mixing opaque
/// boxes (some used more than once) with copies, swaps and discards.
pub fn random_model(seed: u64, max_nodes: usize, backend: Backend) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = wire_pool(backend);
    let inputs: Vec<WireType> = (0..rng.random_range(1..=3)).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
    random_model_on(rng.random(), inputs, max_nodes, backend, "g")
}

/// The wire types random models are built from.
pub fn random_wires(backend: Backend) -> Vec<WireType> {
    wire_pool(backend)
}

/// As [`random_model`] with a fixed domain; opaque generators are named
/// `{prefix}0`, `{prefix}1`, ...
pub fn random_model_on(seed: u64, inputs: Vec<WireType>, max_nodes: usize, backend: Backend, prefix: &str) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = wire_pool(backend);
    let pick = |rng: &mut ChaCha8Rng| pool[rng.random_range(0..pool.len())].clone();
    let mut bd = DiagramBuilder::new(inputs.clone());
    let mut avail: Vec<(Source, WireType)> = inputs.iter().cloned().enumerate().map(|(i, w)| (Source::Input(i), w)).collect();
    let mut opaque: Vec<Generator> = Vec::new();
    let mut rep = Representation::new();
    let nodes = rng.random_range(1..=max_nodes.max(1));

    for _ in 0..nodes {
        let take = |rng: &mut ChaCha8Rng, avail: &mut Vec<(Source, WireType)>| avail.remove(rng.random_range(0..avail.len()));
        let roll = rng.random_range(0..10);
        if avail.is_empty() || roll < 5 {
            if let Some(g) = (roll == 0).then(|| opaque.iter().find(|g| g.dom.len() == 1 && avail.iter().any(|(_, w)| *w == g.dom[0]))).flatten()
            {
                let g = g.clone();
                let at = avail.iter().position(|(_, w)| *w == g.dom[0]).expect("found above");
                let (s, _) = avail.remove(at);
                let outs = bd.add(&g, &[s])?;
                avail.extend(outs.into_iter().zip(g.cod.iter().cloned()));
                continue;
            }
            let arity = if avail.is_empty() { 0 } else { rng.random_range(1..=avail.len().min(2)) };
            let ins: Vec<(Source, WireType)> = (0..arity).map(|_| take(&mut rng, &mut avail)).collect();
            let dom: Vec<WireType> = ins.iter().map(|(_, w)| w.clone()).collect();
            let cod: Vec<WireType> = if backend == Backend::Real && dom.len() == 1 && rng.random_range(0..3) == 0 {
                dom.clone()
            } else {
                (0..rng.random_range(1..=2)).map(|_| pick(&mut rng)).collect()
            };
            let g = Generator::opaque(format!("{prefix}{}", opaque.len()), dom.clone(), cod.clone());
            let specs = |ws: &[WireType]| ws.iter().map(WireSpec::of).collect::<Vec<_>>();
            rep.insert(g.name.clone(), random_box(&mut rng, backend, &specs(&dom), &specs(&cod))?);
            let outs = bd.add(&g, &ins.iter().map(|(s, _)| *s).collect::<Vec<_>>())?;
            avail.extend(outs.into_iter().zip(cod));
            opaque.push(g);
        } else if roll < 7 {
            let (s, w) = take(&mut rng, &mut avail);
            let outs = bd.add(&Generator::copy(&w), &[s])?;
            avail.extend(outs.into_iter().map(|o| (o, w.clone())));
        } else if roll < 9 && avail.len() >= 2 {
            let (s1, w1) = take(&mut rng, &mut avail);
            let (s2, w2) = take(&mut rng, &mut avail);
            let outs = bd.add(&Generator::swap(&w1, &w2), &[s1, s2])?;
            avail.extend(outs.into_iter().zip([w2, w1]));
        } else if avail.len() >= 2 {
            let (s, w) = take(&mut rng, &mut avail);
            bd.add(&Generator::discard(&w), &[s])?;
        }
    }
    let outputs: Vec<Source> = avail.iter().map(|(s, _)| *s).collect();
    let d = bd.finish(&outputs)?;
    Ok(Model::new(d.canonicalize(), rep)?)
}

/// Every built-in example, by name.
pub fn catalogue() -> Result<Vec<(String, Bundle)>> {
    Ok(vec![
        ("fig1".into(), build_fig1()?),
        ("fig1-reference".into(), build_fig1_reference()?),
        ("rank-deficient".into(), build_rank_deficient(8, 2, 0)?),
        ("sparse-entangled".into(), build_sparse_entangled(&[2, 3], 1e-3, 0)?),
    ])
}
