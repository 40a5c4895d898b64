//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmod_core::interpret::{induce_syntactic, ExplanationSignature, PostHocInterpretation};
use cmod_core::mdl::{
    decode_bits, encode_bits, rep_complexity, semantic_elements, total_cost, CodingScheme, DecodeContext, Fingerprint,
    InterpretationCostOracle, OracleMode,
};
use cmod_core::refine::{
    apply_refinement, check_comonotonic, check_parsimony, comonotonic_oracle, pass_block_diagonalize, pass_fuse,
    pass_global_refit, pass_identity, pass_rewire_simplify, pass_sparsify, pass_sparsify_refit, pass_svd_split,
    search_compressive, Budget, Grounding, RefineError, SearchConfig,
};
use cmod_core::semantics::{
    behavioural_distortion, evaluate_in_order, BoxOp, MetricSpec, Model, Representation, SemanticBox,
    Value, WireSpec,
};
use cmod_core::syntax::{Diagram, DiagramBuilder, Generator, Source, WireType};
use cmod_core::zoo::{self, Backend};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ctx<T, E: std::fmt::Display>(r: std::result::Result<T, E>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

// ---------------------------------------------------------------------------
// test-side oracles

fn random_value(rng: &mut ChaCha8Rng, spec: WireSpec) -> Value {
    match spec {
        WireSpec::Dim(n) => Value::Vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
        WireSpec::Finite(n) => Value::Symbol(rng.random_range(0..n)),
    }
}

fn random_input(rng: &mut ChaCha8Rng, specs: &[WireSpec]) -> Vec<Value> {
    specs.iter().map(|&s| random_value(rng, s)).collect()
}

fn flat(vs: &[Value]) -> Vec<f64> {
    vs.iter()
        .flat_map(|v| match v {
            Value::Vector(x) => x.clone(),
            Value::Symbol(s) => vec![*s as f64],
        })
        .collect()
}

/// Exact on symbols, relative error `rel` on vectors.
fn agrees(a: &[Value], b: &[Value], rel: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(u, v)| match (u, v) {
            (Value::Symbol(x), Value::Symbol(y)) => x == y,
            (Value::Vector(x), Value::Vector(y)) => {
                let diff: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = y.iter().map(|q| q * q).sum::<f64>().sqrt();
                x.len() == y.len() && (diff == 0.0 || diff <= rel * norm)
            }
            _ => false,
        })
}

/// A topological order of `d` chosen at random among all valid ones.
fn random_topo(d: &Diagram, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = d.node_count();
    let deps: Vec<Vec<usize>> = d
        .nodes()
        .iter()
        .map(|node| {
            node.inputs
                .iter()
                .filter_map(|s| match s {
                    Source::Node { node, .. } => Some(*node),
                    Source::Input(_) => None,
                })
                .collect()
        })
        .collect();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let ready: Vec<usize> = (0..n).filter(|&v| !placed[v] && deps[v].iter().all(|&u| placed[u])).collect();
        let v = *ready.choose(rng).expect("acyclic");
        placed[v] = true;
        order.push(v);
    }
    order
}

fn union(a: &Representation, b: &Representation) -> Representation {
    let mut r = a.clone();
    r.boxes.extend(b.boxes.iter().map(|(k, v)| (k.clone(), v.clone())));
    r.objects.extend(b.objects.iter().map(|(k, v)| (k.clone(), *v)));
    r
}

/// Every input of a finite-domain model, in mixed radix.
fn all_inputs(specs: &[WireSpec]) -> Vec<Vec<Value>> {
    let mut out = vec![vec![]];
    for s in specs {
        let WireSpec::Finite(n) = *s else { panic!("finite domain expected") };
        out = out.into_iter().flat_map(|p: Vec<Value>| (0..n).map(move |k| [p.clone(), vec![Value::Symbol(k)]].concat())).collect();
    }
    out
}

/// Number of inputs on which two finite models differ.
fn finite_mismatches(a: &Model, b: &Model) -> usize {
    all_inputs(&a.dom_spec().unwrap()).iter().filter(|x| a.evaluate(x).unwrap() != b.evaluate(x).unwrap()).count()
}

/// Root-mean-square output difference over `xs`.
fn rms(a: &Model, b: &Model, xs: &[Vec<Value>]) -> f64 {
    let total: f64 = xs
        .iter()
        .map(|x| flat(&a.evaluate(x).unwrap()).iter().zip(flat(&b.evaluate(x).unwrap())).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .sum();
    (total / xs.len() as f64).sqrt()
}

/// The matrix of a linear single-wire model, read off basis vectors.
fn linear_map(m: &Model) -> DMatrix<f64> {
    let n = m.dom_spec().unwrap()[0].size();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            flat(&m.evaluate(&[Value::Vector(e)]).unwrap())
        })
        .collect();
    DMatrix::from_fn(cols[0].len(), n, |i, j| cols[j][i])
}

fn chain_model(ws: &[(&str, DMatrix<f64>)]) -> Model {
    let dims: Vec<usize> = std::iter::once(ws[0].1.ncols()).chain(ws.iter().map(|(_, w)| w.nrows())).collect();
    let wires: Vec<WireType> = dims.iter().enumerate().map(|(i, &d)| WireType::vector(format!("h{i}"), d)).collect();
    let mut bd = DiagramBuilder::new(vec![wires[0].clone()]);
    let mut at = bd.inputs();
    let mut rep = Representation::new();
    for (k, (name, w)) in ws.iter().enumerate() {
        let g = Generator::opaque(*name, vec![wires[k].clone()], vec![wires[k + 1].clone()]);
        at = bd.add(&g, &at).unwrap();
        rep.insert(*name, SemanticBox::dense(w.clone()));
    }
    Model::new(bd.finish(&at).unwrap().canonicalize(), rep).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn l2_budget(eps_local: f64, eps_global: f64) -> Budget {
    Budget { metric: MetricSpec::l2(0, 128), eps_local, eps_global }
}

fn exact_budget() -> Budget {
    Budget { metric: MetricSpec::sup_finite(), eps_local: 0.0, eps_global: 0.0 }
}

fn fingerprints(m: &Model, s: &CodingScheme) -> BTreeMap<String, Fingerprint> {
    m.rep.boxes.iter().map(|(k, b)| (k.clone(), Fingerprint::of(b, &s.quantizer))).collect()
}

fn boundary(d: &Diagram) -> Vec<WireType> {
    d.cod()
}

// ---------------------------------------------------------------------------
// 1. functoriality

fn functoriality() -> Check {
    let start = Instant::now();
    let mut checked = 0;
    for backend in [Backend::Real, Backend::Finite] {
        let pool = zoo::random_wires(backend);
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
            let ins: Vec<WireType> = (0..rng.random_range(1..=2)).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
            let a = ctx(zoo::random_model_on(seed, ins, 5, backend, "a"), "model a")?;
            let b = ctx(zoo::random_model_on(seed + 1000, boundary(&a.diagram), 5, backend, "b"), "model b")?;
            let seq = ctx(a.diagram.compose_seq(&b.diagram), "compose")?;
            ensure!(seq.node_count() <= 10, "seed {seed}: {} nodes", seq.node_count());
            let ab = ctx(Model::new(seq.canonicalize(), union(&a.rep, &b.rep)), "composite")?;

            let ins2: Vec<WireType> = (0..rng.random_range(1..=2)).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
            let c = ctx(zoo::random_model_on(seed + 2000, ins2, 5, backend, "c"), "model c")?;
            let par = ctx(Model::new(a.diagram.compose_par(&c.diagram).canonicalize(), union(&a.rep, &c.rep)), "tensor")?;

            let rel = if backend == Backend::Finite { 0.0 } else { 1e-9 };
            for _ in 0..4 {
                let x = random_input(&mut rng, &a.dom_spec().unwrap());
                let y = random_input(&mut rng, &c.dom_spec().unwrap());
                let composite = ab.evaluate(&x).unwrap();
                let stepwise = b.evaluate(&a.evaluate(&x).unwrap()).unwrap();
                ensure!(agrees(&composite, &stepwise, rel), "{backend:?} seed {seed}: ;-composite differs");
                let xy = [x.clone(), y.clone()].concat();
                let tensor = par.evaluate(&xy).unwrap();
                let side = [a.evaluate(&x).unwrap(), c.evaluate(&y).unwrap()].concat();
                ensure!(agrees(&tensor, &side, rel), "{backend:?} seed {seed}: tensor differs");
                let order = random_topo(&ab.diagram, &mut rng);
                let reordered = evaluate_in_order(&ab.rep, &ab.diagram, &x, &order).unwrap();
                ensure!(agrees(&reordered, &composite, rel), "{backend:?} seed {seed}: order {order:?} changes the result");
            }
            checked += 1;
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(format!("{checked} composites, both backends, {t:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. encode/decode witness

fn witness(label: &str, m: &Model, ic: &PostHocInterpretation, vocab: &ExplanationSignature, s: &CodingScheme, o: &InterpretationCostOracle) -> Check {
    let m = m.canonicalize();
    let is_ = induce_syntactic(ic, &m.rep, &m.signature());
    let bits = ctx(encode_bits(&m, &is_, ic, vocab, s, o), label)?;
    let report = ctx(total_cost(&m, &is_, ic, vocab, s, o), label)?;
    ensure!(bits.len() as u64 == report.total_bits, "{label}: {} bits written, {} reported", bits.len(), report.total_bits);
    let out = ctx(decode_bits(&bits, &DecodeContext::for_model(&m, vocab, s, o)), label)?;
    ensure!(out.model.diagram == m.diagram, "{label}: diagram differs after decoding");
    ensure!(fingerprints(&out.model, s) == fingerprints(&m, s), "{label}: box fingerprints differ after decoding");
    ensure!(out.is_ == is_, "{label}: labels differ after decoding");
    Ok(String::new())
}

fn round_trip() -> Check {
    let start = Instant::now();
    let mut n = 0;
    for (name, b) in ctx(zoo::catalogue(), "catalogue")? {
        let s = ctx(b.scheme(), &name)?;
        witness(&name, &b.model, &b.ic, &b.vocab, &s, &ctx(b.oracle(), &name)?)?;
        n += 1;
    }
    let vocab = ExplanationSignature::from_names(["l0", "l1"]).unwrap();
    for seed in 0..100u64 {
        let backend = if seed % 2 == 0 { Backend::Real } else { Backend::Finite };
        let m = ctx(zoo::random_model(seed, 10, backend), "random model")?;
        let s = CodingScheme::new(8 + (seed % 9) as u32);
        let mut ic = PostHocInterpretation::new(s.quantizer);
        if seed % 3 != 0 {
            if let Some((_, b)) = m.rep.boxes.iter().find(|(_, b)| !matches!(b.op(), BoxOp::Structural(_))) {
                ic.insert(b.clone(), if seed % 3 == 1 { "l0" } else { "l1" }).unwrap();
            }
        }
        witness(&format!("random seed {seed}"), &m, &ic, &vocab, &s, &InterpretationCostOracle::default())?;
        n += 1;
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(format!("{n} models round-trip, lengths match, {t:.2?}"))
}

// ---------------------------------------------------------------------------
// 3. pass soundness; also collects the refinement pairs for 5 and 6

struct Pair {
    pass: &'static str,
    before: Model,
    after: Model,
}

const PAIRS_PER_PASS: usize = 8;

fn keep(pairs: &mut Vec<Pair>, count: usize, pass: &'static str, before: &Model, after: &Model) {
    if count < PAIRS_PER_PASS {
        pairs.push(Pair { pass, before: before.clone(), after: after.clone() });
    }
}

fn soundness_identity(pairs: &mut Vec<Pair>) -> Check {
    for seed in 0..100u64 {
        let backend = if seed % 2 == 0 { Backend::Real } else { Backend::Finite };
        let m = zoo::random_model(seed, 8, backend).unwrap();
        let budget = if backend == Backend::Finite { exact_budget() } else { l2_budget(0.0, 1e-9) };
        let a = ctx(apply_refinement(&pass_identity(), &m, &budget), "identity")?;
        ensure!(a.global == 0.0, "identity seed {seed}: distortion {}", a.global);
        ensure!(a.model.diagram == m.diagram, "identity seed {seed}: diagram changed");
        if backend == Backend::Finite {
            ensure!(finite_mismatches(&m, &a.model) == 0, "identity seed {seed}: behaviour changed");
        }
        keep(pairs, seed as usize, "identity", &m, &a.model);
    }
    Ok("identity 100".into())
}

fn soundness_svd(pairs: &mut Vec<Pair>) -> Check {
    let eps = 1e-6;
    let budget = l2_budget(eps, f64::INFINITY);
    for seed in 0..100u64 {
        let n = 4 + (seed % 5) as usize;
        let r = 1 + (seed as usize / 5) % ((n - 1) / 2);
        let b = ctx(zoo::build_rank_deficient(n, r, seed), "rank-deficient")?;
        let w = b.model.rep.box_semantics("w").unwrap().matrix().unwrap().clone();
        let rf = ctx(pass_svd_split(&b.model, "w", eps, &budget.metric), "svd-split")?;
        ensure!(rf.provenance.params == format!("rank={r}"), "svd n={n} r={r}: split as {}", rf.provenance.params);
        let a = ctx(apply_refinement(&rf, &b.model, &budget), "svd-split apply")?;
        let err = (&w - linear_map(&a.model)).norm() * (n as f64).sqrt();
        ensure!(err <= eps, "svd n={n} r={r}: reconstruction bound {err:e}");
        ensure!(a.per_box["w"] <= eps, "svd n={n} r={r}: per-box {:e}", a.per_box["w"]);
        keep(pairs, seed as usize, "svd-split", &b.model, &a.model);
    }
    Ok("svd-split 100".into())
}

fn soundness_block(pairs: &mut Vec<Pair>) -> Check {
    let (tau_b, eps) = (1e-2, 1e-2);
    let budget = l2_budget(eps, f64::INFINITY);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..rng.random_range(2..=3)).map(|_| rng.random_range(1..=3)).collect();
        let b = ctx(zoo::build_sparse_entangled(&sizes, 1e-3, seed), "sparse-entangled")?;
        let w = b.model.rep.box_semantics("w").unwrap().matrix().unwrap().clone();
        let rf = ctx(pass_block_diagonalize(&b.model, "w", tau_b), "block-diagonalize")?;
        ensure!(!rf.is_identity(), "block {sizes:?}: no split found");
        let a = ctx(apply_refinement(&rf, &b.model, &budget), "block apply")?;
        let dw = &w - linear_map(&a.model);
        for (x, d) in w.iter().zip(dw.iter()) {
            ensure!(d.abs() <= 1e-12 || (x.abs() <= tau_b && (d - x).abs() <= 1e-12), "block {sizes:?}: kept entry changed");
        }
        let xs = budget.metric.distribution.draw(&[WireSpec::Dim(w.ncols())]).unwrap();
        let local = (xs.iter().map(|x| (&dw * DMatrix::from_column_slice(w.ncols(), 1, &flat(x))).norm_squared()).sum::<f64>()
            / xs.len() as f64)
            .sqrt();
        ensure!(local <= eps, "block {sizes:?}: local distortion {local:e}");
        ensure!((local - a.per_box["w"]).abs() <= 1e-9, "block {sizes:?}: reported {:e}, measured {local:e}", a.per_box["w"]);
        keep(pairs, seed as usize, "block-diagonalize", &b.model, &a.model);
    }
    Ok("block-diagonalize 100".into())
}

fn sparse_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, tau: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if rng.random_range(0..10) < 3 {
            sign * rng.random_range(tau * 0.01..=tau)
        } else {
            sign * rng.random_range(0.1..1.0)
        }
    })
}

fn soundness_sparsify(pairs: &mut Vec<Pair>) -> Check {
    let tau = 1e-2;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let w = sparse_matrix(&mut rng, rows, cols, tau);
        let m = chain_model(&[("w", w.clone())]);
        // ||dW x|| <= ||dW||_F ||x|| with entries of dW at most tau and |x_j| <= 1
        let bound = tau * ((rows * cols) as f64).sqrt() * (cols as f64).sqrt();
        let budget = l2_budget(bound, f64::INFINITY);
        let rf = ctx(pass_sparsify(&m, "w", tau), "sparsify")?;
        let a = ctx(apply_refinement(&rf, &m, &budget), "sparsify apply")?;
        let w2 = a.model.rep.box_semantics("w").unwrap().matrix().unwrap().clone();
        for (x, y) in w.iter().zip(w2.iter()) {
            let expect = if x.abs() <= tau { 0.0 } else { *x };
            ensure!(*y == expect, "sparsify seed {seed}: entry {x} became {y}");
        }
        let measured = rms(&m, &a.model, &budget.metric.distribution.draw(&[WireSpec::Dim(cols)]).unwrap());
        ensure!(measured <= bound, "sparsify seed {seed}: {measured:e} > {bound:e}");
        keep(pairs, seed as usize, "sparsify", &m, &a.model);
    }
    Ok("sparsify 100".into())
}

fn soundness_sparsify_refit(pairs: &mut Vec<Pair>) -> Check {
    let tau = 5e-2;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, o) = (rng.random_range(2..=5), rng.random_range(2..=4), rng.random_range(2..=4));
        let w1 = random_matrix(&mut rng, k, n);
        let w2 = sparse_matrix(&mut rng, o, k, tau);
        let m = chain_model(&[("w1", w1.clone()), ("w2", w2.clone())]);
        let xs = MetricSpec::l2(0, 128).distribution.draw(&[WireSpec::Dim(n)]).unwrap();
        let plain = chain_model(&[("w1", w1), ("w2", w2.map(|x| if x.abs() <= tau { 0.0 } else { x }))]);
        let before_refit = rms(&m, &plain, &xs);
        let budget = l2_budget(f64::INFINITY, before_refit + 1e-12);
        let rf = ctx(pass_sparsify_refit(&m, "w2", tau, &m, &budget.metric.distribution), "sparsify-refit")?;
        let a = ctx(apply_refinement(&rf, &m, &budget), "sparsify-refit apply")?;
        let after = rms(&m, &a.model, &xs);
        ensure!(after <= before_refit + 1e-12, "sparsify-refit seed {seed}: {after:e} above unrefit {before_refit:e}");
        let fitted = a.model.rep.box_semantics("w2").unwrap().matrix().unwrap().clone();
        for (x, y) in w2.iter().zip(fitted.iter()) {
            ensure!(x.abs() > tau || *y == 0.0, "sparsify-refit seed {seed}: pruned entry revived");
        }
        keep(pairs, seed as usize, "sparsify-refit", &m, &a.model);
    }
    Ok("sparsify-refit 100".into())
}

fn soundness_global_refit(pairs: &mut Vec<Pair>) -> Check {
    let eps = 1e-6;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=5);
        let (k, o) = (rng.random_range(1..=n), rng.random_range(1..=4));
        let w1 = random_matrix(&mut rng, k, n);
        let truth = random_matrix(&mut rng, o, k);
        let off = truth.map(|x| x + rng.random_range(-0.1..0.1));
        let reference = chain_model(&[("w1", w1.clone()), ("w2", truth.clone())]);
        let m = chain_model(&[("w1", w1), ("w2", off)]);
        let budget = l2_budget(f64::INFINITY, eps);
        let rf = ctx(pass_global_refit(&m, &["w2".into()], &reference, &budget.metric.distribution), "global-refit")?;
        let a = ctx(cmod_core::refine::apply_against(&rf, &m, &reference, &budget), "global-refit apply")?;
        let fitted = a.model.rep.box_semantics("w2").unwrap().matrix().unwrap().clone();
        let err = (&fitted - &truth).amax();
        ensure!(err <= eps, "global-refit seed {seed}: recovered within {err:e}");
        let xs = budget.metric.distribution.draw(&[WireSpec::Dim(n)]).unwrap();
        ensure!(rms(&reference, &a.model, &xs) <= eps, "global-refit seed {seed}: behaviour off");
        keep(pairs, seed as usize, "global-refit", &m, &a.model);
    }
    Ok("global-refit 100".into())
}

fn adjacent_opaque(m: &Model) -> Option<(usize, usize)> {
    let d = &m.diagram;
    let opaque = |v: usize| !d.nodes()[v].generator.is_structural();
    (0..d.node_count()).filter(|&v| opaque(v)).find_map(|v| {
        d.nodes()[v].inputs.iter().find_map(|s| match s {
            Source::Node { node, .. } if opaque(*node) => Some((*node, v)),
            _ => None,
        })
    })
}

fn soundness_fuse(pairs: &mut Vec<Pair>) -> Check {
    let mut done = 0;
    let mut seed = 0u64;
    while done < 100 {
        ensure!(seed < 5000, "only {done} fusable targets found");
        let m = zoo::random_model(seed, 10, Backend::Finite).unwrap();
        seed += 1;
        let Some((u, v)) = adjacent_opaque(&m) else { continue };
        let (rf, prov) = match pass_fuse(&m, &[u, v]) {
            Ok(x) => x,
            Err(RefineError::NonConvex) => continue,
            Err(e) => return Err(format!("fuse seed {}: {e}", seed - 1)),
        };
        let a = ctx(apply_refinement(&rf, &m, &exact_budget()), "fuse apply")?;
        ensure!(a.global == 0.0, "fuse: reported distortion {}", a.global);
        ensure!(finite_mismatches(&m, &a.model) == 0, "fuse seed {}: behaviour changed", seed - 1);
        ensure!(a.model.diagram.node_count() + 1 == m.diagram.node_count(), "fuse: node count");
        if let Some(p) = prov {
            let back = ctx(apply_refinement(&cmod_core::refine::unfuse(&p), &a.model, &exact_budget()), "unfuse")?;
            ensure!(finite_mismatches(&m, &back.model) == 0, "unfuse changed behaviour");
        }
        keep(pairs, done, "fuse", &m, &a.model);
        done += 1;
    }
    Ok("fuse 100".into())
}

/// `m` followed by a copy of its first output whose second branch is
/// discarded, then an identity on the survivor.
fn with_redundant_wiring(m: &Model) -> Model {
    let cod = m.diagram.cod();
    let mut bd = DiagramBuilder::new(cod.clone());
    let ins = bd.inputs();
    let copied = bd.add(&Generator::copy(&cod[0]), &[ins[0]]).unwrap();
    bd.add(&Generator::discard(&cod[0]), &[copied[1]]).unwrap();
    let kept = bd.add(&Generator::identity(&cod[0]), &[copied[0]]).unwrap();
    let outs: Vec<Source> = kept.into_iter().chain(ins[1..].iter().copied()).collect();
    let tail = bd.finish(&outs).unwrap();
    let d = m.diagram.compose_seq(&tail).unwrap();
    Model::new(d.canonicalize(), m.rep.clone()).unwrap()
}

fn soundness_rewire(pairs: &mut Vec<Pair>) -> Check {
    let mut done = 0;
    let mut seed = 0u64;
    while done < 100 {
        ensure!(seed < 5000, "only {done} rewire targets found");
        let base = zoo::random_model(seed, 8, Backend::Finite).unwrap();
        seed += 1;
        if base.diagram.cod().is_empty() {
            continue;
        }
        let m = with_redundant_wiring(&base);
        let rf = ctx(pass_rewire_simplify(&m), "rewire-simplify")?;
        ensure!(!rf.is_identity(), "rewire: redundant wiring not removed");
        let a = ctx(apply_refinement(&rf, &m, &exact_budget()), "rewire apply")?;
        ensure!(a.global == 0.0, "rewire: reported distortion {}", a.global);
        ensure!(finite_mismatches(&m, &a.model) == 0, "rewire seed {}: behaviour changed", seed - 1);
        ensure!(a.model.diagram.node_count() + 3 <= m.diagram.node_count(), "rewire: fewer than 3 nodes removed");
        keep(pairs, done, "rewire-simplify", &m, &a.model);
        done += 1;
    }
    Ok("rewire-simplify 100".into())
}

fn soundness(pairs: &mut Vec<Pair>) -> Check {
    let start = Instant::now();
    let parts = [
        soundness_identity(pairs)?,
        soundness_svd(pairs)?,
        soundness_block(pairs)?,
        soundness_sparsify(pairs)?,
        soundness_sparsify_refit(pairs)?,
        soundness_global_refit(pairs)?,
        soundness_fuse(pairs)?,
        soundness_rewire(pairs)?,
    ];
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(30), "took {t:?}");
    Ok(format!("{}, {t:.2?}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 4. the two-mechanism example

fn linear_entries(m: &Model) -> usize {
    m.rep
        .boxes
        .values()
        .map(|b| match b.op() {
            BoxOp::Linear(w) => w.len(),
            _ => 0,
        })
        .sum()
}

fn fig1_end_to_end() -> Check {
    let b = ctx(zoo::build_fig1(), "fig1")?;
    let reference = ctx(zoo::build_fig1_reference(), "fig1 reference")?;
    let scheme = ctx(b.scheme(), "scheme")?;
    ensure!(scheme.q() == 16, "fig1 ships q={}", scheme.q());
    let config = SearchConfig { eps_global: 1e-9, scheme, ..SearchConfig::default() };
    let g = Grounding { ic: b.ic.clone(), vocab: b.vocab.clone(), oracle: ctx(b.oracle(), "oracle")? };
    let start = Instant::now();
    let (m, trace) = ctx(search_compressive(&b.model, &config, Some(&g)), "search")?;
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(5), "search took {t:?}");
    ensure!(m.diagram.is_connectivity_isomorphic(&reference.model.diagram), "result is not isomorphic to the reference");
    let global = ctx(behavioural_distortion(&b.model, &m, &config.metric_spec()), "distortion")?;
    ensure!(global <= 1e-9, "global distortion {global:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..64 {
        let x = random_input(&mut rng, &[WireSpec::Dim(4)]);
        ensure!(agrees(&m.evaluate(&x).unwrap(), &b.model.evaluate(&x).unwrap(), 1e-9), "pointwise behaviour differs");
    }
    let (before, after) = (rep_complexity(&b.model, &scheme).unwrap(), rep_complexity(&m, &scheme).unwrap());
    ensure!(after < before, "rep bits {before} -> {after}");
    ensure!(trace.initial_report.rep_bits == before && trace.final_report.rep_bits == after, "trace disagrees with rep cost");
    let payload = (linear_entries(&b.model) - linear_entries(&m)) as u64 * scheme.q() as u64;
    ensure!(payload == 8 * scheme.q() as u64, "payload saving {payload} bits");
    let net = before as i64 - after as i64;
    ensure!(net > 0, "net saving {net}");
    Ok(format!(
        "{} step(s), {t:.2?}, distortion {global:.1e}, rep {before} -> {after}, payload saving {payload} bits, net saving {net} bits, total {} -> {}",
        trace.steps.len(),
        trace.initial_report.total_bits,
        trace.final_report.total_bits
    ))
}

// ---------------------------------------------------------------------------
// 5. and 6. parsimony over the pair corpus

fn labelled(m: &Model, s: &CodingScheme, vocab: &ExplanationSignature) -> PostHocInterpretation {
    let mut ic = PostHocInterpretation::new(s.quantizer);
    let names: Vec<&str> = vocab.labels().iter().map(|l| l.name.as_str()).collect();
    for (i, (_, b)) in semantic_elements(m, &s.quantizer).unwrap().into_iter().enumerate() {
        if !matches!(b.op(), BoxOp::Structural(_)) {
            ic.insert(b.clone(), names[i % names.len()]).unwrap();
        }
    }
    ic
}

fn oracles(pair: &Pair, s: &CodingScheme) -> Vec<(&'static str, InterpretationCostOracle)> {
    let mut table = BTreeMap::new();
    for m in [&pair.before, &pair.after] {
        for (fp, _) in semantic_elements(m, &s.quantizer).unwrap() {
            let cost = 1 + fp.as_bytes().iter().fold(0u64, |h, &b| h.wrapping_mul(31).wrapping_add(b as u64)) % 200;
            table.insert(fp, cost);
        }
    }
    vec![
        ("label-code", InterpretationCostOracle::label_code(32)),
        ("constant", InterpretationCostOracle { mode: OracleMode::ConstantPerElement(7), kappa: 40 }),
        ("user-table", InterpretationCostOracle { mode: OracleMode::UserTable(table), kappa: 20 }),
    ]
}

fn fig1_pair() -> Pair {
    let b = zoo::build_fig1().unwrap();
    let config = SearchConfig { eps_global: 1e-9, scheme: b.scheme().unwrap(), ..SearchConfig::default() };
    let (m, _) = search_compressive(&b.model, &config, None).unwrap();
    Pair { pass: "search", before: b.model, after: m }
}

fn parsimony_iff(pairs: &[Pair]) -> Check {
    let s = CodingScheme::default();
    let vocab = ExplanationSignature::from_names(["mechanism-a", "mechanism-b", "mechanism-c"]).unwrap();
    let (mut checked, mut yes) = (0, 0);
    for pair in pairs {
        let ic = labelled(&pair.before, &s, &vocab);
        for (mode, oracle) in oracles(pair, &s) {
            let r = ctx(check_parsimony(&pair.before, &pair.after, &ic, &vocab, &s, &oracle), pair.pass)?;
            let cost = |m: &Model| total_cost(m, &induce_syntactic(&ic, &m.rep, &m.signature()), &ic, &vocab, &s, &oracle).unwrap();
            let (b, a) = (cost(&pair.before), cost(&pair.after));
            ensure!(r.total_before == b.total_bits && r.total_after == a.total_bits, "{}/{mode}: totals disagree", pair.pass);
            let verdict = a.total_bits <= b.total_bits;
            let criterion = b.rep_bits as i128 - a.rep_bits as i128 >= a.int_bits as i128 - b.int_bits as i128;
            ensure!(verdict == criterion, "{}/{mode}: equivalence fails", pair.pass);
            ensure!(r.verdict == verdict && r.criterion_holds == criterion, "{}/{mode}: report disagrees", pair.pass);
            checked += 1;
            yes += verdict as usize;
        }
    }
    let passes: std::collections::BTreeSet<&str> = pairs.iter().map(|p| p.pass).collect();
    ensure!(pairs.len() >= 50, "only {} pairs", pairs.len());
    ensure!(passes.len() >= 9, "passes covered: {passes:?}");
    Ok(format!("{} pairs x 3 oracles = {checked} reports over {} passes, {yes} yes / {} no", pairs.len(), passes.len(), checked - yes))
}

fn comonotonic(pairs: &[Pair]) -> Check {
    let s = CodingScheme::default();
    let corpus: Vec<(Model, Model)> = pairs
        .iter()
        .filter(|p| rep_complexity(&p.after, &s).unwrap() <= rep_complexity(&p.before, &s).unwrap())
        .map(|p| (p.before.clone(), p.after.clone()))
        .collect();
    let oracle = ctx(comonotonic_oracle(corpus.iter().flat_map(|(a, b)| [a, b]), &s), "oracle")?;
    let vocab = ExplanationSignature::default();
    let report = ctx(check_comonotonic(&corpus, &PostHocInterpretation::new(s.quantizer), &vocab, &s, &oracle), "comonotonic")?;
    ensure!(report.is_comonotonic(), "comonotonic oracle has counterexamples at {:?}", report.counterexamples);
    ensure!(report.totals_non_increasing, "a compressive pair grew in total");

    let vocab = ExplanationSignature::from_names(["mechanism"]).unwrap();
    let mut ic = PostHocInterpretation::new(s.quantizer);
    for (m, _) in &corpus {
        for (_, b) in semantic_elements(m, &s.quantizer).unwrap() {
            ic.insert(b.clone(), "mechanism").unwrap();
        }
    }
    let adversarial = InterpretationCostOracle::label_code(1 << 20);
    let bad = ctx(check_comonotonic(&corpus, &ic, &vocab, &s, &adversarial), "adversarial")?;
    ensure!(!bad.counterexamples.is_empty(), "adversarial oracle produced no counterexample");
    let first = &bad.pairs[bad.counterexamples[0]];
    Ok(format!(
        "{} compressive pairs, totals non-increasing; adversarial oracle: {} counterexample(s), e.g. rep {} -> {}, int {} -> {}",
        corpus.len(),
        bad.counterexamples.len(),
        first.rep_before,
        first.rep_after,
        first.int_before,
        first.int_after
    ))
}

// ---------------------------------------------------------------------------
// 7. rate-distortion

fn rate_distortion() -> Check {
    let b = ctx(zoo::build_sparse_entangled(&[2, 3], 1e-3, 0), "sparse-entangled")?;
    let mut reps = Vec::new();
    for eps in [0.0, 1e-4, 1e-2] {
        let config = SearchConfig { eps_global: eps, eps_local: 1e-2, tau_b: 1e-2, ..SearchConfig::default() };
        let (m, _) = ctx(search_compressive(&b.model, &config, None), "search")?;
        let d = behavioural_distortion(&b.model, &m, &config.metric_spec()).unwrap();
        ensure!(d <= eps, "eps {eps}: distortion {d:e}");
        reps.push(rep_complexity(&m, &config.scheme).unwrap());
    }
    ensure!(reps.windows(2).all(|w| w[1] <= w[0]), "rep bits {reps:?} increase");
    Ok(format!("rep bits at eps 0, 1e-4, 1e-2: {reps:?}"))
}

// ---------------------------------------------------------------------------
// 8. rank recovery

fn svd_recovery() -> Check {
    let b = ctx(zoo::build_rank_deficient(8, 2, 0), "rank-deficient")?;
    let w = b.model.rep.box_semantics("w").unwrap().matrix().unwrap().clone();
    let eig = SymmetricEigen::new(w.transpose() * &w);
    let top = eig.eigenvalues.amax();
    let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * top).count();
    ensure!(rank == 2, "eigenvalue oracle gives rank {rank}");
    let budget = l2_budget(1e-6, f64::INFINITY);
    let rf = ctx(pass_svd_split(&b.model, "w", 1e-6, &budget.metric), "svd-split")?;
    ensure!(rf.provenance.params == format!("rank={rank}"), "split as {}", rf.provenance.params);
    let a = ctx(apply_refinement(&rf, &b.model, &budget), "apply")?;
    let d = ctx(behavioural_distortion(&b.model, &a.model, &budget.metric), "distortion")?;
    ensure!(d <= 1e-6, "distortion {d:e}");
    let (_, trace) = ctx(search_compressive(&b.model, &SearchConfig::default(), None), "search")?;
    ensure!(trace.steps.iter().any(|s| s.pass == "svd-split"), "search never split");
    Ok(format!("oracle rank {rank}, split rank 2, distortion {d:.1e}"))
}

// ---------------------------------------------------------------------------
// 9. CLI determinism

fn run_refine(dir: &Path) -> std::result::Result<Vec<Vec<u8>>, String> {
    let exe = env!("CARGO_BIN_EXE_cmod");
    let run = |args: &[&str]| -> std::result::Result<Vec<u8>, String> {
        let out = Command::new(exe).args(args).current_dir(dir).env("CMOD_NO_COLOR", "1").output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("cmod {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        Ok(out.stdout)
    };
    run(&["build", "sparse-entangled", "--seed", "3", "--out", "in.cmod"])?;
    let stdout = run(&["refine", "in.cmod", "--seed", "11", "--eps-global", "1e-2", "--eps-local", "1e-2", "--tau-b", "1e-2", "--out", "out.cmod"])?;
    let mut files = vec![stdout];
    for f in ["out.cmod", "out.trace", "out.report"] {
        files.push(std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))?);
    }
    Ok(files)
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_refine(a.path())?;
    let second = run_refine(b.path())?;
    let names = ["stdout", "model", "trace", "report"];
    for (i, name) in names.iter().enumerate() {
        ensure!(first[i] == second[i], "{name} differs between runs");
    }
    ensure!(!first[2].is_empty(), "empty trace");
    Ok(format!("model {} B, trace {} B, report {} B identical", first[1].len(), first[2].len(), first[3].len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut pairs = Vec::new();
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        results.push((name, r));
    };
    run("1 functoriality", &mut functoriality);
    run("2 encode/decode witness", &mut round_trip);
    run("3 pass soundness", &mut || soundness(&mut pairs));
    run("4 two-mechanism example", &mut fig1_end_to_end);
    pairs.push(fig1_pair());
    run("5 parsimony equivalence", &mut || parsimony_iff(&pairs));
    run("6 comonotonic oracle", &mut || comonotonic(&pairs));
    run("7 rate-distortion monotonicity", &mut rate_distortion);
    run("8 svd rank recovery", &mut svd_recovery);
    run("9 refine determinism", &mut determinism);

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
