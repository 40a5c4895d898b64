#![allow(dead_code)]

use cmod_core::semantics::{Model, Representation, SemanticBox, Value, WireSpec};
use cmod_core::syntax::{Diagram, DiagramBuilder, Generator, Source, WireType};
use cmod_core::zoo::{self, Backend};
use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn backend(flag: bool) -> Backend {
    if flag {
        Backend::Finite
    } else {
        Backend::Real
    }
}

pub fn random_inputs(rng: &mut ChaCha8Rng, backend: Backend) -> Vec<WireType> {
    let pool = zoo::random_wires(backend);
    (0..rng.random_range(1..=2)).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

/// Three composable random models `a ; b ; c` with disjoint generator names.
pub fn composable_triple(seed: u64, backend: Backend) -> (Model, Model, Model) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = zoo::random_model_on(rng.random(), random_inputs(&mut rng, backend), 4, backend, "a").unwrap();
    let b = zoo::random_model_on(rng.random(), a.diagram.cod(), 4, backend, "b").unwrap();
    let c = zoo::random_model_on(rng.random(), b.diagram.cod(), 4, backend, "c").unwrap();
    (a, b, c)
}

pub fn union(reps: &[&Representation]) -> Representation {
    let mut r = Representation::new();
    for x in reps {
        r.boxes.extend(x.boxes.iter().map(|(k, v)| (k.clone(), v.clone())));
        r.objects.extend(x.objects.iter().map(|(k, v)| (k.clone(), *v)));
    }
    r
}

pub fn random_value(rng: &mut ChaCha8Rng, spec: WireSpec) -> Value {
    match spec {
        WireSpec::Dim(n) => Value::Vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
        WireSpec::Finite(n) => Value::Symbol(rng.random_range(0..n)),
    }
}

pub fn random_input(rng: &mut ChaCha8Rng, specs: &[WireSpec]) -> Vec<Value> {
    specs.iter().map(|&s| random_value(rng, s)).collect()
}

fn deps(d: &Diagram) -> Vec<Vec<usize>> {
    d.nodes()
        .iter()
        .map(|n| {
            n.inputs
                .iter()
                .filter_map(|s| match s {
                    Source::Node { node, .. } => Some(*node),
                    Source::Input(_) => None,
                })
                .collect()
        })
        .collect()
}

/// A uniformly chosen ready node at each step.
pub fn random_topo(d: &Diagram, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let deps = deps(d);
    let n = d.node_count();
    let mut placed = vec![false; n];
    let mut order = Vec::new();
    while order.len() < n {
        let ready: Vec<usize> = (0..n).filter(|&v| !placed[v] && deps[v].iter().all(|&u| placed[u])).collect();
        let v = *ready.choose(rng).unwrap();
        placed[v] = true;
        order.push(v);
    }
    order
}

/// Whether `order` lists every node after its predecessors.
pub fn is_topological(d: &Diagram, order: &[usize]) -> bool {
    let deps = deps(d);
    let mut pos = vec![usize::MAX; d.node_count()];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    order.len() == d.node_count() && (0..d.node_count()).all(|v| deps[v].iter().all(|&u| pos[u] < pos[v]))
}

/// Brute-force isomorphism: searches for a node bijection preserving
/// generators, input sources and outputs.
pub fn brute_force_isomorphic(a: &Diagram, b: &Diagram) -> bool {
    if a.dom() != b.dom() || a.node_count() != b.node_count() || a.outputs().len() != b.outputs().len() {
        return false;
    }
    let order = a.topo_order().unwrap();
    let mut map = vec![usize::MAX; a.node_count()];
    let mut used = vec![false; b.node_count()];
    fn image(s: Source, map: &[usize]) -> Source {
        match s {
            Source::Input(i) => Source::Input(i),
            Source::Node { node, port } => Source::Node { node: map[node], port },
        }
    }
    fn search(k: usize, order: &[usize], a: &Diagram, b: &Diagram, map: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
        if k == order.len() {
            return a.outputs().iter().zip(b.outputs()).all(|(x, y)| image(*x, map) == *y);
        }
        let v = order[k];
        let na = &a.nodes()[v];
        for w in 0..b.node_count() {
            let nb = &b.nodes()[w];
            if used[w] || na.generator != nb.generator {
                continue;
            }
            if na.inputs.iter().zip(&nb.inputs).all(|(x, y)| image(*x, map) == *y) {
                map[v] = w;
                used[w] = true;
                if search(k + 1, order, a, b, map, used) {
                    return true;
                }
                used[w] = false;
                map[v] = usize::MAX;
            }
        }
        false
    }
    search(0, &order, a, b, &mut map, &mut used)
}

/// `x -> w1 -> w2 -> ... -> y` with dense linear boxes.
pub fn chain_model(ws: &[(&str, DMatrix<f64>)]) -> Model {
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

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}
