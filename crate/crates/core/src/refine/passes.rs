use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use super::{
    box_metric, fresh, fresh_generator_name, fresh_wire, taken_names, Contract, Provenance, RefineError, Refinement, Result,
};
use crate::semantics::{
    concat, distortion, enumerate_finite_domain, BoxOp, MetricSpec, Model, SampleDistribution, SemanticBox, Value, WireSpec,
};
use crate::syntax::{Diagram, DiagramBuilder, Generator, GeneratorKind, Node, Source, StructuralKind, Target, WireType};

fn not_applicable(pass: &'static str, target: &str, reason: impl Into<String>) -> RefineError {
    RefineError::NotApplicable { pass, target: target.to_string(), reason: reason.into() }
}

fn refinement(pass: &str, target: &str, params: String, contract: Contract) -> Refinement {
    Refinement {
        generator_map: BTreeMap::new(),
        boxes: BTreeMap::new(),
        rewrite: None,
        contract,
        provenance: Provenance { pass: pass.into(), target: target.into(), params },
    }
}

fn generator<'m>(m: &'m Model, name: &str, pass: &'static str) -> Result<(Generator, &'m SemanticBox)> {
    let g = m.signature().generators.remove(name).ok_or_else(|| not_applicable(pass, name, "no such generator"))?;
    if g.is_structural() {
        return Err(not_applicable(pass, name, "structural generator"));
    }
    Ok((g, m.rep.box_semantics(name)?))
}

fn linear<'m>(m: &'m Model, name: &str, pass: &'static str) -> Result<(Generator, &'m SemanticBox, &'m DMatrix<f64>)> {
    let (g, b) = generator(m, name, pass)?;
    let w = b.matrix().ok_or_else(|| not_applicable(pass, name, "not a linear box"))?;
    Ok((g, b, w))
}

/// The refinement that changes nothing.
pub fn pass_identity() -> Refinement {
    Refinement::identity("identity", "*")
}

/// Factors a linear box through the narrowest wire whose truncated SVD stays
/// within `eps_local` of the original.
pub fn pass_svd_split(m: &Model, name: &str, eps_local: f64, metric: &MetricSpec) -> Result<Refinement> {
    let (g, b, w) = linear(m, name, "svd-split")?;
    let (rows, cols) = w.shape();
    let k = rows.min(cols);
    let Some(crate::linalg::Svd { u, s, vt }) = crate::linalg::svd(&w) else {
        return Err(not_applicable("svd-split", name, "SVD did not converge"));
    };
    let bm = box_metric(metric, b.dom(), b.cod());
    let mut rank = k;
    for r in 0..k {
        let approx = u.columns(0, r) * DMatrix::from_diagonal(&s.rows(0, r).into_owned()) * vt.rows(0, r);
        if distortion(b, &b.with_op(BoxOp::Linear(approx))?, &bm)? <= eps_local {
            rank = r;
            break;
        }
    }
    if rank * (rows + cols) >= rows * cols {
        return Ok(Refinement::identity("svd-split", name));
    }

    let mut taken = taken_names(m);
    let mut r = refinement("svd-split", name, format!("rank={rank}"), Contract::PerBox);
    let sub = if rank == 0 {
        let zero = Generator::opaque(fresh_generator_name(&mut taken, &format!("{name}.zero")), vec![], g.cod.clone());
        let mut bd = DiagramBuilder::new(g.dom.clone());
        for (i, a) in g.dom.iter().enumerate() {
            bd.add(&Generator::discard(a), &[Source::Input(i)])?;
        }
        let out = bd.add(&zero, &[])?;
        r.boxes.insert(zero.name.clone(), SemanticBox::new(vec![], b.cod().to_vec(), BoxOp::Linear(DMatrix::zeros(rows, 0)))?);
        bd.finish(&out)?
    } else {
        let wire = fresh_wire(&mut taken, &format!("{name}.r"), rank);
        let gv = Generator::opaque(fresh_generator_name(&mut taken, &format!("{name}.v")), g.dom.clone(), vec![wire.clone()]);
        let gu = Generator::opaque(fresh_generator_name(&mut taken, &format!("{name}.u")), vec![wire], g.cod.clone());
        let v = vt.rows(0, rank).into_owned();
        let us = u.columns(0, rank) * DMatrix::from_diagonal(&s.rows(0, rank).into_owned());
        r.boxes.insert(gv.name.clone(), SemanticBox::new(b.dom().to_vec(), vec![WireSpec::Dim(rank)], BoxOp::Linear(v))?);
        r.boxes.insert(gu.name.clone(), SemanticBox::new(vec![WireSpec::Dim(rank)], b.cod().to_vec(), BoxOp::Linear(us))?);
        Diagram::from_generator(&gv).compose_seq(&Diagram::from_generator(&gu))?
    };
    r.generator_map.insert(name.to_string(), sub);
    Ok(r)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            x = std::mem::replace(&mut self.0[x], r);
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

/// Connected components of the bipartite graph on columns and rows with an
/// edge wherever `|w_ij| > tau_b`: blocks as `(cols, rows)`, then isolated
/// columns and isolated rows. Blocks are ordered by first column.
pub(crate) fn components(w: &DMatrix<f64>, tau_b: f64) -> (Vec<(Vec<usize>, Vec<usize>)>, Vec<usize>, Vec<usize>) {
    let (rows, cols) = w.shape();
    let mut uf = UnionFind((0..rows + cols).collect());
    for i in 0..rows {
        for j in 0..cols {
            if w[(i, j)].abs() > tau_b {
                uf.union(j, cols + i);
            }
        }
    }
    let mut comps: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for j in 0..cols {
        comps.entry(uf.find(j)).or_default().0.push(j);
    }
    for i in 0..rows {
        comps.entry(uf.find(cols + i)).or_default().1.push(i);
    }
    let (mut blocks, mut iso_cols, mut iso_rows) = (Vec::new(), Vec::new(), Vec::new());
    for (c, r) in comps.into_values() {
        match (c.is_empty(), r.is_empty()) {
            (false, false) => blocks.push((c, r)),
            (false, true) => iso_cols.extend(c),
            _ => iso_rows.extend(r),
        }
    }
    blocks.sort_by_key(|(c, r)| (c.first().copied(), r.first().copied()));
    iso_cols.sort_unstable();
    iso_rows.sort_unstable();
    (blocks, iso_cols, iso_rows)
}

fn dims(ws: &[WireType]) -> Vec<usize> {
    ws.iter().map(|w| WireSpec::of(w).size()).collect()
}

/// Splits a linear box into independent blocks found by thresholding at
/// `tau_b`, with permutations on either side where the wires do not already
/// line up with the blocks.
pub fn pass_block_diagonalize(m: &Model, name: &str, tau_b: f64) -> Result<Refinement> {
    let (g, b, w) = linear(m, name, "block-diagonalize")?;
    let (blocks, iso_cols, iso_rows) = components(w, tau_b);
    let count = blocks.len() + iso_cols.len() + iso_rows.len();
    if count < 2 {
        return Ok(Refinement::identity("block-diagonalize", name));
    }

    let mut in_groups: Vec<Vec<usize>> = blocks.iter().map(|(c, _)| c.clone()).collect();
    if !iso_cols.is_empty() {
        in_groups.push(iso_cols.clone());
    }
    let mut out_groups: Vec<Vec<usize>> = blocks.iter().map(|(_, r)| r.clone()).collect();
    if !iso_rows.is_empty() {
        out_groups.push(iso_rows.clone());
    }
    let p_in: Vec<usize> = in_groups.concat();
    let order_out: Vec<usize> = out_groups.concat();
    let mut p_out = vec![0usize; order_out.len()];
    for (t, &row) in order_out.iter().enumerate() {
        p_out[row] = t;
    }
    let sizes = |gs: &[Vec<usize>]| gs.iter().map(Vec::len).collect::<Vec<_>>();
    let identity = |p: &[usize]| p.iter().enumerate().all(|(i, &x)| i == x);
    let skip_in = identity(&p_in) && dims(&g.dom) == sizes(&in_groups);
    let skip_out = identity(&p_out) && dims(&g.cod) == sizes(&out_groups);

    let mut taken = taken_names(m);
    let mut r = refinement(
        "block-diagonalize",
        name,
        format!("tau_b={tau_b:e},blocks={},iso_cols={},iso_rows={}", blocks.len(), iso_cols.len(), iso_rows.len()),
        Contract::PerBox,
    );
    let in_wires: Vec<WireType> = if skip_in {
        g.dom.clone()
    } else {
        let mut ws: Vec<WireType> =
            blocks.iter().enumerate().map(|(k, (c, _))| fresh_wire(&mut taken, &format!("{name}.b{k}.in"), c.len())).collect();
        if !iso_cols.is_empty() {
            ws.push(fresh_wire(&mut taken, &format!("{name}.drop"), iso_cols.len()));
        }
        ws
    };
    let out_wires: Vec<WireType> = if skip_out {
        g.cod.clone()
    } else {
        let mut ws: Vec<WireType> =
            blocks.iter().enumerate().map(|(k, (_, rs))| fresh_wire(&mut taken, &format!("{name}.b{k}.out"), rs.len())).collect();
        if !iso_rows.is_empty() {
            ws.push(fresh_wire(&mut taken, &format!("{name}.zrows"), iso_rows.len()));
        }
        ws
    };
    let specs = |ws: &[WireType]| ws.iter().map(WireSpec::of).collect::<Vec<_>>();

    let mut bd = DiagramBuilder::new(g.dom.clone());
    let srcs = if skip_in {
        bd.inputs()
    } else {
        let pin = Generator::opaque(fresh_generator_name(&mut taken, &format!("{name}.pin")), g.dom.clone(), in_wires.clone());
        r.boxes.insert(pin.name.clone(), SemanticBox::new(b.dom().to_vec(), specs(&in_wires), BoxOp::Permutation(p_in))?);
        bd.add(&pin, &bd.inputs())?
    };
    let mut outs = Vec::new();
    for (k, (cs, rs)) in blocks.iter().enumerate() {
        let gk = Generator::opaque(
            fresh_generator_name(&mut taken, &format!("{name}.b{k}")),
            vec![in_wires[k].clone()],
            vec![out_wires[k].clone()],
        );
        let sub = DMatrix::from_fn(rs.len(), cs.len(), |i, j| w[(rs[i], cs[j])]);
        r.boxes.insert(gk.name.clone(), SemanticBox::new(specs(&in_wires[k..=k]), specs(&out_wires[k..=k]), BoxOp::Linear(sub))?);
        outs.extend(bd.add(&gk, &[srcs[k]])?);
    }
    if !iso_cols.is_empty() {
        bd.add(&Generator::discard(&in_wires[blocks.len()]), &[srcs[blocks.len()]])?;
    }
    if !iso_rows.is_empty() {
        let zw = out_wires[blocks.len()].clone();
        let zero = Generator::opaque(fresh_generator_name(&mut taken, &format!("{name}.zero")), vec![], vec![zw.clone()]);
        r.boxes.insert(zero.name.clone(), SemanticBox::new(vec![], specs(&[zw]), BoxOp::Linear(DMatrix::zeros(iso_rows.len(), 0)))?);
        outs.extend(bd.add(&zero, &[])?);
    }
    let outs = if skip_out {
        outs
    } else {
        let pout = Generator::opaque(fresh_generator_name(&mut taken, &format!("{name}.pout")), out_wires.clone(), g.cod.clone());
        r.boxes.insert(pout.name.clone(), SemanticBox::new(specs(&out_wires), b.cod().to_vec(), BoxOp::Permutation(p_out))?);
        bd.add(&pout, &outs)?
    };
    r.generator_map.insert(name.to_string(), bd.finish(&outs)?);
    Ok(r)
}

/// Zeroes the entries of a linear or bias box with `|w| <= tau`.
pub fn pass_sparsify(m: &Model, name: &str, tau: f64) -> Result<Refinement> {
    let (_, b) = generator(m, name, "sparsify")?;
    let small = |x: f64| x != 0.0 && x.abs() <= tau;
    let (op, zeroed) = match b.op() {
        BoxOp::Linear(w) => (BoxOp::Linear(w.map(|x| if small(x) { 0.0 } else { x })), w.iter().filter(|x| small(**x)).count()),
        BoxOp::Bias(v) => (BoxOp::Bias(v.iter().map(|&x| if small(x) { 0.0 } else { x }).collect()), v.iter().filter(|x| small(**x)).count()),
        _ => return Err(not_applicable("sparsify", name, "not a linear or bias box")),
    };
    if zeroed == 0 {
        return Ok(Refinement::identity("sparsify", name));
    }
    let mut r = refinement("sparsify", name, format!("tau={tau:e},zeroed={zeroed}"), Contract::PerBox);
    r.boxes.insert(name.to_string(), b.with_op(op)?);
    Ok(r)
}

/// Sparsifies, then refits the surviving entries against `reference`.
pub fn pass_sparsify_refit(m: &Model, name: &str, tau: f64, reference: &Model, dist: &SampleDistribution) -> Result<Refinement> {
    let sparse = pass_sparsify(m, name, tau)?;
    if sparse.is_identity() {
        return Ok(Refinement::identity("sparsify-refit", name));
    }
    let mut rep = m.rep.clone();
    rep.boxes.extend(sparse.boxes.clone());
    let mid = Model { diagram: m.diagram.clone(), rep };
    let refit = pass_global_refit(&mid, &[name.to_string()], reference, dist)?;
    let mut r = refinement(
        "sparsify-refit",
        name,
        format!("{}; {}", sparse.provenance.params, refit.provenance.params),
        Contract::Global,
    );
    r.boxes = if refit.is_identity() { sparse.boxes } else { refit.boxes };
    Ok(r)
}

fn is_affine(op: &BoxOp) -> bool {
    matches!(op, BoxOp::Linear(_) | BoxOp::Bias(_) | BoxOp::Permutation(_) | BoxOp::Structural(_))
}

/// Least-squares refit of the nonzero entries of `targets` so the model
/// matches `reference` on samples from `dist`. The model output must be
/// affine in those entries: each target is used once and only affine boxes
/// lie downstream of the targets. Falls back to the minimum-norm solution
/// when the fit is underdetermined.
pub fn pass_global_refit(m: &Model, targets: &[String], reference: &Model, dist: &SampleDistribution) -> Result<Refinement> {
    let label = targets.join(",");
    if targets.is_empty() {
        return Ok(Refinement::identity("global-refit", &label));
    }
    let fail = |reason: &str| Err(not_applicable("global-refit", &label, reason));
    if m.dom_spec()? != reference.dom_spec()? || m.cod_spec()? != reference.cod_spec()? {
        return fail("reference has a different boundary");
    }
    if m.cod_spec()?.iter().any(|s| s.is_finite()) {
        return fail("finite outputs");
    }
    let d = &m.diagram;
    let mut target_nodes = Vec::new();
    for t in targets {
        linear(m, t, "global-refit")?;
        let uses: Vec<usize> = (0..d.node_count()).filter(|&v| d.nodes()[v].generator.name == *t).collect();
        if uses.len() != 1 {
            return fail("a target is used more than once");
        }
        target_nodes.push(uses[0]);
    }
    let consumers = d.consumers();
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut queue: VecDeque<usize> = target_nodes.iter().copied().collect();
    while let Some(v) = queue.pop_front() {
        for port in 0..d.nodes()[v].generator.cod.len() {
            if let Some(Target::Node { node, .. }) = consumers.get(&Source::Node { node: v, port }) {
                if seen.insert(*node) {
                    queue.push_back(*node);
                }
            }
        }
    }
    for &v in &seen {
        let name = &d.nodes()[v].generator.name;
        if targets.contains(name) || !is_affine(m.rep.box_semantics(name)?.op()) {
            return fail("output is not affine in the target entries");
        }
    }

    let mut params: Vec<(usize, usize, usize)> = Vec::new();
    for (t, name) in targets.iter().enumerate() {
        let w = m.rep.box_semantics(name)?.matrix().expect("checked linear");
        for j in 0..w.ncols() {
            for i in 0..w.nrows() {
                if w[(i, j)] != 0.0 {
                    params.push((t, i, j));
                }
            }
        }
    }
    if params.is_empty() {
        return Ok(Refinement::identity("global-refit", &label));
    }
    let with_theta = |theta: &dyn Fn(usize) -> f64| -> Result<Model> {
        let mut rep = m.rep.clone();
        for (t, name) in targets.iter().enumerate() {
            let b = m.rep.box_semantics(name)?;
            let mut w = DMatrix::zeros(b.matrix().expect("linear").nrows(), b.matrix().expect("linear").ncols());
            for (k, &(pt, i, j)) in params.iter().enumerate() {
                if pt == t {
                    w[(i, j)] = theta(k);
                }
            }
            rep.boxes.insert(name.clone(), b.with_op(BoxOp::Linear(w))?);
        }
        Ok(Model { diagram: m.diagram.clone(), rep })
    };
    let xs = dist.draw(&m.dom_spec()?)?;
    let base = with_theta(&|_| 0.0)?;
    let unit: Vec<Model> = (0..params.len()).map(|k| with_theta(&|l| if l == k { 1.0 } else { 0.0 })).collect::<Result<_>>()?;
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for x in &xs {
        let y0 = concat(&base.evaluate(x)?);
        let yr = concat(&reference.evaluate(x)?);
        let cols: Vec<Vec<f64>> =
            unit.iter().map(|u| Ok(concat(&u.evaluate(x)?).iter().zip(&y0).map(|(a, b)| a - b).collect())).collect::<Result<_>>()?;
        for o in 0..y0.len() {
            a_rows.push(cols.iter().map(|c| c[o]).collect());
            rhs.push(yr[o] - y0[o]);
        }
    }
    let k = params.len();
    let a = DMatrix::from_fn(a_rows.len(), k, |i, j| a_rows[i][j]);
    let bvec = DVector::from_column_slice(&rhs);
    let (theta, rank) =
        crate::linalg::lstsq(&a, &bvec, 1e-10).ok_or_else(|| not_applicable("global-refit", &label, "SVD did not converge"))?;
    let fitted = with_theta(&|l| theta[l])?;

    let deficiency = if rank < k { ",rank-deficient" } else { "" };
    let mut r = refinement(
        "global-refit",
        &label,
        format!("samples={},params={k},rank={rank}{deficiency}", xs.len()),
        Contract::Global,
    );
    for name in targets {
        r.boxes.insert(name.clone(), fitted.rep.box_semantics(name)?.clone());
    }
    Ok(r)
}

/// What [`pass_fuse`] replaced, kept so the abstraction can be undone.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseProvenance {
    pub generator: String,
    pub diagram: Diagram,
    pub boxes: BTreeMap<String, SemanticBox>,
}

/// Inverse of a fuse: expands the fused generator back into its region.
pub fn unfuse(p: &FuseProvenance) -> Refinement {
    let mut r = refinement("unfuse", &p.generator, String::new(), Contract::Exact);
    r.generator_map.insert(p.generator.clone(), p.diagram.clone());
    r.boxes = p.boxes.clone();
    r
}

fn is_linear_op(op: &BoxOp) -> bool {
    matches!(op, BoxOp::Linear(_) | BoxOp::Permutation(_) | BoxOp::Structural(_))
}

/// Replaces a convex connected region of nodes by one generator whose box
/// is the region's composite: an exact table on finite wires, a matrix when
/// every box in the region is linear.
pub fn pass_fuse(m: &Model, region: &[usize]) -> Result<(Refinement, Option<FuseProvenance>)> {
    let d = &m.diagram;
    let region: BTreeSet<usize> = region.iter().copied().collect();
    let label = region.iter().map(|v| format!("n{v}")).collect::<Vec<_>>().join(",");
    if region.is_empty() || region.iter().any(|&v| v >= d.node_count()) {
        return Err(not_applicable("fuse", &label, "region names no nodes of the diagram"));
    }
    if region.len() == 1 {
        return Ok((Refinement::identity("fuse", &label), None));
    }
    let consumers = d.consumers();
    let succ = |v: usize| -> Vec<usize> {
        (0..d.nodes()[v].generator.cod.len())
            .filter_map(|port| match consumers.get(&Source::Node { node: v, port }) {
                Some(Target::Node { node, .. }) => Some(*node),
                _ => None,
            })
            .collect()
    };

    let first = *region.first().expect("nonempty");
    let mut reached = BTreeSet::from([first]);
    let mut queue = VecDeque::from([first]);
    while let Some(v) = queue.pop_front() {
        let preds = d.nodes()[v].inputs.iter().filter_map(|s| match s {
            Source::Node { node, .. } => Some(*node),
            Source::Input(_) => None,
        });
        for u in preds.chain(succ(v)) {
            if region.contains(&u) && reached.insert(u) {
                queue.push_back(u);
            }
        }
    }
    if reached.len() != region.len() {
        return Err(RefineError::Disconnected);
    }

    let mut outside: BTreeSet<usize> = BTreeSet::new();
    let mut queue: VecDeque<usize> = region.iter().flat_map(|&v| succ(v)).filter(|u| !region.contains(u)).collect();
    while let Some(v) = queue.pop_front() {
        if region.contains(&v) {
            return Err(RefineError::NonConvex);
        }
        if outside.insert(v) {
            queue.extend(succ(v));
        }
    }

    let pos: BTreeMap<usize, usize> = region.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut bound_in: Vec<Source> = Vec::new();
    let mut sub_nodes = Vec::new();
    for &v in &region {
        let n = &d.nodes()[v];
        let inputs = n
            .inputs
            .iter()
            .map(|s| match s {
                Source::Node { node, port } if region.contains(node) => Source::Node { node: pos[node], port: *port },
                other => {
                    bound_in.push(*other);
                    Source::Input(bound_in.len() - 1)
                }
            })
            .collect();
        sub_nodes.push(Node { generator: n.generator.clone(), inputs });
    }
    let mut bound_out: Vec<Source> = Vec::new();
    for &v in &region {
        for port in 0..d.nodes()[v].generator.cod.len() {
            let s = Source::Node { node: v, port };
            match consumers.get(&s) {
                Some(Target::Node { node, .. }) if region.contains(node) => {}
                _ => bound_out.push(s),
            }
        }
    }
    let dom: Vec<WireType> = bound_in.iter().map(|s| d.source_type(*s).clone()).collect();
    let cod: Vec<WireType> = bound_out.iter().map(|s| d.source_type(*s).clone()).collect();
    let sub_outputs: Vec<Source> = bound_out
        .iter()
        .map(|s| match s {
            Source::Node { node, port } => Source::Node { node: pos[node], port: *port },
            Source::Input(_) => unreachable!("boundary outputs are node ports"),
        })
        .collect();
    let sub = Diagram::new(dom.clone(), sub_nodes, sub_outputs)?;
    let sub_model = Model::new(sub.clone(), m.rep.clone())?;
    let dom_spec = sub_model.dom_spec()?;
    let cod_spec = sub_model.cod_spec()?;

    let op = if dom_spec.iter().chain(&cod_spec).all(|s| s.is_finite()) {
        let xs = enumerate_finite_domain(&dom_spec).ok_or_else(|| not_applicable("fuse", &label, "domain is not finite"))?;
        let table = xs
            .iter()
            .map(|x| {
                let y = sub_model.evaluate(x)?;
                Ok(y.iter().zip(&cod_spec).fold(0usize, |acc, (v, s)| match v {
                    Value::Symbol(k) => acc * s.size() + k,
                    Value::Vector(_) => unreachable!("finite codomain"),
                }))
            })
            .collect::<Result<Vec<usize>>>()?;
        BoxOp::FiniteTable(table)
    } else if dom_spec.iter().chain(&cod_spec).all(|s| !s.is_finite())
        && sub_model.rep.boxes.values().all(|b| is_linear_op(b.op()))
    {
        let n: usize = dom_spec.iter().map(|s| s.size()).sum();
        let rows: usize = cod_spec.iter().map(|s| s.size()).sum();
        let mut w = DMatrix::zeros(rows, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let x = crate::semantics::split(&dom_spec, &e);
            let y = concat(&sub_model.evaluate(&x)?);
            w.set_column(j, &nalgebra::DVector::from_vec(y));
        }
        BoxOp::Linear(w)
    } else {
        return Err(not_applicable("fuse", &label, "region is neither finite nor linear"));
    };
    let fused_box = SemanticBox::new(dom_spec, cod_spec, op)?;

    let names: Vec<&str> = region.iter().map(|&v| d.nodes()[v].generator.name.as_str()).collect();
    let fused_name = fresh(&taken_names(m), &names.join("+"));
    let fused = Generator::opaque(fused_name.clone(), dom, cod);

    let kept: Vec<usize> = (0..d.node_count()).filter(|v| !region.contains(v)).collect();
    let new_index: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let fused_index = kept.len();
    let remap = |s: Source| match s {
        Source::Input(i) => Source::Input(i),
        Source::Node { node, port } if region.contains(&node) => {
            let k = bound_out.iter().position(|b| *b == s).expect("boundary output");
            let _ = port;
            Source::Node { node: fused_index, port: k }
        }
        Source::Node { node, port } => Source::Node { node: new_index[&node], port },
    };
    let mut nodes: Vec<Node> = kept
        .iter()
        .map(|&v| {
            let n = &d.nodes()[v];
            Node { generator: n.generator.clone(), inputs: n.inputs.iter().map(|s| remap(*s)).collect() }
        })
        .collect();
    nodes.push(Node { generator: fused, inputs: bound_in.iter().map(|s| remap(*s)).collect() });
    let outputs = d.outputs().iter().map(|s| remap(*s)).collect();
    let rewritten = Diagram::new(d.dom().to_vec(), nodes, outputs)?;

    let mut r = refinement("fuse", &label, format!("generator={fused_name}"), Contract::Exact);
    r.boxes.insert(fused_name.clone(), fused_box);
    r.rewrite = Some(rewritten);
    let boxes = sub_model.rep.boxes.clone();
    Ok((r, Some(FuseProvenance { generator: fused_name, diagram: sub, boxes })))
}

fn structural_kind(n: &Node) -> Option<StructuralKind> {
    match n.generator.kind {
        GeneratorKind::Structural(k) => Some(k),
        GeneratorKind::Opaque => None,
    }
}

fn rebuild(d: &Diagram, nodes: Vec<Option<Node>>, redirect: &BTreeMap<Source, Source>) -> Result<Diagram> {
    let mut index = vec![usize::MAX; nodes.len()];
    let mut k = 0;
    for (v, n) in nodes.iter().enumerate() {
        if n.is_some() {
            index[v] = k;
            k += 1;
        }
    }
    let resolve = |mut s: Source| {
        while let Some(t) = redirect.get(&s) {
            s = *t;
        }
        match s {
            Source::Input(i) => Source::Input(i),
            Source::Node { node, port } => Source::Node { node: index[node], port },
        }
    };
    let kept = nodes
        .into_iter()
        .flatten()
        .map(|n| Node { inputs: n.inputs.iter().map(|s| resolve(*s)).collect(), generator: n.generator })
        .collect();
    let outputs = d.outputs().iter().map(|s| resolve(*s)).collect();
    Ok(Diagram::new(d.dom().to_vec(), kept, outputs)?)
}

/// One exact rewrite, trying identity elimination, then copy-discard, then
/// dead boxes.
fn simplify_once(d: &Diagram) -> Result<Option<Diagram>> {
    let consumers = d.consumers();
    let nodes = d.nodes();
    let is_discard = |t: Option<&Target>| match t {
        Some(Target::Node { node, .. }) => structural_kind(&nodes[*node]) == Some(StructuralKind::Discard),
        _ => false,
    };
    let discard_node = |v: usize, port: usize| match consumers.get(&Source::Node { node: v, port }) {
        Some(Target::Node { node, .. }) => *node,
        _ => unreachable!("checked discard consumer"),
    };

    if let Some(v) = (0..nodes.len()).find(|&v| structural_kind(&nodes[v]) == Some(StructuralKind::Identity)) {
        let mut all: Vec<Option<Node>> = nodes.iter().cloned().map(Some).collect();
        all[v] = None;
        let redirect = BTreeMap::from([(Source::Node { node: v, port: 0 }, nodes[v].inputs[0])]);
        return Ok(Some(rebuild(d, all, &redirect)?));
    }

    for v in 0..nodes.len() {
        if structural_kind(&nodes[v]) != Some(StructuralKind::Copy) {
            continue;
        }
        if let Some(p) = (0..2).find(|&p| is_discard(consumers.get(&Source::Node { node: v, port: p }))) {
            let mut all: Vec<Option<Node>> = nodes.iter().cloned().map(Some).collect();
            all[discard_node(v, p)] = None;
            all[v] = None;
            let redirect = BTreeMap::from([(Source::Node { node: v, port: 1 - p }, nodes[v].inputs[0])]);
            return Ok(Some(rebuild(d, all, &redirect)?));
        }
    }

    for v in 0..nodes.len() {
        if structural_kind(&nodes[v]) == Some(StructuralKind::Discard) {
            continue;
        }
        let ports = nodes[v].generator.cod.len();
        if (0..ports).all(|p| is_discard(consumers.get(&Source::Node { node: v, port: p }))) {
            let mut all: Vec<Option<Node>> = nodes.iter().cloned().map(Some).collect();
            for p in 0..ports {
                all[discard_node(v, p)] = None;
            }
            all[v] = None;
            for (port, s) in nodes[v].inputs.iter().enumerate() {
                all.push(Some(Node { generator: Generator::discard(&nodes[v].generator.dom[port]), inputs: vec![*s] }));
            }
            return Ok(Some(rebuild(d, all, &BTreeMap::new())?));
        }
    }
    Ok(None)
}

/// Exact structural cleanup run to a fixpoint: identity boxes, copies with
/// a discarded branch, and boxes whose outputs are all discarded.
pub fn pass_rewire_simplify(m: &Model) -> Result<Refinement> {
    let mut d = m.diagram.clone();
    let mut steps = 0usize;
    while let Some(next) = simplify_once(&d)? {
        d = next;
        steps += 1;
    }
    if steps == 0 {
        return Ok(Refinement::identity("rewire-simplify", "*"));
    }
    let mut r = refinement("rewire-simplify", "*", format!("rewrites={steps}"), Contract::Exact);
    r.rewrite = Some(d.canonicalize());
    Ok(r)
}
