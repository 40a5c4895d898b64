//! Canonical node order.
//!
//! Nodes reachable (ignoring direction) from the boundary are ranked by a
//! breadth-first walk that starts from the boundary ports in order and
//! visits each node's ports in order. Because every port carries exactly one
//! edge, that walk depends only on connectivity. Components detached from
//! the boundary are ranked by trying every root and keeping the smallest
//! encoding, then sorted by that encoding. The final order is the least
//! topological order under the key `(generator name, rank)`.

use std::collections::{BTreeSet, VecDeque};

use super::{Diagram, Generator, Source, Target};

type Encoding = Vec<(Generator, Vec<(usize, usize)>)>;

impl Diagram {
    /// Returns the connectivity-isomorphic diagram whose node list is in
    /// canonical order. Idempotent.
    pub fn canonicalize(&self) -> Diagram {
        let ranks = canonical_ranks(self);
        let n = self.nodes().len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (v, node) in self.nodes().iter().enumerate() {
            for s in &node.inputs {
                if let Source::Node { node: u, .. } = s {
                    indegree[v] += 1;
                    succ[*u].push(v);
                }
            }
        }
        let key = |v: usize| (self.nodes()[v].generator.name.clone(), ranks[v], v);
        let mut ready: BTreeSet<(String, usize, usize)> = (0..n).filter(|v| indegree[*v] == 0).map(key).collect();
        let mut order = Vec::with_capacity(n);
        while let Some((_, _, v)) = ready.pop_first() {
            order.push(v);
            for &w in &succ[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.insert(key(w));
                }
            }
        }
        debug_assert_eq!(order.len(), n, "canonicalize called on a cyclic diagram");
        self.permute_nodes(&order)
    }
}

fn adjacency(d: &Diagram) -> Vec<Vec<usize>> {
    let consumers = d.consumers();
    d.nodes()
        .iter()
        .enumerate()
        .map(|(v, node)| {
            let mut adj = Vec::new();
            for s in &node.inputs {
                if let Source::Node { node: u, .. } = s {
                    adj.push(*u);
                }
            }
            for port in 0..node.generator.cod.len() {
                if let Some(Target::Node { node: w, .. }) = consumers.get(&Source::Node { node: v, port }) {
                    adj.push(*w);
                }
            }
            adj
        })
        .collect()
}

fn walk(adj: &[Vec<usize>], seen: &mut [bool], start: usize, order: &mut Vec<usize>) {
    if seen[start] {
        return;
    }
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
}

fn encode(d: &Diagram, order: &[usize]) -> Encoding {
    let mut local = vec![usize::MAX; d.nodes().len()];
    for (k, &v) in order.iter().enumerate() {
        local[v] = k;
    }
    order
        .iter()
        .map(|&v| {
            let node = &d.nodes()[v];
            let ins = node
                .inputs
                .iter()
                .map(|s| match s {
                    Source::Node { node, port } => (local[*node], *port),
                    Source::Input(i) => (usize::MAX, *i),
                })
                .collect();
            (node.generator.clone(), ins)
        })
        .collect()
}

/// `rank[v]` is the canonical position of node `v` before the topological pass.
fn canonical_ranks(d: &Diagram) -> Vec<usize> {
    let n = d.nodes().len();
    let adj = adjacency(d);
    let consumers = d.consumers();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);

    for i in 0..d.dom().len() {
        if let Some(Target::Node { node, .. }) = consumers.get(&Source::Input(i)) {
            walk(&adj, &mut seen, *node, &mut order);
        }
    }
    for s in d.outputs() {
        if let Source::Node { node, .. } = s {
            walk(&adj, &mut seen, *node, &mut order);
        }
    }

    let mut closed: Vec<(Encoding, Vec<usize>)> = Vec::new();
    while let Some(u) = (0..n).find(|v| !seen[*v]) {
        let mut component = Vec::new();
        walk(&adj, &mut seen, u, &mut component);
        let best = component
            .iter()
            .map(|&root| {
                let mut local_seen = vec![false; n];
                let mut local = Vec::with_capacity(component.len());
                walk(&adj, &mut local_seen, root, &mut local);
                (encode(d, &local), local)
            })
            .min_by(|a, b| a.0.cmp(&b.0))
            .expect("component is non-empty");
        closed.push(best);
    }
    closed.sort_by(|a, b| a.0.cmp(&b.0));
    for (_, o) in closed {
        order.extend(o);
    }

    let mut rank = vec![0usize; n];
    for (k, v) in order.into_iter().enumerate() {
        rank[v] = k;
    }
    rank
}
