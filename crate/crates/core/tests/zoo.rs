mod common;

use cmod_core::mdl::{Fingerprint, Quantizer};
use cmod_core::semantics::Model;
use cmod_core::zoo::{self, Bundle, ZooError};
use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn meta_list(b: &Bundle, key: &str) -> Vec<usize> {
    b.meta[key].split(',').map(|s| s.parse().unwrap()).collect()
}

fn matrix(b: &Bundle) -> DMatrix<f64> {
    b.model.rep.box_semantics("w").unwrap().matrix().unwrap().clone()
}

fn same_model(a: &Model, b: &Model) -> bool {
    let q = Quantizer::new(48);
    let fps = |m: &Model| m.rep.boxes.iter().map(|(k, b)| (k.clone(), Fingerprint::of(b, &q))).collect::<Vec<_>>();
    a.diagram == b.diagram && fps(a) == fps(b) && a.rep.objects == b.rep.objects
}

/// Connected components of the bipartite row/column graph over entries
/// above `tau`, as sorted component sizes.
fn component_sizes(w: &DMatrix<f64>, tau: f64) -> Vec<usize> {
    let (r, c) = w.shape();
    let mut comp = vec![usize::MAX; r + c];
    let mut sizes = Vec::new();
    for start in 0..r + c {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut rows = 0;
        while let Some(x) = stack.pop() {
            let next: Vec<usize> = if x < r {
                rows += 1;
                (0..c).filter(|&j| w[(x, j)].abs() > tau).map(|j| r + j).collect()
            } else {
                (0..r).filter(|&i| w[(i, x - r)].abs() > tau).collect()
            };
            for y in next {
                if comp[y] == usize::MAX {
                    comp[y] = id;
                    stack.push(y);
                }
            }
        }
        sizes.push(rows);
    }
    let mut s: Vec<usize> = sizes.into_iter().filter(|&n| n > 0).collect();
    s.sort_unstable();
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_models_are_functorial(seed in any::<u64>(), finite in any::<bool>(), nodes in 1usize..12) {
        let m = zoo::random_model(seed, nodes, backend(finite)).unwrap();
        prop_assert!(m.check_functorial().unwrap().is_functorial());
        prop_assert!(m.diagram.node_count() <= nodes);
    }

    #[test]
    fn rank_metadata_matches_the_eigenvalue_oracle(n in 3usize..10, seed in any::<u64>()) {
        let r = 1 + (seed as usize) % ((n - 1) / 2);
        let b = zoo::build_rank_deficient(n, r, seed).unwrap();
        let w = matrix(&b);
        let eig = SymmetricEigen::new(w.transpose() * &w);
        let top = eig.eigenvalues.amax();
        let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * top).count();
        prop_assert_eq!(b.meta["truth.rank"].parse::<usize>().unwrap(), rank);
    }

    #[test]
    fn block_metadata_matches_the_stored_matrix(sizes in proptest::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
        let b = zoo::build_sparse_entangled(&sizes, 1e-3, seed).unwrap();
        let w = matrix(&b);
        let blocks = meta_list(&b, "truth.blocks");
        prop_assert_eq!(&blocks, &sizes);
        let mut expect = sizes.clone();
        expect.sort_unstable();
        prop_assert_eq!(component_sizes(&w, 1e-2), expect);
        // undoing the permutations leaves noise only off the diagonal blocks
        let (rp, cp) = (meta_list(&b, "truth.row-perm"), meta_list(&b, "truth.col-perm"));
        let group: Vec<usize> = blocks.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat_n(k, s)).collect();
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                let x = w[(rp[i], cp[j])].abs();
                let ok = if group[i] == group[j] { (0.5..=1.5).contains(&x) } else { x <= 1e-3 };
                prop_assert!(ok, "entry ({}, {}) = {}", i, j, x);
            }
        }
    }

    #[test]
    fn random_models_survive_save_and_load(seed in any::<u64>(), finite in any::<bool>()) {
        let m = zoo::random_model(seed, 10, backend(finite)).unwrap();
        let b = Bundle::from_model(m);
        let back = zoo::from_text(&zoo::to_text(&b).unwrap()).unwrap();
        prop_assert!(same_model(&back.model, &b.model));
        prop_assert_eq!(zoo::to_text(&back).unwrap(), zoo::to_text(&b).unwrap());
    }
}

#[test]
fn catalogue_survives_files() {
    let dir = tempfile::tempdir().unwrap();
    for (name, b) in zoo::catalogue().unwrap() {
        let path = dir.path().join(format!("{name}.cmod"));
        zoo::save(&b, &path).unwrap();
        let back = zoo::load(&path).unwrap();
        assert!(same_model(&back.model, &b.model), "{name}");
        assert_eq!(back.ic, b.ic, "{name}");
        assert_eq!(back.vocab, b.vocab, "{name}");
        assert_eq!(back.meta, b.meta, "{name}");
        assert_eq!(back.config, b.config, "{name}");
    }
}

#[test]
fn unknown_lines_and_versions_are_rejected() {
    let text = zoo::to_text(&zoo::build_fig1().unwrap()).unwrap();
    let future = text.replacen("cmod 1", "cmod 2", 1);
    assert!(matches!(zoo::from_text(&future), Err(ZooError::Version { line: 1, .. })));
    let extra = format!("{text}hyperedge a b\n");
    assert!(matches!(zoo::from_text(&extra), Err(ZooError::Version { .. })));
}

#[test]
fn builders_check_preconditions() {
    assert!(matches!(zoo::build_rank_deficient(4, 2, 0), Err(ZooError::Precondition(_))));
    assert!(matches!(zoo::build_rank_deficient(4, 0, 0), Err(ZooError::Precondition(_))));
    assert!(matches!(zoo::build_sparse_entangled(&[], 0.0, 0), Err(ZooError::Precondition(_))));
    assert!(matches!(zoo::build_sparse_entangled(&[2], -1.0, 0), Err(ZooError::Precondition(_))));
}

#[test]
fn refined_fig1_separates_the_two_mechanisms() {
    use cmod_core::interpret::induce_syntactic;
    use cmod_core::refine::{search_compressive, SearchConfig};
    use cmod_core::syntax::Source;

    let b = zoo::build_fig1().unwrap();
    let config = SearchConfig { eps_global: 1e-9, scheme: b.scheme().unwrap(), ..SearchConfig::default() };
    let (m, _) = search_compressive(&b.model, &config, None).unwrap();
    let d = &m.diagram;
    let blocks: Vec<usize> = (0..d.node_count()).filter(|&v| d.nodes()[v].generator.name.contains(".b")).collect();
    assert_eq!(blocks.len(), 2);

    // ancestors of each block box
    let ancestors = |v: usize| {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            for s in &d.nodes()[x].inputs {
                if let Source::Node { node, .. } = s {
                    if seen.insert(*node) {
                        stack.push(*node);
                    }
                }
            }
        }
        seen
    };
    assert!(!ancestors(blocks[0]).contains(&blocks[1]));
    assert!(!ancestors(blocks[1]).contains(&blocks[0]));

    let is_ = induce_syntactic(&b.ic, &m.rep, &m.signature());
    let labels: Vec<&str> = blocks.iter().map(|&v| is_.label(&d.nodes()[v].generator.name).unwrap()).collect();
    assert_ne!(labels[0], labels[1]);
    for l in labels {
        assert!(l == "animal-mechanism" || l == "colour-mechanism");
    }
}
