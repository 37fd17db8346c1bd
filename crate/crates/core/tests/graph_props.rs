use hemoflow::graph::{
    add_random_jumpers, dilate, mask_nodes, partition, sample_neighbor_subgraph, Adjacency,
};
use proptest::prelude::*;

fn random_graph() -> impl Strategy<Value = Adjacency> {
    (2usize..64).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..3 * n)
            .prop_map(move |edges| Adjacency::from_edges(n, edges))
    })
}

/// Random connected graph: a random spanning tree plus extra edges.
fn connected_graph(max_n: usize) -> impl Strategy<Value = Adjacency> {
    (2usize..max_n).prop_flat_map(|n| {
        let parents = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = proptest::collection::vec((0..n, 0..n), 0..n);
        (parents, extra).prop_map(move |(parents, extra)| {
            let tree = parents.into_iter().enumerate().map(|(i, p)| (i + 1, p.index(i + 1)));
            Adjacency::from_edges(n, tree.chain(extra))
        })
    })
}

fn is_connected(g: &Adjacency, nodes: &[usize]) -> bool {
    let sub = g.induced(nodes);
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in sub.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn grid(nx: usize, ny: usize, nz: usize) -> Adjacency {
    let id = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let mut edges = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if x + 1 < nx {
                    edges.push((id(x, y, z), id(x + 1, y, z)));
                }
                if y + 1 < ny {
                    edges.push((id(x, y, z), id(x, y + 1, z)));
                }
                if z + 1 < nz {
                    edges.push((id(x, y, z), id(x, y, z + 1)));
                }
            }
        }
    }
    Adjacency::from_edges(nx * ny * nz, edges)
}

proptest! {
    #[test]
    fn constructed_graphs_satisfy_invariants(g in random_graph()) {
        prop_assert!(g.check_invariants().is_ok());
    }

    #[test]
    fn dilation_matches_dense_boolean_square(g in random_graph(), strict in any::<bool>()) {
        let d = dilate(&g, strict);
        prop_assert!(d.check_invariants().is_ok());
        let a = g.to_dense();
        let n = a.len();
        for i in 0..n {
            for j in 0..n {
                let sq = (0..n).any(|k| a[i][k] && a[k][j]);
                let want = i != j && (sq || (!strict && a[i][j]));
                prop_assert_eq!(d.has_edge(i, j), want);
            }
        }
    }

    #[test]
    fn jumpers_add_only_new_pairs(g in random_graph(), frac in 0.0f64..0.5, seed in any::<u64>()) {
        if let Ok((h, added)) = add_random_jumpers(&g, frac, seed) {
            prop_assert!(h.check_invariants().is_ok());
            prop_assert_eq!(added.len(), (frac * g.nnz() as f64 / 2.0).round() as usize);
            prop_assert_eq!(h.num_edges(), g.num_edges() + added.len());
            for (i, j) in added {
                prop_assert!(!g.has_edge(i, j));
            }
        }
    }

    #[test]
    fn masking_yields_the_induced_subgraph(g in random_graph(), ratio in 0.0f64..0.9, seed in any::<u64>()) {
        let m = mask_nodes(&g, ratio, seed).unwrap();
        prop_assert!(m.hidden.len() >= (ratio * g.num_nodes() as f64).round() as usize);
        prop_assert_eq!(m.hidden.len() + m.visible_nodes.len(), g.num_nodes());
        // Oracle: rebuild from the surviving edge list.
        let keep: Vec<Option<usize>> = m.local_index.clone();
        let rebuilt = Adjacency::from_edges(
            m.visible_nodes.len(),
            g.edges().filter_map(|(i, j)| Some((keep[i]?, keep[j]?))),
        );
        prop_assert_eq!(&m.visible, &rebuilt);
        for (l, &v) in m.visible_nodes.iter().enumerate() {
            prop_assert!(m.visible.degree(l) > 0 || g.degree(v) == 0);
        }
    }

    #[test]
    fn partition_covers_disjointly(g in random_graph(), k in 1usize..8) {
        let k = k.min(g.num_nodes());
        let parts = partition(&g, k).unwrap();
        let mut seen = vec![0u8; g.num_nodes()];
        for p in &parts {
            for &v in p {
                seen[v] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn partition_parts_are_connected(g in connected_graph(2000), k in 1usize..16) {
        let k = k.min(g.num_nodes());
        let parts = partition(&g, k).unwrap();
        prop_assert_eq!(parts.len(), k);
        for p in &parts {
            prop_assert!(is_connected(&g, p));
        }
    }

    #[test]
    fn sampled_subgraph_has_exact_budget(g in random_graph(), frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let budget = (frac * g.num_edges() as f64).floor() as usize;
        let s = sample_neighbor_subgraph(&g, budget, seed).unwrap();
        prop_assert_eq!(s.adjacency.num_edges(), budget);
        for (i, j) in s.adjacency.edges() {
            prop_assert!(g.has_edge(s.nodes[i], s.nodes[j]));
        }
    }
}

#[test]
fn large_grid_partitions_are_balanced() {
    let g = grid(30, 20, 20);
    for k in [7, 11, 15] {
        let parts = partition(&g, k).unwrap();
        let max = parts.iter().map(Vec::len).max().unwrap() as f64;
        let min = parts.iter().map(Vec::len).min().unwrap() as f64;
        assert!(max / min <= 1.5, "k = {k}: imbalance {}", max / min);
        for p in &parts {
            assert!(is_connected(&g, p));
        }
    }
}
