use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Adjacency;
use crate::error::{Error, Result};

const UNASSIGNED: usize = usize::MAX;

fn components(graph: &Adjacency) -> Vec<Vec<usize>> {
    let n = graph.num_nodes();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            let v = comp[k];
            k += 1;
            for &u in graph.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// BFS distances from `sources`, restricted to nodes with `allowed[v]`.
fn bfs(graph: &Adjacency, sources: &[usize], dist: &mut [usize]) {
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &u in graph.neighbors(v) {
            if dist[u] > dist[v] + 1 {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
}

/// Splits one connected component into `k` connected parts.
fn split_component(graph: &Adjacency, comp: &[usize], k: usize, owner: &mut [usize], first_part: usize) {
    if k == 1 {
        for &v in comp {
            owner[v] = first_part;
        }
        return;
    }
    // Farthest-point seeds.
    let mut dist = vec![usize::MAX; graph.num_nodes()];
    bfs(graph, &[comp[0]], &mut dist);
    let farthest = |d: &[usize]| {
        comp.iter()
            .copied()
            .max_by_key(|&v| (d[v], std::cmp::Reverse(v)))
            .expect("non-empty component")
    };
    let mut seeds = vec![farthest(&dist)];
    while seeds.len() < k {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        bfs(graph, &seeds, &mut dist);
        let next = farthest(&dist);
        if dist[next] == 0 {
            break;
        }
        seeds.push(next);
    }
    // Grow all parts together, always extending the smallest one.
    let mut frontiers: Vec<VecDeque<usize>> = Vec::with_capacity(k);
    let mut sizes = vec![0usize; k];
    for (p, &s) in seeds.iter().enumerate() {
        owner[s] = first_part + p;
        sizes[p] = 1;
        frontiers.push(graph.neighbors(s).iter().copied().collect());
    }
    loop {
        let pick = (0..seeds.len())
            .filter(|&p| !frontiers[p].is_empty())
            .min_by_key(|&p| (sizes[p], p));
        let Some(p) = pick else { break };
        while let Some(v) = frontiers[p].pop_front() {
            if owner[v] == UNASSIGNED {
                owner[v] = first_part + p;
                sizes[p] += 1;
                frontiers[p].extend(graph.neighbors(v).iter().copied().filter(|&u| owner[u] == UNASSIGNED));
                break;
            }
        }
    }
}

/// Greedy BFS partition into `k` disjoint node sets covering the graph.
///
/// Components are partitioned separately with parts allotted in proportion
/// to their size; with fewer parts than components whole components are
/// packed into the currently smallest part.
pub fn partition(graph: &Adjacency, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = graph.num_nodes();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} nodes into {k} parts")));
    }
    let mut comps = components(graph);
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let mut owner = vec![UNASSIGNED; n];
    if k <= comps.len() {
        let mut sizes = vec![0usize; k];
        for comp in &comps {
            let p = (0..k).min_by_key(|&p| (sizes[p], p)).expect("k >= 1");
            sizes[p] += comp.len();
            for &v in comp {
                owner[v] = p;
            }
        }
    } else {
        // One part per component, the remainder handed out by largest share.
        let mut alloc = vec![1usize; comps.len()];
        for _ in comps.len()..k {
            let c = (0..comps.len())
                .filter(|&c| alloc[c] < comps[c].len())
                .max_by(|&a, &b| {
                    let ra = comps[a].len() as f64 / alloc[a] as f64;
                    let rb = comps[b].len() as f64 / alloc[b] as f64;
                    ra.total_cmp(&rb).then(b.cmp(&a))
                })
                .expect("k <= n leaves room");
            alloc[c] += 1;
        }
        let mut next = 0;
        for (comp, &kc) in comps.iter().zip(&alloc) {
            split_component(graph, comp, kc, &mut owner, next);
            next += kc;
        }
    }
    let mut parts = vec![Vec::new(); k];
    for (v, &p) in owner.iter().enumerate() {
        parts[p].push(v);
    }
    parts.retain(|p| !p.is_empty());
    parts.sort_by_key(|p| p[0]);
    Ok(parts)
}

/// Edge-sampled subgraph with local indices.
#[derive(Debug, Clone)]
pub struct SampledSubgraph {
    /// Global ids of the nodes touched by the sampled edges, sorted.
    pub nodes: Vec<usize>,
    /// The sampled edges only, in local indices.
    pub adjacency: Adjacency,
}

/// Draws `edge_budget` distinct undirected edges uniformly at random.
pub fn sample_neighbor_subgraph(graph: &Adjacency, edge_budget: usize, seed: u64) -> Result<SampledSubgraph> {
    let mut edges: Vec<(usize, usize)> = graph.edges().collect();
    if edge_budget > edges.len() {
        return Err(Error::InvalidArgument(format!(
            "edge budget {edge_budget} exceeds the {} available edges",
            edges.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..edge_budget {
        let j = rng.random_range(i..edges.len());
        edges.swap(i, j);
    }
    edges.truncate(edge_budget);
    let mut nodes: Vec<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let local = |g: usize| nodes.binary_search(&g).expect("node present");
    let adjacency = Adjacency::from_edges(nodes.len(), edges.iter().map(|&(a, b)| (local(a), local(b))));
    Ok(SampledSubgraph { nodes, adjacency })
}
