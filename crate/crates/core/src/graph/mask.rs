use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Adjacency;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: u64 = 16;

/// Graph with a subset of nodes removed together with all their edges.
#[derive(Debug, Clone)]
pub struct MaskedGraph {
    /// Induced subgraph on the visible nodes, in local indices.
    pub visible: Adjacency,
    /// Hidden node ids, sorted.
    pub hidden: Vec<usize>,
    /// Local visible index to global id, sorted ascending.
    pub visible_nodes: Vec<usize>,
    /// Global id to local visible index.
    pub local_index: Vec<Option<usize>>,
}

impl MaskedGraph {
    fn from_hidden(graph: &Adjacency, hidden_flags: &[bool]) -> Self {
        let visible_nodes: Vec<usize> = (0..graph.num_nodes()).filter(|&i| !hidden_flags[i]).collect();
        let hidden = (0..graph.num_nodes()).filter(|&i| hidden_flags[i]).collect();
        let mut local_index = vec![None; graph.num_nodes()];
        for (l, &g) in visible_nodes.iter().enumerate() {
            local_index[g] = Some(l);
        }
        MaskedGraph {
            visible: graph.induced(&visible_nodes),
            hidden,
            visible_nodes,
            local_index,
        }
    }

    /// Restricts another mask over the same nodes to the visible set.
    pub fn restrict(&self, other: &Adjacency) -> Adjacency {
        other.induced(&self.visible_nodes)
    }

    /// Visible nodes that had neighbours in `graph` but lost all of them.
    fn stranded(&self, graph: &Adjacency) -> Vec<usize> {
        self.visible_nodes
            .iter()
            .enumerate()
            .filter(|&(l, &g)| self.visible.degree(l) == 0 && graph.degree(g) > 0)
            .map(|(_, &g)| g)
            .collect()
    }
}

/// Hides `round(ratio * N)` random nodes. Draws are repeated a bounded number
/// of times to avoid visible nodes left without neighbours; any that remain
/// after the last draw are hidden as well.
pub fn mask_nodes(graph: &Adjacency, ratio: f64, seed: u64) -> Result<MaskedGraph> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio must lie in [0, 1), got {ratio}")));
    }
    let n = graph.num_nodes();
    let count = (ratio * n as f64).round() as usize;
    let mut best: Option<(usize, MaskedGraph)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut flags = vec![false; n];
        for &i in &order[..count] {
            flags[i] = true;
        }
        let masked = MaskedGraph::from_hidden(graph, &flags);
        let stranded = masked.stranded(graph).len();
        if stranded == 0 {
            return Ok(masked);
        }
        if best.as_ref().is_none_or(|(s, _)| stranded < *s) {
            best = Some((stranded, masked));
        }
    }
    let (_, masked) = best.expect("at least one attempt");
    let mut flags = vec![false; n];
    for &i in masked.hidden.iter().chain(masked.stranded(graph).iter()) {
        flags[i] = true;
    }
    Ok(MaskedGraph::from_hidden(graph, &flags))
}

#[cfg(test)]
mod tests {
    use super::super::adjacency::tests::{complete, path};
    use super::*;

    #[test]
    fn zero_ratio_is_identity() {
        let p = path(7);
        let m = mask_nodes(&p, 0.0, 1).unwrap();
        assert_eq!(m.visible, p);
        assert!(m.hidden.is_empty());
    }

    #[test]
    fn half_of_ten_complete_nodes_hidden() {
        let m = mask_nodes(&complete(10), 0.5, 4).unwrap();
        assert_eq!(m.hidden.len(), 5);
        assert_eq!(m.visible.num_nodes(), 5);
    }

    #[test]
    fn hiding_one_triangle_node_leaves_an_edge() {
        let m = mask_nodes(&complete(3), 0.34, 8).unwrap();
        assert_eq!(m.hidden.len(), 1);
        assert_eq!(m.visible.num_edges(), 1);
    }

    #[test]
    fn no_visible_node_is_stranded() {
        let p = path(40);
        for seed in 0..30 {
            let m = mask_nodes(&p, 0.5, seed).unwrap();
            assert!(m.hidden.len() >= 20);
            assert!(m.visible.empty_rows().is_empty());
            for (l, &g) in m.visible_nodes.iter().enumerate() {
                assert_eq!(m.local_index[g], Some(l));
            }
        }
    }

    #[test]
    fn invalid_ratio_rejected() {
        assert!(mask_nodes(&path(3), 1.0, 0).is_err());
    }
}
