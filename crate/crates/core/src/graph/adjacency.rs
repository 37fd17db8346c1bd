use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meshio::{Mesh, NodeType};

/// Symmetric boolean adjacency in CSR form: no self loops, sorted unique
/// columns per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    /// For stored entry `e = (i, j)`, the index of the mirrored entry `(j, i)`.
    transpose: Vec<usize>,
}

impl Adjacency {
    /// Builds from arbitrary pairs: mirrors them, drops self loops and duplicates.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (i, j) in edges {
            assert!(i < num_nodes && j < num_nodes, "edge ({i}, {j}) out of range");
            if i != j {
                rows[i].push(j);
                rows[j].push(i);
            }
        }
        Self::from_rows(rows)
    }

    /// Builds from per-row neighbour lists that are already symmetric.
    pub(crate) fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            col_indices.extend(row.iter().copied().filter(|&j| j != i));
            row_offsets.push(col_indices.len());
        }
        let mut adj = Adjacency {
            row_offsets,
            col_indices,
            transpose: Vec::new(),
        };
        adj.transpose = adj.build_transpose();
        adj
    }

    fn build_transpose(&self) -> Vec<usize> {
        // Walking rows in order visits the entries of each column in order,
        // so a per-row cursor locates mirrors in linear time.
        let n = self.num_nodes();
        let mut cursor: Vec<usize> = self.row_offsets[..n].to_vec();
        let mut tr = vec![usize::MAX; self.col_indices.len()];
        for i in 0..n {
            for e in self.row_range(i) {
                let j = self.col_indices[e];
                let m = cursor[j];
                debug_assert_eq!(self.col_indices[m], i, "adjacency is not symmetric");
                tr[e] = m;
                cursor[j] += 1;
            }
        }
        tr
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self::from_rows(vec![Vec::new(); num_nodes])
    }

    pub fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// Stored (directed) entries; twice the number of undirected edges.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.nnz() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn transpose_index(&self) -> &[usize] {
        &self.transpose
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_range(i)]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes()).map(|i| self.neighbors(i).to_vec()).collect()
    }

    pub fn union(&self, other: &Adjacency) -> Adjacency {
        assert_eq!(self.num_nodes(), other.num_nodes());
        let rows = (0..self.num_nodes())
            .map(|i| {
                let mut r = self.neighbors(i).to_vec();
                r.extend_from_slice(other.neighbors(i));
                r
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Induced subgraph on `nodes` (local index = position in `nodes`).
    pub fn induced(&self, nodes: &[usize]) -> Adjacency {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (l, &g) in nodes.iter().enumerate() {
            local[g] = l;
        }
        let rows = nodes
            .iter()
            .map(|&g| {
                self.neighbors(g)
                    .iter()
                    .filter_map(|&j| (local[j] != usize::MAX).then_some(local[j]))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Rows with no stored entry.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.degree(i) == 0).collect()
    }

    /// Checks symmetry, empty diagonal, sorted unique columns and the mirror index.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.transpose.len() != self.nnz() {
            return Err(Error::Graph("transpose index has wrong length".into()));
        }
        for i in 0..n {
            let row = self.neighbors(i);
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Graph(format!("row {i} not strictly sorted")));
                }
            }
            for (k, &j) in row.iter().enumerate() {
                if j >= n {
                    return Err(Error::Graph(format!("row {i} column {j} out of range")));
                }
                if j == i {
                    return Err(Error::Graph(format!("self loop on {i}")));
                }
                if !self.has_edge(j, i) {
                    return Err(Error::Graph(format!("edge ({i}, {j}) has no mirror")));
                }
                let e = self.row_offsets[i] + k;
                let m = self.transpose[e];
                if self.col_indices[m] != i || !self.row_range(j).contains(&m) {
                    return Err(Error::Graph(format!("bad mirror index for ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for &o in &self.row_offsets {
            h.update((o as u64).to_le_bytes());
        }
        for &c in &self.col_indices {
            h.update((c as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    /// Dense boolean matrix, row-major.
    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let n = self.num_nodes();
        let mut d = vec![vec![false; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for &j in self.neighbors(i) {
                row[j] = true;
            }
        }
        d
    }
}

/// Mesh graph: `(i, j)` is an edge iff `i != j` share a tet.
pub fn build_adjacency(mesh: &Mesh) -> Adjacency {
    let edges = mesh.tets.iter().flat_map(|t| {
        (0..4).flat_map(move |a| (a + 1..4).map(move |b| (t[a], t[b])))
    });
    Adjacency::from_edges(mesh.num_nodes(), edges)
}

/// Adds `round(fraction * nnz / 2)` random edges between previously
/// non-adjacent node pairs. Returns the new graph and the added pairs.
pub fn add_random_jumpers(
    adj: &Adjacency,
    fraction: f64,
    seed: u64,
) -> Result<(Adjacency, Vec<(usize, usize)>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "jumper fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let n = adj.num_nodes();
    let wanted = (fraction * adj.nnz() as f64 / 2.0).round() as usize;
    if wanted == 0 {
        return Ok((adj.clone(), Vec::new()));
    }
    if n < 2 {
        return Err(Error::Graph("random jumpers need at least two nodes".into()));
    }
    let all_pairs = n as u128 * (n as u128 - 1) / 2;
    let available = all_pairs - adj.num_edges() as u128;
    if wanted as u128 > available {
        return Err(Error::Graph(format!(
            "requested {wanted} jumpers but only {available} non-adjacent pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(wanted);
    if (wanted as u128) * 4 > available {
        // Dense request: enumerate candidates and draw without replacement.
        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !adj.has_edge(i, j))
            .collect();
        for k in 0..wanted {
            let pick = rng.random_range(k..candidates.len());
            candidates.swap(k, pick);
            chosen.push(candidates[k]);
        }
    } else {
        let mut taken: HashSet<(usize, usize)> = HashSet::with_capacity(wanted);
        while chosen.len() < wanted {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if adj.has_edge(pair.0, pair.1) || !taken.insert(pair) {
                continue;
            }
            chosen.push(pair);
        }
    }
    let extra = Adjacency::from_edges(n, chosen.iter().copied());
    Ok((adj.union(&extra), chosen))
}

/// Lowest-index `ceil(fraction * |inlet|)` inlet nodes.
pub fn select_global_nodes(mesh: &Mesh, fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "global fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let inlet = mesh.nodes_of_type(NodeType::Inlet);
    // Guard against products like 0.05 * 20 = 1.0000000000000002.
    let count = ((fraction * inlet.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    Ok(inlet.into_iter().take(count).collect())
}

/// Connects every node of `globals` symmetrically to every other node.
pub fn connect_globally(adj: &Adjacency, globals: &[usize]) -> Adjacency {
    if globals.is_empty() {
        return adj.clone();
    }
    let n = adj.num_nodes();
    let mut rows = adj.rows();
    for &g in globals {
        rows[g] = (0..n).filter(|&j| j != g).collect();
    }
    for (i, row) in rows.iter_mut().enumerate() {
        for &g in globals {
            if g != i {
                row.push(g);
            }
        }
    }
    Adjacency::from_rows(rows)
}

/// Global attention over a fraction of the mesh's inlet nodes.
pub fn add_global_attention(
    adj: &Adjacency,
    mesh: &Mesh,
    fraction: f64,
) -> Result<(Adjacency, Vec<usize>)> {
    let globals = select_global_nodes(mesh, fraction)?;
    Ok((connect_globally(adj, &globals), globals))
}

/// Support of `A + A^2` without the diagonal, or of `A^2` alone when `strict_a2`.
pub fn dilate(adj: &Adjacency, strict_a2: bool) -> Adjacency {
    let n = adj.num_nodes();
    let mut mark = vec![usize::MAX; n];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::new();
        if !strict_a2 {
            for &j in adj.neighbors(i) {
                mark[j] = i;
                row.push(j);
            }
        }
        for &k in adj.neighbors(i) {
            for &j in adj.neighbors(k) {
                if j != i && mark[j] != i {
                    mark[j] = i;
                    row.push(j);
                }
            }
        }
        rows.push(row);
    }
    Adjacency::from_rows(rows)
}
