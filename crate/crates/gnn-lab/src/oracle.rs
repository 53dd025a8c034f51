//! Exhaustive discriminative-subgraph search: enumerate all small connected
//! induced subgraphs per graph, canonicalize them up to color-preserving
//! isomorphism, and keep those present in every positive graph and absent
//! from every negative graph.

use crate::graph::{Graph, Pattern};
use serde::Serialize;
use std::collections::BTreeSet;
use thiserror::Error;

/// Enumeration guard: permutation canonicalization is brute-force, so
/// subgraph sizes stay small.
pub const MAX_SUBGRAPH_SIZE: usize = 5;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("subgraph size bound {0} exceeds the supported maximum {MAX_SUBGRAPH_SIZE}")]
    SizeGuard(usize),
    #[error("size bound must be at least 1")]
    ZeroSize,
    #[error("positive set must not be empty")]
    NoPositives,
}

/// A connected attributed subgraph up to color-preserving isomorphism.
///
/// The key is the lexicographically smallest `(colors, adjacency bits)` pair
/// over all node orderings, so two subgraphs compare equal iff they are
/// isomorphic. Colors end up sorted ascending; the adjacency is bit-packed
/// over the upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CanonicalSubgraph {
    size: usize,
    colors: Vec<usize>,
    adj_bits: u32,
}

fn triangle_bit(size: usize, a: usize, b: usize) -> u32 {
    debug_assert!(a < b && b < size);
    // Index of (a, b) in the row-major upper triangle.
    let before: usize = (0..a).map(|r| size - r - 1).sum();
    let idx = before + (b - a - 1);
    1u32 << idx
}

impl CanonicalSubgraph {
    /// Canonical form of the subgraph induced by `nodes` in `g`.
    pub fn from_induced(g: &Graph, nodes: &[usize]) -> Self {
        let m = nodes.len();
        assert!(m >= 1 && m <= MAX_SUBGRAPH_SIZE);
        let colors: Vec<usize> = nodes.iter().map(|&v| g.color(v)).collect();
        let mut adj = vec![false; m * m];
        for a in 0..m {
            for b in (a + 1)..m {
                if g.has_edge(nodes[a], nodes[b]) {
                    adj[a * m + b] = true;
                    adj[b * m + a] = true;
                }
            }
        }
        Self::canonicalize(&colors, &adj, m)
    }

    pub fn from_pattern(p: &Pattern) -> Self {
        let g = p.as_graph();
        let nodes: Vec<usize> = (0..p.size()).collect();
        Self::from_induced(&g, &nodes)
    }

    /// Minimum of `(colors, bits)` over all permutations of the nodes.
    fn canonicalize(colors: &[usize], adj: &[bool], m: usize) -> Self {
        let mut perm: Vec<usize> = (0..m).collect();
        let mut best: Option<(Vec<usize>, u32)> = None;
        permute(&mut perm, 0, &mut |p| {
            let cand_colors: Vec<usize> = p.iter().map(|&i| colors[i]).collect();
            if let Some((bc, _)) = &best {
                if cand_colors > *bc {
                    return;
                }
            }
            let mut bits = 0u32;
            for a in 0..m {
                for b in (a + 1)..m {
                    if adj[p[a] * m + p[b]] {
                        bits |= triangle_bit(m, a, b);
                    }
                }
            }
            let cand = (cand_colors, bits);
            if best.as_ref().map(|b| cand < *b).unwrap_or(true) {
                best = Some(cand);
            }
        });
        let (colors, adj_bits) = best.expect("at least one permutation");
        CanonicalSubgraph { size: m, colors, adj_bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for a in 0..self.size {
            for b in (a + 1)..self.size {
                if self.adj_bits & triangle_bit(self.size, a, b) != 0 {
                    edges.push((a, b));
                }
            }
        }
        edges
    }

    /// Does this subgraph embed in `g` with all of its edges present
    /// (`A[S,S] >= A*`)? Backtracking over color-compatible hosts; repeated
    /// colors are allowed.
    pub fn embeds_connected(&self, g: &Graph) -> bool {
        let edges = self.edges();
        let mut hosts: Vec<usize> = Vec::with_capacity(self.size);
        self.embed_rec(g, &edges, &mut hosts)
    }

    fn embed_rec(&self, g: &Graph, edges: &[(usize, usize)], hosts: &mut Vec<usize>) -> bool {
        let pos = hosts.len();
        if pos == self.size {
            return true;
        }
        'candidates: for v in 0..g.num_nodes() {
            if g.color(v) != self.colors[pos] || hosts.contains(&v) {
                continue;
            }
            for &(a, b) in edges {
                if b == pos && !g.has_edge(hosts[a], v) {
                    continue 'candidates;
                }
            }
            hosts.push(v);
            if self.embed_rec(g, edges, hosts) {
                return true;
            }
            hosts.pop();
        }
        false
    }
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

/// All connected induced subgraphs of `g` with at most `k` nodes, as a set
/// of canonical forms.
///
/// Subset enumeration visits each connected node subset exactly once: start
/// from each root in increasing order and extend only with exclusive
/// neighbors of larger index.
pub fn enumerate_subgraphs(g: &Graph, k: usize) -> Result<BTreeSet<CanonicalSubgraph>, OracleError> {
    if k == 0 {
        return Err(OracleError::ZeroSize);
    }
    if k > MAX_SUBGRAPH_SIZE {
        return Err(OracleError::SizeGuard(k));
    }
    let mut out = BTreeSet::new();
    let n = g.num_nodes();
    for root in 0..n {
        let mut subset = vec![root];
        let extension: Vec<usize> =
            g.neighbors(root).iter().copied().filter(|&u| u > root).collect();
        extend_subset(g, k, root, &mut subset, extension, &mut out);
    }
    Ok(out)
}

fn extend_subset(
    g: &Graph,
    k: usize,
    root: usize,
    subset: &mut Vec<usize>,
    mut extension: Vec<usize>,
    out: &mut BTreeSet<CanonicalSubgraph>,
) {
    out.insert(CanonicalSubgraph::from_induced(g, subset));
    if subset.len() == k {
        return;
    }
    while let Some(w) = extension.pop() {
        let mut next_ext = extension.clone();
        for &u in g.neighbors(w) {
            if u > root
                && !subset.contains(&u)
                && !next_ext.contains(&u)
                && !subset.iter().any(|&s| g.has_edge(s, u))
            {
                next_ext.push(u);
            }
        }
        subset.push(w);
        extend_subset(g, k, root, subset, next_ext, out);
        subset.pop();
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchHit {
    pub size: usize,
    pub colors: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    /// Graphs of each class containing a connected embedding of this
    /// subgraph, re-verified independently of the enumeration.
    pub d1_hits: usize,
    pub d1_total: usize,
    pub d0_hits: usize,
    pub d0_total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub k: usize,
    pub hits: Vec<SearchHit>,
}

impl SearchResult {
    pub fn contains_pattern(&self, p: &Pattern) -> bool {
        let key = CanonicalSubgraph::from_pattern(p);
        self.hits
            .iter()
            .any(|h| h.size == key.size() && h.colors == key.colors() && h.edges == key.edges())
    }
}

/// Subgraphs present (as induced connected subgraphs) in every positive graph
/// and no negative graph: intersection over positives minus union over
/// negatives, folded in dataset order.
pub fn exhaustive_search(
    d1: &[Graph],
    d0: &[Graph],
    k: usize,
) -> Result<BTreeSet<CanonicalSubgraph>, OracleError> {
    if d1.is_empty() {
        return Err(OracleError::NoPositives);
    }
    let mut common: Option<BTreeSet<CanonicalSubgraph>> = None;
    for g in d1 {
        let s = enumerate_subgraphs(g, k)?;
        common = Some(match common {
            None => s,
            Some(prev) => prev.intersection(&s).cloned().collect(),
        });
    }
    let mut result = common.expect("d1 nonempty");
    for g in d0 {
        if result.is_empty() {
            break;
        }
        let s = enumerate_subgraphs(g, k)?;
        result = result.difference(&s).cloned().collect();
    }
    Ok(result)
}

/// [`exhaustive_search`] plus per-hit embedding statistics against both
/// classes (the soundness re-check).
pub fn search_with_coverage(
    d1: &[Graph],
    d0: &[Graph],
    k: usize,
) -> Result<SearchResult, OracleError> {
    let found = exhaustive_search(d1, d0, k)?;
    let hits = found
        .into_iter()
        .map(|sub| {
            let d1_hits = d1.iter().filter(|g| sub.embeds_connected(g)).count();
            let d0_hits = d0.iter().filter(|g| sub.embeds_connected(g)).count();
            SearchHit {
                size: sub.size(),
                colors: sub.colors().to_vec(),
                edges: sub.edges(),
                d1_hits,
                d1_total: d1.len(),
                d0_hits,
                d0_total: d0.len(),
            }
        })
        .collect();
    Ok(SearchResult { k, hits })
}
