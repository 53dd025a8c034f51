//! Attributed-graph data model: colored undirected graphs, planted patterns,
//! grid construction, and the occurrence / connectedness predicates that
//! define the dataset partitions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of occurrence witnesses collected by [`occurs`].
/// The boolean result is exact regardless of the cap.
pub const DEFAULT_WITNESS_CAP: usize = 1000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) is out of range for a graph with {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0} is not allowed")]
    SelfLoop(usize),
    #[error("graph must have at least one node")]
    Empty,
    #[error("color palette must not be empty")]
    EmptyPalette,
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("anchor index {0} is out of range for a graph with {1} nodes")]
    AnchorOutOfRange(usize, usize),
    #[error("pattern colors must be pairwise distinct")]
    DuplicatePatternColor,
    #[error("pattern must be connected")]
    DisconnectedPattern,
    #[error("pattern must have at least one node")]
    EmptyPattern,
}

/// Undirected graph with one color index per node. Immutable after
/// construction; all accessors are read-only and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    colors: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    label: Option<u8>,
    anchor: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from per-node colors and an undirected edge list.
    /// Edges may be given in either orientation and with duplicates; they are
    /// symmetrized and deduplicated. Self-loops are rejected.
    pub fn new(colors: Vec<usize>, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let n = colors.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if a >= n || b >= n {
                return Err(GraphError::EdgeOutOfRange(a, b, n));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &canon {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph { colors, neighbors, edges: canon, label: None, anchor: None })
    }

    pub fn num_nodes(&self) -> usize {
        self.colors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn color(&self, i: usize) -> usize {
        self.colors[i]
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn max_color(&self) -> usize {
        self.colors.iter().copied().max().unwrap_or(0)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Edges with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn anchor(&self) -> Option<&[usize]> {
        self.anchor.as_deref()
    }

    pub fn with_label(mut self, label: Option<u8>) -> Result<Self, GraphError> {
        if let Some(l) = label {
            if l > 1 {
                return Err(GraphError::BadLabel(l));
            }
        }
        self.label = label;
        Ok(self)
    }

    pub fn with_anchor(mut self, anchor: Option<Vec<usize>>) -> Result<Self, GraphError> {
        if let Some(list) = &anchor {
            for &i in list {
                if i >= self.num_nodes() {
                    return Err(GraphError::AnchorOutOfRange(i, self.num_nodes()));
                }
            }
        }
        self.anchor = anchor;
        Ok(self)
    }

    /// Same structure with a replacement color vector (used by planting).
    pub fn recolored(&self, colors: Vec<usize>) -> Self {
        assert_eq!(colors.len(), self.num_nodes());
        Graph { colors, ..self.clone() }
    }

    /// Relabels nodes: node `i` becomes `perm[i]`. `perm` must be a
    /// permutation of `0..n`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n);
        let mut colors = vec![0usize; n];
        for i in 0..n {
            colors[perm[i]] = self.colors[i];
        }
        let edges: Vec<(usize, usize)> =
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut g = Graph::new(colors, &edges).expect("relabeling preserves validity");
        g.label = self.label;
        g.anchor = self.anchor.as_ref().map(|a| a.iter().map(|&i| perm[i]).collect());
        g
    }
}

/// JSONL record for a graph. Edges are listed once with `i < j`; readers
/// symmetrize on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub n: usize,
    pub colors: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub label: Option<u8>,
    pub anchor: Option<Vec<usize>>,
}

impl GraphRecord {
    pub fn from_graph(g: &Graph) -> Self {
        GraphRecord {
            n: g.num_nodes(),
            colors: g.colors().to_vec(),
            edges: g.edges().to_vec(),
            label: g.label(),
            anchor: g.anchor().map(|a| a.to_vec()),
        }
    }

    pub fn into_graph(self) -> Result<Graph, GraphError> {
        if self.colors.len() != self.n {
            return Err(GraphError::EdgeOutOfRange(self.n, self.colors.len(), self.n));
        }
        Graph::new(self.colors, &self.edges)?
            .with_label(self.label)?
            .with_anchor(self.anchor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Chain,
    Star,
}

/// The planted subgraph: a small connected graph whose nodes carry pairwise
/// distinct colors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    colors: Vec<usize>,
    edges: Vec<(usize, usize)>,
    kind: PatternKind,
}

impl Pattern {
    /// Path pattern `colors[0] - colors[1] - ... - colors[m-1]`.
    pub fn chain(colors: Vec<usize>) -> Result<Self, GraphError> {
        let m = colors.len();
        let edges: Vec<(usize, usize)> = (0..m.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Self::with_edges(colors, edges, PatternKind::Chain)
    }

    /// Star pattern with hub `colors[0]` connected to every other node.
    pub fn star(colors: Vec<usize>) -> Result<Self, GraphError> {
        let m = colors.len();
        let edges: Vec<(usize, usize)> = (1..m).map(|i| (0, i)).collect();
        Self::with_edges(colors, edges, PatternKind::Star)
    }

    pub fn with_edges(
        colors: Vec<usize>,
        edges: Vec<(usize, usize)>,
        kind: PatternKind,
    ) -> Result<Self, GraphError> {
        let m = colors.len();
        if m == 0 {
            return Err(GraphError::EmptyPattern);
        }
        let mut sorted = colors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != m {
            return Err(GraphError::DuplicatePatternColor);
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if a >= m || b >= m {
                return Err(GraphError::EdgeOutOfRange(a, b, m));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let p = Pattern { colors, edges: canon, kind };
        if !p.is_connected() {
            return Err(GraphError::DisconnectedPattern);
        }
        Ok(p)
    }

    fn is_connected(&self) -> bool {
        let m = self.size();
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &self.edges {
                let w = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn size(&self) -> usize {
        self.colors.len()
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    /// Node adjacent to all others, if any (the hub of a star, or the middle
    /// node of a 3-chain). Planting on a host anchor requires one.
    pub fn center(&self) -> Option<usize> {
        let m = self.size();
        if m == 1 {
            return Some(0);
        }
        (0..m).find(|&i| self.degree(i) == m - 1)
    }

    pub fn color_position(&self, color: usize) -> Option<usize> {
        self.colors.iter().position(|&c| c == color)
    }

    /// The pattern viewed as a standalone graph.
    pub fn as_graph(&self) -> Graph {
        Graph::new(self.colors.clone(), &self.edges).expect("pattern is a valid graph")
    }
}

/// Ordered tuple of host-node indices witnessing a pattern placement:
/// position `j` hosts pattern node `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding(pub Vec<usize>);

impl Embedding {
    pub fn nodes(&self) -> &[usize] {
        &self.0
    }
}

/// Which side of the occurrence/connectedness split a graph falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    D1,
    D0,
    DPerp,
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Partition::D1 => write!(f, "d1"),
            Partition::D0 => write!(f, "d0"),
            Partition::DPerp => write!(f, "dperp"),
        }
    }
}

/// 4-neighborhood lattice with colors drawn i.i.d. uniform from `palette`.
/// Deterministic given `(rows, cols, palette, seed)`. The palette is treated
/// as a set (sorted, deduplicated).
pub fn grid_graph(
    rows: usize,
    cols: usize,
    palette: &[usize],
    seed: u64,
) -> Result<Graph, GraphError> {
    if rows == 0 || cols == 0 {
        return Err(GraphError::Empty);
    }
    let mut pal = palette.to_vec();
    pal.sort_unstable();
    pal.dedup();
    if pal.is_empty() {
        return Err(GraphError::EmptyPalette);
    }
    let n = rows * cols;
    let mut edges = Vec::with_capacity(2 * n);
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors: Vec<usize> = (0..n).map(|_| pal[rng.random_range(0..pal.len())]).collect();
    Graph::new(colors, &edges)
}

/// Candidate host nodes per pattern position (nodes sharing the position's
/// color), each list sorted ascending. Empty list at any position means the
/// pattern cannot occur.
fn color_classes(g: &Graph, p: &Pattern) -> Vec<Vec<usize>> {
    p.colors()
        .iter()
        .map(|&c| (0..g.num_nodes()).filter(|&i| g.color(i) == c).collect())
        .collect()
}

/// Does the pattern occur in `g` (all attributed nodes present)? Returns all
/// witness tuples up to `DEFAULT_WITNESS_CAP`, in lexicographic order.
///
/// Pattern colors are pairwise distinct, so occurrence reduces to every
/// pattern color appearing among the graph's colors, and the witnesses are
/// Cartesian selections over per-color candidate lists.
pub fn occurs(g: &Graph, p: &Pattern) -> (bool, Vec<Embedding>) {
    occurs_with_cap(g, p, DEFAULT_WITNESS_CAP)
}

/// [`occurs`] with an explicit witness cap. The boolean is exact regardless
/// of the cap.
pub fn occurs_with_cap(g: &Graph, p: &Pattern, cap: usize) -> (bool, Vec<Embedding>) {
    let classes = color_classes(g, p);
    if classes.iter().any(|c| c.is_empty()) {
        return (false, Vec::new());
    }
    let mut witnesses = Vec::new();
    let mut tuple = vec![0usize; p.size()];
    collect_witnesses(&classes, 0, &mut tuple, &mut witnesses, cap);
    (true, witnesses)
}

fn collect_witnesses(
    classes: &[Vec<usize>],
    pos: usize,
    tuple: &mut Vec<usize>,
    out: &mut Vec<Embedding>,
    cap: usize,
) {
    if out.len() >= cap {
        return;
    }
    if pos == classes.len() {
        out.push(Embedding(tuple.clone()));
        return;
    }
    for &node in &classes[pos] {
        tuple[pos] = node;
        collect_witnesses(classes, pos + 1, tuple, out, cap);
        if out.len() >= cap {
            return;
        }
    }
}

/// Is there an occurrence witness that also carries every pattern edge
/// (element-wise `A[S,S] >= A*`)? Returns the lexicographically first such
/// tuple. The search backtracks over per-color candidates and is exact (not
/// limited by the witness cap).
pub fn connected_embedding(g: &Graph, p: &Pattern) -> (bool, Option<Embedding>) {
    let classes = color_classes(g, p);
    if classes.iter().any(|c| c.is_empty()) {
        return (false, None);
    }
    let mut tuple = vec![0usize; p.size()];
    if search_connected(g, p, &classes, 0, &mut tuple) {
        (true, Some(Embedding(tuple)))
    } else {
        (false, None)
    }
}

fn search_connected(
    g: &Graph,
    p: &Pattern,
    classes: &[Vec<usize>],
    pos: usize,
    tuple: &mut Vec<usize>,
) -> bool {
    if pos == classes.len() {
        return true;
    }
    'candidates: for &node in &classes[pos] {
        for earlier in 0..pos {
            if p.has_edge(earlier, pos) && !g.has_edge(tuple[earlier], node) {
                continue 'candidates;
            }
        }
        tuple[pos] = node;
        if search_connected(g, p, classes, pos + 1, tuple) {
            return true;
        }
    }
    false
}

/// Exactly one of D1 (connected embedding exists), D0 (no occurrence), or
/// DPerp (occurs but never connected).
pub fn classify_partition(g: &Graph, p: &Pattern) -> Partition {
    let (connected, _) = connected_embedding(g, p);
    if connected {
        return Partition::D1;
    }
    let (occ, _) = occurs(g, p);
    if occ {
        Partition::DPerp
    } else {
        Partition::D0
    }
}
