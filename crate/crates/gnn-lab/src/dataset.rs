//! Synthesis of partitioned datasets: full / partial / scattered plantings of
//! a pattern into background grid graphs or arbitrary host graphs, with
//! post-hoc verification and deterministic serialization.

use crate::graph::{
    classify_partition, grid_graph, Graph, GraphError, Partition, Pattern,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Retries per stochastic placement before synthesis gives up.
pub const RETRY_BUDGET: usize = 100;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("anchor {anchor} has degree {degree} but the pattern needs {needed} neighbors")]
    InvalidAnchor { anchor: usize, degree: usize, needed: usize },
    #[error("pattern has no center node adjacent to all others; cannot plant on an anchor")]
    NoCenter,
    #[error("subset size {0} must be at least 1 and smaller than the pattern size {1}")]
    BadSubsetSize(usize, usize),
    #[error("synthesis failed after {budget} retries: {context}")]
    Exhausted { budget: usize, context: String },
    #[error("background palette (first {bg} colors) overlaps pattern colors {colors:?}")]
    PaletteOverlap { bg: usize, colors: Vec<usize> },
    #[error("grid too small: {nodes} nodes cannot host a pattern of size {pattern}")]
    GridTooSmall { nodes: usize, pattern: usize },
    #[error("per-partition count must be at least 1")]
    EmptyPartition,
    #[error("host colors overlap pattern colors (offending color {0}); remap hosts first")]
    HostColorClash(usize),
    #[error("{0} planting requires a pattern with at least 2 nodes")]
    PatternTooSmall(&'static str),
    #[error("synthesized graph verified as {actual} but {expected} was required")]
    VerificationFailed { expected: Partition, actual: Partition },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io { path: path.display().to_string(), source }
}

/// Everything needed to synthesize a grid-graph dataset deterministically.
/// Background colors are `0..bg_colors`; pattern colors must be disjoint
/// from that range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub bg_colors: usize,
    pub pattern: Pattern,
    pub per_partition: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Standard layout: background colors `0..bg_colors`, pattern colors
    /// `bg_colors..bg_colors + len` forming a chain.
    pub fn grid_chain(
        rows: usize,
        cols: usize,
        bg_colors: usize,
        chain_len: usize,
        per_partition: usize,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let colors: Vec<usize> = (bg_colors..bg_colors + chain_len).collect();
        let pattern = Pattern::chain(colors)?;
        let spec = SynthSpec { rows, cols, bg_colors, pattern, per_partition, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.per_partition == 0 {
            return Err(SynthError::EmptyPartition);
        }
        let overlap: Vec<usize> = self
            .pattern
            .colors()
            .iter()
            .copied()
            .filter(|&c| c < self.bg_colors)
            .collect();
        if !overlap.is_empty() {
            return Err(SynthError::PaletteOverlap { bg: self.bg_colors, colors: overlap });
        }
        if self.rows * self.cols < self.pattern.size() {
            return Err(SynthError::GridTooSmall {
                nodes: self.rows * self.cols,
                pattern: self.pattern.size(),
            });
        }
        Ok(())
    }

    /// Smallest palette covering backgrounds and pattern colors.
    pub fn palette_size(&self) -> usize {
        let max_pattern = self.pattern.colors().iter().copied().max().unwrap_or(0);
        self.bg_colors.max(max_pattern + 1)
    }

    pub fn background_palette(&self) -> Vec<usize> {
        (0..self.bg_colors).collect()
    }
}

/// Labeled graphs split into the three partitions. `d1` graphs carry label 1
/// and planting metadata, `d0` carry label 0, `dperp` carry no label.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    pub d1: Vec<Graph>,
    pub d0: Vec<Graph>,
    pub dperp: Vec<Graph>,
    pub pattern: Pattern,
    pub palette_size: usize,
}

impl PartitionedDataset {
    pub fn training_graphs(&self) -> Vec<&Graph> {
        self.d1.iter().chain(self.d0.iter()).collect()
    }

    pub fn iter_tagged(&self) -> impl Iterator<Item = (Partition, &Graph)> {
        self.d1
            .iter()
            .map(|g| (Partition::D1, g))
            .chain(self.d0.iter().map(|g| (Partition::D0, g)))
            .chain(self.dperp.iter().map(|g| (Partition::DPerp, g)))
    }

    pub fn len(&self) -> usize {
        self.d1.len() + self.d0.len() + self.dperp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recolors `anchor` to the pattern's center color and `M - 1` randomly
/// chosen distinct neighbors to the remaining pattern colors. The anchor
/// metadata records the planted tuple, center first.
pub fn plant_full(
    g: &Graph,
    p: &Pattern,
    anchor: usize,
    rng: &mut impl Rng,
) -> Result<Graph, SynthError> {
    let center = p.center().ok_or(SynthError::NoCenter)?;
    let needed = p.size() - 1;
    if g.degree(anchor) < needed {
        return Err(SynthError::InvalidAnchor {
            anchor,
            degree: g.degree(anchor),
            needed,
        });
    }
    let mut neighbors = g.neighbors(anchor).to_vec();
    neighbors.shuffle(rng);
    neighbors.truncate(needed);

    let mut colors = g.colors().to_vec();
    colors[anchor] = p.colors()[center];
    let mut planted = vec![anchor];
    let mut slot = 0usize;
    for pos in 0..p.size() {
        if pos == center {
            continue;
        }
        colors[neighbors[slot]] = p.colors()[pos];
        planted.push(neighbors[slot]);
        slot += 1;
    }
    Ok(g
        .recolored(colors)
        .with_label(Some(1))?
        .with_anchor(Some(planted))?)
}

/// Where a partial planting puts its colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialPlacement {
    /// Random distinct nodes, adjacency unconstrained.
    Random,
    /// Nodes chosen so that every pattern edge inside the subset is present
    /// (the subset appears as a connected sub-pattern).
    Connected,
}

/// Places `subset_size` randomly chosen distinct pattern colors on random
/// distinct nodes. Since the background palette is disjoint from the pattern
/// colors, at least one pattern color stays absent, so the result is D0.
pub fn plant_partial(
    g: &Graph,
    p: &Pattern,
    subset_size: usize,
    rng: &mut impl Rng,
) -> Result<Graph, SynthError> {
    if subset_size == 0 || subset_size >= p.size() {
        return Err(SynthError::BadSubsetSize(subset_size, p.size()));
    }
    let mut positions: Vec<usize> = (0..p.size()).collect();
    positions.shuffle(rng);
    positions.truncate(subset_size);
    plant_partial_subset(g, p, &positions, PartialPlacement::Random, rng)
}

/// Partial planting with an explicit subset of pattern positions and a
/// placement mode. Used by the synthesizer to sweep every strict subset so
/// that the negative class covers all sub-patterns.
pub fn plant_partial_subset(
    g: &Graph,
    p: &Pattern,
    positions: &[usize],
    placement: PartialPlacement,
    rng: &mut impl Rng,
) -> Result<Graph, SynthError> {
    if positions.is_empty() || positions.len() >= p.size() {
        return Err(SynthError::BadSubsetSize(positions.len(), p.size()));
    }
    let n = g.num_nodes();
    let mut colors = g.colors().to_vec();
    match placement {
        PartialPlacement::Random => {
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(rng);
            for (slot, &pos) in positions.iter().enumerate() {
                colors[nodes[slot]] = p.colors()[pos];
            }
        }
        PartialPlacement::Connected => {
            let hosts = connected_subset_hosts(g, p, positions, rng)?;
            for (slot, &pos) in positions.iter().enumerate() {
                colors[hosts[slot]] = p.colors()[pos];
            }
        }
    }
    g.recolored(colors).with_label(Some(0)).map_err(Into::into)
}

/// Finds host nodes realizing every pattern edge among `positions`.
/// Backtracking over random node orders, bounded by the retry budget.
fn connected_subset_hosts(
    g: &Graph,
    p: &Pattern,
    positions: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<usize>, SynthError> {
    let n = g.num_nodes();
    for _ in 0..RETRY_BUDGET {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut hosts: Vec<usize> = Vec::with_capacity(positions.len());
        'slots: for (slot, &pos) in positions.iter().enumerate() {
            for &cand in &order {
                if hosts.contains(&cand) {
                    continue;
                }
                let compatible = (0..slot).all(|prev| {
                    !p.has_edge(positions[prev], pos) || g.has_edge(hosts[prev], cand)
                });
                if compatible {
                    hosts.push(cand);
                    continue 'slots;
                }
            }
            break;
        }
        if hosts.len() == positions.len() {
            return Ok(hosts);
        }
    }
    Err(SynthError::Exhausted {
        budget: RETRY_BUDGET,
        context: format!("connected placement of subset {positions:?}"),
    })
}

/// Places all pattern colors on pairwise non-adjacent nodes, so occurrence
/// holds but no connected embedding exists. Placements where some third node
/// is adjacent to every carrier are also rejected: such a hub would aggregate
/// the full color set after one propagation step, which only positive graphs
/// may exhibit. Greedy independent-set attempts over shuffled node orders,
/// bounded by the retry budget.
pub fn plant_scattered(
    g: &Graph,
    p: &Pattern,
    rng: &mut impl Rng,
) -> Result<Graph, SynthError> {
    if p.size() < 2 {
        return Err(SynthError::PatternTooSmall("scattered"));
    }
    let n = g.num_nodes();
    let m = p.size();
    for _ in 0..RETRY_BUDGET {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        for &cand in &order {
            if chosen.iter().all(|&c| !g.has_edge(c, cand)) {
                chosen.push(cand);
                if chosen.len() == m {
                    break;
                }
            }
        }
        let hub_free = chosen.len() == m
            && !(0..n).any(|v| chosen.iter().all(|&c| c == v || g.has_edge(v, c)));
        if hub_free {
            let mut colors = g.colors().to_vec();
            for (slot, &node) in chosen.iter().enumerate() {
                colors[node] = p.colors()[slot];
            }
            return Ok(g.recolored(colors).with_label(None)?);
        }
    }
    Err(SynthError::Exhausted {
        budget: RETRY_BUDGET,
        context: format!("hub-free independent set of size {m} in a graph with {n} nodes"),
    })
}

fn verified(g: Graph, p: &Pattern, expected: Partition) -> Result<Graph, SynthError> {
    let actual = classify_partition(&g, p);
    if actual == expected {
        Ok(g)
    } else {
        Err(SynthError::VerificationFailed { expected, actual })
    }
}

/// All combinations of (strict subset of size 1 or 2, placement mode) used to
/// cycle the negative class through every disintegrated sub-pattern.
/// Two-node subsets joined by a pattern edge get both a connected and a
/// random variant; other subsets only the random one.
fn partial_plan(p: &Pattern) -> Vec<(Vec<usize>, PartialPlacement)> {
    let m = p.size();
    let mut plan = Vec::new();
    for i in 0..m {
        plan.push((vec![i], PartialPlacement::Random));
    }
    if m > 2 {
        for i in 0..m {
            for j in (i + 1)..m {
                if p.has_edge(i, j) {
                    plan.push((vec![i, j], PartialPlacement::Connected));
                }
                plan.push((vec![i, j], PartialPlacement::Random));
            }
        }
    }
    plan
}

/// Generates the D1 / D0 / D-perp partitions over background grid graphs.
///
/// - D1: anchors sweep every grid node with enough neighbors, in node order,
///   wrapping if more samples are requested than anchors exist.
/// - D0: cycles through every strict sub-pattern of size 1 or 2, alternating
///   connected and random placements.
/// - D-perp: all pattern colors on pairwise non-adjacent nodes.
///
/// Every emitted graph is re-verified with the partition predicates; the
/// whole dataset is a pure function of the spec.
pub fn synth_grid_partition(spec: &SynthSpec) -> Result<PartitionedDataset, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pattern = &spec.pattern;
    let bg = spec.background_palette();
    let needed = pattern.size() - 1;

    let template = grid_graph(spec.rows, spec.cols, &bg, 0)?;
    let anchors: Vec<usize> =
        (0..template.num_nodes()).filter(|&v| template.degree(v) >= needed).collect();
    if anchors.is_empty() {
        return Err(SynthError::GridTooSmall {
            nodes: template.num_nodes(),
            pattern: pattern.size(),
        });
    }

    let background = |rng: &mut ChaCha8Rng| -> Result<Graph, SynthError> {
        let g = grid_graph(spec.rows, spec.cols, &bg, rng.random::<u64>())?;
        Ok(g)
    };

    let mut d1 = Vec::with_capacity(spec.per_partition);
    for i in 0..spec.per_partition {
        let anchor = anchors[i % anchors.len()];
        let g = background(&mut rng)?;
        let planted = plant_full(&g, pattern, anchor, &mut rng)?;
        d1.push(verified(planted, pattern, Partition::D1)?);
    }

    let plan = partial_plan(pattern);
    let mut d0 = Vec::with_capacity(spec.per_partition);
    for i in 0..spec.per_partition {
        let (subset, placement) = &plan[i % plan.len()];
        let g = background(&mut rng)?;
        let planted = plant_partial_subset(&g, pattern, subset, *placement, &mut rng)?;
        d0.push(verified(planted, pattern, Partition::D0)?);
    }

    let mut dperp = Vec::with_capacity(spec.per_partition);
    for _ in 0..spec.per_partition {
        let g = background(&mut rng)?;
        let planted = plant_scattered(&g, pattern, &mut rng)?;
        dperp.push(verified(planted, pattern, Partition::DPerp)?);
    }

    Ok(PartitionedDataset {
        d1,
        d0,
        dperp,
        pattern: pattern.clone(),
        palette_size: spec.palette_size(),
    })
}

/// How a pattern is introduced into host graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantMode {
    Full,
    Partial,
    Scattered,
}

/// Plants the pattern into each host graph as new nodes.
///
/// - `Full`: pattern nodes plus all pattern-internal edges, attached to a few
///   random host anchor nodes.
/// - `Partial`: two sub-pattern node groups whose union misses at least one
///   pattern node, each attached to the host.
/// - `Scattered`: all pattern nodes without pattern-internal edges, attached
///   only to host nodes so no two pattern nodes become adjacent.
///
/// Host colors must be disjoint from pattern colors (see
/// [`densify_host_colors`] for remapping on load). Every output is verified.
pub fn plant_into_host(
    hosts: &[Graph],
    p: &Pattern,
    mode: PlantMode,
    rng: &mut impl Rng,
) -> Result<PartitionedDataset, SynthError> {
    let mut d1 = Vec::new();
    let mut d0 = Vec::new();
    let mut dperp = Vec::new();
    let mut palette = p.colors().iter().copied().max().unwrap_or(0) + 1;
    for host in hosts {
        for i in 0..host.num_nodes() {
            if p.colors().contains(&host.color(i)) {
                return Err(SynthError::HostColorClash(host.color(i)));
            }
        }
        palette = palette.max(host.max_color() + 1);
        match mode {
            PlantMode::Full => {
                let g = plant_host_full(host, p, rng)?;
                d1.push(verified(g, p, Partition::D1)?);
            }
            PlantMode::Partial => {
                let g = plant_host_partial(host, p, rng)?;
                d0.push(verified(g, p, Partition::D0)?);
            }
            PlantMode::Scattered => {
                let g = plant_host_scattered(host, p, rng)?;
                dperp.push(verified(g, p, Partition::DPerp)?);
            }
        }
    }
    Ok(PartitionedDataset { d1, d0, dperp, pattern: p.clone(), palette_size: palette })
}

fn plant_host_full(host: &Graph, p: &Pattern, rng: &mut impl Rng) -> Result<Graph, SynthError> {
    let n = host.num_nodes();
    let m = p.size();
    let mut colors = host.colors().to_vec();
    let mut edges = host.edges().to_vec();
    colors.extend_from_slice(p.colors());
    for &(a, b) in p.edges() {
        edges.push((n + a, n + b));
    }
    // Anchor group strictly smaller than the pattern.
    let num_anchors = if m > 1 { rng.random_range(1..m.min(n + 1)) } else { 1.min(n) };
    let mut hosts_idx: Vec<usize> = (0..n).collect();
    hosts_idx.shuffle(rng);
    for &anchor in hosts_idx.iter().take(num_anchors) {
        let target = n + rng.random_range(0..m);
        edges.push((anchor, target));
    }
    let center = p.center().unwrap_or(0);
    let mut planted = vec![n + center];
    planted.extend((0..m).filter(|&i| i != center).map(|i| n + i));
    Ok(Graph::new(colors, &edges)?
        .with_label(Some(1))?
        .with_anchor(Some(planted))?)
}

fn plant_host_partial(host: &Graph, p: &Pattern, rng: &mut impl Rng) -> Result<Graph, SynthError> {
    let m = p.size();
    if m < 2 {
        return Err(SynthError::PatternTooSmall("partial"));
    }
    let excluded = rng.random_range(0..m);
    let available: Vec<usize> = (0..m).filter(|&i| i != excluded).collect();
    let pick_subset = |rng: &mut dyn rand::RngCore| -> Vec<usize> {
        let size = rng.random_range(1..=available.len());
        let mut s = available.clone();
        s.shuffle(rng);
        s.truncate(size);
        s.sort_unstable();
        s
    };
    let groups = [pick_subset(rng), pick_subset(rng)];

    let mut colors = host.colors().to_vec();
    let mut edges = host.edges().to_vec();
    let n = host.num_nodes();
    let mut next = n;
    for group in &groups {
        let base = next;
        for &pos in group {
            colors.push(p.colors()[pos]);
            next += 1;
        }
        // Pattern edges induced inside the group.
        for (ia, &pa) in group.iter().enumerate() {
            for (ib, &pb) in group.iter().enumerate().skip(ia + 1) {
                if p.has_edge(pa, pb) {
                    edges.push((base + ia, base + ib));
                }
            }
        }
        if n > 0 {
            edges.push((rng.random_range(0..n), base));
        }
    }
    Ok(Graph::new(colors, &edges)?.with_label(Some(0))?)
}

fn plant_host_scattered(
    host: &Graph,
    p: &Pattern,
    rng: &mut impl Rng,
) -> Result<Graph, SynthError> {
    let m = p.size();
    if m < 2 {
        return Err(SynthError::PatternTooSmall("scattered"));
    }
    let n = host.num_nodes();
    let mut colors = host.colors().to_vec();
    let mut edges = host.edges().to_vec();
    colors.extend_from_slice(p.colors());
    // Attach each pattern node to the host only; new nodes never become
    // adjacent to each other.
    if n > 0 {
        for i in 0..m {
            edges.push((rng.random_range(0..n), n + i));
        }
    }
    Ok(Graph::new(colors, &edges)?.with_label(None)?)
}

/// Remaps host colors onto `0..distinct` (ascending by original color) so a
/// pattern can take the next indices. Returns the remapped hosts and the
/// number of distinct host colors.
pub fn densify_host_colors(hosts: &[Graph]) -> (Vec<Graph>, usize) {
    let mut distinct: Vec<usize> = hosts.iter().flat_map(|g| g.colors().iter().copied()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let remapped = hosts
        .iter()
        .map(|g| {
            let colors = g
                .colors()
                .iter()
                .map(|c| distinct.binary_search(c).expect("color present"))
                .collect();
            let mut h = g.recolored(colors);
            h = h.with_label(g.label()).expect("label preserved");
            h.with_anchor(g.anchor().map(|a| a.to_vec())).expect("anchor preserved")
        })
        .collect();
    (remapped, distinct.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub partition: Partition,
    pub index: usize,
    pub expected: Partition,
    pub actual: Partition,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelIssue {
    pub partition: Partition,
    pub index: usize,
    pub label: Option<u8>,
}

/// Result of re-checking a dataset against the partition predicates.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub counts: (usize, usize, usize),
    pub mismatches: Vec<Mismatch>,
    pub label_issues: Vec<LabelIssue>,
    pub label_parity_ok: bool,
    pub palette_size: usize,
    pub color_histogram: Vec<usize>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.label_issues.is_empty() && self.label_parity_ok
    }
}

/// Recomputes `classify_partition` on every graph, checks labels and class
/// parity, and gathers palette statistics. Failures are reported, not raised.
pub fn verify_partition(ds: &PartitionedDataset) -> VerifyReport {
    let mut mismatches = Vec::new();
    let mut label_issues = Vec::new();
    let mut histogram = vec![0usize; ds.palette_size];
    let sections: [(&[Graph], Partition, Option<u8>); 3] = [
        (&ds.d1, Partition::D1, Some(1)),
        (&ds.d0, Partition::D0, Some(0)),
        (&ds.dperp, Partition::DPerp, None),
    ];
    for (graphs, expected, label) in sections {
        for (index, g) in graphs.iter().enumerate() {
            let actual = classify_partition(g, &ds.pattern);
            if actual != expected {
                mismatches.push(Mismatch { partition: expected, index, expected, actual });
            }
            if g.label() != label {
                label_issues.push(LabelIssue { partition: expected, index, label: g.label() });
            }
            for &c in g.colors() {
                if c < histogram.len() {
                    histogram[c] += 1;
                }
            }
        }
    }
    VerifyReport {
        counts: (ds.d1.len(), ds.d0.len(), ds.dperp.len()),
        mismatches,
        label_issues,
        label_parity_ok: ds.d1.len() == ds.d0.len(),
        palette_size: ds.palette_size,
        color_histogram: histogram,
    }
}

#[derive(Serialize, Deserialize)]
struct PatternRecord {
    size: usize,
    colors: Vec<usize>,
    edges: Vec<(usize, usize)>,
    kind: crate::graph::PatternKind,
}

fn write_jsonl(path: &Path, graphs: &[Graph]) -> Result<(), SynthError> {
    let mut out = Vec::new();
    for g in graphs {
        let rec = crate::graph::GraphRecord::from_graph(g);
        let line = serde_json::to_string(&rec)
            .map_err(|e| SynthError::Parse { path: path.display().to_string(), source: e })?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&out).map_err(|e| io_err(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Graph>, SynthError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(f);
    let mut graphs = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: crate::graph::GraphRecord = serde_json::from_str(&line)
            .map_err(|e| SynthError::Parse { path: path.display().to_string(), source: e })?;
        graphs.push(rec.into_graph()?);
    }
    Ok(graphs)
}

/// Writes `d1.jsonl`, `d0.jsonl`, `dperp.jsonl`, `pattern.json`, and (when a
/// spec is supplied) `spec.json` into `dir`. Output bytes are a pure function
/// of the dataset.
pub fn save_dataset(
    ds: &PartitionedDataset,
    dir: &Path,
    spec: Option<&SynthSpec>,
) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_jsonl(&dir.join("d1.jsonl"), &ds.d1)?;
    write_jsonl(&dir.join("d0.jsonl"), &ds.d0)?;
    write_jsonl(&dir.join("dperp.jsonl"), &ds.dperp)?;
    let pattern_path = dir.join("pattern.json");
    let record = PatternRecord {
        size: ds.pattern.size(),
        colors: ds.pattern.colors().to_vec(),
        edges: ds.pattern.edges().to_vec(),
        kind: ds.pattern.kind(),
    };
    let body = serde_json::to_string_pretty(&record)
        .map_err(|e| SynthError::Parse { path: pattern_path.display().to_string(), source: e })?;
    fs::write(&pattern_path, body).map_err(|e| io_err(&pattern_path, e))?;
    if let Some(spec) = spec {
        let spec_path = dir.join("spec.json");
        let body = serde_json::to_string_pretty(spec)
            .map_err(|e| SynthError::Parse { path: spec_path.display().to_string(), source: e })?;
        fs::write(&spec_path, body).map_err(|e| io_err(&spec_path, e))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<PartitionedDataset, SynthError> {
    let d1 = read_jsonl(&dir.join("d1.jsonl"))?;
    let d0 = read_jsonl(&dir.join("d0.jsonl"))?;
    let dperp = read_jsonl(&dir.join("dperp.jsonl"))?;
    let pattern_path = dir.join("pattern.json");
    let body = fs::read_to_string(&pattern_path).map_err(|e| io_err(&pattern_path, e))?;
    let record: PatternRecord = serde_json::from_str(&body)
        .map_err(|e| SynthError::Parse { path: pattern_path.display().to_string(), source: e })?;
    let pattern = Pattern::with_edges(record.colors, record.edges, record.kind)?;
    let palette_size = d1
        .iter()
        .chain(&d0)
        .chain(&dperp)
        .map(Graph::max_color)
        .chain(pattern.colors().iter().copied())
        .max()
        .unwrap_or(0)
        + 1;
    Ok(PartitionedDataset { d1, d0, dperp, pattern, palette_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{connected_embedding, occurs};

    fn chain3_spec(rows: usize, cols: usize, per: usize, seed: u64) -> SynthSpec {
        SynthSpec::grid_chain(rows, cols, 4, 3, per, seed).unwrap()
    }

    #[test]
    fn synth_12x12_counts_and_anchor_sweep() {
        let spec = chain3_spec(12, 12, 144, 7);
        let ds = synth_grid_partition(&spec).unwrap();
        assert_eq!(ds.d1.len(), 144);
        assert_eq!(ds.d0.len(), 144);
        assert_eq!(ds.dperp.len(), 144);
        // Anchors sweep all 144 grid nodes (every node has degree >= 2).
        let mut anchors: Vec<usize> =
            ds.d1.iter().map(|g| g.anchor().unwrap()[0]).collect();
        anchors.sort_unstable();
        assert_eq!(anchors, (0..144).collect::<Vec<_>>());
        let report = verify_partition(&ds);
        assert!(report.ok(), "{report:?}");
    }

    #[test]
    fn scattered_fails_on_1x3_path() {
        let g = grid_graph(1, 3, &[0], 5).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            plant_scattered(&g, &p, &mut rng),
            Err(SynthError::Exhausted { .. })
        ));
    }

    #[test]
    fn synth_on_1x3_fails_with_diagnostic() {
        let spec = chain3_spec(1, 3, 2, 3);
        // D1 planting needs the middle node (degree 2); the sweep skips the
        // endpoints. D-perp synthesis must fail.
        assert!(matches!(synth_grid_partition(&spec), Err(SynthError::Exhausted { .. })));
    }

    #[test]
    fn tiny_grid_d1_is_pattern_up_to_no_background() {
        // rows*cols == M == 3 on a 1x3 grid never reaches the d-perp stage,
        // so plant manually.
        let g = grid_graph(1, 3, &[0, 1], 5).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let planted = plant_full(&g, &p, 1, &mut rng).unwrap();
        assert_eq!(classify_partition(&planted, &p), Partition::D1);
        let mut colors = planted.colors().to_vec();
        colors.sort_unstable();
        assert_eq!(colors, vec![4, 5, 6]);
    }

    #[test]
    fn plant_full_corner_and_interior() {
        let g = grid_graph(3, 3, &[0, 1, 2, 3], 9).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Corner (degree 2): both neighbors forced.
        let corner = plant_full(&g, &p, 0, &mut rng).unwrap();
        let mut planted_nodes = corner.anchor().unwrap().to_vec();
        planted_nodes.sort_unstable();
        assert_eq!(planted_nodes, vec![0, 1, 3]);
        assert_eq!(corner.color(0), 5); // chain center sits on the anchor
        // Interior (degree 4): exactly M nodes recolored.
        let interior = plant_full(&g, &p, 4, &mut rng).unwrap();
        let recolored = interior
            .colors()
            .iter()
            .filter(|c| p.colors().contains(c))
            .count();
        assert_eq!(recolored, 3);
        assert_eq!(classify_partition(&interior, &p), Partition::D1);
        assert!(connected_embedding(&interior, &p).0);
    }

    #[test]
    fn plant_full_rejects_low_degree_anchor() {
        let g = grid_graph(1, 3, &[0], 5).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            plant_full(&g, &p, 0, &mut rng),
            Err(SynthError::InvalidAnchor { .. })
        ));
    }

    #[test]
    fn plant_partial_always_lands_in_d0() {
        let g = grid_graph(4, 4, &[0, 1, 2, 3], 11).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for subset_size in [1usize, 2] {
            for _ in 0..20 {
                let planted = plant_partial(&g, &p, subset_size, &mut rng).unwrap();
                assert!(!occurs(&planted, &p).0);
                assert_eq!(classify_partition(&planted, &p), Partition::D0);
            }
        }
        assert!(matches!(
            plant_partial(&g, &p, 3, &mut rng),
            Err(SynthError::BadSubsetSize(3, 3))
        ));
        assert!(matches!(
            plant_partial(&g, &p, 0, &mut rng),
            Err(SynthError::BadSubsetSize(0, 3))
        ));
    }

    #[test]
    fn connected_partial_realizes_the_sub_edge() {
        let g = grid_graph(4, 4, &[0, 1, 2, 3], 13).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let planted =
            plant_partial_subset(&g, &p, &[0, 1], PartialPlacement::Connected, &mut rng).unwrap();
        let host_o = (0..16).find(|&i| planted.color(i) == 4).unwrap();
        let host_b = (0..16).find(|&i| planted.color(i) == 5).unwrap();
        assert!(planted.has_edge(host_o, host_b));
        assert_eq!(classify_partition(&planted, &p), Partition::D0);
    }

    #[test]
    fn scattered_3x3_lands_in_dperp() {
        let g = grid_graph(3, 3, &[0, 1], 21).unwrap();
        let p = Pattern::chain(vec![4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let planted = plant_scattered(&g, &p, &mut rng).unwrap();
            assert!(occurs(&planted, &p).0);
            assert!(!connected_embedding(&planted, &p).0);
            assert_eq!(classify_partition(&planted, &p), Partition::DPerp);
        }
    }

    #[test]
    fn determinism_is_byte_exact() {
        let spec = chain3_spec(6, 6, 20, 99);
        let a = synth_grid_partition(&spec).unwrap();
        let b = synth_grid_partition(&spec).unwrap();
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        save_dataset(&a, dir_a.path(), Some(&spec)).unwrap();
        save_dataset(&b, dir_b.path(), Some(&spec)).unwrap();
        for name in ["d1.jsonl", "d0.jsonl", "dperp.jsonl", "pattern.json", "spec.json"] {
            let ba = std::fs::read(dir_a.path().join(name)).unwrap();
            let bb = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(ba, bb, "{name} differs between identical runs");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let spec = chain3_spec(5, 5, 10, 31);
        let ds = synth_grid_partition(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), Some(&spec)).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn d1_anchor_neighborhood_has_all_pattern_colors() {
        let spec = chain3_spec(6, 6, 36, 17);
        let ds = synth_grid_partition(&spec).unwrap();
        for g in &ds.d1 {
            let anchor = g.anchor().unwrap()[0];
            let mut seen: Vec<usize> = g
                .neighbors(anchor)
                .iter()
                .copied()
                .chain(std::iter::once(anchor))
                .map(|v| g.color(v))
                .filter(|c| ds.pattern.colors().contains(c))
                .collect();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen, ds.pattern.colors().to_vec());
        }
    }

    #[test]
    fn background_palette_disjointness_holds_everywhere() {
        let spec = chain3_spec(6, 6, 24, 23);
        let ds = synth_grid_partition(&spec).unwrap();
        for (_, g) in ds.iter_tagged() {
            for &c in g.colors() {
                assert!(c < spec.palette_size());
            }
        }
        // Spec-level invalid palettes are rejected.
        let bad = SynthSpec {
            rows: 4,
            cols: 4,
            bg_colors: 5,
            pattern: Pattern::chain(vec![4, 5, 6]).unwrap(),
            per_partition: 4,
            seed: 0,
        };
        assert!(matches!(bad.validate(), Err(SynthError::PaletteOverlap { .. })));
    }

    #[test]
    fn verify_flags_constructed_faults() {
        let spec = chain3_spec(5, 5, 8, 41);
        let mut ds = synth_grid_partition(&spec).unwrap();
        assert!(verify_partition(&ds).ok());
        // Move a D1 graph into D0 (wrong tag and wrong label).
        let g = ds.d1.pop().unwrap();
        ds.d0.push(g);
        let report = verify_partition(&ds);
        assert!(!report.ok());
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].actual, Partition::D1);
        assert!(!report.label_parity_ok);
        assert!(!report.label_issues.is_empty());
    }

    #[test]
    fn host_planting_three_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hosts: Vec<Graph> = (0..6)
            .map(|i| grid_graph(3, 4, &[0, 1, 2], 100 + i).unwrap())
            .collect();
        let p = Pattern::chain(vec![3, 4, 5]).unwrap();

        let full = plant_into_host(&hosts, &p, PlantMode::Full, &mut rng).unwrap();
        assert_eq!(full.d1.len(), 6);
        for g in &full.d1 {
            assert_eq!(classify_partition(g, &p), Partition::D1);
            assert_eq!(g.label(), Some(1));
            assert_eq!(g.num_nodes(), 12 + 3);
        }

        let partial = plant_into_host(&hosts, &p, PlantMode::Partial, &mut rng).unwrap();
        assert_eq!(partial.d0.len(), 6);
        for g in &partial.d0 {
            assert_eq!(classify_partition(g, &p), Partition::D0);
            // At least one pattern color absent.
            let present: Vec<bool> =
                p.colors().iter().map(|c| g.colors().contains(c)).collect();
            assert!(present.iter().any(|&x| !x));
        }

        let scattered = plant_into_host(&hosts, &p, PlantMode::Scattered, &mut rng).unwrap();
        assert_eq!(scattered.dperp.len(), 6);
        for g in &scattered.dperp {
            assert_eq!(classify_partition(g, &p), Partition::DPerp);
            assert_eq!(g.label(), None);
        }
    }

    #[test]
    fn host_color_clash_is_rejected_and_remapping_fixes_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hosts = vec![grid_graph(2, 3, &[3, 7], 1).unwrap()];
        let p = Pattern::chain(vec![3, 4, 5]).unwrap();
        assert!(matches!(
            plant_into_host(&hosts, &p, PlantMode::Full, &mut rng),
            Err(SynthError::HostColorClash(3))
        ));
        let (remapped, distinct) = densify_host_colors(&hosts);
        assert_eq!(distinct, 2);
        assert!(remapped[0].colors().iter().all(|&c| c < 2));
        let p2 = Pattern::chain(vec![2, 3, 4]).unwrap();
        assert!(plant_into_host(&remapped, &p2, PlantMode::Full, &mut rng).is_ok());
    }
}
