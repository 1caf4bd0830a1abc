//! Attributed graphs with explicit structure matrices and vertex measures.
//!
//! A graph couples four aligned pieces of data: a feature row per vertex, an
//! undirected edge list, a dense structure matrix used by transport solvers,
//! and a probability histogram over vertices. The structure matrix is either
//! the binary adjacency or the all-pairs hop distance; both are symmetric
//! with a zero diagonal.

use std::collections::HashSet;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// How the dense structure matrix is derived from the edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureMode {
    /// Binary adjacency.
    Adjacency,
    /// Hop distances; unreachable pairs get the largest finite hop plus one.
    ShortestPath,
}

/// How the vertex histogram is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramMode {
    Uniform,
    /// Mass proportional to degree. Requires every vertex to have an edge.
    Degree,
}

#[derive(Debug, Clone)]
pub struct AttributedGraph {
    /// n x d feature matrix.
    pub features: Array2<f64>,
    /// Undirected edges, canonical u < v, no duplicates.
    pub edges: Vec<(usize, usize)>,
    /// n x n symmetric, nonnegative, zero diagonal. Not necessarily a
    /// function of `edges`: interpolated graphs carry a continuous matrix
    /// alongside a thresholded edge list.
    pub structure: Array2<f64>,
    /// Vertex measure; strictly positive entries summing to one.
    pub hist: Array1<f64>,
    /// Per-vertex class id, `None` for unlabeled vertices.
    pub labels: Vec<Option<usize>>,
    pub n_classes: usize,
}

impl AttributedGraph {
    /// Builds a graph, deriving structure and histogram from the edge list.
    pub fn new(
        features: Array2<f64>,
        edges: Vec<(usize, usize)>,
        labels: Vec<Option<usize>>,
        n_classes: usize,
        structure_mode: StructureMode,
        histogram_mode: HistogramMode,
    ) -> Result<Self> {
        let n = features.nrows();
        validate_edges(n, &edges)?;
        let structure = structure_from_edges(n, &edges, structure_mode);
        let hist = histogram_from_edges(n, &edges, histogram_mode)?;
        Self::from_parts(features, edges, structure, hist, labels, n_classes)
    }

    /// Builds a graph from explicit parts, validating every invariant.
    pub fn from_parts(
        features: Array2<f64>,
        edges: Vec<(usize, usize)>,
        structure: Array2<f64>,
        hist: Array1<f64>,
        labels: Vec<Option<usize>>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "label count {} does not match vertex count {n}",
                labels.len()
            )));
        }
        if hist.len() != n {
            return Err(Error::invalid(format!(
                "histogram length {} does not match vertex count {n}",
                hist.len()
            )));
        }
        if structure.nrows() != n || structure.ncols() != n {
            return Err(Error::invalid(format!(
                "structure shape {}x{} does not match vertex count {n}",
                structure.nrows(),
                structure.ncols()
            )));
        }
        validate_edges(n, &edges)?;
        for i in 0..n {
            if structure[(i, i)] != 0.0 {
                return Err(Error::invalid(format!(
                    "structure diagonal entry {i} is {}, expected 0",
                    structure[(i, i)]
                )));
            }
            for j in (i + 1)..n {
                if (structure[(i, j)] - structure[(j, i)]).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "structure is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if structure.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("structure entries must be finite and nonnegative"));
        }
        if n > 0 {
            let total: f64 = hist.sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "histogram sums to {total}, expected 1"
                )));
            }
            if hist.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
                return Err(Error::invalid(
                    "histogram must be strictly positive (zero-mass vertices are not supported)",
                ));
            }
        }
        for (v, label) in labels.iter().enumerate() {
            if let Some(c) = label {
                if *c >= n_classes {
                    return Err(Error::invalid(format!(
                        "vertex {v} has class {c}, expected < {n_classes}"
                    )));
                }
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(AttributedGraph {
            features,
            edges,
            structure,
            hist,
            labels,
            n_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n()];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(|l| l.is_some())
    }

    /// Fraction of vertex pairs connected by an edge; 0 for n < 2.
    pub fn edge_density(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / (n as f64 * (n - 1) as f64)
        }
    }
}

/// Rebuilds the structure matrix of a graph under the given mode.
pub fn build_structure_matrix(graph: &AttributedGraph, mode: StructureMode) -> Array2<f64> {
    structure_from_edges(graph.n(), &graph.edges, mode)
}

/// Derives a vertex histogram from a graph under the given mode.
pub fn make_histogram(graph: &AttributedGraph, mode: HistogramMode) -> Result<Array1<f64>> {
    histogram_from_edges(graph.n(), &graph.edges, mode)
}

pub(crate) fn structure_from_edges(
    n: usize,
    edges: &[(usize, usize)],
    mode: StructureMode,
) -> Array2<f64> {
    match mode {
        StructureMode::Adjacency => {
            let mut c = Array2::zeros((n, n));
            for &(u, v) in edges {
                c[(u, v)] = 1.0;
                c[(v, u)] = 1.0;
            }
            c
        }
        StructureMode::ShortestPath => {
            let adj = adjacency_lists(n, edges);
            let mut hops = Array2::from_elem((n, n), -1.0);
            let mut queue = std::collections::VecDeque::new();
            for start in 0..n {
                hops[(start, start)] = 0.0;
                queue.push_back(start);
                while let Some(u) = queue.pop_front() {
                    let du = hops[(start, u)];
                    for &v in &adj[u] {
                        if hops[(start, v)] < 0.0 {
                            hops[(start, v)] = du + 1.0;
                            queue.push_back(v);
                        }
                    }
                }
            }
            let max_finite = hops.iter().cloned().fold(0.0f64, f64::max);
            hops.mapv_inplace(|h| if h < 0.0 { max_finite + 1.0 } else { h });
            hops
        }
    }
}

fn histogram_from_edges(
    n: usize,
    edges: &[(usize, usize)],
    mode: HistogramMode,
) -> Result<Array1<f64>> {
    if n == 0 {
        return Err(Error::invalid("cannot build a histogram for an empty graph"));
    }
    match mode {
        HistogramMode::Uniform => Ok(Array1::from_elem(n, 1.0 / n as f64)),
        HistogramMode::Degree => {
            let mut deg = vec![0usize; n];
            for &(u, v) in edges {
                deg[u] += 1;
                deg[v] += 1;
            }
            if deg.iter().any(|&d| d == 0) {
                return Err(Error::invalid(
                    "degree histogram requires every vertex to have positive degree",
                ));
            }
            let total = 2.0 * edges.len() as f64;
            Ok(Array1::from_iter(deg.iter().map(|&d| d as f64 / total)))
        }
    }
}

pub(crate) fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    adj
}

fn validate_edges(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = HashSet::with_capacity(edges.len());
    for &(u, v) in edges {
        if u >= v {
            return Err(Error::invalid(format!(
                "edge ({u}, {v}) is not in canonical u < v form"
            )));
        }
        if v >= n {
            return Err(Error::invalid(format!(
                "edge ({u}, {v}) references a vertex >= {n}"
            )));
        }
        if !seen.insert((u, v)) {
            return Err(Error::invalid(format!("duplicate edge ({u}, {v})")));
        }
    }
    Ok(())
}

/// Extracts the induced subgraph on `vertices` (sorted, deduplicated by the
/// caller), rebuilding structure and histogram under the given modes.
/// Returns the subgraph together with the parent id of each new vertex.
pub fn induced_subgraph(
    graph: &AttributedGraph,
    vertices: &[usize],
    structure_mode: StructureMode,
    histogram_mode: HistogramMode,
) -> Result<(AttributedGraph, Vec<usize>)> {
    let n = graph.n();
    if vertices.is_empty() {
        return Err(Error::invalid("induced subgraph needs at least one vertex"));
    }
    if vertices.windows(2).any(|w| w[0] >= w[1]) || *vertices.last().unwrap() >= n {
        return Err(Error::invalid(
            "induced subgraph vertices must be sorted, unique, and in range",
        ));
    }
    let mut local = vec![usize::MAX; n];
    for (i, &v) in vertices.iter().enumerate() {
        local[v] = i;
    }
    let mut features = Array2::zeros((vertices.len(), graph.dim()));
    let mut labels = Vec::with_capacity(vertices.len());
    for (i, &v) in vertices.iter().enumerate() {
        features.row_mut(i).assign(&graph.features.row(v));
        labels.push(graph.labels[v]);
    }
    let edges: Vec<(usize, usize)> = graph
        .edges
        .iter()
        .filter(|&&(u, v)| local[u] != usize::MAX && local[v] != usize::MAX)
        .map(|&(u, v)| (local[u], local[v]))
        .collect();
    let sub = AttributedGraph::new(
        features,
        edges,
        labels,
        graph.n_classes,
        structure_mode,
        histogram_mode,
    )?;
    Ok((sub, vertices.to_vec()))
}

/// Several graphs packed into one vertex id space. Graph `g`'s vertex `v`
/// maps to global id `offsets[g] + v`; blocks are contiguous and ordered.
#[derive(Debug, Clone)]
pub struct GraphPool {
    pub graphs: Vec<AttributedGraph>,
    /// Prefix sums of graph sizes; `offsets.len() == graphs.len() + 1`.
    pub offsets: Vec<usize>,
    /// Union edge list in global ids. No cross-graph edges.
    pub union_edges: Vec<(usize, usize)>,
}

impl GraphPool {
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn global_id(&self, graph: usize, local: usize) -> usize {
        debug_assert!(local < self.graphs[graph].n());
        self.offsets[graph] + local
    }

    /// Maps a global id back to (graph index, local id).
    pub fn origin(&self, global: usize) -> (usize, usize) {
        debug_assert!(global < self.total());
        let g = match self.offsets.binary_search(&global) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (g, global - self.offsets[g])
    }

    /// All feature rows stacked in global id order.
    pub fn stacked_features(&self) -> Array2<f64> {
        let d = self.graphs.first().map_or(0, |g| g.dim());
        let mut out = Array2::zeros((self.total(), d));
        for (g, graph) in self.graphs.iter().enumerate() {
            for v in 0..graph.n() {
                out.row_mut(self.offsets[g] + v).assign(&graph.features.row(v));
            }
        }
        out
    }

    /// Label of a global vertex, where present.
    pub fn label(&self, global: usize) -> Option<usize> {
        let (g, v) = self.origin(global);
        self.graphs[g].labels[v]
    }

    pub fn n_classes(&self) -> usize {
        self.graphs.iter().map(|g| g.n_classes).max().unwrap_or(0)
    }
}

/// Packs graphs into one pool with disjoint, contiguous id blocks.
pub fn disjoint_union(graphs: Vec<AttributedGraph>) -> Result<GraphPool> {
    if graphs.is_empty() {
        return Err(Error::invalid("disjoint union of zero graphs"));
    }
    let d = graphs[0].dim();
    for (i, g) in graphs.iter().enumerate() {
        if g.dim() != d {
            return Err(Error::invalid(format!(
                "graph {i} has feature dimension {}, expected {d}",
                g.dim()
            )));
        }
    }
    let mut offsets = Vec::with_capacity(graphs.len() + 1);
    offsets.push(0);
    for g in &graphs {
        offsets.push(offsets.last().unwrap() + g.n());
    }
    let mut union_edges = Vec::new();
    for (gi, g) in graphs.iter().enumerate() {
        let base = offsets[gi];
        union_edges.extend(g.edges.iter().map(|&(u, v)| (base + u, base + v)));
    }
    Ok(GraphPool {
        graphs,
        offsets,
        union_edges,
    })
}

/// One vertex of a training domain: a pool vertex with a (pseudo-)label, its
/// normalized weight, the label score recorded at the previous stage, and the
/// stage at which it first entered a domain.
#[derive(Debug, Clone)]
pub struct DomainEntry {
    pub vertex: usize,
    pub weight: f64,
    pub label: usize,
    pub prev_score: f64,
    pub entry_stage: usize,
}

/// A weighted, labeled measure over pool vertices: the training domain at one
/// stage of the progression. `decay_mask` tracks the cumulative per-vertex
/// decay factor for every pool vertex (1 until first decayed).
#[derive(Debug, Clone)]
pub struct DomainMeasure {
    pub stage: usize,
    pub entries: Vec<DomainEntry>,
    pub decay_mask: Vec<f64>,
}

impl DomainMeasure {
    pub fn support(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.vertex).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn grid_features(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64)
    }

    fn unlabeled(n: usize) -> Vec<Option<usize>> {
        vec![None; n]
    }

    #[test]
    fn adjacency_structure_of_triangle_is_all_ones_off_diagonal() {
        let g = AttributedGraph::new(
            grid_features(3),
            vec![(0, 1), (0, 2), (1, 2)],
            unlabeled(3),
            0,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 1.0 };
                assert_eq!(g.structure[(i, j)], want, "entry ({i}, {j})");
            }
        }
    }

    #[test]
    fn shortest_path_structure_counts_hops() {
        let g = AttributedGraph::new(
            grid_features(3),
            vec![(0, 1), (1, 2)],
            unlabeled(3),
            0,
            StructureMode::ShortestPath,
            HistogramMode::Uniform,
        )
        .unwrap();
        assert_eq!(g.structure[(0, 2)], 2.0);
        assert_eq!(g.structure[(2, 0)], 2.0);
        assert_eq!(g.structure[(0, 1)], 1.0);
    }

    #[test]
    fn shortest_path_unreachable_pairs_get_max_finite_plus_one() {
        // Two isolated vertices: no finite off-diagonal hop, so unreachable
        // pairs get 0 + 1.
        let g = AttributedGraph::new(
            grid_features(2),
            vec![],
            unlabeled(2),
            0,
            StructureMode::ShortestPath,
            HistogramMode::Uniform,
        )
        .unwrap();
        assert_eq!(g.structure, array![[0.0, 1.0], [1.0, 0.0]]);

        // Path of 3 plus an isolated vertex: max finite hop is 2, so the
        // isolated vertex sits at distance 3 from everyone.
        let g = AttributedGraph::new(
            grid_features(4),
            vec![(0, 1), (1, 2)],
            unlabeled(4),
            0,
            StructureMode::ShortestPath,
            HistogramMode::Uniform,
        )
        .unwrap();
        assert_eq!(g.structure[(0, 3)], 3.0);
        assert_eq!(g.structure[(3, 1)], 3.0);
        assert_eq!(g.structure[(0, 2)], 2.0);
    }

    /// Floyd-Warshall reference for the hop-distance builder.
    fn floyd_warshall_hops(n: usize, edges: &[(usize, usize)]) -> Array2<f64> {
        let inf = f64::INFINITY;
        let mut d = Array2::from_elem((n, n), inf);
        for i in 0..n {
            d[(i, i)] = 0.0;
        }
        for &(u, v) in edges {
            d[(u, v)] = 1.0;
            d[(v, u)] = 1.0;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let alt = d[(i, k)] + d[(k, j)];
                    if alt < d[(i, j)] {
                        d[(i, j)] = alt;
                    }
                }
            }
        }
        let max_finite = d.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
        d.mapv_inplace(|v| if v.is_finite() { v } else { max_finite + 1.0 });
        d
    }

    #[test]
    fn shortest_path_structure_matches_floyd_warshall_on_random_graphs() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.random_bool(0.25) {
                        edges.push((u, v));
                    }
                }
            }
            let built = structure_from_edges(n, &edges, StructureMode::ShortestPath);
            let want = floyd_warshall_hops(n, &edges);
            assert_eq!(built, want, "n={n}, edges={edges:?}");
        }
    }

    #[test]
    fn uniform_histogram_and_single_vertex() {
        let g = AttributedGraph::new(
            grid_features(4),
            vec![(0, 1)],
            unlabeled(4),
            0,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        assert_eq!(g.hist, Array1::from_elem(4, 0.25));

        let one = AttributedGraph::new(
            grid_features(1),
            vec![],
            unlabeled(1),
            0,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        assert_eq!(one.hist, array![1.0]);
    }

    #[test]
    fn degree_histogram_on_path() {
        let g = AttributedGraph::new(
            grid_features(3),
            vec![(0, 1), (1, 2)],
            unlabeled(3),
            0,
            StructureMode::Adjacency,
            HistogramMode::Degree,
        )
        .unwrap();
        assert_eq!(g.hist, array![0.25, 0.5, 0.25]);
    }

    #[test]
    fn degree_histogram_rejects_isolated_vertices() {
        let err = AttributedGraph::new(
            grid_features(3),
            vec![(0, 1)],
            unlabeled(3),
            0,
            StructureMode::Adjacency,
            HistogramMode::Degree,
        )
        .unwrap_err();
        assert!(err.to_string().contains("positive degree"), "{err}");
    }

    #[test]
    fn edge_validation_rejects_bad_lists() {
        let make = |edges: Vec<(usize, usize)>| {
            AttributedGraph::new(
                grid_features(3),
                edges,
                unlabeled(3),
                0,
                StructureMode::Adjacency,
                HistogramMode::Uniform,
            )
        };
        assert!(make(vec![(1, 1)]).is_err(), "self loop");
        assert!(make(vec![(2, 1)]).is_err(), "non-canonical order");
        assert!(make(vec![(0, 3)]).is_err(), "out of range");
        assert!(make(vec![(0, 1), (0, 1)]).is_err(), "duplicate");
    }

    #[test]
    fn from_parts_rejects_broken_invariants() {
        let feats = grid_features(2);
        let edges = vec![(0, 1)];
        let sym = array![[0.0, 1.0], [1.0, 0.0]];
        let ok_hist = array![0.5, 0.5];

        let asym = array![[0.0, 1.0], [0.5, 0.0]];
        assert!(AttributedGraph::from_parts(
            feats.clone(),
            edges.clone(),
            asym,
            ok_hist.clone(),
            unlabeled(2),
            0
        )
        .is_err());

        let diag = array![[1.0, 1.0], [1.0, 0.0]];
        assert!(AttributedGraph::from_parts(
            feats.clone(),
            edges.clone(),
            diag,
            ok_hist.clone(),
            unlabeled(2),
            0
        )
        .is_err());

        let bad_hist = array![0.7, 0.2];
        assert!(AttributedGraph::from_parts(
            feats.clone(),
            edges.clone(),
            sym.clone(),
            bad_hist,
            unlabeled(2),
            0
        )
        .is_err());

        let zero_mass = array![1.0, 0.0];
        assert!(AttributedGraph::from_parts(
            feats.clone(),
            edges.clone(),
            sym.clone(),
            zero_mass,
            unlabeled(2),
            0
        )
        .is_err());

        let bad_label = vec![Some(2), None];
        assert!(
            AttributedGraph::from_parts(feats, edges, sym, ok_hist, bad_label, 2).is_err()
        );
    }

    #[test]
    fn disjoint_union_concatenates_and_maps_ids_both_ways() {
        let g1 = AttributedGraph::new(
            grid_features(2),
            vec![(0, 1)],
            vec![Some(0), Some(1)],
            2,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        let g2 = AttributedGraph::new(
            grid_features(3),
            vec![(0, 2)],
            unlabeled(3),
            2,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        let pool = disjoint_union(vec![g1, g2]).unwrap();
        assert_eq!(pool.offsets, vec![0, 2, 5]);
        assert_eq!(pool.total(), 5);
        assert_eq!(pool.union_edges, vec![(0, 1), (2, 4)]);
        assert_eq!(pool.global_id(1, 2), 4);
        assert_eq!(pool.origin(4), (1, 2));
        assert_eq!(pool.origin(1), (0, 1));
        assert_eq!(pool.label(1), Some(1));
        assert_eq!(pool.label(3), None);
    }

    #[test]
    fn disjoint_union_rejects_mismatched_feature_dims() {
        let g1 = AttributedGraph::new(
            grid_features(2),
            vec![],
            unlabeled(2),
            0,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        let g2 = AttributedGraph::new(
            Array2::zeros((2, 3)),
            vec![],
            unlabeled(2),
            0,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        let err = disjoint_union(vec![g1, g2]).unwrap_err();
        assert!(err.to_string().contains("graph 1"), "{err}");
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges_and_provenance() {
        let g = AttributedGraph::new(
            grid_features(5),
            vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
            vec![Some(0), Some(1), None, Some(0), None],
            2,
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        let (sub, parents) = induced_subgraph(
            &g,
            &[0, 1, 4],
            StructureMode::Adjacency,
            HistogramMode::Uniform,
        )
        .unwrap();
        assert_eq!(parents, vec![0, 1, 4]);
        assert_eq!(sub.edges, vec![(0, 1), (0, 2)]);
        assert_eq!(sub.labels, vec![Some(0), Some(1), None]);
        assert_eq!(sub.features.row(2).to_vec(), vec![8.0, 9.0]);
    }

    proptest! {
        #[test]
        fn built_graphs_always_satisfy_measure_and_symmetry_invariants(
            n in 1usize..16,
            edge_bits in proptest::collection::vec(any::<bool>(), 0..120),
            shortest in any::<bool>(),
        ) {
            let mut edges = Vec::new();
            let mut bit = 0;
            'outer: for u in 0..n {
                for v in (u + 1)..n {
                    if bit >= edge_bits.len() {
                        break 'outer;
                    }
                    if edge_bits[bit] {
                        edges.push((u, v));
                    }
                    bit += 1;
                }
            }
            let mode = if shortest { StructureMode::ShortestPath } else { StructureMode::Adjacency };
            let g = AttributedGraph::new(
                Array2::zeros((n, 2)),
                edges,
                vec![None; n],
                0,
                mode,
                HistogramMode::Uniform,
            ).unwrap();
            prop_assert!((g.hist.sum() - 1.0).abs() <= 1e-9);
            for i in 0..n {
                prop_assert_eq!(g.structure[(i, i)], 0.0);
                for j in 0..n {
                    prop_assert_eq!(g.structure[(i, j)], g.structure[(j, i)]);
                    prop_assert!(g.structure[(i, j)] >= 0.0);
                }
            }
        }

        #[test]
        fn union_then_per_graph_extraction_recovers_inputs(
            sizes in proptest::collection::vec(1usize..6, 1..4),
        ) {
            let graphs: Vec<AttributedGraph> = sizes
                .iter()
                .enumerate()
                .map(|(gi, &n)| {
                    let feats = Array2::from_shape_fn((n, 2), |(i, j)| (gi * 100 + i * 2 + j) as f64);
                    let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
                    AttributedGraph::new(
                        feats,
                        edges,
                        vec![None; n],
                        0,
                        StructureMode::Adjacency,
                        HistogramMode::Uniform,
                    )
                    .unwrap()
                })
                .collect();
            let pool = disjoint_union(graphs.clone()).unwrap();
            prop_assert_eq!(pool.total(), sizes.iter().sum::<usize>());
            for (gi, g) in graphs.iter().enumerate() {
                for v in 0..g.n() {
                    let global = pool.global_id(gi, v);
                    prop_assert_eq!(pool.origin(global), (gi, v));
                    let stacked = pool.stacked_features();
                    prop_assert_eq!(stacked.row(global).to_vec(), g.features.row(v).to_vec());
                }
            }
        }
    }
}
