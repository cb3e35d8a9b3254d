//! Undirected networks and the consensus matrices defined on them.
//!
//! A [`ConsensusNetwork`] is only ever produced by [`validate`], so holding one
//! means every structural requirement on `W` was checked explicitly: symmetry,
//! unit row sums, entries in `[0, 1)`, diagonal in `[delta, Delta]` with
//! `0 < delta <= Delta < 1`, sparsity matching the edge set, and a
//! one-dimensional null space of `I - W`.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::linalg::sym_eigenvalues;

/// Absolute tolerance for entrywise identities on `W`.
pub const MATRIX_TOL: f64 = 1e-12;
/// Threshold on the second-smallest eigenvalue of `I - W` (or `L`).
pub const CONNECTIVITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("a network needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("edge ({i}, {j}) references an agent outside 0..{n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error(
        "graph is disconnected: second-smallest eigenvalue {lambda2:e} <= {CONNECTIVITY_TOL:e}"
    )]
    DisconnectedGraph { lambda2: f64 },
    #[error("weight out of range: {0}")]
    WeightOutOfRange(String),
    #[error("matrix is {rows}x{cols}, expected {n}x{n}")]
    DimensionMismatch { rows: usize, cols: usize, n: usize },
    #[error("W is not symmetric: W[{i}][{j}] - W[{j}][{i}] = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("row {row} of W sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("W[{i}][{j}] = {value} is negative")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("diagonal W[{i}][{i}] = {value} is outside (0, 1)")]
    DiagonalOutOfRange { i: usize, value: f64 },
    #[error("W[{i}][{j}] = {value} does not match the edge set (edge present: {edge})")]
    SparsityMismatch {
        i: usize,
        j: usize,
        value: f64,
        edge: bool,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Simple undirected graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, normalizing each edge to `(min, max)`.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::TooFewAgents(n));
        }
        let mut seen = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(TopologyError::IndexOutOfRange { i, j, n });
            }
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            let e = (i.min(j), i.max(j));
            if !seen.insert(e) {
                return Err(TopologyError::DuplicateEdge(e.0, e.1));
            }
        }
        let edges: Vec<_> = seen.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            adjacency,
        })
    }

    pub fn complete(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        if n < 3 {
            return Self::path(n);
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn star(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    /// Random connected graph: a random spanning tree (each node attaches to a
    /// uniformly chosen earlier node of a random permutation) plus every
    /// remaining pair independently with probability `p`.
    pub fn random_connected<R: Rng + ?Sized>(
        n: usize,
        p: f64,
        rng: &mut R,
    ) -> Result<Self, TopologyError> {
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            let swap = rng.random_range(0..=k);
            order.swap(k, swap);
        }
        let mut edges = BTreeSet::new();
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            let child = order[k];
            edges.insert((parent.min(child), parent.max(child)));
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.insert((i, j));
                }
            }
        }
        Self::new(n, edges)
    }

    /// Parses the edge-list format: a header line `n <count>` followed by one
    /// `i j` pair per line. Blank lines and `#` comments are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut n = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let first = parts.next().unwrap_or("");
            let second = parts.next();
            if parts.next().is_some() {
                return Err(TopologyError::Parse {
                    line: line_no,
                    msg: "expected two fields".into(),
                });
            }
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| TopologyError::Parse {
                    line: line_no,
                    msg: format!("{s:?}: {e}"),
                })
            };
            match (n, first, second) {
                (None, "n", Some(count)) => n = Some(parse(count)?),
                (None, _, _) => {
                    return Err(TopologyError::Parse {
                        line: line_no,
                        msg: "missing `n <count>` header".into(),
                    })
                }
                (Some(_), i, Some(j)) => edges.push((parse(i)?, parse(j)?)),
                (Some(_), _, None) => {
                    return Err(TopologyError::Parse {
                        line: line_no,
                        msg: "expected `i j`".into(),
                    })
                }
            }
        }
        let n = n.ok_or(TopologyError::Parse {
            line: 0,
            msg: "empty edge list".into(),
        })?;
        Self::new(n, edges)
    }

    pub fn load_edge_list(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_edge_list(&text)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Combinatorial Laplacian `L = Deg - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    fn check_connected_spectrally(&self) -> Result<(), TopologyError> {
        let lambda2 = sym_eigenvalues(&self.laplacian())[1];
        if lambda2 > CONNECTIVITY_TOL {
            Ok(())
        } else {
            Err(TopologyError::DisconnectedGraph { lambda2 })
        }
    }
}

/// A graph together with a validated consensus matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusNetwork {
    graph: Graph,
    w: DMatrix<f64>,
    delta: f64,
    delta_max: f64,
}

impl ConsensusNetwork {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// Smallest diagonal entry of `W` (`delta`).
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Largest diagonal entry of `W` (`Delta`).
    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.graph.neighbors(i)
    }

    /// `I - W`.
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) - &self.w
    }

    /// Writes `W` as CSV, one row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n())
                .map(|j| format!("{}", self.w[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// `W = I - kappa L`.
pub fn laplacian_weights(graph: &Graph, kappa: f64) -> Result<ConsensusNetwork, TopologyError> {
    graph.check_connected_spectrally()?;
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(TopologyError::WeightOutOfRange(format!(
            "kappa = {kappa} must be positive"
        )));
    }
    let n = graph.n();
    let w = DMatrix::identity(n, n) - graph.laplacian() * kappa;
    if let Some(i) = (0..n).find(|&i| !(w[(i, i)] > 0.0 && w[(i, i)] < 1.0)) {
        return Err(TopologyError::WeightOutOfRange(format!(
            "W[{i}][{i}] = {} with kappa = {kappa}; need kappa < 1/max_degree = {}",
            w[(i, i)],
            1.0 / graph.max_degree() as f64
        )));
    }
    validate(w, graph.clone())
}

/// Metropolis-Hastings weights: `W_ij = 1 / (1 + max(deg i, deg j))` on edges.
pub fn metropolis_weights(graph: &Graph) -> Result<ConsensusNetwork, TopologyError> {
    graph.check_connected_spectrally()?;
    let n = graph.n();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in graph.edges() {
        let v = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = graph.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    validate(w, graph.clone())
}

/// Checks every consensus-matrix requirement and returns the validated network.
pub fn validate(w: DMatrix<f64>, graph: Graph) -> Result<ConsensusNetwork, TopologyError> {
    let n = graph.n();
    if w.nrows() != n || w.ncols() != n {
        return Err(TopologyError::DimensionMismatch {
            rows: w.nrows(),
            cols: w.ncols(),
            n,
        });
    }
    for i in 0..n {
        for j in i + 1..n {
            let diff = w[(i, j)] - w[(j, i)];
            if !(diff.abs() <= MATRIX_TOL) {
                return Err(TopologyError::NotSymmetric { i, j, diff });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let value = w[(i, j)];
            if !value.is_finite() || value < 0.0 {
                return Err(TopologyError::NegativeEntry { i, j, value });
            }
        }
    }
    for row in 0..n {
        let sum: f64 = w.row(row).iter().sum();
        if !((sum - 1.0).abs() <= MATRIX_TOL) {
            return Err(TopologyError::NotRowStochastic { row, sum });
        }
    }
    for i in 0..n {
        let value = w[(i, i)];
        if !(value > 0.0 && value < 1.0) {
            return Err(TopologyError::DiagonalOutOfRange { i, value });
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let edge = graph.has_edge(i, j);
            let value = w[(i, j)];
            let ok = if edge {
                value > 0.0 && value < 1.0
            } else {
                value <= MATRIX_TOL
            };
            if !ok {
                return Err(TopologyError::SparsityMismatch { i, j, value, edge });
            }
        }
    }
    let lambda2 = sym_eigenvalues(&(DMatrix::identity(n, n) - &w))[1];
    if !(lambda2 > CONNECTIVITY_TOL) {
        return Err(TopologyError::DisconnectedGraph { lambda2 });
    }
    let diag = w.diagonal();
    let delta = diag.min();
    let delta_max = diag.max();
    Ok(ConsensusNetwork {
        graph,
        w,
        delta,
        delta_max,
    })
}

/// Parses `W` from CSV text (no header, one row per line).
pub fn parse_w_csv(text: &str) -> Result<DMatrix<f64>, TopologyError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TopologyError::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| TopologyError::Parse {
                    line: idx + 1,
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(TopologyError::DimensionMismatch {
            rows: n,
            cols: bad.len(),
            n,
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn load_w_csv(path: &Path) -> Result<DMatrix<f64>, TopologyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
    parse_w_csv(&text)
}

/// Validates a user-supplied `W`; the edge set is read off its nonzero
/// off-diagonal entries when no graph is given.
pub fn network_from_w(
    w: DMatrix<f64>,
    graph: Option<Graph>,
) -> Result<ConsensusNetwork, TopologyError> {
    let graph = match graph {
        Some(g) => g,
        None => {
            let n = w.nrows();
            let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            let edges: Vec<_> = edges
                .filter(|&(i, j)| w[(i, j)].abs() > MATRIX_TOL || w[(j, i)].abs() > MATRIX_TOL)
                .collect();
            Graph::new(n, edges)?
        }
    };
    validate(w, graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn complete_five_with_kappa_eighth() {
        let net = laplacian_weights(&Graph::complete(5).unwrap(), 0.125).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_close(net.weight(i, j), if i == j { 0.5 } else { 0.125 });
            }
        }
        assert_close(net.delta(), 0.5);
        assert_close(net.delta_max(), 0.5);
    }

    #[test]
    fn single_edge_quarter() {
        let net = laplacian_weights(&Graph::path(2).unwrap(), 0.25).unwrap();
        assert_close(net.weight(0, 0), 0.75);
        assert_close(net.weight(0, 1), 0.25);
        assert_close(net.weight(1, 1), 0.75);
    }

    #[test]
    fn edgeless_graph_is_disconnected() {
        let g = Graph::new(3, []).unwrap();
        assert!(matches!(
            laplacian_weights(&g, 0.1),
            Err(TopologyError::DisconnectedGraph { .. })
        ));
        assert!(matches!(
            metropolis_weights(&g),
            Err(TopologyError::DisconnectedGraph { .. })
        ));
    }

    #[test]
    fn kappa_too_large_rejected() {
        let g = Graph::complete(5).unwrap();
        assert!(matches!(
            laplacian_weights(&g, 0.25),
            Err(TopologyError::WeightOutOfRange(_))
        ));
        assert!(matches!(
            laplacian_weights(&g, -0.1),
            Err(TopologyError::WeightOutOfRange(_))
        ));
    }

    #[test]
    fn validate_rejects_identity_and_asymmetry() {
        let g = Graph::path(2).unwrap();
        let id = DMatrix::identity(2, 2);
        assert!(matches!(
            validate(id, Graph::new(2, []).unwrap()),
            Err(TopologyError::DiagonalOutOfRange { .. })
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.4, 0.6]);
        assert!(matches!(
            validate(asym, g.clone()),
            Err(TopologyError::NotSymmetric { .. })
        ));
        let not_stochastic = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.4, 0.5]);
        assert!(matches!(
            validate(not_stochastic, g.clone()),
            Err(TopologyError::NotRowStochastic { .. })
        ));
        let negative = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, -0.1, 1.1]);
        assert!(matches!(
            validate(negative, g),
            Err(TopologyError::NegativeEntry { .. })
        ));
    }

    #[test]
    fn validate_checks_sparsity_both_ways() {
        let path = Graph::path(3).unwrap();
        let full = laplacian_weights(&Graph::complete(3).unwrap(), 0.2).unwrap();
        assert!(matches!(
            validate(full.w().clone(), path.clone()),
            Err(TopologyError::SparsityMismatch { edge: false, .. })
        ));
        let path_w = laplacian_weights(&path, 0.2).unwrap();
        assert!(matches!(
            validate(path_w.w().clone(), Graph::complete(3).unwrap()),
            Err(TopologyError::SparsityMismatch { edge: true, .. })
        ));
    }

    #[test]
    fn validate_catches_block_diagonal_w() {
        // Two disconnected pairs: every local check passes, only the spectrum fails.
        let mut w = DMatrix::zeros(4, 4);
        for (i, j) in [(0, 1), (2, 3)] {
            w[(i, i)] = 0.5;
            w[(j, j)] = 0.5;
            w[(i, j)] = 0.5;
            w[(j, i)] = 0.5;
        }
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            validate(w, g),
            Err(TopologyError::DisconnectedGraph { .. })
        ));
    }

    #[test]
    fn metropolis_examples() {
        let two = metropolis_weights(&Graph::path(2).unwrap()).unwrap();
        assert_close(two.weight(0, 1), 0.5);
        assert_close(two.weight(0, 0), 0.5);

        let k5 = metropolis_weights(&Graph::complete(5).unwrap()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_close(k5.weight(i, j), 0.2);
            }
        }

        let p3 = metropolis_weights(&Graph::path(3).unwrap()).unwrap();
        assert_close(p3.weight(0, 1), 1.0 / 3.0);
        assert_close(p3.weight(1, 2), 1.0 / 3.0);
        assert_close(p3.weight(1, 1), 1.0 / 3.0);
        assert_close(p3.weight(0, 0), 2.0 / 3.0);
        assert_close(p3.weight(2, 2), 2.0 / 3.0);
    }

    #[test]
    fn graph_constructor_errors() {
        assert_eq!(Graph::new(1, []), Err(TopologyError::TooFewAgents(1)));
        assert_eq!(Graph::new(3, [(0, 0)]), Err(TopologyError::SelfLoop(0)));
        assert_eq!(
            Graph::new(3, [(0, 1), (1, 0)]),
            Err(TopologyError::DuplicateEdge(0, 1))
        );
        assert!(matches!(
            Graph::new(3, [(0, 3)]),
            Err(TopologyError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn edge_list_parsing() {
        let g = Graph::parse_edge_list("# ring\nn 4\n0 1\n1 2\n\n2 3\n3 0\n").unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert_eq!(Graph::parse_edge_list(&g.to_edge_list()).unwrap(), g);
        assert!(matches!(
            Graph::parse_edge_list("0 1\n"),
            Err(TopologyError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Graph::parse_edge_list("n 3\n0\n"),
            Err(TopologyError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn w_csv_roundtrip() {
        let net = laplacian_weights(&Graph::ring(5).unwrap(), 0.3).unwrap();
        let w = parse_w_csv(&net.to_csv()).unwrap();
        let back = network_from_w(w, None).unwrap();
        assert_eq!(back.graph(), net.graph());
        assert!(matches!(
            parse_w_csv("0.5,0.5\n0.5\n"),
            Err(TopologyError::Parse { .. } | TopologyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn w_spectrum_in_unit_interval_with_single_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let n = rng.random_range(2..25);
            let g = Graph::random_connected(n, 0.2, &mut rng).unwrap();
            let net = if rng.random::<bool>() {
                metropolis_weights(&g).unwrap()
            } else {
                laplacian_weights(&g, 0.9 / (g.max_degree() as f64 + 1.0)).unwrap()
            };
            let ev = sym_eigenvalues(net.w());
            assert!(ev[0] > -1.0);
            assert!((ev[n - 1] - 1.0).abs() < 1e-12);
            assert!(ev[n - 2] < 1.0 - 1e-10);
        }
    }
}
