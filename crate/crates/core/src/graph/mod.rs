//! Attributed graph model, adjacency normalization, file I/O, synthetic
//! generation and anomaly injection.

mod inject;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use inject::inject_anomalies;
pub use io::{load_graph_dir, read_fmat, save_graph_dir, write_fmat, FeatureFormat};
pub use synth::{generate_graph, synthetic_suite, SuiteSpec, SynthSpec, SyntheticSuite};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One undirected attributed graph with optional binary anomaly labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub domain: String,
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Option<Vec<u8>>,
}

impl GraphDataset {
    /// Validate and canonicalize. Edges are stored once as `(min, max)`,
    /// sorted and deduplicated; self-loops are dropped.
    pub fn new(
        name: impl Into<String>,
        domain: impl Into<String>,
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = features.rows();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
        }
        if !features.is_finite() {
            return Err(Error::invalid("features contain non-finite values"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Consistency(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
            if let Some(bad) = l.iter().find(|&&y| y > 1) {
                return Err(Error::invalid(format!("label {bad} is not binary")));
            }
        }
        Ok(Self {
            name: name.into(),
            domain: domain.into(),
            n,
            edges: canonical_edges(edges),
            features,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n || l.iter().any(|&y| y > 1) {
                return Err(Error::invalid("labels must be binary with one entry per node"));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Node degrees (without self-loops).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::invalid("permutation length mismatch"));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("not a permutation"));
            }
        }
        let mut features = Matrix::zeros(self.n, self.features.cols());
        for i in 0..self.n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![0; self.n];
            for i in 0..self.n {
                out[perm[i]] = l[i];
            }
            out
        });
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        GraphDataset::new(self.name.clone(), self.domain.clone(), edges, features, labels)
    }
}

fn canonical_edges(edges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|(u, v)| u != v)
        .map(|(u, v)| (u.min(v), u.max(v)))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// How the propagation matrix is built from the edge list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// Binary adjacency as stored, no self-loops.
    Raw,
    /// `D^{-1/2} (A + I) D^{-1/2}`.
    #[default]
    SymNorm,
}

impl std::str::FromStr for AdjacencyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "sym_norm" => Ok(Self::SymNorm),
            other => Err(Error::Config(format!("unknown adjacency mode {other:?}"))),
        }
    }
}

impl AdjacencyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::SymNorm => "sym_norm",
        }
    }
}

/// Symmetric propagation matrix in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as `(column, value)`, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    /// `Â · x`.
    pub fn propagate(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n, "propagate: row mismatch");
        let cols = x.cols();
        let mut out = Matrix::zeros(self.n, cols);
        let avg_nnz = self.nnz() / self.n.max(1) + 1;
        crate::par::for_each_row(out.data_mut(), cols, avg_nnz * cols, |r, out_row| {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                for (o, xv) in out_row.iter_mut().zip(x.row(self.col_idx[k])) {
                    *o += v * xv;
                }
            }
        });
        out
    }
}

/// Build the propagation matrix for `g`.
pub fn build_adjacency(g: &GraphDataset, mode: AdjacencyMode) -> NormalizedAdjacency {
    let n = g.node_count();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in g.edges() {
        neighbors[u].push(v);
        neighbors[v].push(u);
    }
    if mode == AdjacencyMode::SymNorm {
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.push(i);
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    let inv_sqrt_deg: Vec<f64> = neighbors.iter().map(|nb| 1.0 / (nb.len() as f64).sqrt()).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for (r, nb) in neighbors.iter().enumerate() {
        for &c in nb {
            col_idx.push(c);
            values.push(match mode {
                AdjacencyMode::Raw => 1.0,
                AdjacencyMode::SymNorm => inv_sqrt_deg[r] * inv_sqrt_deg[c],
            });
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency {
        n,
        row_ptr,
        col_idx,
        values,
    }
}

/// Symmetric normalization with self-loops, the default propagation matrix.
pub fn build_normalized_adjacency(g: &GraphDataset) -> NormalizedAdjacency {
    build_adjacency(g, AdjacencyMode::SymNorm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn graph(n: usize, edges: Vec<(usize, usize)>) -> GraphDataset {
        GraphDataset::new("g", "test", edges, Matrix::zeros(n, 1), None).unwrap()
    }

    #[test]
    fn isolated_node_gets_unit_self_loop() {
        let a = build_normalized_adjacency(&graph(1, vec![])).to_dense();
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn single_edge_is_all_halves() {
        let a = build_normalized_adjacency(&graph(2, vec![(0, 1)])).to_dense();
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn row_sums_match_degree_formula() {
        let mut rng = Rng::new(4);
        let mut edges = Vec::new();
        for u in 0..10 {
            for v in u + 1..10 {
                if rng.bernoulli(0.3) {
                    edges.push((u, v));
                }
            }
        }
        let g = graph(10, edges.clone());
        let a = build_normalized_adjacency(&g);
        let ones = Matrix::filled(10, 1, 1.0);
        let s = a.propagate(&ones);
        let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64 + 1.0).collect();
        for i in 0..10 {
            let mut want = 1.0 / deg[i];
            for &(u, v) in &edges {
                if u == i {
                    want += 1.0 / (deg[i] * deg[v]).sqrt();
                } else if v == i {
                    want += 1.0 / (deg[i] * deg[u]).sqrt();
                }
            }
            assert!((s.get(i, 0) - want).abs() < 1e-12);
        }
        let d = a.to_dense();
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn duplicates_and_reversed_edges_collapse() {
        let g = graph(3, vec![(0, 1), (1, 0), (0, 1), (2, 2)]);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn permutation_equivariance() {
        let g = graph(4, vec![(0, 1), (1, 2), (2, 3), (0, 2)]);
        let perm = [2, 0, 3, 1];
        let a = build_normalized_adjacency(&g).to_dense();
        let ap = build_normalized_adjacency(&g.permuted(&perm).unwrap()).to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.get(i, j), ap.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn raw_mode_has_no_self_loops() {
        let a = build_adjacency(&graph(2, vec![(0, 1)]), AdjacencyMode::Raw).to_dense();
        assert_eq!(a.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(GraphDataset::new("g", "", vec![(0, 5)], Matrix::zeros(2, 1), None).is_err());
        assert!(GraphDataset::new("g", "", vec![], Matrix::zeros(2, 1), Some(vec![0])).is_err());
    }
}
