//! Directed multigraphs and the integer matrices derived from them:
//! incidence, reduced incidence, spanning forests and fundamental cycles.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge `{0}` starts and ends at the same vertex")]
    LoopEdge(String),
    #[error("duplicate vertex `{0}`")]
    DuplicateVertex(String),
    #[error("duplicate edge `{0}`")]
    DuplicateEdge(String),
    #[error("vertex index {0} out of range")]
    UnknownVertex(usize),
    #[error("grounded vertices `{0}` and `{1}` lie in the same connected component")]
    GroundSetViolation(String, String),
    #[error("edge set is not a spanning forest: {0}")]
    NotAForest(String),
}

/// An edge together with its initial and terminal vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub name: String,
    pub init: usize,
    pub ter: usize,
}

/// Finite loop-free directed multigraph. Vertices and edges keep their insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
}

impl DirectedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, name: impl Into<String>) -> Result<usize, GraphError> {
        let name = name.into();
        if self.vertices.contains(&name) {
            return Err(GraphError::DuplicateVertex(name));
        }
        self.vertices.push(name);
        Ok(self.vertices.len() - 1)
    }

    /// Index of the named vertex, inserting it if it is new.
    pub fn ensure_vertex(&mut self, name: &str) -> usize {
        match self.vertex_index(name) {
            Some(i) => i,
            None => {
                self.vertices.push(name.to_string());
                self.vertices.len() - 1
            }
        }
    }

    pub fn add_edge(
        &mut self,
        name: impl Into<String>,
        init: usize,
        ter: usize,
    ) -> Result<usize, GraphError> {
        let name = name.into();
        for v in [init, ter] {
            if v >= self.vertices.len() {
                return Err(GraphError::UnknownVertex(v));
            }
        }
        if init == ter {
            return Err(GraphError::LoopEdge(name));
        }
        if self.edges.iter().any(|e| e.name == name) {
            return Err(GraphError::DuplicateEdge(name));
        }
        self.edges.push(Edge { name, init, ter });
        Ok(self.edges.len() - 1)
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == name)
    }

    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
}

/// Dense integer matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<i64>>", try_from = "Vec<Vec<i64>>")]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl From<IntMatrix> for Vec<Vec<i64>> {
    fn from(m: IntMatrix) -> Self {
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<i64>>> for IntMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<i64>>) -> Result<Self, Self::Error> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged integer matrix".into());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        Self::try_from(rows.to_vec()).expect("rows of equal length")
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[i64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn mul(&self, other: &IntMatrix) -> IntMatrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut p = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = p.get(r, c) + a * other.get(k, c);
                    p.set(r, c, v);
                }
            }
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn select_columns(&self, cols: &[usize]) -> IntMatrix {
        let mut s = Self::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                s.set(r, j, self.get(r, c));
            }
        }
        s
    }

    pub fn select_rows(&self, rows: &[usize]) -> IntMatrix {
        let mut s = Self::zeros(rows.len(), self.cols);
        for (i, &r) in rows.iter().enumerate() {
            s.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(self.row(r));
        }
        s
    }

    /// Rank over the rationals by fraction-free (Bareiss) elimination.
    pub fn rank(&self) -> usize {
        let mut m: Vec<Vec<BigInt>> = (0..self.rows)
            .map(|r| self.row(r).iter().map(|&v| BigInt::from(v)).collect())
            .collect();
        let mut prev = BigInt::one();
        let mut rank = 0;
        for col in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let Some(p) = (rank..self.rows).find(|&r| !m[r][col].is_zero()) else {
                continue;
            };
            m.swap(rank, p);
            for i in rank + 1..self.rows {
                for j in col + 1..self.cols {
                    let v = (&m[rank][col] * &m[i][j] - &m[i][col] * &m[rank][j]) / &prev;
                    m[i][j] = v;
                }
                m[i][col] = BigInt::zero();
            }
            prev = m[rank][col].clone();
            rank += 1;
        }
        rank
    }

    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f64)
    }

    /// Dense comma-separated rendering, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(i64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Nonzero entries as `row col value` lines with zero-based indices.
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.get(r, c);
                if v != 0 {
                    let _ = writeln!(out, "{r} {c} {v}");
                }
            }
        }
        out
    }
}

pub type IncidenceMatrix = IntMatrix;
pub type FundamentalCycleMatrix = IntMatrix;

/// Set of grounded vertices, stored in ascending index order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundSet(BTreeSet<usize>);

impl GroundSet {
    pub fn new(vertices: impl IntoIterator<Item = usize>) -> Self {
        Self(vertices.into_iter().collect())
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn insert(&mut self, v: usize) {
        self.0.insert(v);
    }

    /// Checks the one-ground-per-component rule against component labels.
    pub fn validate(&self, labels: &[usize], names: &dyn Fn(usize) -> String) -> Result<(), GraphError> {
        let mut seen: Vec<Option<usize>> = vec![None; labels.len()];
        for v in self.iter() {
            if v >= labels.len() {
                return Err(GraphError::UnknownVertex(v));
            }
            match seen[labels[v]] {
                Some(w) => return Err(GraphError::GroundSetViolation(names(w), names(v))),
                None => seen[labels[v]] = Some(v),
            }
        }
        Ok(())
    }
}

pub fn incidence_matrix(g: &DirectedGraph) -> IncidenceMatrix {
    let mut a = IntMatrix::zeros(g.n(), g.m());
    for (k, e) in g.edges().iter().enumerate() {
        a.set(e.init, k, 1);
        a.set(e.ter, k, -1);
    }
    a
}

fn labels_from_pairs(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut uf = UnionFind::<usize>::new(n);
    for (a, b) in pairs {
        uf.union(a, b);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|v| {
            let root = uf.find(v);
            if label_of_root[root] == usize::MAX {
                label_of_root[root] = next;
                next += 1;
            }
            label_of_root[root]
        })
        .collect()
}

/// Component label of every vertex; labels are numbered in order of first vertex.
pub fn component_labels(g: &DirectedGraph) -> Vec<usize> {
    labels_from_pairs(g.n(), g.edges().iter().map(|e| (e.init, e.ter)))
}

/// Partition of the vertex set into connected components, edge directions ignored.
pub fn connected_components(g: &DirectedGraph) -> Vec<Vec<usize>> {
    let labels = component_labels(g);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut classes = vec![Vec::new(); k];
    for (v, &l) in labels.iter().enumerate() {
        classes[l].push(v);
    }
    classes
}

/// Deletes the grounded rows of an incidence matrix.
pub fn reduced_incidence(a0: &IncidenceMatrix, s: &GroundSet) -> Result<IntMatrix, GraphError> {
    let pairs = (0..a0.ncols()).filter_map(|c| {
        let plus = (0..a0.nrows()).find(|&r| a0.get(r, c) == 1)?;
        let minus = (0..a0.nrows()).find(|&r| a0.get(r, c) == -1)?;
        Some((plus, minus))
    });
    let labels = labels_from_pairs(a0.nrows(), pairs);
    s.validate(&labels, &|v| format!("#{v}"))?;
    let keep: Vec<usize> = (0..a0.nrows()).filter(|&r| !s.contains(r)).collect();
    Ok(a0.select_rows(&keep))
}

/// Greedy spanning forest: scans edges in order and keeps every edge that closes no cycle.
pub fn spanning_forest(g: &DirectedGraph) -> Vec<usize> {
    let mut uf = UnionFind::<usize>::new(g.n());
    g.edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| uf.union(e.init, e.ter))
        .map(|(k, _)| k)
        .collect()
}

/// Edges not in the forest, in edge order.
pub fn chords(g: &DirectedGraph, forest: &[usize]) -> Vec<usize> {
    let in_forest: BTreeSet<usize> = forest.iter().copied().collect();
    (0..g.m()).filter(|k| !in_forest.contains(k)).collect()
}

/// One row per chord; each row is the chord's fundamental cycle oriented along the chord.
pub fn fundamental_cycle_matrix(
    g: &DirectedGraph,
    forest: &[usize],
) -> Result<FundamentalCycleMatrix, GraphError> {
    let mut uf = UnionFind::<usize>::new(g.n());
    let mut seen = BTreeSet::new();
    for &k in forest {
        let e = g
            .edges()
            .get(k)
            .ok_or_else(|| GraphError::NotAForest(format!("edge index {k} out of range")))?;
        if !seen.insert(k) {
            return Err(GraphError::NotAForest(format!("edge `{}` listed twice", e.name)));
        }
        if !uf.union(e.init, e.ter) {
            return Err(GraphError::NotAForest(format!("edge `{}` closes a cycle", e.name)));
        }
    }
    let k = connected_components(g).len();
    if forest.len() != g.n() - k {
        return Err(GraphError::NotAForest(format!(
            "{} edges given, a spanning forest has {}",
            forest.len(),
            g.n() - k
        )));
    }

    // adjacency of the forest: (neighbour, edge, +1 if traversed along the edge)
    let mut adj: Vec<Vec<(usize, usize, i64)>> = vec![Vec::new(); g.n()];
    for &k in forest {
        let e = &g.edges()[k];
        adj[e.init].push((e.ter, k, 1));
        adj[e.ter].push((e.init, k, -1));
    }

    let chord_list = chords(g, forest);
    let mut b = IntMatrix::zeros(chord_list.len(), g.m());
    for (row, &c) in chord_list.iter().enumerate() {
        let chord = &g.edges()[c];
        b.set(row, c, 1);
        // the cycle runs along the chord, then back from ter to init through the tree
        let mut prev: Vec<Option<(usize, usize, i64)>> = vec![None; g.n()];
        let mut visited = vec![false; g.n()];
        let mut queue = VecDeque::from([chord.ter]);
        visited[chord.ter] = true;
        while let Some(v) = queue.pop_front() {
            if v == chord.init {
                break;
            }
            for &(w, k, sign) in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    prev[w] = Some((v, k, sign));
                    queue.push_back(w);
                }
            }
        }
        let mut v = chord.init;
        while v != chord.ter {
            let (p, k, sign) = prev[v].expect("chord endpoints share a tree");
            b.set(row, k, sign);
            v = p;
        }
    }
    Ok(b)
}

/// True iff `a·bᵀ = 0` and the ranks of `a` and `b` add up to the number of edges.
pub fn verify_cutset_cycle_duality(a: &IntMatrix, b: &IntMatrix) -> bool {
    if a.ncols() != b.ncols() {
        return false;
    }
    a.mul(&b.transpose()).is_zero() && a.rank() + b.rank() == a.ncols()
}
