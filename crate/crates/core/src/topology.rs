//! Agent network topology: graph, hop distances and per-agent block sizes.
//!
//! All spatial-decay statements in this crate are relative to the distance
//! matrix stored here. Distances are BFS hop counts; pairs in different
//! connected components carry [`UNREACHABLE`].

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Sentinel distance for disconnected agent pairs.
pub const UNREACHABLE: u32 = u32::MAX;

/// Immutable agent network: `N` agents, undirected edges, hop distances and
/// per-agent state/input dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    state_dims: Vec<usize>,
    input_dims: Vec<usize>,
    dist: Vec<u32>,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    for &d in dims {
        out.push(acc);
        acc += d;
    }
    out.push(acc);
    out
}

fn bfs_distances(n: usize, adj: &[Vec<usize>]) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let row = &mut dist[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let dv = row[v];
            for &w in &adj[v] {
                if row[w] == UNREACHABLE {
                    row[w] = dv + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    dist
}

impl Topology {
    fn from_parts(
        n: usize,
        edges: BTreeSet<(usize, usize)>,
        state_dims: Vec<usize>,
        input_dims: Vec<usize>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("agent count must be positive".into()));
        }
        if state_dims.len() != n || input_dims.len() != n {
            return Err(Error::InvalidTopology(format!(
                "dimension lists must have length N={n} (got {} and {})",
                state_dims.len(),
                input_dims.len()
            )));
        }
        if state_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTopology("state dimensions must be positive".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let dist = bfs_distances(n, &adj);
        let state_offsets = offsets(&state_dims);
        let input_offsets = offsets(&input_dims);
        Ok(Topology { n, edges, state_dims, input_dims, dist, state_offsets, input_offsets })
    }

    /// Cyclic graph `Z_N` with uniform block dimensions.
    ///
    /// Hop distance has the closed form `min(|i-j|, N-|i-j|)`.
    pub fn build_cycle(n: usize, state_dim: usize, input_dim: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!("cycle needs N >= 3, got {n}")));
        }
        let mut edges = BTreeSet::new();
        for i in 0..n {
            let j = (i + 1) % n;
            edges.insert((i.min(j), i.max(j)));
        }
        Self::from_parts(n, edges, vec![state_dim; n], vec![input_dim; n])
    }

    /// 4-neighbor `rows x cols` lattice with uniform block dimensions.
    pub fn build_grid(rows: usize, cols: usize, state_dim: usize, input_dim: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidTopology(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        let n = rows * cols;
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = BTreeSet::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.insert((idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.insert((idx(r, c), idx(r + 1, c)));
                }
            }
        }
        Self::from_parts(n, edges, vec![state_dim; n], vec![input_dim; n])
    }

    /// Arbitrary edge list. Duplicate edges and self-loops are dropped
    /// silently; endpoints out of `[0, N)` are rejected.
    pub fn from_edge_list(
        n: usize,
        edges: &[(usize, usize)],
        state_dims: Vec<usize>,
        input_dims: Vec<usize>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidEdge(format!("edge ({i},{j}) out of range for N={n}")));
            }
            if i != j {
                set.insert((i.min(j), i.max(j)));
            }
        }
        Self::from_parts(n, set, state_dims, input_dims)
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn state_dims(&self) -> &[usize] {
        &self.state_dims
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// Total state dimension `n_x`.
    pub fn n_x(&self) -> usize {
        self.state_offsets[self.n]
    }

    /// Total input dimension `n_u`.
    pub fn n_u(&self) -> usize {
        self.input_offsets[self.n]
    }

    pub fn state_offset(&self, i: usize) -> usize {
        self.state_offsets[i]
    }

    pub fn input_offset(&self, i: usize) -> usize {
        self.input_offsets[i]
    }

    /// Hop distance, `UNREACHABLE` for disconnected pairs.
    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.dist[i * self.n + j]
    }

    pub fn is_connected(&self) -> bool {
        self.dist.iter().all(|&d| d != UNREACHABLE)
    }

    /// Largest finite hop distance; `None` when the graph is disconnected.
    pub fn diameter(&self) -> Option<u32> {
        if !self.is_connected() {
            return None;
        }
        self.dist.iter().copied().max()
    }

    /// Exhaustive structural check: symmetry, zero diagonal and the triangle
    /// inequality over all reachable triples. Intended for desk-scale `N`.
    pub fn check_metric_axioms(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            if self.distance(i, i) != 0 {
                return Err(Error::InvalidTopology(format!("distance({i},{i}) != 0")));
            }
            for j in 0..n {
                if self.distance(i, j) != self.distance(j, i) {
                    return Err(Error::InvalidTopology(format!("distance asymmetric at ({i},{j})")));
                }
            }
        }
        for i in 0..n {
            for k in 0..n {
                let dik = self.distance(i, k);
                if dik == UNREACHABLE {
                    continue;
                }
                for j in 0..n {
                    let dkj = self.distance(k, j);
                    if dkj == UNREACHABLE {
                        continue;
                    }
                    let dij = self.distance(i, j);
                    if dij == UNREACHABLE || dij > dik + dkj {
                        return Err(Error::InvalidTopology(format!(
                            "triangle inequality fails at ({i},{k},{j})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Renders the edge-list text format (`N=<int>` header, one `i j [weight]`
    /// line per edge).
    pub fn to_edge_list_text(&self, weights: Option<&[f64]>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "N={}", self.n);
        for (idx, (i, j)) in self.edges.iter().enumerate() {
            match weights {
                Some(w) => {
                    let _ = writeln!(out, "{i} {j} {}", w[idx]);
                }
                None => {
                    let _ = writeln!(out, "{i} {j}");
                }
            }
        }
        out
    }
}

/// Parsed edge-list file: agent count plus edges with optional weights
/// (weight defaults to 1.0). The weight is carried for system generators;
/// distance computation ignores it.
#[derive(Debug, Clone)]
pub struct EdgeListFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl EdgeListFile {
    /// Parses the `N=<int>` header followed by `i j [weight]` lines. Blank
    /// lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge-list file".into()))?;
        let n: usize = header
            .strip_prefix("N=")
            .ok_or_else(|| Error::Parse(format!("expected 'N=<int>' header, got '{header}'")))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad agent count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let i: usize = parts
                .next()
                .ok_or_else(|| Error::Parse(format!("bad edge line '{line}'")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad edge endpoint in '{line}': {e}")))?;
            let j: usize = parts
                .next()
                .ok_or_else(|| Error::Parse(format!("edge line '{line}' missing endpoint")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad edge endpoint in '{line}': {e}")))?;
            let w: f64 = match parts.next() {
                Some(tok) => tok.parse().map_err(|e| Error::Parse(format!("bad weight in '{line}': {e}")))?,
                None => 1.0,
            };
            edges.push((i, j, w));
        }
        Ok(EdgeListFile { n, edges })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Builds the topology (ignoring weights) with the given block dimensions.
    pub fn into_topology(&self, state_dims: Vec<usize>, input_dims: Vec<usize>) -> Result<Topology> {
        let unweighted: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        Topology::from_edge_list(self.n, &unweighted, state_dims, input_dims)
    }
}
