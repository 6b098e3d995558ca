//! Directed interference graphs.
//!
//! Row `i` of the adjacency structure lists the in-neighbors `N_i`: the units
//! whose treatment can move unit `i`'s outcome. Every unit is its own
//! in-neighbor.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::subset::{self, Subset};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    in_nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from in-neighbor lists. Lists are sorted and
    /// deduplicated and the self-loop is added when missing.
    pub fn from_in_neighbors(mut lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        if n == 0 {
            return Err(Error::Dimension("a graph needs at least one unit".into()));
        }
        for (i, list) in lists.iter_mut().enumerate() {
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::IndexOutOfRange { index: bad, n });
            }
            list.push(i);
            list.sort_unstable();
            list.dedup();
        }
        let mut out_nbrs = vec![Vec::new(); n];
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                out_nbrs[j].push(i);
            }
        }
        Ok(Graph { in_nbrs: lists, out_nbrs })
    }

    /// Builds a graph on `n` units from edges `(j, i)` meaning `j ∈ N_i`.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for (j, i) in edges {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            lists[i].push(j);
        }
        Self::from_in_neighbors(lists)
    }

    /// The graph with no interference: every unit only sees itself.
    pub fn self_loops(n: usize) -> Self {
        Self::from_in_neighbors(vec![Vec::new(); n]).expect("n must be positive")
    }

    /// Disjoint copies of `block`, unit `k` of copy `c` becoming `c * block.n() + k`.
    pub fn replicate(block: &Graph, copies: usize) -> Self {
        let m = block.n();
        let lists = (0..copies).flat_map(|c| block.in_nbrs.iter().map(move |l| l.iter().map(|j| c * m + j).collect())).collect();
        Self::from_in_neighbors(lists).expect("replicated block is valid")
    }

    pub fn n(&self) -> usize {
        self.in_nbrs.len()
    }

    /// The sorted in-neighborhood `N_i`.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_nbrs[i]
    }

    /// The sorted list of units `i` with `j ∈ N_i`.
    pub fn out_neighbors(&self, j: usize) -> &[usize] {
        &self.out_nbrs[j]
    }

    fn check(&self, i: usize) -> Result<()> {
        if i < self.n() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, n: self.n() })
        }
    }

    /// All `S ⊆ N_i` with `|S| ≤ beta`, the empty set first, then by size and
    /// lexicographically.
    pub fn neighbor_subsets(&self, i: usize, beta: usize) -> Result<Vec<Subset>> {
        self.check(i)?;
        if beta == 0 {
            return Err(Error::ZeroBeta);
        }
        Ok(subset::bounded_subsets(&self.in_nbrs[i], beta))
    }

    /// `(d_in, d_out)`, both counting the self-loop.
    pub fn max_degrees(&self) -> (usize, usize) {
        let d_in = self.in_nbrs.iter().map(Vec::len).max().unwrap_or(0);
        let d_out = self.out_nbrs.iter().map(Vec::len).max().unwrap_or(0);
        (d_in, d_out)
    }

    /// Units `i'` (including `i` itself) whose neighborhoods intersect `N_i`.
    pub fn overlapping_units(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.in_nbrs[i].iter().flat_map(|&j| self.out_nbrs[j].iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Number of directed edges excluding self-loops.
    pub fn edge_count(&self) -> usize {
        self.in_nbrs.iter().map(|l| l.len() - 1).sum()
    }

    /// Groups of units such that each unit's neighborhood lies inside its own
    /// group. Estimator terms from different groups depend on disjoint
    /// treatments. Groups are sorted by their smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..n {
            for &j in &self.in_nbrs[i] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(i);
        }
        groups
    }

    /// Induced subgraph on the sorted `units`, which must be closed under
    /// taking in-neighbors. Indices are relabeled by position.
    pub fn restrict(&self, units: &[usize]) -> Result<Self> {
        let lists = units
            .iter()
            .map(|&i| {
                self.in_nbrs[i]
                    .iter()
                    .map(|j| units.binary_search(j).map_err(|_| Error::Precondition(format!("unit {j} is outside the requested group"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_in_neighbors(lists)
    }

    /// Serializes to the text format: `n <N>` then one `j i` line per edge
    /// `j ∈ N_i`, self-loops omitted.
    pub fn to_text(&self) -> String {
        let mut s = format!("n {}\n", self.n());
        for (i, list) in self.in_nbrs.iter().enumerate() {
            for &j in list.iter().filter(|&&j| j != i) {
                writeln!(s, "{j} {i}").unwrap();
            }
        }
        s
    }

    /// Parses the text format. Blank lines and lines starting with `#` are
    /// ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing `n <N>` header".into() })?;
        let n = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", v] => v.parse::<usize>().map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?,
            _ => return Err(Error::Parse { line: ln, msg: format!("expected `n <N>`, found `{header}`") }),
        };
        let mut edges = Vec::new();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [j, i] = parts.as_slice() else {
                return Err(Error::Parse { line: ln, msg: format!("expected `j i`, found `{line}`") });
            };
            let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse { line: ln, msg: e.to_string() });
            let (j, i) = (parse(j)?, parse(i)?);
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, n });
            }
            edges.push((j, i));
        }
        Self::from_edges(n, edges)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// Directed Erdős–Rényi graph: every ordered pair `(j, i)`, `j ≠ i`, is an edge
/// independently with probability `p_edge`.
///
/// Edges are located by geometric skipping over the `n(n-1)` ordered pairs,
/// so the cost is proportional to the number of edges.
pub fn gen_erdos_renyi<R: Rng + ?Sized>(n: usize, p_edge: f64, rng: &mut R) -> Result<Graph> {
    check_prob(p_edge)?;
    if n == 0 {
        return Err(Error::Dimension("a graph needs at least one unit".into()));
    }
    let mut lists = vec![Vec::new(); n];
    if p_edge > 0.0 && n > 1 {
        let total = (n as u64) * (n as u64 - 1);
        let geo = Geometric::new(p_edge).map_err(|_| Error::InvalidProbability(p_edge))?;
        let mut k: u64 = 0;
        loop {
            let skip = geo.sample(rng);
            k = match k.checked_add(skip) {
                Some(v) if v < total => v,
                _ => break,
            };
            let i = (k / (n as u64 - 1)) as usize;
            let mut j = (k % (n as u64 - 1)) as usize;
            if j >= i {
                j += 1;
            }
            lists[i].push(j);
            k += 1;
        }
    }
    Graph::from_in_neighbors(lists)
}

/// Pairwise Euclidean distances between rows of `x`, divided by their maximum.
pub fn normalized_distances(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = (x.row(i) - x.row(j)).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    let max = d.max();
    if max <= 0.0 {
        return Err(Error::DegenerateDistances);
    }
    Ok(d / max)
}

/// Soft random geometric graph on the rows of `x_true`: the ordered pair
/// `(j, i)` is an edge with probability `exp(-d_ij / sigma)`, where distances
/// are normalized by their maximum. Both directions are drawn independently.
pub fn gen_soft_rgg<R: Rng + ?Sized>(x_true: &DMatrix<f64>, sigma: f64, rng: &mut R) -> Result<Graph> {
    let n = x_true.nrows();
    if n < 2 {
        return Err(Error::Dimension("the soft RGG needs at least two units".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x_true.row(i).iter().copied().collect()).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let max = (0..n).into_par_iter().map(|i| (0..i).map(|j| dist(&rows[i], &rows[j])).fold(0.0, f64::max)).reduce(|| 0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateDistances);
    }
    let scale = 1.0 / (max * sigma);
    let mut lists = vec![Vec::new(); n];
    for (i, list) in lists.iter_mut().enumerate() {
        for j in 0..n {
            if j == i {
                continue;
            }
            let prob = (-dist(&rows[i], &rows[j]) * scale).exp();
            if rng.random::<f64>() < prob {
                list.push(j);
            }
        }
    }
    Graph::from_in_neighbors(lists)
}
