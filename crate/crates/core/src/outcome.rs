//! Interaction outcome models and the synthetic coefficient generators.
//!
//! A `β`-order model writes each potential outcome as a polynomial in the
//! treatments of the unit's neighborhood,
//! `Y_i(z) = Σ_{S ⊆ N_i, |S| ≤ β} α_{i,S} ∏_{j ∈ S} z_j`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::subset::Subset;

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionModel {
    graph: Arc<Graph>,
    beta: usize,
    coeffs: Vec<Vec<(Subset, f64)>>,
}

impl InteractionModel {
    /// Builds a model from per-unit coefficient lists. Every subset must be a
    /// neighbor subset of its unit of size at most `beta`; missing subsets have
    /// coefficient zero.
    pub fn new(graph: Arc<Graph>, beta: usize, mut coeffs: Vec<Vec<(Subset, f64)>>) -> Result<Self> {
        if beta == 0 {
            return Err(Error::ZeroBeta);
        }
        if coeffs.len() != graph.n() {
            return Err(Error::Dimension(format!("{} coefficient lists for {} units", coeffs.len(), graph.n())));
        }
        for (i, list) in coeffs.iter_mut().enumerate() {
            for (s, _) in list.iter() {
                if s.len() > beta || !s.is_subset_of(graph.in_neighbors(i)) {
                    return Err(Error::InvalidSubset { unit: i, subset: s.to_vec(), beta });
                }
            }
            list.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
            if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::DuplicateCoefficient { unit: i, subset: w[0].0.to_vec() });
            }
        }
        Ok(InteractionModel { graph, beta, coeffs })
    }

    /// Builds a model from `(unit, subset, alpha)` triples.
    pub fn from_entries(graph: Arc<Graph>, beta: usize, entries: impl IntoIterator<Item = (usize, Subset, f64)>) -> Result<Self> {
        let n = graph.n();
        let mut coeffs = vec![Vec::new(); n];
        for (i, s, a) in entries {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            coeffs[i].push((s, a));
        }
        Self::new(graph, beta, coeffs)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Stored coefficients of unit `i`, ordered by subset size then lexicographically.
    pub fn unit_coeffs(&self, i: usize) -> &[(Subset, f64)] {
        &self.coeffs[i]
    }

    /// `α_{i,S}`, zero when not stored.
    pub fn coeff(&self, i: usize, s: &[usize]) -> f64 {
        self.coeffs[i].iter().find(|(t, _)| t.as_slice() == s).map_or(0.0, |(_, a)| *a)
    }

    /// Potential outcome of unit `i` under assignment `z`.
    pub fn potential(&self, i: usize, z: &[bool]) -> f64 {
        self.coeffs[i].iter().filter(|(s, _)| s.iter().all(|&j| z[j])).map(|(_, a)| a).sum()
    }

    /// All potential outcomes under `z`.
    pub fn evaluate_potential(&self, z: &[bool]) -> Vec<f64> {
        assert_eq!(z.len(), self.n(), "assignment length must equal the number of units");
        (0..self.n()).map(|i| self.potential(i, z)).collect()
    }

    /// Effect of treating everyone on unit `i`: the sum of its non-empty coefficients.
    pub fn unit_effect(&self, i: usize) -> f64 {
        self.coeffs[i].iter().filter(|(s, _)| !s.is_empty()).map(|(_, a)| a).sum()
    }

    /// Total treatment effect: the average over units of `Y_i(1) - Y_i(0)`.
    pub fn true_tte(&self) -> f64 {
        (0..self.n()).map(|i| self.unit_effect(i)).sum::<f64>() / self.n() as f64
    }

    /// `max_i Σ_S |α_{i,S}|`.
    pub fn y_max(&self) -> f64 {
        self.coeffs.iter().map(|l| l.iter().map(|(_, a)| a.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// The model on a group of units closed under taking in-neighbors,
    /// relabeled by position in `units`.
    pub fn restrict(&self, units: &[usize]) -> Result<Self> {
        let graph = Arc::new(self.graph.restrict(units)?);
        let relabel = |s: &Subset| Subset::new(s.iter().map(|j| units.binary_search(j).expect("closed group")).collect());
        let coeffs = units.iter().map(|&i| self.coeffs[i].iter().map(|(s, a)| (relabel(s), *a)).collect()).collect();
        Self::new(graph, self.beta, coeffs)
    }

    /// One `i | j1,j2,... | alpha` line per stored coefficient, `-` for the empty set.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, list) in self.coeffs.iter().enumerate() {
            for (s, a) in list {
                writeln!(out, "{i} | {s} | {a}").unwrap();
            }
        }
        out
    }

    pub fn from_text(graph: Arc<Graph>, beta: usize, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: k + 1, msg };
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            let [i, s, a] = parts.as_slice() else {
                return Err(err(format!("expected `i | subset | alpha`, found `{line}`")));
            };
            let i = i.parse::<usize>().map_err(|e| err(e.to_string()))?;
            let subset = if *s == "-" {
                Subset::empty()
            } else {
                Subset::new(s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| err(e.to_string()))).collect::<Result<_>>()?)
            };
            let a = a.parse::<f64>().map_err(|e| err(e.to_string()))?;
            entries.push((i, subset, a));
        }
        Self::from_entries(graph, beta, entries)
    }

    pub fn read(graph: Arc<Graph>, beta: usize, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(graph, beta, &text)
    }
}

/// Coefficients attached to the edges of a graph: `row(i)[k]` is the weight
/// of the `k`-th in-neighbor of unit `i`. Entries off the graph are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborWeights {
    graph: Arc<Graph>,
    rows: Vec<Vec<f64>>,
}

impl NeighborWeights {
    pub fn zeros(graph: Arc<Graph>) -> Self {
        let rows = (0..graph.n()).map(|i| vec![0.0; graph.in_neighbors(i).len()]).collect();
        NeighborWeights { graph, rows }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.graph.in_neighbors(i).binary_search(&j).map_or(0.0, |k| self.rows[i][k])
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.graph.in_neighbors(i).binary_search(&j).expect("edge exists");
        self.rows[i][k] = v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.graph.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (k, &j) in self.graph.in_neighbors(i).iter().enumerate() {
                m[(i, j)] = self.rows[i][k];
            }
        }
        m
    }
}

fn uniform_or_given<R: Rng + ?Sized>(given: Option<&[f64]>, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match given {
        Some(v) if v.len() == n => Ok(v.to_vec()),
        Some(v) => Err(Error::Dimension(format!("vector of length {} for {n} units", v.len()))),
        None => Ok((0..n).map(|_| rng.random::<f64>()).collect()),
    }
}

/// The degree-weighted off-diagonal part shared by both generators:
/// `Ã = D(A - I)` with column sums `s` (zeros replaced by one), scaled as
/// `Ã diag(c / s)`.
fn degree_weighted(graph: &Arc<Graph>, c: &[f64]) -> NeighborWeights {
    let n = graph.n();
    let d: Vec<f64> = (0..n).map(|i| graph.in_neighbors(i).len() as f64).collect();
    let s: Vec<f64> = (0..n)
        .map(|j| {
            let col: f64 = graph.out_neighbors(j).iter().filter(|&&i| i != j).map(|&i| d[i]).sum();
            if col == 0.0 {
                1.0
            } else {
                col
            }
        })
        .collect();
    let mut w = NeighborWeights::zeros(graph.clone());
    for i in 0..n {
        for (k, &j) in graph.in_neighbors(i).iter().enumerate() {
            if j != i {
                w.rows[i][k] = d[i] * c[j] / s[j];
            }
        }
    }
    w
}

/// Linear interaction coefficients.
///
/// The off-diagonal part spreads `offdiag · v_j` over the units that unit `j`
/// influences in proportion to their in-degrees; the diagonal is
/// `diag_c · u_i`. A covariate term `X_true Ψ X_trueᵀ`, rescaled so its entries
/// have mean absolute value 1/5, is added on the edges with weight `offdiag`
/// and on the diagonal with weight `diag_c`, where `offdiag = r · diag_c`.
///
/// `v` and `u` are drawn from `U[0,1]` (in that order) when not supplied.
#[allow(clippy::too_many_arguments)]
pub fn gen_alpha_linear<R: Rng + ?Sized>(
    graph: &Arc<Graph>,
    x_true: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    diag_c: f64,
    r: f64,
    v: Option<&[f64]>,
    u: Option<&[f64]>,
    rng: &mut R,
) -> Result<NeighborWeights> {
    let n = graph.n();
    if x_true.nrows() != n || psi.nrows() != x_true.ncols() || psi.ncols() != x_true.ncols() {
        return Err(Error::Dimension(format!("covariates {}x{} and psi {}x{} for {n} units", x_true.nrows(), x_true.ncols(), psi.nrows(), psi.ncols())));
    }
    let offdiag = r * diag_c;
    let v = uniform_or_given(v, n, rng)?;
    let c: Vec<f64> = v.iter().map(|x| offdiag * x).collect();
    let mut out = degree_weighted(graph, &c);
    let u = uniform_or_given(u, n, rng)?;

    let xp = x_true * psi;
    let bilinear = |i: usize, j: usize| xp.row(i).dot(&x_true.row(j));
    let total: f64 = (0..n).into_par_iter().map(|i| (0..n).map(|j| bilinear(i, j).abs()).sum::<f64>()).collect::<Vec<_>>().iter().sum();
    let scale = if total > 0.0 { (n * n) as f64 / (5.0 * total) } else { 0.0 };

    for i in 0..n {
        for &j in graph.in_neighbors(i) {
            let value = if j == i { diag_c * u[i] + bilinear(i, i) * scale * diag_c } else { out.get(i, j) + offdiag * bilinear(i, j) * scale };
            out.set(i, j, value);
        }
    }
    Ok(out)
}

/// Quadratic interaction weights: the same degree-weighted off-diagonal part
/// as [`gen_alpha_linear`] and diagonal `(Σ_k x_true_{ik} + diag_c) · u_i`.
pub fn gen_alpha_quad<R: Rng + ?Sized>(
    graph: &Arc<Graph>,
    x_true: &DMatrix<f64>,
    diag_c: f64,
    r: f64,
    v: Option<&[f64]>,
    u: Option<&[f64]>,
    rng: &mut R,
) -> Result<NeighborWeights> {
    let n = graph.n();
    if x_true.nrows() != n {
        return Err(Error::Dimension(format!("covariates have {} rows for {n} units", x_true.nrows())));
    }
    let v = uniform_or_given(v, n, rng)?;
    let c: Vec<f64> = v.iter().map(|x| r * diag_c * x).collect();
    let mut out = degree_weighted(graph, &c);
    let u = uniform_or_given(u, n, rng)?;
    for i in 0..n {
        out.set(i, i, (x_true.row(i).sum() + diag_c) * u[i]);
    }
    Ok(out)
}

/// Ingredients of the simulation outcome
/// `Y_i(z) = α_{i,∅} + Σ_j α^lin_ij z_j + 1(β=2) Q_i(z) + θᵀ x_true_i`.
#[derive(Debug, Clone)]
pub struct SimOutcomeSpec {
    pub alpha0: Vec<f64>,
    pub alpha_linear: NeighborWeights,
    pub alpha_quad: Option<NeighborWeights>,
    pub theta_true: DVector<f64>,
    pub x_true: DMatrix<f64>,
}

/// A simulation model together with the units whose quadratic term was
/// dropped because its normalizer `Σ_j α^quad_ij` vanished.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub model: InteractionModel,
    pub degenerate_units: Vec<usize>,
}

/// Expands the simulation outcome into interaction coefficients. For `β = 2`
/// the quadratic term
/// `Q_i(z) = (Σ a_j z_j)² / (Σ a_j)² - Σ (a_j z_j)² / (Σ a_j)²`
/// becomes `α_{i,{j,k}} = 2 a_j a_k / (Σ a)²` for `j < k`.
pub fn build_sim_outcome(spec: &SimOutcomeSpec, beta: usize) -> Result<SimOutcome> {
    let graph = spec.alpha_linear.graph.clone();
    let n = graph.n();
    if !(beta == 1 || beta == 2) {
        return Err(Error::Precondition(format!("simulation outcomes support beta 1 or 2, got {beta}")));
    }
    if spec.alpha0.len() != n || spec.x_true.nrows() != n || spec.theta_true.len() != spec.x_true.ncols() {
        return Err(Error::Dimension("simulation outcome inputs disagree on size".into()));
    }
    let quad = match (beta, &spec.alpha_quad) {
        (2, None) => return Err(Error::Precondition("beta = 2 requires quadratic weights".into())),
        (2, Some(q)) => Some(q),
        _ => None,
    };
    let mut degenerate_units = Vec::new();
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let nbrs = graph.in_neighbors(i);
        let mut list = Vec::with_capacity(1 + nbrs.len());
        let intercept = spec.alpha0[i] + spec.x_true.row(i).transpose().dot(&spec.theta_true);
        list.push((Subset::empty(), intercept));
        for (k, &j) in nbrs.iter().enumerate() {
            list.push((Subset::new(vec![j]), spec.alpha_linear.row(i)[k]));
        }
        if let Some(q) = quad {
            let a = q.row(i);
            let total: f64 = a.iter().sum();
            if total == 0.0 {
                degenerate_units.push(i);
            } else {
                let denom = total * total;
                for x in 0..nbrs.len() {
                    for y in x + 1..nbrs.len() {
                        list.push((Subset::new(vec![nbrs[x], nbrs[y]]), 2.0 * a[x] * a[y] / denom));
                    }
                }
            }
        }
        coeffs.push(list);
    }
    Ok(SimOutcome { model: InteractionModel::new(graph, beta, coeffs)?, degenerate_units })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_outcomes() {
        let (model, _, _) = toy::model();
        assert_eq!(model.evaluate_potential(&[true; 3]), vec![2.0, 0.0, 0.5]);
        assert_eq!(model.evaluate_potential(&[false; 3]), vec![0.0, -2.0, -0.5]);
        assert!((model.true_tte() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(model.y_max(), 4.0);
        assert_eq!(model.coeff(1, &[]), -2.0);
        assert_eq!(model.coeff(2, &[0]), 0.0);
    }

    #[test]
    fn intercept_only_model_has_zero_tte() {
        let g = Arc::new(Graph::self_loops(3));
        let m = InteractionModel::from_entries(g, 1, (0..3).map(|i| (i, Subset::empty(), i as f64))).unwrap();
        assert_eq!(m.true_tte(), 0.0);
    }

    #[test]
    fn rejects_foreign_subsets() {
        let g = Arc::new(Graph::self_loops(3));
        let bad = InteractionModel::from_entries(g.clone(), 1, [(0, Subset::from([1]), 1.0)]);
        assert!(matches!(bad, Err(Error::InvalidSubset { .. })));
        let dup = InteractionModel::from_entries(g, 1, [(0, Subset::from([0]), 1.0), (0, Subset::from([0]), 2.0)]);
        assert!(matches!(dup, Err(Error::DuplicateCoefficient { .. })));
    }

    #[test]
    fn text_round_trip() {
        let (model, _, _) = toy::model();
        let text = model.to_text();
        assert!(text.starts_with("0 | - | 0\n0 | 0 | 1\n"));
        let back = InteractionModel::from_text(model.graph_arc().clone(), 1, &text).unwrap();
        assert_eq!(back, model);
        assert!(InteractionModel::from_text(model.graph_arc().clone(), 1, "0 | x | 1").is_err());
    }

    fn chain() -> Arc<Graph> {
        // Chain 0 -> 1 -> 2: N_0 = {0}, N_1 = {0,1}, N_2 = {1,2}.
        Arc::new(Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap())
    }

    #[test]
    fn linear_generator_hand_trace() {
        let g = chain();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let psi = DMatrix::<f64>::identity(2, 2);
        let (v, u) = ([0.5, 0.25, 1.0], [0.2, 0.4, 0.6]);
        let (diag_c, r) = (2.0, 0.5);
        let a = gen_alpha_linear(&g, &x, &psi, diag_c, r, Some(&v), Some(&u), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // offdiag = 1, c = v. Degrees d = (1, 2, 2).
        // Ã_10 = 2, Ã_21 = 2; column sums s = (2, 2, 1).
        // C_10 = 2 * 0.5 / 2 = 0.5, C_21 = 2 * 0.25 / 2 = 0.25.
        // Gram X Xᵀ = [[1,0,-1],[0,1,-1],[-1,-1,2]]: Σ|.| = 8, scale = 9/40.
        let s = 9.0 / 40.0;
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[
                diag_c * 0.2 + 1.0 * s * diag_c,
                0.0,
                0.0,
                0.5 + 0.0 * s,
                diag_c * 0.4 + 1.0 * s * diag_c,
                0.0,
                0.0,
                0.25 - s,
                diag_c * 0.6 + 2.0 * s * diag_c,
            ],
        );
        assert!((a.to_dense() - expected).abs().max() < 1e-14);
    }

    #[test]
    fn quad_generator_hand_trace() {
        let g = chain();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let (v, u) = ([0.5, 0.25, 1.0], [0.2, 0.4, 0.6]);
        let q = gen_alpha_quad(&g, &x, 2.0, 0.5, Some(&v), Some(&u), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.6, 0.0, 0.0, 0.5, 1.2, 0.0, 0.0, 0.25, 0.0]);
        assert!((q.to_dense() - expected).abs().max() < 1e-14);
        let zero_u = gen_alpha_quad(&g, &x, 2.0, 0.5, Some(&v), Some(&[0.0; 3]), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((0..3).all(|i| zero_u.get(i, i) == 0.0));
    }

    #[test]
    fn self_loop_graph_has_no_off_diagonal() {
        let g = Arc::new(Graph::self_loops(4));
        let x = DMatrix::from_fn(4, 3, |i, j| (i as f64 - 1.5) * (j as f64 + 1.0));
        let psi = DMatrix::<f64>::identity(3, 3);
        let u = [0.1, 0.2, 0.3, 0.4];
        let a = gen_alpha_linear(&g, &x, &psi, 1.0, 3.0, Some(&[1.0; 4]), Some(&u), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let gram = &x * x.transpose();
        let scale = 16.0 / (5.0 * gram.abs().sum());
        let dense = a.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { u[i] + gram[(i, i)] * scale } else { 0.0 };
                assert!((dense[(i, j)] - want).abs() < 1e-14);
            }
        }
        let q = gen_alpha_quad(&g, &x, 1.0, 3.0, None, Some(&u), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for i in 0..4 {
            assert!((q.get(i, i) - (x.row(i).sum() + 1.0) * u[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_ratio_removes_off_diagonal() {
        let g = chain();
        let x = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let psi = DMatrix::<f64>::identity(2, 2);
        let a = gen_alpha_linear(&g, &x, &psi, 1.0, 0.0, None, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.get(2, 1), 0.0);
    }

    fn random_sim(seed: u64, beta: usize) -> (SimOutcomeSpec, Arc<Graph>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let g = Arc::new(crate::graph::gen_erdos_renyi(n, 0.4, &mut rng).unwrap());
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() - 0.5);
        let psi = DMatrix::<f64>::identity(2, 2);
        let lin = gen_alpha_linear(&g, &x, &psi, 1.0, 1.5, None, None, &mut rng).unwrap();
        let quad = gen_alpha_quad(&g, &x, 1.0, 1.5, None, None, &mut rng).unwrap();
        let spec = SimOutcomeSpec {
            alpha0: (0..n).map(|_| rng.random()).collect(),
            alpha_linear: lin,
            alpha_quad: (beta == 2).then_some(quad),
            theta_true: DVector::from_vec(vec![0.7, -0.3]),
            x_true: x,
        };
        (spec, g)
    }

    fn direct(spec: &SimOutcomeSpec, g: &Graph, i: usize, z: &[bool]) -> f64 {
        let nbrs = g.in_neighbors(i);
        let mut y = spec.alpha0[i] + spec.x_true.row(i).transpose().dot(&spec.theta_true);
        for (k, &j) in nbrs.iter().enumerate() {
            y += spec.alpha_linear.row(i)[k] * z[j] as u8 as f64;
        }
        if let Some(q) = &spec.alpha_quad {
            let a = q.row(i);
            let total: f64 = a.iter().sum();
            let lin: f64 = nbrs.iter().enumerate().map(|(k, &j)| a[k] * z[j] as u8 as f64).sum();
            let sq: f64 = nbrs.iter().enumerate().map(|(k, &j)| (a[k] * z[j] as u8 as f64).powi(2)).sum();
            y += (lin / total).powi(2) - sq / (total * total);
        }
        y
    }

    #[test]
    fn expansion_matches_direct_evaluation() {
        for beta in [1, 2] {
            let (spec, g) = random_sim(17 + beta as u64, beta);
            let sim = build_sim_outcome(&spec, beta).unwrap();
            assert!(sim.degenerate_units.is_empty());
            if beta == 1 {
                assert!(sim.model.unit_coeffs(0).iter().all(|(s, _)| s.len() <= 1));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let z: Vec<bool> = (0..g.n()).map(|_| rng.random()).collect();
                let y = sim.model.evaluate_potential(&z);
                for i in 0..g.n() {
                    assert!((y[i] - direct(&spec, &g, i, &z)).abs() < 1e-10);
                }
            }
            // Intercepts and covariate terms cancel in the TTE.
            let want: f64 =
                (0..g.n()).map(|i| direct(&spec, &g, i, &vec![true; g.n()]) - direct(&spec, &g, i, &vec![false; g.n()])).sum::<f64>() / g.n() as f64;
            assert!((sim.model.true_tte() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_term_at_full_treatment() {
        let g = Arc::new(Graph::from_edges(4, [(1, 0), (2, 0), (3, 0)]).unwrap());
        let mut quad = NeighborWeights::zeros(g.clone());
        quad.rows[0] = vec![1.0, 2.0, 3.0, 4.0];
        let spec = SimOutcomeSpec {
            alpha0: vec![0.0; 4],
            alpha_linear: NeighborWeights::zeros(g.clone()),
            alpha_quad: Some(quad),
            theta_true: DVector::zeros(1),
            x_true: DMatrix::zeros(4, 1),
        };
        let sim = build_sim_outcome(&spec, 2).unwrap();
        let q1 = sim.model.potential(0, &[true; 4]);
        assert!((q1 - (1.0 - 30.0 / 100.0)).abs() < 1e-14);
        // Units 1..3 have all-zero weights: degenerate, no quadratic term.
        assert_eq!(sim.degenerate_units, vec![1, 2, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn locality_and_tte(seed in any::<u64>(), mask in any::<u8>(), flip in 0usize..7) {
            let (spec, g) = random_sim(seed, 2);
            let model = build_sim_outcome(&spec, 2).unwrap().model;
            let z: Vec<bool> = (0..7).map(|k| mask >> k & 1 == 1).collect();
            let y = model.evaluate_potential(&z);
            let mut z2 = z.clone();
            z2[flip] = !z2[flip];
            let y2 = model.evaluate_potential(&z2);
            for i in 0..7 {
                if !g.in_neighbors(i).contains(&flip) {
                    prop_assert_eq!(y[i], y2[i]);
                }
            }
            let ones = model.evaluate_potential(&[true; 7]);
            let zeros = model.evaluate_potential(&[false; 7]);
            let avg = ones.iter().zip(&zeros).map(|(a, b)| a - b).sum::<f64>() / 7.0;
            prop_assert!((avg - model.true_tte()).abs() < 1e-12);
        }
    }
}
