//! TTE estimators: difference in means, Lin's regression-adjusted estimator,
//! SNIPE and its covariate-adjusted variants Reg-SNIPE and VIM-SNIPE.
//!
//! All SNIPE-family estimators share the form
//! `TTE(θ) = (1/n) Σ_i ω_i (Y_i - θᵀ X_i)`, which is unbiased for every fixed
//! `θ` because each weight `ω_i` has mean zero. They differ only in how `θ`
//! is chosen.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg;
use crate::moments::{g_coeff, Design};
use crate::subset::{self, elementary_symmetric, for_each_bounded_subset, Subset};

/// One realized experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    graph: Arc<Graph>,
    design: Design,
    beta: usize,
    z: Vec<bool>,
    y: Vec<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    /// Validates sizes and centers each covariate column.
    pub fn new(graph: Arc<Graph>, design: Design, beta: usize, z: Vec<bool>, y: Vec<f64>, mut x: DMatrix<f64>) -> Result<Self> {
        let n = graph.n();
        if beta == 0 {
            return Err(Error::ZeroBeta);
        }
        if design.len() != n || z.len() != n || y.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!("graph has {n} units but design/z/y/x have {}/{}/{}/{} rows", design.len(), z.len(), y.len(), x.nrows())));
        }
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Ok(Dataset { graph, design, beta, z, y, x })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Centered covariates, one row per unit.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// The same experiment with outcomes replaced.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.graph.clone(), self.design.clone(), self.beta, self.z.clone(), y, self.x.clone())
    }

    /// Reads a CSV with header `unit,z,y,x1,..,xd` and an optional `p`
    /// column of treatment probabilities. Without that column every unit
    /// gets probability `p`.
    pub fn read_csv(path: impl AsRef<Path>, graph: Arc<Graph>, beta: usize, p: Option<f64>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (unit_col, z_col, y_col) = match (col("unit"), col("z"), col("y")) {
            (Some(u), Some(z), Some(y)) => (u, z, y),
            _ => return Err(Error::Parse { line: 1, msg: "header must contain unit, z and y".into() }),
        };
        let p_col = col("p");
        let x_cols: Vec<usize> = (1..).map_while(|k| col(&format!("x{k}"))).collect();
        let n = graph.n();
        let mut z = vec![None; n];
        let (mut y, mut probs, mut xs) = (vec![0.0; n], vec![p.unwrap_or(f64::NAN); n], vec![0.0; n * x_cols.len()]);
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let num = |c: usize| field(c).parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{}: {e}", &headers[c]) });
            let unit = field(unit_col).parse::<usize>().map_err(|e| Error::Parse { line, msg: format!("unit: {e}") })?;
            if unit >= n {
                return Err(Error::IndexOutOfRange { index: unit, n });
            }
            z[unit] = Some(match field(z_col) {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(Error::Parse { line, msg: format!("z must be 0 or 1, found `{other}`") }),
            });
            y[unit] = num(y_col)?;
            if let Some(c) = p_col {
                probs[unit] = num(c)?;
            }
            for (q, &c) in x_cols.iter().enumerate() {
                xs[unit * x_cols.len() + q] = num(c)?;
            }
        }
        let z = z.into_iter().enumerate().map(|(i, v)| v.ok_or(Error::Parse { line: 0, msg: format!("no row for unit {i}") })).collect::<Result<Vec<_>>>()?;
        if probs.iter().any(|p| p.is_nan()) {
            return Err(Error::Config("treatment probabilities need a `p` column or a scalar value".into()));
        }
        let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
        Self::new(graph, Design::new(probs)?, beta, z, y, x)
    }

    /// Writes the `unit,z,y,x1,..,xd` CSV (covariates as stored, i.e. centered).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["unit".to_string(), "z".into(), "y".into()];
        header.extend((1..=self.dim()).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![i.to_string(), (self.z[i] as u8).to_string(), self.y[i].to_string()];
            row.extend(self.x.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// The five estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Dm,
    Lin,
    Snipe,
    RegSnipe,
    VimSnipe,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [Estimator::Dm, Estimator::Lin, Estimator::Snipe, Estimator::RegSnipe, Estimator::VimSnipe];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Dm => "DM",
            Estimator::Lin => "Lin",
            Estimator::Snipe => "SNIPE",
            Estimator::RegSnipe => "Reg-SNIPE",
            Estimator::VimSnipe => "VIM-SNIPE",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        match key.as_str() {
            "dm" => Ok(Estimator::Dm),
            "lin" => Ok(Estimator::Lin),
            "snipe" => Ok(Estimator::Snipe),
            "regsnipe" | "reg" => Ok(Estimator::RegSnipe),
            "vimsnipe" | "vim" => Ok(Estimator::VimSnipe),
            _ => Err(Error::Config(format!("unknown estimator `{s}`; expected one of DM, Lin, SNIPE, Reg-SNIPE, VIM-SNIPE"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Condition number of the linear system solved for `θ`, if any.
    pub condition_number: Option<f64>,
    /// Whether the system was solved by pseudo-inverse.
    pub pseudo_inverse: bool,
    /// Units whose SNIPE weight is exactly zero in this assignment.
    pub degenerate_units: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimator: String,
    pub point_estimate: f64,
    pub theta: Option<DVector<f64>>,
    pub diagnostics: Diagnostics,
}

fn finite(report: EstimateReport, what: &'static str) -> Result<EstimateReport> {
    if report.point_estimate.is_finite() {
        Ok(report)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// SNIPE weights `ω_i = Σ_{S ∈ S_i^β} g(S) ∏_{j ∈ S} w_j`.
///
/// Since `g(S) ∏ w_j = ∏ (1-p_j) w_j - ∏ (-p_j w_j)`, each weight is a
/// difference of two truncated elementary symmetric sums.
pub fn snipe_weights(ds: &Dataset) -> Vec<f64> {
    weights_for(&ds.graph, &ds.design, ds.beta, &ds.z)
}

/// SNIPE weights of every unit for an assignment `z`, without building a [`Dataset`].
pub fn weights_for(graph: &Graph, design: &Design, beta: usize, z: &[bool]) -> Vec<f64> {
    (0..graph.n()).map(|i| weight_for(graph, design, beta, z, i)).collect()
}

pub(crate) fn weight_for(graph: &Graph, design: &Design, beta: usize, z: &[bool], i: usize) -> f64 {
    let nbrs = graph.in_neighbors(i);
    let w = |j: usize| design.weight(j, z[j]);
    let ea = elementary_symmetric(nbrs.iter().map(|&j| (1.0 - design.p(j)) * w(j)), beta);
    let eb = elementary_symmetric(nbrs.iter().map(|&j| -design.p(j) * w(j)), beta);
    ea.iter().zip(&eb).skip(1).map(|(a, b)| a - b).sum()
}

/// The SNIPE weight of unit `i` summed subset by subset.
pub fn snipe_weight_by_subsets(ds: &Dataset, i: usize) -> f64 {
    subset::bounded_subsets(ds.graph.in_neighbors(i), ds.beta)
        .iter()
        .map(|s| g_coeff(s, &ds.design) * s.iter().map(|&j| ds.design.weight(j, ds.z[j])).product::<f64>())
        .sum()
}

fn adjusted(ds: &Dataset, weights: &[f64], theta: &DVector<f64>) -> f64 {
    let fitted = ds.x() * theta;
    weights.iter().zip(&ds.y).zip(fitted.iter()).map(|((w, y), f)| w * (y - f)).sum::<f64>() / ds.n() as f64
}

/// `(1/n) Σ ω_i (Y_i - θᵀ X_i)` for a fixed `θ`.
pub fn estimate_tte_theta(ds: &Dataset, theta: &DVector<f64>) -> Result<EstimateReport> {
    if theta.len() != ds.dim() {
        return Err(Error::Dimension(format!("theta has length {} but there are {} covariates", theta.len(), ds.dim())));
    }
    let weights = snipe_weights(ds);
    let report = EstimateReport {
        estimator: "SNIPE(theta)".into(),
        point_estimate: adjusted(ds, &weights, theta),
        theta: Some(theta.clone()),
        diagnostics: Diagnostics { degenerate_units: zero_count(&weights), ..Default::default() },
    };
    finite(report, "the adjusted estimator")
}

fn zero_count(weights: &[f64]) -> usize {
    weights.iter().filter(|&&w| w == 0.0).count()
}

/// The unadjusted SNIPE estimator `(1/n) Σ ω_i Y_i`.
pub fn snipe(ds: &Dataset) -> EstimateReport {
    let weights = snipe_weights(ds);
    EstimateReport {
        estimator: Estimator::Snipe.name().into(),
        point_estimate: weights.iter().zip(&ds.y).map(|(w, y)| w * y).sum::<f64>() / ds.n() as f64,
        theta: None,
        diagnostics: Diagnostics { degenerate_units: zero_count(&weights), ..Default::default() },
    }
}

/// `r_l = (p_l - Z_l) / (1 - p_l)` for each neighbor of `i`.
fn residual_ratios(ds: &Dataset, i: usize) -> Vec<f64> {
    ds.graph
        .in_neighbors(i)
        .iter()
        .map(|&l| {
            let p = ds.design.p(l);
            (p - ds.z[l] as u8 as f64) / (1.0 - p)
        })
        .collect()
}

/// Unbiased estimate of `α_{i,S}`:
/// `Y_i ∏_{j ∈ S} (-1/p_j) Σ_{U ⊇ S, U ∈ S_i^β} ∏_{l ∈ U} r_l`.
pub fn alpha_hat(ds: &Dataset, i: usize, s: &[usize]) -> Result<f64> {
    let nbrs = ds.graph.in_neighbors(i);
    if s.len() > ds.beta || !subset::is_sorted_subset(s, nbrs) {
        return Err(Error::InvalidSubset { unit: i, subset: s.to_vec(), beta: ds.beta });
    }
    let r = residual_ratios(ds, i);
    let mut inside = 1.0;
    let mut outside = Vec::with_capacity(nbrs.len());
    for (k, &l) in nbrs.iter().enumerate() {
        if s.binary_search(&l).is_ok() {
            inside *= -r[k] / ds.design.p(l);
        } else {
            outside.push(r[k]);
        }
    }
    let tail: f64 = elementary_symmetric(outside, ds.beta - s.len()).iter().sum();
    Ok(ds.y[i] * inside * tail)
}

/// `α̂_{i,S}` for every `S ∈ S_i^β`, in enumeration order.
pub fn alpha_hats(ds: &Dataset, i: usize) -> Vec<(Subset, f64)> {
    let nbrs = ds.graph.in_neighbors(i);
    let r = residual_ratios(ds, i);
    let beta = ds.beta;
    let full = elementary_symmetric(r.iter().copied(), beta);
    subset::bounded_subsets(nbrs, beta)
        .into_iter()
        .map(|s| {
            // Remove the members of S from the symmetric sums one at a time:
            // e_k(A \ {j}) = e_k(A) - r_j e_{k-1}(A \ {j}).
            let mut e = full.clone();
            let mut inside = 1.0;
            for &j in s.iter() {
                let k = nbrs.binary_search(&j).expect("subset of the neighborhood");
                for m in 1..=beta {
                    e[m] -= r[k] * e[m - 1];
                }
                inside *= -r[k] / ds.design.p(j);
            }
            let tail: f64 = e[..=beta - s.len()].iter().sum();
            let value = ds.y[i] * inside * tail;
            (s, value)
        })
        .collect()
}

/// A fitted adjustment coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub theta: DVector<f64>,
    pub condition: f64,
    pub pseudo_inverse: bool,
}

impl From<linalg::Solution> for ThetaFit {
    fn from(s: linalg::Solution) -> Self {
        ThetaFit { theta: s.x, condition: s.condition, pseudo_inverse: s.pseudo_inverse }
    }
}

/// `ω²`-weighted least squares slope of `Y` on `X`:
/// `[Σ ω_i² X_i X_iᵀ]⁻¹ Σ ω_i² X_i Y_i`.
pub fn theta_reg(ds: &Dataset) -> Result<ThetaFit> {
    theta_reg_with(ds, &snipe_weights(ds))
}

fn theta_reg_with(ds: &Dataset, weights: &[f64]) -> Result<ThetaFit> {
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::ZeroWeights);
    }
    let d = ds.dim();
    let n = ds.n() as f64;
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (i, &w) in weights.iter().enumerate() {
        let xi = ds.x.row(i).transpose();
        let w2 = w * w / n;
        gram.ger(w2, &xi, &xi, 1.0);
        rhs.axpy(w2 * ds.y[i], &xi, 1.0);
    }
    Ok(linalg::solve(&gram, &rhs).into())
}

/// The VIM coefficient: the expected weighted Gram
/// `G = (1/n²) Σ_{i,i'} M_{ii'} X_i X_{i'}ᵀ` solved against
/// `(1/n²) Σ_i Σ_S α̂_{i,S} Σ_{i'} E[ω_i ω_{i'} ∏_{k ∈ S} Z_k] X_{i'}`.
///
/// Both sums are regrouped by the shared subsets `T ⊆ N_i ∩ N_{i'}` through
/// which `ω_i` and `ω_{i'}` correlate, so each unit only visits its own
/// neighbor subsets together with `Σ_{i' : T ⊆ N_{i'}} X_{i'}`.
pub fn theta_vim(ds: &Dataset) -> Result<ThetaFit> {
    let n = ds.n();
    let d = ds.dim();
    let nn = (n * n) as f64;
    let g = &*ds.graph;
    let design = &ds.design;
    let out_sums: Vec<DVector<f64>> = (0..n).map(|j| row_sum(&ds.x, g.out_neighbors(j))).collect();
    let shared_sum = |t: &[usize]| -> DVector<f64> {
        match t {
            [j] => out_sums[*j].clone(),
            _ => {
                let mut common = g.out_neighbors(t[0]).to_vec();
                for &j in &t[1..] {
                    common = subset::intersect(&common, g.out_neighbors(j));
                }
                row_sum(&ds.x, &common)
            }
        }
    };
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    let mut any_mass = false;
    let mut gram_row = DVector::zeros(d);
    for i in 0..n {
        let na = g.in_neighbors(i);
        let fhat = if ds.y[i] == 0.0 { HashMap::new() } else { centered_coefficients(&alpha_hats(ds, i), design) };
        gram_row.fill(0.0);
        for_each_bounded_subset(na, ds.beta, |t| {
            if t.is_empty() {
                return;
            }
            let gt = g_coeff(t, design);
            if gt == 0.0 {
                return;
            }
            any_mass = true;
            let xs = shared_sum(t);
            let inv: f64 = t.iter().map(|&j| 1.0 / (design.p(j) * (1.0 - design.p(j)))).product();
            gram_row.axpy(gt * gt * inv, &xs, 1.0);
            if !fhat.is_empty() {
                rhs.axpy(gt * weighted_outcome_moment(t, na, &fhat, ds.beta, design) / nn, &xs, 1.0);
            }
        });
        gram.ger(1.0 / nn, &ds.x.row(i).transpose(), &gram_row, 1.0);
    }
    if !any_mass {
        return Err(Error::NoOverlap);
    }
    Ok(linalg::solve(&gram, &rhs).into())
}

fn row_sum(x: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(x.ncols());
    for &k in rows {
        acc += x.row(k).transpose();
    }
    acc
}

/// Coefficients of `f(z) = Σ_S c_S ∏_{j ∈ S} z_j` in the centered monomials
/// `∏_{j ∈ U} (z_j - p_j)`: `f̂(U) = Σ_{S ⊇ U} c_S ∏_{j ∈ S \ U} p_j`.
fn centered_coefficients(coeffs: &[(Subset, f64)], design: &Design) -> HashMap<Vec<usize>, f64> {
    let mut out: HashMap<Vec<usize>, f64> = HashMap::new();
    for (s, c) in coeffs {
        if *c == 0.0 {
            continue;
        }
        for mask in 0..1u32 << s.len() {
            let mut u = Vec::with_capacity(s.len());
            let mut v = *c;
            for (q, &j) in s.iter().enumerate() {
                if mask >> q & 1 == 1 {
                    u.push(j);
                } else {
                    v *= design.p(j);
                }
            }
            *out.entry(u).or_insert(0.0) += v;
        }
    }
    out
}

/// `E[ω_i f(Z) ∏_{j ∈ T} w_j]` for `f` given by its centered coefficients.
///
/// Expanding `ω_i = Σ_A g(A) ∏_A w_j` and `f = Σ_U f̂(U) ∏_U u_j`, a term
/// survives only if no index occurs once. Indices outside `T` must then lie
/// in both `A` and `U` (contributing `E[w u] = 1`), and each index of `T`
/// lies in `A`, `U` or both, contributing `E[w²] = 1/(p(1-p))`,
/// `E[w u] = 1` or `E[w² u] = (1-2p)/(p(1-p))`.
fn weighted_outcome_moment(t: &[usize], na: &[usize], fhat: &HashMap<Vec<usize>, f64>, beta: usize, design: &Design) -> f64 {
    let outside = subset::difference(na, t);
    let combos = 3usize.pow(t.len() as u32);
    let mut total = 0.0;
    let mut a = Vec::with_capacity(beta + t.len());
    let mut u = Vec::with_capacity(beta + t.len());
    for_each_bounded_subset(&outside, beta.saturating_sub(1), |e| {
        for code in 0..combos {
            a.clear();
            a.extend_from_slice(e);
            u.clear();
            u.extend_from_slice(e);
            let mut factor = 1.0;
            let mut c = code;
            for &j in t {
                let p = design.p(j);
                match c % 3 {
                    0 => {
                        a.push(j);
                        factor /= p * (1.0 - p);
                    }
                    1 => u.push(j),
                    _ => {
                        a.push(j);
                        u.push(j);
                        factor *= (1.0 - 2.0 * p) / (p * (1.0 - p));
                    }
                }
                c /= 3;
            }
            if a.is_empty() || a.len() > beta || u.len() > beta {
                continue;
            }
            u.sort_unstable();
            if let Some(fu) = fhat.get(u.as_slice()) {
                a.sort_unstable();
                total += g_coeff(&a, design) * fu * factor;
            }
        }
    });
    total
}

fn fitted_report(ds: &Dataset, est: Estimator, fit: ThetaFit, weights: &[f64]) -> Result<EstimateReport> {
    let report = EstimateReport {
        estimator: est.name().into(),
        point_estimate: adjusted(ds, weights, &fit.theta),
        diagnostics: Diagnostics { condition_number: Some(fit.condition), pseudo_inverse: fit.pseudo_inverse, degenerate_units: zero_count(weights) },
        theta: Some(fit.theta),
    };
    finite(report, est.name())
}

/// SNIPE adjusted with the regression coefficient.
pub fn reg_snipe(ds: &Dataset) -> Result<EstimateReport> {
    let weights = snipe_weights(ds);
    let fit = theta_reg_with(ds, &weights)?;
    fitted_report(ds, Estimator::RegSnipe, fit, &weights)
}

/// SNIPE adjusted with the VIM coefficient.
pub fn vim_snipe(ds: &Dataset) -> Result<EstimateReport> {
    let fit = theta_vim(ds)?;
    fitted_report(ds, Estimator::VimSnipe, fit, &snipe_weights(ds))
}

fn group_means(ds: &Dataset, treated: bool) -> Result<(usize, f64, DVector<f64>)> {
    let idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.z[i] == treated).collect();
    if idx.is_empty() {
        return Err(Error::EmptyGroup(if treated { "treated" } else { "control" }));
    }
    let m = idx.len() as f64;
    let ybar = idx.iter().map(|&i| ds.y[i]).sum::<f64>() / m;
    let mut xbar = DVector::zeros(ds.dim());
    for &i in &idx {
        xbar += ds.x.row(i).transpose();
    }
    Ok((idx.len(), ybar, xbar / m))
}

/// Difference in means between treated and control units.
pub fn dm_estimate(ds: &Dataset) -> Result<EstimateReport> {
    let (_, y1, _) = group_means(ds, true)?;
    let (_, y0, _) = group_means(ds, false)?;
    finite(EstimateReport { estimator: Estimator::Dm.name().into(), point_estimate: y1 - y0, theta: None, diagnostics: Diagnostics::default() }, "DM")
}

/// Group-wise regression fit behind Lin's estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct LinFit {
    pub theta_treated: DVector<f64>,
    pub theta_control: DVector<f64>,
    /// `(n_0/n) θ_1 + (n_1/n) θ_0`.
    pub theta: DVector<f64>,
    pub estimate: f64,
    pub condition: f64,
    pub pseudo_inverse: bool,
}

/// Fits OLS slopes of `Y` on `X` separately in each arm and compares the
/// adjusted group means.
pub fn lin_fit(ds: &Dataset) -> Result<LinFit> {
    let arms = [true, false].map(|t| -> Result<_> {
        let (count, ybar, xbar) = group_means(ds, t)?;
        let d = ds.dim();
        let mut gram = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for i in (0..ds.n()).filter(|&i| ds.z[i] == t) {
            let dx = ds.x.row(i).transpose() - &xbar;
            gram.ger(1.0, &dx, &dx, 1.0);
            rhs.axpy(ds.y[i] - ybar, &dx, 1.0);
        }
        let sol = linalg::solve(&gram, &rhs);
        let adjusted_mean = ybar - sol.x.dot(&xbar);
        Ok((count, sol, adjusted_mean))
    });
    let [treated, control] = arms;
    let (n1, s1, m1) = treated?;
    let (n0, s0, m0) = control?;
    let n = ds.n() as f64;
    let theta = &s1.x * (n0 as f64 / n) + &s0.x * (n1 as f64 / n);
    Ok(LinFit {
        estimate: m1 - m0,
        condition: s1.condition.max(s0.condition),
        pseudo_inverse: s1.pseudo_inverse || s0.pseudo_inverse,
        theta_treated: s1.x,
        theta_control: s0.x,
        theta,
    })
}

/// Lin's estimator.
pub fn lin_estimate(ds: &Dataset) -> Result<EstimateReport> {
    let fit = lin_fit(ds)?;
    finite(
        EstimateReport {
            estimator: Estimator::Lin.name().into(),
            point_estimate: fit.estimate,
            theta: Some(fit.theta),
            diagnostics: Diagnostics { condition_number: Some(fit.condition), pseudo_inverse: fit.pseudo_inverse, degenerate_units: 0 },
        },
        "Lin",
    )
}

/// Runs the named estimator.
pub fn estimate(ds: &Dataset, est: Estimator) -> Result<EstimateReport> {
    match est {
        Estimator::Dm => dm_estimate(ds),
        Estimator::Lin => lin_estimate(ds),
        Estimator::Snipe => finite(snipe(ds), "SNIPE"),
        Estimator::RegSnipe => reg_snipe(ds),
        Estimator::VimSnipe => vim_snipe(ds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments;

    /// The numerator summed pair by pair with the general kernel.
    fn theta_vim_by_pairs(ds: &Dataset) -> DVector<f64> {
        let n = ds.n();
        let nn = (n * n) as f64;
        let mut gram = DMatrix::zeros(ds.dim(), ds.dim());
        let mut rhs = DVector::zeros(ds.dim());
        for i in 0..n {
            let xi = ds.x.row(i).transpose();
            for k in ds.graph.overlapping_units(i) {
                let xk = ds.x.row(k).transpose();
                gram.ger(moments::pair_gram(&ds.graph, &ds.design, ds.beta, i, k) / nn, &xi, &xk, 1.0);
                for (s, a) in alpha_hats(ds, i) {
                    let kern = moments::weighted_pair_moment(ds.graph.in_neighbors(i), ds.graph.in_neighbors(k), &s, ds.beta, &ds.design);
                    rhs.axpy(a * kern / nn, &xk, 1.0);
                }
            }
        }
        linalg::solve(&gram, &rhs).x
    }
    use crate::toy;
    use proptest::prelude::*;

    fn ds_from(graph: Graph, probs: Vec<f64>, beta: usize, z: Vec<bool>, y: Vec<f64>, x: DMatrix<f64>) -> Dataset {
        Dataset::new(Arc::new(graph), Design::new(probs).unwrap(), beta, z, y, x).unwrap()
    }

    #[test]
    fn toy_weights_and_estimates() {
        let (model, x, design) = toy::model();
        let ds = toy::dataset(&model, &x, &design, vec![true, true, false]);
        assert_eq!(snipe_weights(&ds), vec![4.0, 4.0, -2.0]);
        let all = toy::dataset(&model, &x, &design, vec![true; 3]);
        assert!((snipe(&all).point_estimate - 3.0).abs() < 1e-12);
        let zero = estimate_tte_theta(&all, &DVector::zeros(1)).unwrap();
        assert!((zero.point_estimate - 3.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_unit_weight() {
        let ds = ds_from(Graph::self_loops(1), vec![0.5], 3, vec![true], vec![1.0], DMatrix::zeros(1, 0));
        assert_eq!(snipe_weights(&ds), vec![2.0]);
    }

    #[test]
    fn zero_outcomes_give_negative_fitted_term() {
        let (model, x, design) = toy::model();
        let ds = toy::dataset(&model, &x, &design, vec![true, false, true]).with_outcomes(vec![0.0; 3]).unwrap();
        let theta = DVector::from_vec(vec![1.7]);
        let w = snipe_weights(&ds);
        let want = -(0..3).map(|i| w[i] * 1.7 * ds.x()[(i, 0)]).sum::<f64>() / 3.0;
        assert!((estimate_tte_theta(&ds, &theta).unwrap().point_estimate - want).abs() < 1e-14);
        assert!(estimate_tte_theta(&ds, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn dm_examples() {
        let ds = ds_from(Graph::self_loops(2), vec![0.5; 2], 1, vec![true, false], vec![1.0, 2.0], DMatrix::zeros(2, 1));
        assert_eq!(dm_estimate(&ds).unwrap().point_estimate, -1.0);
        let constant = ds.with_outcomes(vec![3.0, 3.0]).unwrap();
        assert_eq!(dm_estimate(&constant).unwrap().point_estimate, 0.0);
        let empty = ds_from(Graph::self_loops(2), vec![0.5; 2], 1, vec![true, true], vec![1.0, 2.0], DMatrix::zeros(2, 1));
        assert!(matches!(dm_estimate(&empty), Err(Error::EmptyGroup("control"))));
        assert!(lin_estimate(&empty).is_err());
    }

    #[test]
    fn lin_exact_fit_and_zero_covariates() {
        let n = 12;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 3)) % 7) as f64 - 2.0);
        let z: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.5 - 0.75 * z[i] as u8 as f64 + 2.0 * x[(i, 0)] - x[(i, 1)]).collect();
        let ds = ds_from(Graph::self_loops(n), vec![0.5; n], 1, z.clone(), y.clone(), x);
        let fit = lin_fit(&ds).unwrap();
        assert!((fit.estimate + 0.75).abs() < 1e-10);
        assert!((fit.theta_treated[0] - 2.0).abs() < 1e-10 && (fit.theta_control[1] + 1.0).abs() < 1e-10);
        let flat = ds_from(Graph::self_loops(n), vec![0.5; n], 1, z, y, DMatrix::zeros(n, 2));
        let lin = lin_estimate(&flat).unwrap().point_estimate;
        assert!((lin - dm_estimate(&flat).unwrap().point_estimate).abs() < 1e-12);
    }

    #[test]
    fn reg_recovers_exact_linear_outcome() {
        let (model, _, design) = toy::model();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -2.0, 1.0, 1.0, -1.5]);
        let c = DVector::from_vec(vec![0.3, -1.2]);
        let y: Vec<f64> = (0..3).map(|i| x.row(i).transpose().dot(&c)).collect();
        let ds = Dataset::new(model.graph_arc().clone(), design, 1, vec![true, true, false], y, x).unwrap();
        let fit = theta_reg(&ds).unwrap();
        assert!((fit.theta - c).norm() < 1e-10);
    }

    #[test]
    fn alpha_hat_special_cases() {
        let (model, x, design) = toy::model();
        let ds = toy::dataset(&model, &x, &design, vec![false, true, false]);
        let zero = ds.with_outcomes(vec![0.0; 3]).unwrap();
        assert_eq!(alpha_hat(&zero, 0, &[1]).unwrap(), 0.0);
        // S = ∅: Y_i Σ_{|U| ≤ 1} ∏ r = Y_0 (1 + r_0 + r_1) with r = (1, -1).
        assert!((alpha_hat(&ds, 0, &[]).unwrap() - ds.y()[0]).abs() < 1e-14);
        assert!(alpha_hat(&ds, 0, &[2]).is_err());
    }

    #[test]
    fn self_loops_reduce_to_ipw() {
        let n = 6;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let probs = vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.45];
        let z = vec![true, false, true, true, false, false];
        let y = vec![1.0, -2.0, 0.5, 3.0, 1.25, -0.75];
        let ds = ds_from(Graph::self_loops(n), probs.clone(), 2, z.clone(), y.clone(), x);
        let theta = DVector::from_vec(vec![0.4]);
        let ipw = (0..n).map(|i| (z[i] as u8 as f64 - probs[i]) / (probs[i] * (1.0 - probs[i])) * (y[i] - 0.4 * ds.x()[(i, 0)])).sum::<f64>() / n as f64;
        assert!((estimate_tte_theta(&ds, &theta).unwrap().point_estimate - ipw).abs() < 1e-12);
    }

    #[test]
    fn estimator_names_parse() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!("vim".parse::<Estimator>().unwrap(), Estimator::VimSnipe);
        assert!("ht".parse::<Estimator>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (model, x, design) = toy::model();
        let ds = toy::dataset(&model, &x, &design, vec![true, false, true]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("unit,z,y,x1\n0,1,1,0.5\n"));
        let back = Dataset::read_csv(&path, model.graph_arc().clone(), 1, Some(0.5)).unwrap();
        assert_eq!(back.z(), ds.z());
        assert_eq!(back.y(), ds.y());
        assert_eq!(back.x(), ds.x());
        assert!(Dataset::read_csv(&path, model.graph_arc().clone(), 1, None).is_err());
    }

    fn random_ds() -> impl Strategy<Value = Dataset> {
        (3usize..9).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(0..n, 0..4), n),
                prop::collection::vec(0.2f64..0.8, n),
                1usize..=3,
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-2.0f64..2.0, 2 * n),
            )
                .prop_map(move |(lists, probs, beta, z, y, xs)| {
                    ds_from(Graph::from_in_neighbors(lists).unwrap(), probs, beta, z, y, DMatrix::from_vec(n, 2, xs))
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn weight_routes_agree(ds in random_ds()) {
            let fast = snipe_weights(&ds);
            for i in 0..ds.n() {
                let slow = snipe_weight_by_subsets(&ds, i);
                prop_assert!((fast[i] - slow).abs() < 1e-10 * slow.abs().max(1.0));
            }
        }

        #[test]
        fn alpha_hat_routes_agree_and_sum_to_snipe(ds in random_ds()) {
            let mut total = 0.0;
            for i in 0..ds.n() {
                for (s, a) in alpha_hats(&ds, i) {
                    let direct = alpha_hat(&ds, i, &s).unwrap();
                    prop_assert!((a - direct).abs() < 1e-9 * direct.abs().max(1.0));
                    if !s.is_empty() {
                        total += a;
                    }
                }
            }
            let sn = snipe(&ds).point_estimate;
            prop_assert!((total / ds.n() as f64 - sn).abs() < 1e-9 * sn.abs().max(1.0));
        }

        #[test]
        fn zero_theta_is_snipe(ds in random_ds()) {
            let a = estimate_tte_theta(&ds, &DVector::zeros(2)).unwrap().point_estimate;
            let b = snipe(&ds).point_estimate;
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn reg_minimizes_weighted_residuals(ds in random_ds(), eps in 1e-4f64..1e-2) {
            let w = snipe_weights(&ds);
            prop_assume!(w.iter().any(|&v| v != 0.0));
            let fit = theta_reg(&ds).unwrap();
            prop_assume!(!fit.pseudo_inverse);
            let loss = |t: &DVector<f64>| {
                let f = ds.x() * t;
                (0..ds.n()).map(|i| w[i] * w[i] * (ds.y()[i] - f[i]).powi(2)).sum::<f64>()
            };
            let base = loss(&fit.theta);
            // Normal equations: residuals orthogonal to X in the ω² inner product.
            let f = ds.x() * &fit.theta;
            for c in 0..2 {
                let dot: f64 = (0..ds.n()).map(|i| w[i] * w[i] * (ds.y()[i] - f[i]) * ds.x()[(i, c)]).sum();
                let scale: f64 = (0..ds.n()).map(|i| w[i] * w[i] * (ds.y()[i].abs() + f[i].abs()) * ds.x()[(i, c)].abs()).sum::<f64>().max(1.0);
                prop_assert!(dot.abs() < 1e-10 * scale);
                for sign in [-1.0, 1.0] {
                    let mut t = fit.theta.clone();
                    t[c] += sign * eps;
                    prop_assert!(loss(&t) >= base - 1e-9 * base.max(1.0));
                }
            }
        }

        #[test]
        fn vim_routes_agree(ds in random_ds()) {
            let fit = theta_vim(&ds).unwrap();
            prop_assume!(!fit.pseudo_inverse);
            let slow = theta_vim_by_pairs(&ds);
            for c in 0..2 {
                prop_assert!((fit.theta[c] - slow[c]).abs() < 1e-8 * slow[c].abs().max(1.0), "{} vs {}", fit.theta, slow);
            }
        }

        #[test]
        fn scale_equivariance(ds in random_ds(), c0 in 0.5f64..3.0, c1 in -3.0f64..-0.5) {
            let scaled_x = DMatrix::from_fn(ds.n(), 2, |i, j| ds.x()[(i, j)] * [c0, c1][j]);
            let scaled = Dataset::new(Arc::new(ds.graph().clone()), ds.design().clone(), ds.beta(), ds.z().to_vec(), ds.y().to_vec(), scaled_x).unwrap();
            for est in [Estimator::RegSnipe, Estimator::VimSnipe] {
                let (Ok(a), Ok(b)) = (estimate(&ds, est), estimate(&scaled, est)) else { continue };
                if a.diagnostics.pseudo_inverse || b.diagnostics.pseudo_inverse {
                    continue;
                }
                let ta = a.theta.unwrap();
                let tb = b.theta.unwrap();
                prop_assert!((tb[0] * c0 - ta[0]).abs() < 1e-7 * ta[0].abs().max(1.0));
                prop_assert!((tb[1] * c1 - ta[1]).abs() < 1e-7 * ta[1].abs().max(1.0));
                prop_assert!((a.point_estimate - b.point_estimate).abs() < 1e-7 * a.point_estimate.abs().max(1.0));
            }
        }
    }
}
