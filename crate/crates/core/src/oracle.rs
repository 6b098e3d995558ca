//! Exact finite-population quantities.
//!
//! Enumeration routes average over all `2^n` assignments weighted by their
//! design probability. Analytic routes evaluate the same expectations with
//! the closed-form moments of [`crate::moments`] and scale to large `n`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{self, Dataset, Estimator, ThetaFit};
use crate::linalg;
use crate::moments::{self, pair_gram, weighted_pair_moment, Design, MomentSpec};
use crate::outcome::InteractionModel;
use crate::stats::CompensatedSum;
use crate::subset::{self, Subset};

/// Largest population enumerated in full.
pub const ENUMERATION_BUDGET: usize = 22;

const BLOCK_BITS: u32 = 10;

/// What to compute exact moments of.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// A named estimator, recomputing any fitted coefficient per assignment.
    Named(Estimator),
    /// The adjusted SNIPE estimator with a fixed coefficient.
    Adjusted(DVector<f64>),
}

impl From<Estimator> for Target {
    fn from(e: Estimator) -> Self {
        Target::Named(e)
    }
}

/// Exact law summary of an estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMoments {
    /// Mean conditional on the estimator being defined.
    pub mean: f64,
    /// Variance conditional on the estimator being defined.
    pub variance: f64,
    /// Number of assignments, `2^n`.
    pub support_size: f64,
    /// Probability of the assignments where the estimator is undefined
    /// (for example an empty treatment arm).
    pub failed_mass: f64,
}

fn check_budget(n: usize) -> Result<()> {
    if n > ENUMERATION_BUDGET {
        Err(Error::EnumerationBudget { n, budget: ENUMERATION_BUDGET })
    } else {
        Ok(())
    }
}

fn assignment(bits: u64, n: usize) -> Vec<bool> {
    (0..n).map(|k| bits >> k & 1 == 1).collect()
}

/// `E[f(Z)]` for a vector-valued `f` of length `dim`, by enumeration.
///
/// The assignment space is split into fixed contiguous blocks that are
/// summed concurrently with compensated accumulation and combined in block
/// order, so the result does not depend on the thread count.
pub fn expectation<F>(design: &Design, dim: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[bool]) -> Vec<f64> + Sync,
{
    let n = design.len();
    check_budget(n)?;
    let total = 1u64 << n;
    let block = 1u64 << BLOCK_BITS.min(n as u32);
    let partial: Vec<Vec<CompensatedSum>> = (0..total / block)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![CompensatedSum::default(); dim];
            for bits in b * block..(b + 1) * block {
                let z = assignment(bits, n);
                let p = design.assignment_prob(&z);
                for (a, v) in acc.iter_mut().zip(f(&z)) {
                    a.add(p * v);
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![CompensatedSum::default(); dim];
    for part in &partial {
        for (a, p) in acc.iter_mut().zip(part) {
            a.merge(p);
        }
    }
    Ok(acc.iter().map(CompensatedSum::value).collect())
}

fn moments_of(values: &[(f64, Option<f64>)]) -> (f64, f64, f64) {
    let mass: CompensatedSum = values.iter().filter(|v| v.1.is_some()).map(|v| v.0).collect();
    let failed: CompensatedSum = values.iter().filter(|v| v.1.is_none()).map(|v| v.0).collect();
    let mass = mass.value();
    if mass == 0.0 {
        return (f64::NAN, f64::NAN, failed.value());
    }
    let mean = values.iter().filter_map(|&(p, x)| x.map(|x| p * x)).collect::<CompensatedSum>().value() / mass;
    let var = values.iter().filter_map(|&(p, x)| x.map(|x| p * (x - mean) * (x - mean))).collect::<CompensatedSum>().value() / mass;
    (mean, var, failed.value())
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = x.clone();
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    x
}

fn check_inputs(model: &InteractionModel, x: &DMatrix<f64>, design: &Design) -> Result<()> {
    if x.nrows() != model.n() || design.len() != model.n() {
        return Err(Error::Dimension(format!("{} units but {} covariate rows and {} probabilities", model.n(), x.nrows(), design.len())));
    }
    Ok(())
}

/// Exact mean and variance of an estimator under the design.
///
/// Fixed-coefficient targets (SNIPE and [`Target::Adjusted`]) are sums of
/// per-unit terms that depend only on the treatments inside each connected
/// group of the graph, so their moments are accumulated group by group and
/// only each group must fit the enumeration budget. Fitted estimators are
/// enumerated over the full population.
pub fn exact_moments(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, target: &Target) -> Result<ExactMoments> {
    check_inputs(model, x, design)?;
    let x = centered(x);
    let n = model.n();
    let theta = match target {
        Target::Named(Estimator::Snipe) => Some(DVector::zeros(x.ncols())),
        Target::Adjusted(t) => {
            if t.len() != x.ncols() {
                return Err(Error::Dimension(format!("theta has length {} for {} covariates", t.len(), x.ncols())));
            }
            Some(t.clone())
        }
        Target::Named(_) => None,
    };
    let support_size = 2f64.powi(n as i32);
    if let Some(theta) = theta {
        let shift = &x * &theta;
        let mut mean = CompensatedSum::default();
        let mut var = CompensatedSum::default();
        for group in model.graph().components() {
            check_budget(group.len())?;
            let sub = model.restrict(&group)?;
            let sub_design = design.restrict(&group);
            let k = group.len();
            let values: Vec<(f64, Option<f64>)> = (0..1u64 << k)
                .into_par_iter()
                .map(|bits| {
                    let z = assignment(bits, k);
                    let w = estimators::weights_for(sub.graph(), &sub_design, sub.beta(), &z);
                    let term: f64 = (0..k).map(|q| w[q] * (sub.potential(q, &z) - shift[group[q]])).sum();
                    (sub_design.assignment_prob(&z), Some(term / n as f64))
                })
                .collect();
            let (m, v, _) = moments_of(&values);
            mean.add(m);
            var.add(v);
        }
        return Ok(ExactMoments { mean: mean.value(), variance: var.value(), support_size, failed_mass: 0.0 });
    }
    let Target::Named(est) = target else { unreachable!() };
    check_budget(n)?;
    let values: Vec<(f64, Option<f64>)> = (0..1u64 << n)
        .into_par_iter()
        .map(|bits| {
            let z = assignment(bits, n);
            let p = design.assignment_prob(&z);
            let y = model.evaluate_potential(&z);
            let ds = Dataset::new(model.graph_arc().clone(), design.clone(), model.beta(), z, y, x.clone()).expect("consistent sizes");
            (p, estimators::estimate(&ds, *est).ok().map(|r| r.point_estimate))
        })
        .collect();
    let (mean, variance, failed_mass) = moments_of(&values);
    Ok(ExactMoments { mean, variance, support_size, failed_mass })
}

/// `E[ω_a ω_b (Y_a - s_a)(Y_b - s_b)]` from the model coefficients.
fn shifted_pair_moment(model: &InteractionModel, design: &Design, a: usize, b: usize, sa: f64, sb: f64) -> f64 {
    let terms = |i: usize, s: f64| {
        let mut v: Vec<(&[usize], f64)> = vec![(&[][..], model.coeff(i, &[]) - s)];
        v.extend(model.unit_coeffs(i).iter().filter(|(t, _)| !t.is_empty()).map(|(t, c)| (t.as_slice(), *c)));
        v
    };
    let (ta, tb) = (terms(a, sa), terms(b, sb));
    let g = model.graph();
    let (na, nb) = (g.in_neighbors(a), g.in_neighbors(b));
    let mut total = 0.0;
    let mut union = Vec::new();
    for (s, ca) in &ta {
        if *ca == 0.0 {
            continue;
        }
        for (t, cb) in &tb {
            if *cb == 0.0 {
                continue;
            }
            union.clear();
            union.extend_from_slice(s);
            union.extend_from_slice(t);
            union.sort_unstable();
            union.dedup();
            total += ca * cb * weighted_pair_moment(na, nb, &union, model.beta(), design);
        }
    }
    total
}

/// Per-unit and cross-unit parts of the variance of `TTE(θ)`:
/// `v_var = (1/n²) Σ_i Var(ω_i (Y_i - θᵀX_i))` and
/// `v_cov = (1/n²) Σ_{i ≠ i'} Cov(·, ·)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub v_var: f64,
    pub v_cov: f64,
}

impl VarianceComponents {
    pub fn total(&self) -> f64 {
        self.v_var + self.v_cov
    }
}

/// Analytic [`VarianceComponents`]; only overlapping pairs can covary.
pub fn variance_components(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, theta: &DVector<f64>) -> Result<VarianceComponents> {
    check_inputs(model, x, design)?;
    let shift = centered(x) * theta;
    let n = model.n();
    let g = model.graph();
    let per_unit: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tau_i = model.unit_effect(i);
            let own = shifted_pair_moment(model, design, i, i, shift[i], shift[i]) - tau_i * tau_i;
            let cross: f64 = g
                .overlapping_units(i)
                .into_iter()
                .filter(|&k| k != i)
                .map(|k| shifted_pair_moment(model, design, i, k, shift[i], shift[k]) - tau_i * model.unit_effect(k))
                .sum();
            (own, cross)
        })
        .collect();
    let nn = (n * n) as f64;
    Ok(VarianceComponents {
        v_var: per_unit.iter().map(|p| p.0).collect::<CompensatedSum>().value() / nn,
        v_cov: per_unit.iter().map(|p| p.1).collect::<CompensatedSum>().value() / nn,
    })
}

/// The covariance matrix of the per-unit terms `ω_i (Y_i - θᵀX_i) / n`, by
/// enumeration. Its trace and off-diagonal sum are the two
/// [`VarianceComponents`].
pub fn term_covariance_by_enumeration(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_inputs(model, x, design)?;
    let shift = centered(x) * theta;
    let n = model.n();
    let terms = |z: &[bool]| -> Vec<f64> {
        let w = estimators::weights_for(model.graph(), design, model.beta(), z);
        (0..n).map(|i| w[i] * (model.potential(i, z) - shift[i]) / n as f64).collect()
    };
    let second = expectation(design, n * n, |z| {
        let t = terms(z);
        let mut out = Vec::with_capacity(n * n);
        for a in &t {
            out.extend(t.iter().map(|b| a * b));
        }
        out
    })?;
    let first = expectation(design, n, terms)?;
    Ok(DMatrix::from_fn(n, n, |a, b| second[a * n + b] - first[a] * first[b]))
}

/// The two parts of `Var(TTE(θ))`: the part that only involves the outcome
/// coefficients (the variance of SNIPE) and the part contributed by `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    pub alpha_second_order: f64,
    pub theta_terms: f64,
}

/// Splits `Var(TTE(θ))` into `Var(TTE(0))` and
/// `(1/n²) Σ M_{ii'} θᵀX_i θᵀX_{i'} - (2/n²) Σ_i Σ_{i'} Σ_S α_{i,S} E[ω_i ω_{i'} ∏_{k ∈ S} Z_k] θᵀX_{i'}`,
/// both sums over overlapping pairs.
pub fn variance_decomposition(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, theta: &DVector<f64>) -> Result<VarianceDecomposition> {
    check_inputs(model, x, design)?;
    let base = variance_components(model, x, design, &DVector::zeros(x.ncols()))?;
    let fitted = centered(x) * theta;
    let g = model.graph();
    let beta = model.beta();
    let parts: Vec<f64> = (0..model.n())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for k in g.overlapping_units(i) {
                acc += pair_gram(g, design, beta, i, k) * fitted[i] * fitted[k];
                let cross: f64 =
                    model.unit_coeffs(i).iter().map(|(s, a)| a * weighted_pair_moment(g.in_neighbors(i), g.in_neighbors(k), s, beta, design)).sum();
                acc -= 2.0 * cross * fitted[k];
            }
            acc
        })
        .collect();
    let nn = (model.n() * model.n()) as f64;
    Ok(VarianceDecomposition { alpha_second_order: base.total(), theta_terms: parts.iter().copied().collect::<CompensatedSum>().value() / nn })
}

/// `E[ω_i ω_{i'} Y_i]`, the kernel-weighted outcome moment.
fn outcome_kernel(model: &InteractionModel, design: &Design, i: usize, k: usize) -> f64 {
    let g = model.graph();
    model.unit_coeffs(i).iter().map(|(s, a)| a * weighted_pair_moment(g.in_neighbors(i), g.in_neighbors(k), s, model.beta(), design)).sum()
}

/// Population regression coefficient
/// `[Σ_i E(ω_i²) X_i X_iᵀ]⁻¹ Σ_i E(ω_i² Y_i) X_i`.
pub fn population_theta_reg(model: &InteractionModel, x: &DMatrix<f64>, design: &Design) -> Result<ThetaFit> {
    check_inputs(model, x, design)?;
    let x = centered(x);
    let d = x.ncols();
    let g = model.graph();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for i in 0..model.n() {
        let xi = x.row(i).transpose();
        gram.ger(pair_gram(g, design, model.beta(), i, i), &xi, &xi, 1.0);
        rhs.axpy(outcome_kernel(model, design, i, i), &xi, 1.0);
    }
    Ok(linalg::solve(&gram, &rhs).into())
}

/// Population VIM coefficient
/// `[Σ M_{ii'} X_i X_{i'}ᵀ]⁻¹ Σ_i Σ_{i'} E(ω_i ω_{i'} Y_i) X_{i'}` over overlapping pairs.
pub fn population_theta_vim(model: &InteractionModel, x: &DMatrix<f64>, design: &Design) -> Result<ThetaFit> {
    check_inputs(model, x, design)?;
    let x = centered(x);
    let d = x.ncols();
    let g = model.graph();
    let rows: Vec<(DMatrix<f64>, DVector<f64>)> = (0..model.n())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i).transpose();
            let mut gram = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for k in g.overlapping_units(i) {
                let xk = x.row(k).transpose();
                gram.ger(pair_gram(g, design, model.beta(), i, k), &xi, &xk, 1.0);
                rhs.axpy(outcome_kernel(model, design, i, k), &xk, 1.0);
            }
            (gram, rhs)
        })
        .collect();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (gm, r) in &rows {
        gram += gm;
        rhs += r;
    }
    Ok(linalg::solve(&gram, &rhs).into())
}

/// Population regression coefficient with both expectations taken by enumeration.
pub fn theta_reg_by_enumeration(model: &InteractionModel, x: &DMatrix<f64>, design: &Design) -> Result<DVector<f64>> {
    check_inputs(model, x, design)?;
    let x = centered(x);
    let d = x.ncols();
    let e = expectation(design, d * d + d, |z| {
        let w = estimators::weights_for(model.graph(), design, model.beta(), z);
        let mut out = vec![0.0; d * d + d];
        for i in 0..model.n() {
            let w2 = w[i] * w[i];
            let y = model.potential(i, z);
            for a in 0..d {
                for b in 0..d {
                    out[a * d + b] += w2 * x[(i, a)] * x[(i, b)];
                }
                out[d * d + a] += w2 * x[(i, a)] * y;
            }
        }
        out
    })?;
    let gram = DMatrix::from_row_slice(d, d, &e[..d * d]);
    Ok(linalg::solve(&gram, &DVector::from_column_slice(&e[d * d..])).x)
}

/// `E[θ̂_VIM]` by enumeration of the plug-in coefficient.
pub fn expected_theta_vim_by_enumeration(model: &InteractionModel, x: &DMatrix<f64>, design: &Design) -> Result<DVector<f64>> {
    check_inputs(model, x, design)?;
    let x = centered(x);
    let e = expectation(design, x.ncols(), |z| {
        let y = model.evaluate_potential(z);
        let ds = Dataset::new(model.graph_arc().clone(), design.clone(), model.beta(), z.to_vec(), y, x.clone()).expect("consistent sizes");
        match estimators::theta_vim(&ds) {
            Ok(fit) => fit.theta.iter().copied().collect(),
            Err(_) => vec![f64::NAN; x.ncols()],
        }
    })?;
    Ok(DVector::from_vec(e))
}

/// `Var(TTE(0)) - Var(TTE(θ))` in closed form for first-order models with a
/// common treatment probability `p`:
/// `(1/(p(1-p) n²)) Σ_i [ |N_i| (θᵀX_i)² + Σ_{i' ≠ i} θᵀX_{i'} Σ_{j ∈ N_i ∩ N_{i'}} (2(1-2p) α_{i,j} + 2(α_{i,∅} + p Σ_{j'} α_{i,j'}) - θᵀX_i) ]`.
///
/// The expression uses the first-order condition of the population
/// regression coefficient, so it equals the exact variance gap when `θ` is
/// that coefficient.
pub fn closed_form_variance_gap(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, theta: &DVector<f64>) -> Result<f64> {
    check_inputs(model, x, design)?;
    if model.beta() != 1 {
        return Err(Error::Precondition(format!("the closed form needs beta = 1, got {}", model.beta())));
    }
    let p = design.uniform_p().ok_or_else(|| Error::Precondition("the closed form needs a common treatment probability".into()))?;
    let f = centered(x) * theta;
    let g = model.graph();
    let n = model.n();
    let mut total = CompensatedSum::default();
    for i in 0..n {
        let ni = g.in_neighbors(i);
        let a0 = model.coeff(i, &[]);
        let lin_sum: f64 = ni.iter().map(|&j| model.coeff(i, &[j])).sum();
        total.add(ni.len() as f64 * f[i] * f[i]);
        for k in g.overlapping_units(i).into_iter().filter(|&k| k != i) {
            let shared = subset::intersect(ni, g.in_neighbors(k));
            let inner: f64 = shared.iter().map(|&j| 2.0 * (1.0 - 2.0 * p) * model.coeff(i, &[j]) + 2.0 * (a0 + p * lin_sum) - f[i]).sum();
            total.add(f[k] * inner);
        }
    }
    Ok(total.value() / (p * (1.0 - p) * (n * n) as f64))
}

/// Upper bound on `Var(TTE(θ))`:
/// `4 d_in d_out (Y_max + ‖θ‖ X_max)² / n · (e d_in / β · max(4β², 1/(p(1-p))))^β`
/// with `X_max = max_i ‖X_i‖₁` and `p` the design floor.
pub fn variance_bound(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, theta: &DVector<f64>) -> Result<f64> {
    check_inputs(model, x, design)?;
    let x = centered(x);
    let (d_in, d_out) = model.graph().max_degrees();
    let beta = model.beta() as f64;
    let p = design.floor();
    let x_max = (0..x.nrows()).map(|i| x.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let scale = model.y_max() + theta.norm() * x_max;
    let inner = std::f64::consts::E * d_in as f64 / beta * (4.0 * beta * beta).max(1.0 / (p * (1.0 - p)));
    Ok(4.0 * (d_in * d_out) as f64 * scale * scale / model.n() as f64 * inner.powf(beta))
}

/// Covariance of `∏_S w_j ∏_{S'} Z_j` and `∏_T w_k ∏_{T'} Z_k` together
/// with the bound `1(S △ T ⊆ S' ∪ T') (1/(p(1-p)))^{|S ∩ T|}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductCovariance {
    pub covariance: f64,
    pub bound: f64,
}

impl ProductCovariance {
    pub fn holds(&self, tol: f64) -> bool {
        self.covariance >= -tol && self.covariance <= self.bound + tol * self.bound.max(1.0)
    }
}

pub fn product_covariance(design: &Design, s: &Subset, s_ind: &Subset, t: &Subset, t_ind: &Subset) -> ProductCovariance {
    let joint = MomentSpec::new().weights(s).weights(t).indicators(s_ind).indicators(t_ind);
    let left = MomentSpec::new().weights(s).indicators(s_ind);
    let right = MomentSpec::new().weights(t).indicators(t_ind);
    let covariance = moments::expect_product(&joint, design) - moments::expect_product(&left, design) * moments::expect_product(&right, design);
    let both = subset::intersect(s, t);
    let sym: Vec<usize> = subset::difference(s, t).into_iter().chain(subset::difference(t, s)).collect();
    let union = Subset::new(s_ind.iter().chain(t_ind.iter()).copied().collect());
    let p = design.floor();
    let bound = if sym.iter().all(|&j| union.contains(j)) { (1.0 / (p * (1.0 - p))).powi(both.len() as i32) } else { 0.0 };
    ProductCovariance { covariance, bound }
}
