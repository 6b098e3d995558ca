//! Oracle sweeps: every analytic formula and estimator property checked
//! against exhaustive enumeration on random small populations.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{self, Dataset, Estimator};
use crate::graph::Graph;
use crate::moments::{self, Design};
use crate::oracle::{self, Target, ENUMERATION_BUDGET};
use crate::outcome::InteractionModel;
use crate::subset::{self, Subset};
use crate::toy;

/// Relative tolerance of every equality check.
pub const TOLERANCE: f64 = 1e-10;

/// A random population small enough to enumerate.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: InteractionModel,
    pub x: DMatrix<f64>,
    pub design: Design,
}

/// Shape of the random populations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub min_n: usize,
    pub max_n: usize,
    pub beta: usize,
    /// Draw each `p_i` from `U[0.2, 0.8]`; otherwise one common `p` for all units.
    pub heterogeneous: bool,
    pub d_x: usize,
}

/// Draws a graph where each unit has a self-loop plus up to four other
/// in-neighbors (each kept with probability 0.3), coefficients `U[-1, 1]`
/// on every neighbor subset of size at most `beta`, and normal covariates.
pub fn random_instance<R: Rng + ?Sized>(spec: &InstanceSpec, rng: &mut R) -> Result<Instance> {
    let n = rng.random_range(spec.min_n..=spec.max_n);
    let lists: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && rng.random::<f64>() < 0.3).take(4).collect()).collect();
    let graph = Arc::new(Graph::from_in_neighbors(lists)?);
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let subsets = subset::bounded_subsets(graph.in_neighbors(i), spec.beta);
        coeffs.push(subsets.into_iter().map(|s| (s, rng.random_range(-1.0..1.0))).collect());
    }
    let model = InteractionModel::new(graph, spec.beta, coeffs)?;
    let x = DMatrix::from_fn(n, spec.d_x, |_, _| rng.sample(StandardNormal));
    let design =
        if spec.heterogeneous { Design::new((0..n).map(|_| rng.random_range(0.2..0.8)).collect())? } else { Design::uniform(n, rng.random_range(0.2..0.8))? };
    Ok(Instance { model, x, design })
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return f64::INFINITY;
    }
    (a - b).abs() / b.abs().max(1.0)
}

fn random_theta<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// A mutation used to confirm that the suite detects broken weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Replace `g(S)` by `-g(S)` in the SNIPE weights.
    FlipGSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    /// Largest population drawn by the sweeps.
    pub budget_n: usize,
    pub instances: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { budget_n: 10, instances: 100, seed: 2024, fault: None }
    }
}

/// Outcome of one named check across all instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest relative discrepancy, or largest bound violation for inequality checks.
    pub max_error: f64,
    pub cases: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{:<4} {:<28} cases={:<6} max_error={:.3e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.cases, c.max_error);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["check", "passed", "max_error", "cases"])?;
        for c in &self.checks {
            w.write_record([c.name.as_str(), &c.passed.to_string(), &format!("{:e}", c.max_error), &c.cases.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Accumulates one check over many cases.
#[derive(Debug, Clone)]
struct Tally {
    max_error: f64,
    cases: usize,
    ok: bool,
}

impl Tally {
    fn new() -> Self {
        Tally { max_error: 0.0, cases: 0, ok: true }
    }

    /// An equality: relative error within tolerance.
    fn equal(&mut self, a: f64, b: f64) {
        let e = rel_err(a, b);
        self.cases += 1;
        self.max_error = self.max_error.max(e);
        self.ok &= e <= TOLERANCE;
    }

    /// An inequality `lhs ≤ rhs`, up to rounding.
    fn at_most(&mut self, lhs: f64, rhs: f64) {
        let excess = if lhs.is_nan() || rhs.is_nan() { f64::INFINITY } else { ((lhs - rhs) / rhs.abs().max(1.0)).max(0.0) };
        self.cases += 1;
        self.max_error = self.max_error.max(excess);
        self.ok &= excess <= TOLERANCE;
    }

    fn merge(&mut self, other: &Tally) {
        self.max_error = self.max_error.max(other.max_error);
        self.cases += other.cases;
        self.ok &= other.ok;
    }
}

pub const CHECKS: [&str; 10] = [
    "unbiasedness",
    "alpha-hat-unbiased",
    "variance-decomposition",
    "variance-gap-closed-form",
    "variance-bound",
    "product-covariance-bound",
    "gram-equivalence",
    "kernel-equivalence",
    "weight-second-moment-bounds",
    "vim-coefficient-identity",
];

fn weights(inst: &Instance, z: &[bool], fault: Option<Fault>) -> Vec<f64> {
    let w = estimators::weights_for(inst.model.graph(), &inst.design, inst.model.beta(), z);
    match fault {
        Some(Fault::FlipGSign) => w.into_iter().map(|v| -v).collect(),
        None => w,
    }
}

fn dataset(inst: &Instance, z: &[bool]) -> Dataset {
    let y = inst.model.evaluate_potential(z);
    Dataset::new(inst.model.graph_arc().clone(), inst.design.clone(), inst.model.beta(), z.to_vec(), y, inst.x.clone()).expect("consistent sizes")
}

/// `E[SNIPE]` and `E[TTE(θ)]` for each `θ`, with the weights of `fault`.
fn check_unbiasedness(inst: &Instance, thetas: &[DVector<f64>], fault: Option<Fault>, t: &mut Tally) -> Result<()> {
    let tte = inst.model.true_tte();
    if fault.is_none() {
        t.equal(oracle::exact_moments(&inst.model, &inst.x, &inst.design, &Estimator::Snipe.into())?.mean, tte);
        for th in thetas {
            t.equal(oracle::exact_moments(&inst.model, &inst.x, &inst.design, &Target::Adjusted(th.clone()))?.mean, tte);
        }
    }
    let n = inst.model.n();
    let fitted: Vec<DVector<f64>> = thetas.iter().map(|th| dataset(inst, &vec![false; n]).x() * th).collect();
    let means = oracle::expectation(&inst.design, 1 + thetas.len(), |z| {
        let w = weights(inst, z, fault);
        let y = inst.model.evaluate_potential(z);
        let mut out = vec![w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64];
        for f in &fitted {
            out.push((0..n).map(|i| w[i] * (y[i] - f[i])).sum::<f64>() / n as f64);
        }
        out
    })?;
    for m in means {
        t.equal(m, tte);
    }
    Ok(())
}

fn check_alpha_hats(inst: &Instance, t: &mut Tally) -> Result<()> {
    let n = inst.model.n();
    let keys: Vec<(usize, Subset)> =
        (0..n).flat_map(|i| subset::bounded_subsets(inst.model.graph().in_neighbors(i), inst.model.beta()).into_iter().map(move |s| (i, s))).collect();
    let e = oracle::expectation(&inst.design, keys.len(), |z| {
        let ds = dataset(inst, z);
        (0..n).flat_map(|i| estimators::alpha_hats(&ds, i).into_iter().map(|(_, v)| v)).collect()
    })?;
    for ((i, s), v) in keys.iter().zip(e) {
        t.equal(v, inst.model.coeff(*i, s));
    }
    Ok(())
}

fn check_decomposition(inst: &Instance, theta: &DVector<f64>, t: &mut Tally) -> Result<()> {
    let (m, x, d) = (&inst.model, &inst.x, &inst.design);
    let exact = oracle::exact_moments(m, x, d, &Target::Adjusted(theta.clone()))?.variance;
    let dec = oracle::variance_decomposition(m, x, d, theta)?;
    t.equal(dec.alpha_second_order + dec.theta_terms, exact);
    let comp = oracle::variance_components(m, x, d, theta)?;
    let cov = oracle::term_covariance_by_enumeration(m, x, d, theta)?;
    t.equal(comp.v_var, cov.trace());
    t.equal(comp.v_cov, cov.sum() - cov.trace());
    t.equal(comp.total(), exact);
    Ok(())
}

fn check_gap(inst: &Instance, t: &mut Tally) -> Result<()> {
    let (m, x, d) = (&inst.model, &inst.x, &inst.design);
    let theta = oracle::population_theta_reg(m, x, d)?.theta;
    let base = oracle::exact_moments(m, x, d, &Estimator::Snipe.into())?.variance;
    let adj = oracle::exact_moments(m, x, d, &Target::Adjusted(theta.clone()))?.variance;
    t.equal(oracle::closed_form_variance_gap(m, x, d, &theta)?, base - adj);
    Ok(())
}

fn check_bound(inst: &Instance, thetas: &[DVector<f64>], t: &mut Tally) -> Result<()> {
    let (m, x, d) = (&inst.model, &inst.x, &inst.design);
    for th in thetas {
        let var = oracle::exact_moments(m, x, d, &Target::Adjusted(th.clone()))?.variance;
        t.at_most(var, oracle::variance_bound(m, x, d, th)?);
    }
    Ok(())
}

fn random_subset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Subset {
    let k = rng.random_range(0..=3.min(n));
    let mut v: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
    v.sort_unstable();
    v.dedup();
    Subset::new(v)
}

fn check_product_covariance<R: Rng + ?Sized>(inst: &Instance, rng: &mut R, t: &mut Tally) {
    let n = inst.model.n();
    for _ in 0..25 {
        let s: Vec<Subset> = (0..4).map(|_| random_subset(n, rng)).collect();
        let c = oracle::product_covariance(&inst.design, &s[0], &s[1], &s[2], &s[3]);
        t.at_most(0.0, c.covariance);
        t.at_most(c.covariance, c.bound);
    }
}

/// `pair_gram` against `E[ω_i ω_k]` and both kernel routes against
/// `E[ω_i ω_k ∏_S Z]`, all pairs and all `S ∈ S_i^β`.
fn check_kernels(inst: &Instance, gram: &mut Tally, kernel: &mut Tally) -> Result<()> {
    let (g, d, beta) = (inst.model.graph(), &inst.design, inst.model.beta());
    let n = g.n();
    let mut keys = Vec::new();
    for i in 0..n {
        for k in 0..n {
            keys.push((i, k, None));
            for s in subset::bounded_subsets(g.in_neighbors(i), beta) {
                keys.push((i, k, Some(s)));
            }
        }
    }
    let e = oracle::expectation(d, keys.len(), |z| {
        let w = weights(inst, z, None);
        keys.iter()
            .map(|(i, k, s)| {
                let ind = s.as_ref().map_or(true, |s| s.iter().all(|&j| z[j]));
                if ind {
                    w[*i] * w[*k]
                } else {
                    0.0
                }
            })
            .collect()
    })?;
    for ((i, k, s), v) in keys.iter().zip(e) {
        match s {
            None => gram.equal(moments::pair_gram(g, d, beta, *i, *k), v),
            Some(s) => {
                kernel.equal(moments::vim_kernel(g, d, beta, *i, *k, s), v);
                kernel.equal(moments::vim_kernel_full_sum(g, d, beta, *i, *k, s), v);
            }
        }
    }
    Ok(())
}

/// `4 ≤ E(ω_i²) ≤ (e d_in / (β p(1-p)))^β`.
fn check_second_moments(inst: &Instance, t: &mut Tally) {
    let (g, d, beta) = (inst.model.graph(), &inst.design, inst.model.beta());
    let (d_in, _) = g.max_degrees();
    let p = d.floor();
    let upper = (std::f64::consts::E * d_in as f64 / (beta as f64 * p * (1.0 - p))).powi(beta as i32);
    for i in 0..g.n() {
        let m = moments::pair_gram(g, d, beta, i, i);
        t.at_most(4.0, m);
        t.at_most(m, upper);
    }
}

fn check_vim_identity(inst: &Instance, t: &mut Tally) -> Result<()> {
    let (m, x, d) = (&inst.model, &inst.x, &inst.design);
    let expected = oracle::expected_theta_vim_by_enumeration(m, x, d)?;
    let population = oracle::population_theta_vim(m, x, d)?.theta;
    for (a, b) in expected.iter().zip(population.iter()) {
        t.equal(*a, *b);
    }
    Ok(())
}

/// Runs every sweep. Instance `k` draws its populations from a stream keyed
/// by `(seed, k)`, so the report does not depend on the thread count.
pub fn run(config: &ValidationConfig) -> Result<ValidationReport> {
    if config.budget_n > ENUMERATION_BUDGET {
        return Err(Error::EnumerationBudget { n: config.budget_n, budget: ENUMERATION_BUDGET });
    }
    if config.budget_n < 3 {
        return Err(Error::Precondition(format!("budget_n must be at least 3, got {}", config.budget_n)));
    }
    let cap = |m: usize| config.budget_n.min(m);
    let gap_instances = config.instances.div_ceil(2);
    let per_instance: Vec<Vec<Tally>> = (0..config.instances)
        .into_par_iter()
        .map(|k| -> Result<Vec<Tally>> {
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let beta = 1 + k % 2;
            let main = random_instance(&InstanceSpec { min_n: 3, max_n: cap(10), beta, heterogeneous: true, d_x: 2 }, &mut rng)?;
            let small = random_instance(&InstanceSpec { min_n: 3, max_n: cap(8), beta, heterogeneous: true, d_x: 2 }, &mut rng)?;
            let tiny = random_instance(&InstanceSpec { min_n: 3, max_n: cap(6), beta, heterogeneous: true, d_x: 2 }, &mut rng)?;
            let equal = random_instance(&InstanceSpec { min_n: 3, max_n: cap(10), beta: 1, heterogeneous: false, d_x: 2 }, &mut rng)?;
            let thetas: Vec<DVector<f64>> = (0..5).map(|_| random_theta(2, &mut rng)).collect();
            let mut t: Vec<Tally> = CHECKS.iter().map(|_| Tally::new()).collect();
            check_unbiasedness(&main, &thetas, config.fault, &mut t[0])?;
            check_alpha_hats(&main, &mut t[1])?;
            check_decomposition(&main, &thetas[0], &mut t[2])?;
            if k < gap_instances {
                check_gap(&equal, &mut t[3])?;
            }
            check_bound(&main, &[DVector::zeros(2), thetas[1].clone()], &mut t[4])?;
            check_product_covariance(&small, &mut rng, &mut t[5]);
            let (gram, rest) = t.split_at_mut(7);
            check_kernels(&small, &mut gram[6], &mut rest[0])?;
            check_second_moments(&main, &mut t[8]);
            check_second_moments(&small, &mut t[8]);
            check_vim_identity(&tiny, &mut t[9])?;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let mut totals: Vec<Tally> = CHECKS.iter().map(|_| Tally::new()).collect();
    for t in &per_instance {
        for (a, b) in totals.iter_mut().zip(t) {
            a.merge(b);
        }
    }
    Ok(ValidationReport {
        checks: CHECKS
            .iter()
            .zip(totals)
            .map(|(name, t)| CheckResult { name: name.to_string(), passed: t.ok && t.cases > 0, max_error: t.max_error, cases: t.cases })
            .collect(),
    })
}

/// One quantity of the worked example.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyQuantity {
    pub name: String,
    pub expected: f64,
    pub computed: f64,
}

impl ToyQuantity {
    pub fn passed(&self) -> bool {
        rel_err(self.computed, self.expected) <= TOLERANCE
    }
}

fn q(name: impl Into<String>, expected: f64, computed: f64) -> ToyQuantity {
    ToyQuantity { name: name.into(), expected, computed }
}

/// The worked example's exact quantities next to their known values. Extra
/// `thetas` add `Var(TTE(θ)) = 16/9 + θ²/3` rows.
pub fn toy_quantities(thetas: &[f64]) -> Result<Vec<ToyQuantity>> {
    let (model, x, design) = toy::model();
    let one = |t: f64| DVector::from_vec(vec![t]);
    let snipe = oracle::exact_moments(&model, &x, &design, &Estimator::Snipe.into())?;
    let mut out = vec![q("TTE", 5.0 / 3.0, model.true_tte()), q("E[SNIPE]", 5.0 / 3.0, snipe.mean), q("Var(SNIPE)", 16.0 / 9.0, snipe.variance)];
    let mut all = vec![1.0, 4.0 / 3.0, 2.0];
    all.extend(thetas.iter().filter(|t| ![1.0, 4.0 / 3.0, 2.0].contains(*t)));
    for t in all {
        let v = oracle::exact_moments(&model, &x, &design, &Target::Adjusted(one(t)))?.variance;
        let label = if t == 4.0 / 3.0 { "4/3".to_string() } else { t.to_string() };
        out.push(q(format!("Var(TTE({label}))"), 16.0 / 9.0 + t * t / 3.0, v));
    }
    out.push(q("theta_Reg", 4.0 / 3.0, oracle::theta_reg_by_enumeration(&model, &x, &design)?[0]));
    out.push(q("theta_VIM", 0.0, oracle::expected_theta_vim_by_enumeration(&model, &x, &design)?[0]));
    for (label, t, vv, vc) in [("0", 0.0, 8.0 / 3.0, -8.0 / 9.0), ("theta_Reg", 4.0 / 3.0, 56.0 / 27.0, 8.0 / 27.0)] {
        let cov = oracle::term_covariance_by_enumeration(&model, &x, &design, &one(t))?;
        out.push(q(format!("V_Var({label})"), vv, cov.trace()));
        out.push(q(format!("V_Cov({label})"), vc, cov.sum() - cov.trace()));
    }
    Ok(out)
}

/// Exact variances on `m` disjoint copies of the worked example.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupComparison {
    pub groups: usize,
    pub theta_reg: f64,
    pub theta_vim: f64,
    pub var_snipe: f64,
    pub var_reg: f64,
    pub var_vim: f64,
    /// Variances at the alternative coefficients, paired with them.
    pub alternatives: Vec<(f64, f64)>,
}

impl GroupComparison {
    /// `Var(VIM) ≤ Var(SNIPE) < Var(Reg)` and VIM no worse than every alternative.
    pub fn passed(&self) -> bool {
        let slack = TOLERANCE * self.var_snipe;
        self.var_vim <= self.var_snipe + slack && self.var_snipe < self.var_reg && self.alternatives.iter().all(|&(_, v)| self.var_vim <= v + slack)
    }
}

/// Compares SNIPE with the adjusted estimator at the population regression
/// and VIM coefficients, and at `alternatives` random coefficients drawn
/// from `N(0, 4)` with `seed`.
pub fn toy_groups(m: usize, alternatives: usize, seed: u64) -> Result<GroupComparison> {
    if m == 0 {
        return Err(Error::Precondition("at least one group is needed".into()));
    }
    let (model, x, design) = toy::blocks(m);
    let theta_reg = oracle::population_theta_reg(&model, &x, &design)?.theta[0];
    let theta_vim = oracle::population_theta_vim(&model, &x, &design)?.theta[0];
    let var = |t: f64| oracle::exact_moments(&model, &x, &design, &Target::Adjusted(DVector::from_vec(vec![t]))).map(|m| m.variance);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut alt = Vec::with_capacity(alternatives);
    for _ in 0..alternatives {
        let t = 2.0 * rng.sample::<f64, _>(StandardNormal);
        alt.push((t, var(t)?));
    }
    Ok(GroupComparison { groups: m, theta_reg, theta_vim, var_snipe: var(0.0)?, var_reg: var(theta_reg)?, var_vim: var(theta_vim)?, alternatives: alt })
}
