//! Monte Carlo harness for the simulation study.
//!
//! Each replicate draws covariates, an interference graph, outcome
//! coefficients and a treatment assignment from independent random streams,
//! then runs all five estimators. Streams are keyed by
//! `(seed, sweep index, replicate, purpose)`, so results do not depend on
//! scheduling or thread count.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, Dataset, Estimator};
use crate::graph::{self, Graph};
use crate::moments::Design;
use crate::outcome::{self, InteractionModel, SimOutcomeSpec};

/// Graph family and interaction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "ER-b1")]
    ErBeta1,
    #[serde(rename = "ER-b2")]
    ErBeta2,
    #[serde(rename = "SRGG-b1")]
    SrggBeta1,
    #[serde(rename = "SRGG-b2")]
    SrggBeta2,
    /// Self-loops only: no interference, first-order outcomes.
    #[serde(rename = "SUTVA")]
    Sutva,
}

impl Setting {
    pub fn beta(self) -> usize {
        match self {
            Setting::ErBeta2 | Setting::SrggBeta2 => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::ErBeta1 => "ER-b1",
            Setting::ErBeta2 => "ER-b2",
            Setting::SrggBeta1 => "SRGG-b1",
            Setting::SrggBeta2 => "SRGG-b2",
            Setting::Sutva => "SUTVA",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MseNormalization {
    /// Squared error divided by `|TTE|`.
    #[default]
    Abs,
    /// Squared error divided by `TTE²`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    P,
    R,
    Rho,
    Sigma,
    PEdge,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::P => "p",
            SweepParam::R => "r",
            SweepParam::Rho => "rho",
            SweepParam::Sigma => "sigma",
            SweepParam::PEdge => "p_edge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn three() -> usize {
    3
}

/// Configuration of a Monte Carlo study, read from TOML.
///
/// ```toml
/// setting = "ER-b1"      # ER-b1, ER-b2, SRGG-b1, SRGG-b2 or SUTVA
/// n = 5000
/// p = 0.5                # treatment probability
/// r = 1.0                # indirect-to-direct effect ratio
/// rho = 1.0              # share of the true covariates that is observed
/// reps = 500
/// seed = 42
/// # p_edge = 0.002       # ER edge probability, default 10 / n
/// # sigma = 0.02         # soft RGG decay; SRGG-b2 defaults follow n
/// d_x = 3
/// diag_c = 1.0
/// # psi = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
/// # theta_true = [1.0, 1.0, 1.0]
/// mse_normalization = "abs"
/// fix_population = false
///
/// [sweep]
/// param = "r"            # n, p, r, rho, sigma or p_edge
/// values = [0.5, 1.0, 2.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub setting: Setting,
    pub n: usize,
    pub p: f64,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default = "one")]
    pub rho: f64,
    pub reps: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "three")]
    pub d_x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub diag_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default)]
    pub mse_normalization: MseNormalization,
    #[serde(default)]
    pub fix_population: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

/// Decay rates used for SRGG-b2 to keep neighborhood sizes comparable as `n` grows.
const SRGG_B2_SIGMA: [(usize, f64); 6] = [(5000, 0.02), (6000, 0.018), (7000, 0.016), (8000, 0.016), (9000, 0.014), (10000, 0.014)];

/// Default soft RGG decay for `setting` at size `n`.
pub fn default_sigma(setting: Setting, n: usize) -> f64 {
    match setting {
        Setting::SrggBeta2 => SRGG_B2_SIGMA.iter().find(|(m, _)| *m == n).map_or(0.02, |(_, s)| *s),
        _ => 0.02,
    }
}

/// One sweep point with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSpec {
    pub setting: Setting,
    pub n: usize,
    pub p: f64,
    pub r: f64,
    pub rho: f64,
    pub p_edge: f64,
    pub sigma: f64,
    pub psi: DMatrix<f64>,
    pub diag_c: f64,
    pub theta_true: DVector<f64>,
}

impl PointSpec {
    pub fn beta(&self) -> usize {
        self.setting.beta()
    }

    pub fn d_x(&self) -> usize {
        self.theta_true.len()
    }
}

impl ExperimentSpec {
    /// Parses a TOML document, applying `key=value` overrides first. Values
    /// are read as TOML (`reps=10`, `sweep.values=[1, 2]`) and fall back to
    /// plain strings (`setting=ER-b2`).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            let value =
                format!("v = {raw}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
            let mut path: Vec<&str> = key.trim().split('.').collect();
            let last = path.pop().expect("split yields one item");
            let mut cur = &mut table;
            for part in path {
                cur = cur
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{part}` is not a table")))?;
            }
            cur.insert(last.to_string(), value);
        }
        let spec: ExperimentSpec = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reps == 0 || self.reps as u64 >= POPULATION_REP {
            return bad(format!("reps must be between 1 and {}, got {}", POPULATION_REP - 1, self.reps));
        }
        if self.d_x == 0 {
            return bad("d_x must be positive".into());
        }
        if let Some(t) = &self.theta_true {
            if t.len() != self.d_x {
                return bad(format!("theta_true has {} entries but d_x = {}", t.len(), self.d_x));
            }
        }
        if let Some(psi) = &self.psi {
            if psi.len() != self.d_x || psi.iter().any(|r| r.len() != self.d_x) {
                return bad(format!("psi must be {0}x{0}", self.d_x));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values is empty".into());
            }
            if s.values.len() > 1 << 15 {
                return bad("sweep has too many points".into());
            }
        }
        for k in 0..self.points() {
            let pt = self.point(k)?;
            if !(pt.p > 0.0 && pt.p < 1.0) {
                return bad(format!("p must lie in (0, 1), got {}", pt.p));
            }
            if !(0.0..=1.0).contains(&pt.rho) {
                return bad(format!("rho must lie in [0, 1], got {}", pt.rho));
            }
            if !(0.0..=1.0).contains(&pt.p_edge) {
                return bad(format!("p_edge must lie in [0, 1], got {}", pt.p_edge));
            }
            if !(pt.sigma > 0.0) {
                return bad(format!("sigma must be positive, got {}", pt.sigma));
            }
            if pt.n < 2 {
                return bad(format!("n must be at least 2, got {}", pt.n));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.sweep.as_ref().map_or(1, |s| s.values.len())
    }

    /// Name and value of the swept parameter at point `k`.
    pub fn sweep_label(&self, k: usize) -> (String, String) {
        match &self.sweep {
            Some(s) => (s.param.name().to_string(), s.values[k].to_string()),
            None => ("none".to_string(), String::new()),
        }
    }

    /// Resolves sweep point `k`.
    pub fn point(&self, k: usize) -> Result<PointSpec> {
        let mut n = self.n;
        let (mut p, mut r, mut rho) = (self.p, self.r, self.rho);
        let (mut p_edge, mut sigma) = (self.p_edge, self.sigma);
        if let Some(s) = &self.sweep {
            let v = s.values[k];
            match s.param {
                SweepParam::N => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("sweep value {v} is not a unit count")));
                    }
                    n = v as usize;
                }
                SweepParam::P => p = v,
                SweepParam::R => r = v,
                SweepParam::Rho => rho = v,
                SweepParam::Sigma => sigma = Some(v),
                SweepParam::PEdge => p_edge = Some(v),
            }
        }
        let d = self.d_x;
        let psi = match &self.psi {
            Some(rows) => DMatrix::from_fn(d, d, |a, b| rows[a][b]),
            None => DMatrix::identity(d, d),
        };
        let theta_true = match &self.theta_true {
            Some(t) => DVector::from_column_slice(t),
            None => DVector::from_element(d, 1.0),
        };
        Ok(PointSpec {
            setting: self.setting,
            n,
            p,
            r,
            rho,
            p_edge: p_edge.unwrap_or(10.0 / n as f64),
            sigma: sigma.unwrap_or_else(|| default_sigma(self.setting, n)),
            psi,
            diag_c: self.diag_c,
            theta_true,
        })
    }
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Covariates = 1,
    Graph = 2,
    Coefficients = 3,
    Treatment = 4,
}

/// Replicate index reserved for the shared population under `fix_population`.
pub const POPULATION_REP: u64 = (1 << 40) - 1;

/// The random stream for `(seed, sweep index, replicate, purpose)`: a ChaCha
/// generator keyed by `seed` on a stream number packing the other three.
pub fn stream(seed: u64, sweep_index: usize, rep: u64, purpose: Purpose) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((sweep_index as u64) << 48) | ((rep & POPULATION_REP) << 8) | purpose as u64);
    rng
}

/// Observed covariates and the true covariates that drive outcomes and the
/// soft RGG: `x_true = ρ x_obs + √(1-ρ²) x_unobs`, both blocks centered.
pub fn gen_covariates<R: Rng + ?Sized>(n: usize, d: usize, rho: f64, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let draw = |rng: &mut R| {
        let mut m = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal)).transpose();
        for mut col in m.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        m
    };
    let obs = draw(rng);
    let unobs = draw(rng);
    let x_true = if rho == 1.0 {
        obs.clone()
    } else if rho == 0.0 {
        unobs
    } else {
        &obs * rho + unobs * (1.0 - rho * rho).sqrt()
    };
    (obs, x_true)
}

/// A generated population.
#[derive(Debug, Clone)]
pub struct Population {
    pub model: InteractionModel,
    pub x_obs: DMatrix<f64>,
    pub x_true: DMatrix<f64>,
    pub degenerate_units: usize,
}

impl Population {
    pub fn graph(&self) -> &Arc<Graph> {
        self.model.graph_arc()
    }
}

/// Draws covariates, graph and outcome coefficients for one replicate.
pub fn generate_population(point: &PointSpec, seed: u64, sweep_index: usize, rep: u64) -> Result<Population> {
    let n = point.n;
    let (x_obs, x_true) = gen_covariates(n, point.d_x(), point.rho, &mut stream(seed, sweep_index, rep, Purpose::Covariates));
    let mut grng = stream(seed, sweep_index, rep, Purpose::Graph);
    let graph = Arc::new(match point.setting {
        Setting::ErBeta1 | Setting::ErBeta2 => graph::gen_erdos_renyi(n, point.p_edge, &mut grng)?,
        Setting::SrggBeta1 | Setting::SrggBeta2 => graph::gen_soft_rgg(&x_true, point.sigma, &mut grng)?,
        Setting::Sutva => Graph::self_loops(n),
    });
    let mut crng = stream(seed, sweep_index, rep, Purpose::Coefficients);
    let alpha0: Vec<f64> = (0..n).map(|_| crng.random::<f64>()).collect();
    let alpha_linear = outcome::gen_alpha_linear(&graph, &x_true, &point.psi, point.diag_c, point.r, None, None, &mut crng)?;
    let alpha_quad = match point.beta() {
        2 => Some(outcome::gen_alpha_quad(&graph, &x_true, point.diag_c, point.r, None, None, &mut crng)?),
        _ => None,
    };
    let spec = SimOutcomeSpec { alpha0, alpha_linear, alpha_quad, theta_true: point.theta_true.clone(), x_true: x_true.clone() };
    let sim = outcome::build_sim_outcome(&spec, point.beta())?;
    Ok(Population { model: sim.model, x_obs, x_true, degenerate_units: sim.degenerate_units.len() })
}

/// Draws the treatment assignment and observed outcomes for a population.
pub fn observe(pop: &Population, p: f64, seed: u64, sweep_index: usize, rep: u64) -> Result<Dataset> {
    let design = Design::uniform(pop.model.n(), p)?;
    let z = design.sample(&mut stream(seed, sweep_index, rep, Purpose::Treatment));
    let y = pop.model.evaluate_potential(&z);
    Dataset::new(pop.graph().clone(), design, pop.model.beta(), z, y, pop.x_obs.clone())
}

/// Estimates of one replicate, `None` where an estimator failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub rep: usize,
    pub estimates: Vec<(Estimator, Option<f64>)>,
    pub true_tte: f64,
}

impl ReplicateResult {
    pub fn estimate(&self, e: Estimator) -> Option<f64> {
        self.estimates.iter().find(|(k, _)| *k == e).and_then(|(_, v)| *v)
    }
}

/// Runs every estimator on one replicate. With `population` given, only the
/// treatment is redrawn.
pub fn run_replicate(point: &PointSpec, seed: u64, sweep_index: usize, rep: usize, population: Option<&Population>) -> Result<ReplicateResult> {
    let owned;
    let pop = match population {
        Some(p) => p,
        None => {
            owned = generate_population(point, seed, sweep_index, rep as u64)?;
            &owned
        }
    };
    let ds = observe(pop, point.p, seed, sweep_index, rep as u64)?;
    let estimates = Estimator::ALL.iter().map(|&e| (e, estimators::estimate(&ds, e).ok().map(|r| r.point_estimate))).collect();
    Ok(ReplicateResult { rep, estimates, true_tte: pop.model.true_tte() })
}

/// Accuracy of one estimator over the replicates where it succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub estimator: Estimator,
    pub rel_bias: f64,
    pub rel_mse: f64,
    pub n_fail: usize,
}

/// Relative bias `(mean estimate - mean TTE) / mean TTE` and relative MSE,
/// the mean of `(estimate - TTE)²` normalized per replicate by `|TTE|` or `TTE²`.
pub fn compute_metrics(results: &[ReplicateResult], normalization: MseNormalization) -> Result<Vec<Metrics>> {
    if results.is_empty() {
        return Err(Error::Precondition("no replicates to summarize".into()));
    }
    if results.iter().any(|r| r.true_tte == 0.0) {
        return Err(Error::ZeroTte);
    }
    let mut out = Vec::new();
    for e in Estimator::ALL {
        let ok: Vec<(f64, f64)> = results.iter().filter_map(|r| r.estimate(e).map(|v| (v, r.true_tte))).collect();
        let n_fail = results.len() - ok.len();
        let m = ok.len() as f64;
        let (rel_bias, rel_mse) = if ok.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean_est = ok.iter().map(|v| v.0).sum::<f64>() / m;
            let mean_tte = ok.iter().map(|v| v.1).sum::<f64>() / m;
            let mse = ok
                .iter()
                .map(|(v, t)| {
                    let norm = match normalization {
                        MseNormalization::Abs => t.abs(),
                        MseNormalization::Squared => t * t,
                    };
                    (v - t) * (v - t) / norm
                })
                .sum::<f64>()
                / m;
            ((mean_est - mean_tte) / mean_tte, mse)
        };
        out.push(Metrics { estimator: e, rel_bias, rel_mse, n_fail });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub sweep_param: String,
    pub sweep_value: String,
    pub rep: usize,
    pub estimator: Estimator,
    pub estimate: Option<f64>,
    pub true_tte: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_param: String,
    pub sweep_value: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub setting: Setting,
    pub raw: Vec<RawRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every sweep point. Replicates run concurrently and are gathered in
/// replicate order; a failing replicate (for example a degenerate graph)
/// is reported as failures of every estimator.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let mut raw = Vec::new();
    let mut summary = Vec::new();
    for k in 0..spec.points() {
        let point = spec.point(k)?;
        let (param, value) = spec.sweep_label(k);
        let shared = if spec.fix_population { Some(generate_population(&point, spec.seed, k, POPULATION_REP)?) } else { None };
        let results: Vec<ReplicateResult> = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                run_replicate(&point, spec.seed, k, rep, shared.as_ref()).unwrap_or_else(|_| ReplicateResult {
                    rep,
                    estimates: Estimator::ALL.iter().map(|&e| (e, None)).collect(),
                    true_tte: f64::NAN,
                })
            })
            .collect();
        for r in &results {
            for &(e, v) in &r.estimates {
                raw.push(RawRow { sweep_param: param.clone(), sweep_value: value.clone(), rep: r.rep, estimator: e, estimate: v, true_tte: r.true_tte });
            }
        }
        let usable: Vec<ReplicateResult> = results.into_iter().filter(|r| r.true_tte.is_finite()).collect();
        let dropped = spec.reps - usable.len();
        let metrics = if usable.is_empty() {
            Estimator::ALL.iter().map(|&e| Metrics { estimator: e, rel_bias: f64::NAN, rel_mse: f64::NAN, n_fail: spec.reps }).collect()
        } else {
            compute_metrics(&usable, spec.mse_normalization)?
        };
        for mut m in metrics {
            if !usable.is_empty() {
                m.n_fail += dropped;
            }
            summary.push(SummaryRow { sweep_param: param.clone(), sweep_value: value.clone(), metrics: m });
        }
    }
    Ok(ExperimentOutput { setting: spec.setting, raw, summary })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl ExperimentOutput {
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["setting", "sweep_param", "sweep_value", "rep", "estimator", "estimate", "true_tte"])?;
        for r in &self.raw {
            w.write_record([
                self.setting.name(),
                &r.sweep_param,
                &r.sweep_value,
                &r.rep.to_string(),
                r.estimator.name(),
                &fmt_opt(r.estimate),
                &r.true_tte.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["setting", "sweep_param", "sweep_value", "estimator", "rel_bias", "rel_mse", "n_fail"])?;
        for r in &self.summary {
            let m = &r.metrics;
            w.write_record([
                self.setting.name(),
                &r.sweep_param,
                &r.sweep_value,
                m.estimator.name(),
                &m.rel_bias.to_string(),
                &m.rel_mse.to_string(),
                &m.n_fail.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Writes `raw.csv` and `summary.csv` into `dir` and returns their paths.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let raw = dir.join("raw.csv");
        let summary = dir.join("summary.csv");
        self.write_raw(&raw)?;
        self.write_summary(&summary)?;
        Ok(vec![raw, summary])
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Setting::ErBeta1, Setting::ErBeta2, Setting::SrggBeta1, Setting::SrggBeta2, Setting::Sutva]
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown setting `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "setting = \"ER-b1\"\nn = 200\np = 0.5\nreps = 6\nseed = 7\n";

    #[test]
    fn parses_defaults_and_overrides() {
        let spec = ExperimentSpec::from_toml(SMALL, &[]).unwrap();
        assert_eq!((spec.r, spec.rho, spec.d_x, spec.diag_c), (1.0, 1.0, 3, 1.0));
        assert_eq!(spec.mse_normalization, MseNormalization::Abs);
        let pt = spec.point(0).unwrap();
        assert_eq!(pt.p_edge, 10.0 / 200.0);
        assert_eq!(pt.psi, DMatrix::identity(3, 3));
        let spec =
            ExperimentSpec::from_toml(SMALL, &["reps=10".into(), "setting=SRGG-b2".into(), "sweep.param=n".into(), "sweep.values=[5000, 6000, 10000]".into()])
                .unwrap();
        assert_eq!(spec.reps, 10);
        assert_eq!(spec.setting, Setting::SrggBeta2);
        let sigmas: Vec<f64> = (0..3).map(|k| spec.point(k).unwrap().sigma).collect();
        assert_eq!(sigmas, vec![0.02, 0.018, 0.014]);
        assert!(ExperimentSpec::from_toml(SMALL, &["bogus=1".into()]).is_err());
        assert!(ExperimentSpec::from_toml(SMALL, &["p=1.5".into()]).is_err());
        assert!(ExperimentSpec::from_toml(SMALL, &["reps".into()]).is_err());
        let back = ExperimentSpec::from_toml(&spec.to_toml(), &[]).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn covariates() {
        let mut rng = stream(1, 0, 0, Purpose::Covariates);
        let (obs, tru) = gen_covariates(50, 3, 1.0, &mut rng);
        assert_eq!(obs, tru);
        for c in obs.column_iter() {
            assert!(c.mean().abs() < 1e-12);
        }
        let (obs0, tru0) = gen_covariates(50, 3, 0.0, &mut stream(1, 0, 0, Purpose::Covariates));
        assert_eq!(obs0, obs);
        assert_ne!(tru0, obs);
        let (_, half) = gen_covariates(50, 3, 0.5, &mut stream(1, 0, 0, Purpose::Covariates));
        assert!((half - (&obs * 0.5 + &tru0 * 0.75f64.sqrt())).norm() < 1e-12);
    }

    #[test]
    fn streams_are_distinct() {
        let a: u64 = stream(3, 0, 1, Purpose::Graph).random();
        let b: u64 = stream(3, 0, 2, Purpose::Graph).random();
        let c: u64 = stream(3, 1, 1, Purpose::Graph).random();
        let d: u64 = stream(3, 0, 1, Purpose::Treatment).random();
        let again: u64 = stream(3, 0, 1, Purpose::Graph).random();
        assert_eq!(a, again);
        assert!(a != b && a != c && a != d);
    }

    fn rr(rep: usize, est: f64, tte: f64) -> ReplicateResult {
        ReplicateResult { rep, estimates: Estimator::ALL.iter().map(|&e| (e, Some(est))).collect(), true_tte: tte }
    }

    #[test]
    fn metrics_arithmetic() {
        let exact = [rr(0, 2.0, 2.0), rr(1, 3.0, 3.0)];
        for m in compute_metrics(&exact, MseNormalization::Abs).unwrap() {
            assert_eq!((m.rel_bias, m.rel_mse, m.n_fail), (0.0, 0.0, 0));
        }
        let offset = [rr(0, 2.5, 2.0), rr(1, 2.5, 2.0)];
        assert_eq!(compute_metrics(&offset, MseNormalization::Abs).unwrap()[0].rel_bias, 0.25);
        // Hand-computed: estimates (1, 4, 2), TTEs (2, 2, -1).
        let mut hand = vec![rr(0, 1.0, 2.0), rr(1, 4.0, 2.0), rr(2, 2.0, -1.0)];
        hand[2].estimates[0].1 = None;
        let m = compute_metrics(&hand, MseNormalization::Abs).unwrap();
        assert_eq!(m[0].n_fail, 1);
        assert!((m[0].rel_bias - 0.25).abs() < 1e-15);
        assert!((m[1].rel_bias - (7.0 / 3.0 - 1.0) / 1.0).abs() < 1e-15);
        assert!((m[1].rel_mse - (0.5 + 2.0 + 9.0) / 3.0).abs() < 1e-15);
        let sq = compute_metrics(&hand, MseNormalization::Squared).unwrap();
        assert!((sq[1].rel_mse - (0.25 + 1.0 + 9.0) / 3.0).abs() < 1e-15);
        assert!(matches!(compute_metrics(&[rr(0, 1.0, 0.0)], MseNormalization::Abs), Err(Error::ZeroTte)));
    }

    #[test]
    fn experiment_is_deterministic() {
        let spec = ExperimentSpec::from_toml(SMALL, &["sweep.param=r".into(), "sweep.values=[0.5, 2.0]".into()]).unwrap();
        let a = run_experiment(&spec).unwrap();
        assert_eq!(a.raw.len(), 2 * 6 * 5);
        assert_eq!(a.summary.len(), 2 * 5);
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let paths = a.write_all(dir.path()).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("setting,sweep_param,sweep_value,rep,estimator,estimate,true_tte\nER-b1,r,0.5,0,DM,"));
        let text = std::fs::read_to_string(&paths[1]).unwrap();
        assert!(text.starts_with("setting,sweep_param,sweep_value,estimator,rel_bias,rel_mse,n_fail\n"));
    }

    #[test]
    fn fixed_population_keeps_tte() {
        let spec = ExperimentSpec::from_toml(SMALL, &["fix_population=true".into(), "setting=ER-b2".into()]).unwrap();
        let out = run_experiment(&spec).unwrap();
        let first = out.raw[0].true_tte;
        assert!(out.raw.iter().all(|r| r.true_tte == first));
        let estimates: Vec<_> = out.raw.iter().filter(|r| r.estimator == Estimator::Snipe).map(|r| r.estimate).collect();
        assert!(estimates.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn every_setting_runs() {
        for s in ["ER-b1", "ER-b2", "SRGG-b1", "SRGG-b2", "SUTVA"] {
            let spec = ExperimentSpec::from_toml(SMALL, &[format!("setting={s}"), "reps=2".into(), "n=120".into()]).unwrap();
            let out = run_experiment(&spec).unwrap();
            for row in &out.summary {
                assert!(row.metrics.rel_mse.is_finite(), "{s} {:?}", row.metrics);
            }
        }
    }
}
