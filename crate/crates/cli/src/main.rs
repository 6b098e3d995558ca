//! `snipe`: estimators, exact oracles and simulations from the command line.
//!
//! Exit codes: 0 on success, 1 when a check of `validate` or `toy` fails,
//! 2 on bad arguments, bad input files or I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use snipe::sim::{self, ExperimentSpec};
use snipe::validate::{self, Fault, ValidationConfig};
use snipe::{estimators, Dataset, Error, Estimator, Graph};

#[derive(Debug, Parser)]
#[command(name = "snipe", version, about = "Total treatment effect estimation under neighborhood interference")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "SNIPE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo study described by a TOML config.
    Simulate(SimulateArgs),
    /// Check analytic formulas and estimator properties against exact enumeration.
    Validate(ValidateArgs),
    /// Reproduce the exact quantities of the three-unit worked example.
    Toy(ToyArgs),
    /// Estimate the TTE from a graph file and a data file.
    Estimate(EstimateArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for raw.csv, summary.csv and provenance.toml.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override a config field, e.g. `--set reps=10` or `--set sweep.values=[1,2]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Keep one population and redraw only the treatment in each replicate.
    #[arg(long)]
    fix_population: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Largest population size in the random sweeps (at most 22).
    #[arg(long, default_value_t = 10)]
    budget_n: usize,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Deliberately break the estimator to confirm the suite notices (`g-sign`).
    #[arg(long, value_name = "FAULT")]
    inject_fault: Option<String>,
    /// Directory for validation.csv and provenance.toml.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    /// Additional coefficient values at which to check `Var(TTE(θ))`.
    #[arg(long, allow_negative_numbers = true)]
    theta: Vec<f64>,
    /// Compare estimators on `m` disjoint copies of the example, given as `m=200`.
    #[arg(long, value_name = "m=COUNT")]
    toy_groups: Option<String>,
    /// Random alternative coefficients in the group comparison.
    #[arg(long, default_value_t = 20)]
    alternatives: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory for toy.csv and provenance.toml.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Edge list: a line `n <units>` followed by `source target` lines.
    #[arg(long)]
    graph: PathBuf,
    /// CSV with columns `unit,z,y`, optional `p` and covariates `x1..xd`.
    #[arg(long)]
    data: PathBuf,
    /// DM, Lin, SNIPE, Reg-SNIPE or VIM-SNIPE.
    #[arg(long, default_value = "VIM-SNIPE")]
    estimator: String,
    #[arg(long, default_value_t = 1)]
    beta: usize,
    /// Treatment probability of every unit when the data has no `p` column.
    #[arg(long)]
    p: Option<f64>,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn provenance(command: &str, mut fields: toml::Table) -> String {
    fields.insert("command".into(), command.into());
    fields.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    toml::to_string(&fields).expect("table serializes")
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut overrides = args.overrides;
    if args.fix_population {
        overrides.push("fix_population=true".into());
    }
    let spec = ExperimentSpec::read(&args.config, &overrides)?;
    let out = sim::run_experiment(&spec)?;
    create_dir(&args.out)?;
    let mut paths = out.write_all(&args.out)?;
    let mut fields = toml::Table::new();
    fields.insert("config_path".into(), args.config.display().to_string().into());
    fields.insert("spec".into(), toml::Value::Table(spec.to_toml().parse().expect("spec round-trips")));
    let prov = args.out.join("provenance.toml");
    write(&prov, &provenance("simulate", fields))?;
    paths.push(prov);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("g-sign") => Some(Fault::FlipGSign),
        Some(other) => return Err(Failure::Usage(format!("unknown fault `{other}`; the only fault is `g-sign`"))),
    };
    let config = ValidationConfig { budget_n: args.budget_n, instances: args.instances, seed: args.seed, fault };
    let report = validate::run(&config)?;
    print!("{}", report.to_text());
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        report.write_csv(dir.join("validation.csv"))?;
        let mut fields = toml::Table::new();
        fields.insert("budget_n".into(), (args.budget_n as i64).into());
        fields.insert("instances".into(), (args.instances as i64).into());
        fields.insert("seed".into(), args.seed.to_string().into());
        if let Some(f) = &args.inject_fault {
            fields.insert("inject_fault".into(), f.clone().into());
        }
        write(&dir.join("provenance.toml"), &provenance("validate", fields))?;
    }
    if report.passed() {
        println!("all checks passed");
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        eprintln!("failed checks: {}", failed.join(", "));
        Err(Failure::Check)
    }
}

fn parse_groups(s: &str) -> Result<usize, Failure> {
    let digits = s.strip_prefix("m=").unwrap_or(s);
    digits.parse().map_err(|_| Failure::Usage(format!("--toy-groups expects m=<count>, got `{s}`")))
}

fn toy(args: ToyArgs) -> Result<(), Failure> {
    let groups = args.toy_groups.as_deref().map(parse_groups).transpose()?;
    let quantities = validate::toy_quantities(&args.theta)?;
    let mut ok = true;
    let mut csv = String::from("quantity,expected,computed,passed\n");
    println!("{:<22} {:>14} {:>14}", "quantity", "expected", "computed");
    for q in &quantities {
        ok &= q.passed();
        println!("{:<22} {:>14.10} {:>14.10} {}", q.name, q.expected, q.computed, if q.passed() { "PASS" } else { "FAIL" });
        csv.push_str(&format!("{},{},{},{}\n", q.name, q.expected, q.computed, q.passed()));
    }
    if let Some(m) = groups {
        let c = validate::toy_groups(m, args.alternatives, args.seed)?;
        println!();
        println!("{m} groups: theta_Reg = {:.6}, theta_VIM = {:.6}", c.theta_reg, c.theta_vim);
        println!("Var(SNIPE) = {:.6e}  Var(Reg) = {:.6e}  Var(VIM) = {:.6e}", c.var_snipe, c.var_reg, c.var_vim);
        let worst = c.alternatives.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
        println!("smallest variance among {} random coefficients = {:.6e}", c.alternatives.len(), worst);
        println!("Var(VIM) <= Var(SNIPE) < Var(Reg): {}", if c.passed() { "PASS" } else { "FAIL" });
        ok &= c.passed();
        csv.push_str(&format!("groups_var_snipe,,{},\ngroups_var_reg,,{},\ngroups_var_vim,,{},{}\n", c.var_snipe, c.var_reg, c.var_vim, c.passed()));
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write(&dir.join("toy.csv"), &csv)?;
        let mut fields = toml::Table::new();
        fields.insert("theta".into(), toml::Value::Array(args.theta.iter().map(|&t| t.into()).collect()));
        if let Some(m) = groups {
            fields.insert("groups".into(), (m as i64).into());
            fields.insert("alternatives".into(), (args.alternatives as i64).into());
            fields.insert("seed".into(), args.seed.to_string().into());
        }
        write(&dir.join("provenance.toml"), &provenance("toy", fields))?;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn estimate(args: EstimateArgs) -> Result<(), Failure> {
    let est: Estimator = args.estimator.parse()?;
    let graph = Arc::new(Graph::read(&args.graph)?);
    let ds = Dataset::read_csv(&args.data, graph, args.beta, args.p)?;
    let report = estimators::estimate(&ds, est)?;
    println!("estimator       {}", report.estimator);
    println!("estimate        {}", report.point_estimate);
    if let Some(theta) = &report.theta {
        let parts: Vec<String> = theta.iter().map(|v| v.to_string()).collect();
        println!("theta           [{}]", parts.join(", "));
    }
    let d = &report.diagnostics;
    if let Some(c) = d.condition_number {
        println!("condition       {c:e}{}", if d.pseudo_inverse { " (pseudo-inverse)" } else { "" });
    }
    println!("zero weights    {}", d.degenerate_units);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
        Command::Toy(a) => toy(a),
        Command::Estimate(a) => estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
