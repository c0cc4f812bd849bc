//! Command-line driver behind the `nonconcave-dp` binary.
//!
//! Exit codes: 0 success, 2 invalid input, 3 arbitrage, 4 growth
//! certificate falsified, 5 tolerance or comparison failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::arbitrage::{certify_tree, verify_certificate, TreeCertificate};
use crate::dp::{
    assemble_strategy, backward_induct, check_bounds, check_growth_propagation, compute_j, evaluate_strategy,
    DpOptions, DpSolution,
};
use crate::error::{Error, Result};
use crate::market::{load_tree, ScenarioTree};
use crate::oracle::{brute_force_value, compare, find_arbitrage, OracleGrid, Radius};
use crate::utility::{
    empirical_elasticity, falsify_growth, lift_growth, load_utility, UtilitySpec, ValidationGrids,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ARBITRAGE: i32 = 3;
pub const EXIT_GROWTH: i32 = 4;
pub const EXIT_TOLERANCE: i32 = 5;

pub const THREADS_ENV: &str = "NONCONCAVE_DP_THREADS";

const DEFAULT_SEED: u64 = 7;
const DEFAULT_ORACLE_GRID: usize = 201;
const ORACLE_REL_TOL: f64 = 2e-2;
const VERIFY_DIRECTIONS: usize = 10_000;

#[derive(Parser, Debug)]
#[command(name = "nonconcave-dp", version, about = "Optimal investment with non-concave utilities on scenario trees")]
struct Cli {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check tree and utility files against their schemas and invariants.
    Validate(Opts),
    /// Compute the no-arbitrage certificate or an arbitrage witness.
    CertifyNa(Opts),
    /// Search for violations of the growth certificate and lift it.
    CertifyUtility(Opts),
    /// Run the dynamic programme and write `run.json`.
    Optimize(Opts),
    /// Brute-force the value on a strategy grid and compare with the DP.
    Oracle(Opts),
    /// Tabulate the empirical elasticity `x u'(x) / u(x)` at `n + 1/2`.
    Elasticity(Opts),
    /// Write the value curves of a previous run as CSV.
    Export(Opts),
}

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct Opts {
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    utility: Option<PathBuf>,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    n_grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    oracle_grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    layer: Option<usize>,
    /// Node whose utility is tabulated by `elasticity`.
    #[arg(long)]
    node: Option<String>,
    /// Largest `n` in the `elasticity` table.
    #[arg(long)]
    n_max: Option<usize>,
}

impl Opts {
    /// Flags win over the config file.
    fn merged(self, file: Opts) -> Opts {
        Opts {
            tree: self.tree.or(file.tree),
            utility: self.utility.or(file.utility),
            x0: self.x0.or(file.x0),
            n_grid: self.n_grid.or(file.n_grid),
            tol: self.tol.or(file.tol),
            oracle_grid: self.oracle_grid.or(file.oracle_grid),
            seed: self.seed.or(file.seed),
            out: self.out.or(file.out),
            layer: self.layer.or(file.layer),
            node: self.node.or(file.node),
            n_max: self.n_max.or(file.n_max),
        }
    }

    fn tree(&self) -> Result<ScenarioTree> {
        let path = self
            .tree
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("--tree is required".into()))?;
        load_tree(&read(path)?)
    }

    fn utility(&self) -> Result<UtilitySpec> {
        let path = self
            .utility
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("--utility is required".into()))?;
        load_utility(&read(path)?)
    }

    fn x0(&self) -> Result<f64> {
        let x0 = self.x0.unwrap_or(1.0);
        if !(x0.is_finite() && x0 >= 0.0) {
            return Err(Error::InvalidInput(format!("--x0 must be >= 0, got {x0}")));
        }
        Ok(x0)
    }

    fn dp_options(&self) -> Result<DpOptions> {
        let d = DpOptions::default();
        let opts = DpOptions {
            n_grid: self.n_grid.unwrap_or(d.n_grid),
            tol: self.tol.unwrap_or(d.tol),
            threads: threads_from_env()?,
        };
        opts.validate()?;
        Ok(opts)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Arbitrage { .. } => EXIT_ARBITRAGE,
        Error::GrowthFalsified { .. } => EXIT_GROWTH,
        Error::Numerical(_) | Error::OutOfRange { .. } | Error::Inadmissible { .. } => EXIT_TOLERANCE,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Output goes to stdout, diagnostics to
/// stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok((code, text)) => {
            print!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(i32, String)> {
    let file = match &cli.config {
        Some(p) => toml::from_str::<Opts>(&read(p)?).map_err(|e| Error::Parse(e.to_string()))?,
        None => Opts::default(),
    };
    if let Some(n) = threads_from_env()? {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let merge = |o: Opts| o.merged(file.clone());
    match cli.command {
        Command::Validate(o) => validate(&merge(o)),
        Command::CertifyNa(o) => certify_na(&merge(o)),
        Command::CertifyUtility(o) => certify_utility(&merge(o)),
        Command::Optimize(o) => optimize(&merge(o)),
        Command::Oracle(o) => oracle(&merge(o)),
        Command::Elasticity(o) => elasticity(&merge(o)),
        Command::Export(o) => export(&merge(o)),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialise");
    s.push('\n');
    s
}

fn write_out(opts: &Opts, name: &str, text: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = &opts.out else { return Ok(None) };
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    log::info!("wrote {}", path.display());
    Ok(Some(path))
}

fn validate(o: &Opts) -> Result<(i32, String)> {
    if o.tree.is_none() && o.utility.is_none() {
        return Err(Error::InvalidInput("nothing to validate: pass --tree and/or --utility".into()));
    }
    let mut report = BTreeMap::new();
    if o.tree.is_some() {
        let tree = o.tree()?;
        report.insert(
            "tree",
            json!({ "assets": tree.assets(), "horizon": tree.horizon(), "nodes": tree.len(), "leaves": tree.leaves().count() }),
        );
        if o.utility.is_some() {
            let u = o.utility()?;
            for id in tree.leaf_ids() {
                u.model.at_node(&id)?;
            }
        }
    }
    if o.utility.is_some() {
        let u = o.utility()?;
        report.insert("utility", json!({ "growth_certificate": u.growth.is_some() }));
    }
    Ok((EXIT_OK, pretty(&json!(report))))
}

fn verification(tree: &ScenarioTree, na: &TreeCertificate, seed: u64) -> Result<Value> {
    let Some(cert) = na.certificate() else { return Ok(Value::Null) };
    let mut nodes = BTreeMap::new();
    let mut passed = true;
    for (i, nc) in cert.entries() {
        let rep = verify_certificate(&tree.increments(i)?, nc, VERIFY_DIRECTIONS, seed)?;
        passed &= rep.passed;
        nodes.insert(
            tree.node(i).id.clone(),
            json!({
                "passed": rep.passed,
                "directions": rep.directions_checked,
                "worst_mass_margin": rep.worst_mass_margin,
                "worst_beta_margin": rep.worst_beta_margin,
            }),
        );
    }
    Ok(json!({ "seed": seed, "passed": passed, "nodes": nodes }))
}

fn certify_na(o: &Opts) -> Result<(i32, String)> {
    let tree = o.tree()?;
    let na = certify_tree(&tree);
    let mut out = na.to_json(&tree);
    out["verification"] = verification(&tree, &na, o.seed())?;
    let text = pretty(&out);
    write_out(o, "certificate.json", &text)?;
    let code = match (&na, out["verification"]["passed"].as_bool()) {
        (TreeCertificate::Arbitrage(_), _) => EXIT_ARBITRAGE,
        (_, Some(false)) => EXIT_TOLERANCE,
        _ => EXIT_OK,
    };
    Ok((code, text))
}

fn certify_utility(o: &Opts) -> Result<(i32, String)> {
    let spec = o.utility()?;
    let growth = spec
        .growth
        .clone()
        .ok_or_else(|| Error::InvalidInput("utility file has no `growth` section".into()))?;
    let nodes = match o.tree {
        Some(_) => o.tree()?.leaf_ids(),
        None => spec.model.known_nodes(),
    };
    let grids = ValidationGrids::for_x_bar(growth.x_bar);
    if let Some(cx) = falsify_growth(&spec.model, &growth, &grids.lambdas, &grids.above, &nodes)? {
        let out = json!({ "verdict": "falsified", "counterexample": cx });
        return Ok((EXIT_GROWTH, pretty(&out)));
    }
    let lifted = lift_growth(&spec.model, &growth, &nodes)?;
    let out = json!({
        "verdict": "passed",
        "lambdas": grids.lambdas,
        "points_checked": grids.above.len() + grids.below.len(),
        "certificate": lifted,
    });
    let text = pretty(&out);
    write_out(o, "growth.json", &text)?;
    Ok((EXIT_OK, text))
}

fn curves_json(tree: &ScenarioTree, sol: &DpSolution) -> Value {
    let curves: Vec<Value> = (0..tree.len())
        .map(|i| {
            let c = sol.values.curve(i);
            let xi: Vec<&[f64]> = sol.policy.entries(i).iter().map(|(_, x)| x.as_slice()).collect();
            json!({
                "t": tree.node(i).time,
                "node": tree.node(i).id,
                "wealth": c.wealth(),
                "value": c.values(),
                "xi": xi,
            })
        })
        .collect();
    Value::Array(curves)
}

fn optimize(o: &Opts) -> Result<(i32, String)> {
    let tree = o.tree()?;
    let spec = o.utility()?;
    let x0 = o.x0()?;
    let dp = o.dp_options()?;
    let seed = o.seed();
    let na = certify_tree(&tree);
    if let Some(w) = na.witness() {
        return Err(Error::Arbitrage { node: w.node.clone() });
    }
    let sol = backward_induct(&tree, &spec.model, &na, x0, &dp)?;
    let plan = assemble_strategy(&tree, &spec.model, &na, &sol, &dp)?;
    let plan_value = evaluate_strategy(&tree, &spec.model, x0, &plan.positions)?;
    let policy: BTreeMap<&str, Value> = (0..tree.len())
        .map(|i| {
            (
                tree.node(i).id.as_str(),
                json!({ "wealth": plan.wealth[i], "position": plan.positions[i] }),
            )
        })
        .collect();

    let mut failed = false;
    let bounds = match &spec.growth {
        None => json!({ "skipped": "no growth certificate" }),
        Some(g) if g.x_bar <= 0.0 => json!({ "skipped": "x_bar = 0" }),
        Some(g) => {
            let j = compute_j(&tree, g, &na, &spec.model)?;
            let rep = check_bounds(&tree, &sol, &j);
            failed |= !rep.passed;
            json!({
                "J0_expect": j.j[tree.root()],
                "upper": rep.root_upper,
                "gamma_bar": j.gamma_bar,
                "worst_slack": rep.worst_slack,
                "passed": rep.passed,
            })
        }
    };
    let growth = match &spec.growth {
        None => Value::Null,
        Some(g) => {
            let lifted = lift_growth(&spec.model, g, &tree.leaf_ids())?;
            let grids = ValidationGrids::for_x_bar(g.x_bar);
            let rep = check_growth_propagation(&tree, &sol, &lifted, &grids.lambdas, 40)?;
            failed |= rep.worst_slack < -1e-6;
            json!({ "worst_slack": rep.worst_slack, "layer_slack": rep.layer_slack })
        }
    };
    let verify = verification(&tree, &na, seed)?;
    failed |= verify["passed"] == json!(false);

    let artifact = json!({
        "v_star": sol.v_star,
        "x0": x0,
        "plan_value": plan_value,
        "error_budget": (sol.v_star - plan_value).abs(),
        "n_grid": dp.n_grid,
        "tol": dp.tol,
        "seed": seed,
        "assets": tree.assets(),
        "policy": policy,
        "bounds": bounds,
        "growth_propagation": growth,
        "na_verification": verify,
        "curves": curves_json(&tree, &sol),
    });
    let text = pretty(&artifact);
    write_out(o, "run.json", &text)?;
    let summary = pretty(&json!({
        "v_star": sol.v_star,
        "plan_value": plan_value,
        "root_position": plan.positions[tree.root()],
        "bounds": artifact["bounds"],
    }));
    Ok((if failed { EXIT_TOLERANCE } else { EXIT_OK }, summary))
}

fn oracle(o: &Opts) -> Result<(i32, String)> {
    let tree = o.tree()?;
    let spec = o.utility()?;
    let x0 = o.x0()?;
    let points = o.oracle_grid.unwrap_or(DEFAULT_ORACLE_GRID);
    let na = certify_tree(&tree);
    let arbitrage = find_arbitrage(&tree, 2)?;
    if let Some(w) = na.witness() {
        let out = json!({
            "witness": { "node": w.node, "direction": w.direction },
            "lattice_witness": arbitrage.map(|a| a.positions),
        });
        return Ok((EXIT_ARBITRAGE, pretty(&out)));
    }
    let grid = OracleGrid::Box {
        points,
        radius: Radius::Certified,
    };
    let rep = brute_force_value(&tree, &spec.model, Some(&na), x0, grid)?;
    let dp = o.dp_options()?;
    let sol = backward_induct(&tree, &spec.model, &na, x0, &dp)?;
    let cmp = compare(&rep, sol.v_star, ORACLE_REL_TOL);
    let positions: BTreeMap<&str, &[f64]> = tree
        .internal_nodes()
        .map(|i| (tree.node(i).id.as_str(), rep.positions[i].as_slice()))
        .collect();
    let out = json!({
        "best_value": rep.best_value,
        "best_positions": positions,
        "grid": { "points": points | 1, "radius": "1.05 wealth / beta", "evaluations": rep.evaluations },
        "on_boundary": rep.on_boundary,
        "lattice_arbitrage": arbitrage.is_some(),
        "comparison": {
            "dp_value": cmp.dp_value,
            "gap": cmp.gap,
            "rel_gap": cmp.rel_gap,
            "rel_tol": ORACLE_REL_TOL,
            "passed": cmp.passed,
        },
    });
    let text = pretty(&out);
    write_out(o, "oracle.json", &text)?;
    Ok((if cmp.passed { EXIT_OK } else { EXIT_TOLERANCE }, text))
}

fn elasticity(o: &Opts) -> Result<(i32, String)> {
    let spec = o.utility()?;
    let node = o.node.clone().unwrap_or_else(|| "*".into());
    let n_max = o.n_max.unwrap_or(50);
    let mut csv = String::from("n,x,u,elasticity\n");
    for n in 1..=n_max {
        let x = n as f64 + 0.5;
        let u = spec.model.at_node(&node)?.value(x);
        let e = empirical_elasticity(&spec.model, &node, x, 1e-6)?;
        writeln!(csv, "{n},{x:.8e},{u:.8e},{e:.8e}").expect("write to string");
    }
    write_out(o, "elasticity.csv", &csv)?;
    Ok((EXIT_OK, csv))
}

#[derive(Deserialize)]
struct CurveRecord {
    t: usize,
    node: String,
    wealth: Vec<f64>,
    value: Vec<f64>,
    xi: Vec<Vec<f64>>,
}

/// Renders curves as CSV rows sorted by time, node id and wealth. Leaf rows
/// leave the position columns empty.
pub fn curves_csv(artifact: &Value, layer: Option<usize>) -> Result<String> {
    let d = artifact["assets"]
        .as_u64()
        .ok_or_else(|| Error::Parse("run artifact lacks `assets`".into()))? as usize;
    let mut curves: Vec<CurveRecord> = serde_json::from_value(artifact["curves"].clone())?;
    curves.retain(|c| layer.is_none_or(|l| c.t == l));
    curves.sort_by(|a, b| (a.t, &a.node).cmp(&(b.t, &b.node)));
    let mut out = String::from("t,node,wealth,value");
    for k in 1..=d {
        write!(out, ",xi_{k}").expect("write to string");
    }
    out.push('\n');
    for c in &curves {
        if c.wealth.len() != c.value.len() || !(c.xi.is_empty() || c.xi.len() == c.wealth.len()) {
            return Err(Error::Parse(format!("curve for `{}` has inconsistent lengths", c.node)));
        }
        for (j, (w, v)) in c.wealth.iter().zip(&c.value).enumerate() {
            write!(out, "{},{},{w:.8e},{v:.8e}", c.t, c.node).expect("write to string");
            match c.xi.get(j) {
                Some(xi) => xi.iter().for_each(|x| write!(out, ",{x:.8e}").expect("write to string")),
                None => (0..d).for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn export(o: &Opts) -> Result<(i32, String)> {
    let dir = o
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("--out must point at a directory holding run.json".into()))?;
    let artifact: Value = serde_json::from_str(&read(&dir.join("run.json"))?)?;
    let csv = curves_csv(&artifact, o.layer)?;
    let name = match o.layer {
        Some(t) => format!("curves_t{t}.csv"),
        None => "curves.csv".to_string(),
    };
    let path = write_out(o, &name, &csv)?.expect("out directory set");
    Ok((EXIT_OK, format!("{}\n", path.display())))
}
