//! Backward induction over a scenario tree, forward assembly of the optimal
//! strategy, and the polynomial envelope `U_t(x) <= J_t (x^g + 1)`.

use rayon::prelude::*;

use crate::arbitrage::{NaCertificate, TreeCertificate};
use crate::error::{Error, Result};
use crate::market::{dot, norm, wealth_bounds, NodeIdx, ScenarioTree};
use crate::one_step::{
    build_value_curve, maximize_one_step_with_hints, wealth_grid, ValueCurve, WealthValue,
};
use crate::utility::{GrowthCertificate, LeafUtility, UtilityModel};

#[derive(Debug, Clone, PartialEq)]
pub struct DpOptions {
    /// Number of grid intervals per node; the grid has `n_grid + 1` points.
    pub n_grid: usize,
    pub tol: f64,
    /// Worker cap; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            n_grid: 256,
            tol: 1e-4,
            threads: None,
        }
    }
}

impl DpOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 16 {
            return Err(Error::InvalidInput(format!("n_grid must be >= 16, got {}", self.n_grid)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }

    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// `U_t(., node)` for every node; leaves hold the utility sampled on their
/// grid (plus its kinks).
#[derive(Debug, Clone)]
pub struct ValueFunctionTable {
    curves: Vec<ValueCurve>,
}

impl ValueFunctionTable {
    pub fn curve(&self, node: NodeIdx) -> &ValueCurve {
        &self.curves[node]
    }
}

/// Maximisers on each internal node's grid.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    entries: Vec<Vec<(f64, Vec<f64>)>>,
}

impl PolicyTable {
    pub fn entries(&self, node: NodeIdx) -> &[(f64, Vec<f64>)] {
        &self.entries[node]
    }

    /// Stored maximiser at the largest grid wealth not above `x`.
    pub fn lookup(&self, node: NodeIdx, x: f64) -> Option<&[f64]> {
        let e = &self.entries[node];
        let j = e.partition_point(|(w, _)| *w <= x);
        (j > 0).then(|| e[j - 1].1.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub x0: f64,
    pub values: ValueFunctionTable,
    pub policy: PolicyTable,
    pub wealth_max: Vec<f64>,
    /// `U_0(x0)`.
    pub v_star: f64,
}

fn require_certificate(na: &TreeCertificate) -> Result<&NaCertificate> {
    match na {
        TreeCertificate::NoArbitrage(c) => Ok(c),
        TreeCertificate::Arbitrage(w) => Err(Error::Arbitrage {
            node: w.node.clone(),
        }),
    }
}

fn leaf_utilities<'a>(tree: &ScenarioTree, utility: &'a UtilityModel) -> Result<Vec<Option<LeafUtility<'a>>>> {
    (0..tree.len())
        .map(|i| {
            if tree.is_leaf(i) {
                utility.at_node(&tree.node(i).id).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

fn terminal_curve(leaf: &LeafUtility<'_>, w_max: f64, n_grid: usize, node: &str) -> Result<ValueCurve> {
    let mut grid = wealth_grid(w_max, n_grid);
    grid.extend(leaf.kinks(0.0, w_max).into_iter().filter(|&k| k > 0.0));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * w_max.max(1.0));
    let values: Vec<f64> = grid.iter().map(|&x| leaf.value(x)).collect();
    ValueCurve::new(grid, values)
        .map_err(|e| Error::InvalidUtility(format!("utility at leaf `{node}`: {e}")))
}

type BuiltNode = (NodeIdx, ValueCurve, Vec<Vec<f64>>);

/// Builds `U_T = u` down to `U_0`, node by node, layer by layer.
pub fn backward_induct(
    tree: &ScenarioTree,
    utility: &UtilityModel,
    na: &TreeCertificate,
    x0: f64,
    opts: &DpOptions,
) -> Result<DpSolution> {
    opts.validate()?;
    let cert = require_certificate(na)?;
    let wmax = wealth_bounds(tree, x0, cert)?;
    let leaves = leaf_utilities(tree, utility)?;

    let mut curves: Vec<Option<ValueCurve>> = vec![None; tree.len()];
    let mut entries: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); tree.len()];

    for i in tree.leaves() {
        let leaf = leaves[i].as_ref().expect("leaf utility");
        curves[i] = Some(terminal_curve(leaf, wmax[i], opts.n_grid, &tree.node(i).id)?);
    }

    for t in (0..tree.horizon()).rev() {
        let layer = tree.layer(t);
        let built: Vec<Result<BuiltNode>> = opts.run(|| {
            layer
                .par_iter()
                .map(|&i| {
                    let node_cert = cert
                        .node(i)
                        .ok_or_else(|| Error::MissingCertificate(tree.node(i).id.clone()))?;
                    let incs = tree.increments(i)?;
                    let children: Vec<&dyn WealthValue> = incs
                        .iter()
                        .map(|inc| match &leaves[inc.child] {
                            Some(l) => l as &dyn WealthValue,
                            None => curves[inc.child].as_ref().expect("child built") as &dyn WealthValue,
                        })
                        .collect();
                    let grid = wealth_grid(wmax[i], opts.n_grid);
                    let (curve, xis) = build_value_curve(&grid, &incs, &children, node_cert, opts.tol)?;
                    Ok((i, curve, xis))
                })
                .collect()
        })?;
        for r in built {
            let (i, curve, xis) = r?;
            entries[i] = curve.wealth().iter().cloned().zip(xis).collect();
            curves[i] = Some(curve);
        }
    }

    let curves: Vec<ValueCurve> = curves.into_iter().map(|c| c.expect("every node built")).collect();
    let v_star = curves[tree.root()].eval(x0);
    Ok(DpSolution {
        x0,
        values: ValueFunctionTable { curves },
        policy: PolicyTable { entries },
        wealth_max: wmax,
        v_star,
    })
}

/// Realised wealth and position at every node along the pasted strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPlan {
    pub wealth: Vec<f64>,
    /// Position held from each internal node to its children; empty at leaves.
    pub positions: Vec<Vec<f64>>,
}

/// Forward pass from `x0`: at every node the stored maximiser nearest below
/// the realised wealth seeds one exact one-step solve at that wealth.
pub fn assemble_strategy(
    tree: &ScenarioTree,
    utility: &UtilityModel,
    na: &TreeCertificate,
    sol: &DpSolution,
    opts: &DpOptions,
) -> Result<StrategyPlan> {
    let cert = require_certificate(na)?;
    let leaves = leaf_utilities(tree, utility)?;
    let mut wealth = vec![0.0; tree.len()];
    let mut positions = vec![Vec::new(); tree.len()];
    wealth[tree.root()] = sol.x0;
    for i in tree.internal_nodes() {
        let w = wealth[i];
        let node = &tree.node(i).id;
        if w < -1e-9 {
            return Err(Error::Inadmissible {
                node: node.clone(),
                wealth: w,
            });
        }
        let w = w.max(0.0);
        let max = sol.wealth_max[i];
        if w > max * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::OutOfRange {
                node: node.clone(),
                wealth: w,
                max,
            });
        }
        let node_cert = cert
            .node(i)
            .ok_or_else(|| Error::MissingCertificate(node.clone()))?;
        let incs = tree.increments(i)?;
        let children: Vec<&dyn WealthValue> = incs
            .iter()
            .map(|inc| match &leaves[inc.child] {
                Some(l) => l as &dyn WealthValue,
                None => sol.values.curve(inc.child) as &dyn WealthValue,
            })
            .collect();
        let hints: Vec<Vec<f64>> = sol.policy.lookup(i, w).map(|h| h.to_vec()).into_iter().collect();
        let step = maximize_one_step_with_hints(w, &incs, &children, node_cert, opts.tol, &hints)?;
        for (inc, &payoff) in incs.iter().zip(&step.payoffs) {
            wealth[inc.child] = payoff;
        }
        positions[i] = step.xi;
    }
    Ok(StrategyPlan { wealth, positions })
}

/// Exact expected terminal utility of a strategy given as one position per
/// internal node.
pub fn evaluate_strategy(
    tree: &ScenarioTree,
    utility: &UtilityModel,
    x0: f64,
    positions: &[Vec<f64>],
) -> Result<f64> {
    if !(x0 >= 0.0) {
        return Err(Error::InvalidInput(format!("initial wealth {x0} must be >= 0")));
    }
    if positions.len() != tree.len() {
        return Err(Error::InvalidInput(format!(
            "strategy has {} entries for {} nodes",
            positions.len(),
            tree.len()
        )));
    }
    let mut wealth = vec![0.0; tree.len()];
    wealth[tree.root()] = x0;
    let mut total = 0.0;
    for i in 0..tree.len() {
        let node = tree.node(i);
        let w = wealth[i];
        if w < -1e-12 {
            return Err(Error::Inadmissible {
                node: node.id.clone(),
                wealth: w,
            });
        }
        if tree.is_leaf(i) {
            total += tree.unconditional_prob(i) * utility.at_node(&node.id)?.value(w.max(0.0));
            continue;
        }
        let xi = &positions[i];
        if xi.len() != tree.assets() {
            return Err(Error::InvalidInput(format!(
                "position at `{}` has {} entries, expected {}",
                node.id,
                xi.len(),
                tree.assets()
            )));
        }
        for inc in tree.increments(i)? {
            wealth[inc.child] = w + dot(xi, &inc.delta);
        }
    }
    Ok(total)
}

/// `J_t` per node with the exponent of the growth certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub gamma_bar: f64,
    pub j: Vec<f64>,
}

/// `J_T = max{(u+(x_bar) + c)/x_bar^g, u+(x_bar)}` at the leaves and
/// `J_t = E[J_{t+1} (1 + |dS|/beta)^g | node]` above them.
pub fn compute_j(
    tree: &ScenarioTree,
    growth: &GrowthCertificate,
    na: &TreeCertificate,
    utility: &UtilityModel,
) -> Result<BoundTable> {
    growth.validate()?;
    let cert = require_certificate(na)?;
    if growth.x_bar <= 0.0 {
        return Err(Error::BoundUnavailable(
            "x_bar = 0 leaves the terminal envelope undefined".into(),
        ));
    }
    let g = growth.gamma_bar;
    let mut j = vec![0.0; tree.len()];
    for i in tree.leaves() {
        let id = &tree.node(i).id;
        let u_plus = utility.at_node(id)?.value(growth.x_bar).max(0.0);
        let c = growth.c.get(id)?;
        j[i] = ((u_plus + c) / growth.x_bar.powf(g)).max(u_plus);
    }
    for t in (0..tree.horizon()).rev() {
        for i in tree.layer(t) {
            let beta = cert
                .node(i)
                .ok_or_else(|| Error::MissingCertificate(tree.node(i).id.clone()))?
                .beta;
            j[i] = tree
                .increments(i)?
                .iter()
                .map(|inc| inc.prob * j[inc.child] * (1.0 + norm(&inc.delta) / beta).powf(g))
                .sum();
        }
    }
    Ok(BoundTable { gamma_bar: g, j })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    /// Minimum of `J_t (x^g + 1) - U_t(x)` over all nodes and grid points.
    pub worst_slack: f64,
    pub violations: usize,
    /// `(1 + x0^g) J_0`.
    pub root_upper: f64,
    pub v_star: f64,
    pub passed: bool,
}

pub fn check_bounds(tree: &ScenarioTree, sol: &DpSolution, bounds: &BoundTable) -> BoundsReport {
    let g = bounds.gamma_bar;
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for i in 0..tree.len() {
        let c = sol.values.curve(i);
        for (&x, &u) in c.wealth().iter().zip(c.values()) {
            let slack = bounds.j[i] * (x.powf(g) + 1.0) - u;
            worst = worst.min(slack);
            if slack < -1e-6 {
                violations += 1;
            }
        }
    }
    let root_upper = (1.0 + sol.x0.powf(g)) * bounds.j[tree.root()];
    BoundsReport {
        worst_slack: worst,
        violations,
        root_upper,
        v_star: sol.v_star,
        passed: violations == 0 && sol.v_star <= root_upper + 1e-6,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthPropagationReport {
    /// Constant of the growth inequality carried by each node's curve.
    pub c_bar: Vec<f64>,
    /// Worst slack per time layer.
    pub layer_slack: Vec<f64>,
    pub worst_slack: f64,
}

/// Checks `U_t+(lambda x) <= lambda^g U_t+(x) + lambda^g Cbar` on every
/// node's curve, with `Cbar = C_lifted` at the leaves and
/// `Cbar(node) = E[Cbar(child) + U_child-(0) | node]` above.
pub fn check_growth_propagation(
    tree: &ScenarioTree,
    sol: &DpSolution,
    growth: &GrowthCertificate,
    lambdas: &[f64],
    n_x: usize,
) -> Result<GrowthPropagationReport> {
    let g = growth.gamma_bar;
    let mut c_bar = vec![0.0; tree.len()];
    for i in tree.leaves() {
        c_bar[i] = growth.lifted(&tree.node(i).id)?;
    }
    for t in (0..tree.horizon()).rev() {
        for i in tree.layer(t) {
            c_bar[i] = tree
                .increments(i)?
                .iter()
                .map(|inc| {
                    let u0 = sol.values.curve(inc.child).eval(0.0);
                    inc.prob * (c_bar[inc.child] + (-u0).max(0.0))
                })
                .sum();
        }
    }
    let lmax = lambdas.iter().cloned().fold(1.0, f64::max);
    let mut layer_slack = vec![f64::INFINITY; tree.horizon() + 1];
    for (i, &cb) in c_bar.iter().enumerate() {
        let curve = sol.values.curve(i);
        let w = curve.max_wealth();
        if w <= 0.0 {
            continue;
        }
        let (lo, hi) = (w * 1e-3, w / lmax);
        let t = tree.node(i).time;
        for s in 0..n_x {
            let x = if n_x == 1 { hi } else { lo * (hi / lo).powf(s as f64 / (n_x - 1) as f64) };
            let ux = curve.eval(x).max(0.0);
            for &l in lambdas {
                let lg = l.powf(g);
                let slack = lg * ux + lg * cb - curve.eval(l * x).max(0.0);
                layer_slack[t] = layer_slack[t].min(slack);
            }
        }
    }
    let worst_slack = layer_slack.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(GrowthPropagationReport {
        c_bar,
        layer_slack,
        worst_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::certify_tree;
    use crate::fixtures;
    use crate::utility::{lift_growth, UtilityFamily};

    fn opts() -> DpOptions {
        DpOptions::default()
    }

    #[test]
    fn one_period_sqrt() {
        let tree = fixtures::b1();
        let na = certify_tree(&tree);
        let sol = backward_induct(&tree, &fixtures::sqrt_utility(), &na, 1.0, &opts()).unwrap();
        assert!((sol.v_star - 0.75 * 2f64.sqrt()).abs() < 1e-3);
        assert_eq!(sol.wealth_max, vec![1.0, 3.0, 3.0]);
    }

    #[test]
    fn refuses_arbitrage() {
        let tree = fixtures::arb();
        let na = certify_tree(&tree);
        let err = backward_induct(&tree, &fixtures::sqrt_utility(), &na, 1.0, &opts()).unwrap_err();
        assert!(matches!(err, Error::Arbitrage { .. }));
    }

    #[test]
    fn rejects_small_grids() {
        let tree = fixtures::b1();
        let na = certify_tree(&tree);
        let bad = DpOptions {
            n_grid: 8,
            ..opts()
        };
        assert!(backward_induct(&tree, &fixtures::sqrt_utility(), &na, 1.0, &bad).is_err());
    }

    #[test]
    fn strategy_evaluation() {
        let tree = fixtures::b1();
        let u = fixtures::sqrt_utility();
        let flat = vec![vec![0.0], vec![], vec![]];
        assert_eq!(evaluate_strategy(&tree, &u, 1.0, &flat).unwrap(), 1.0);
        let one = vec![vec![1.0], vec![], vec![]];
        let v = evaluate_strategy(&tree, &u, 1.0, &one).unwrap();
        assert!((v - 0.5 * (2f64.sqrt() + 0.5f64.sqrt())).abs() < 1e-15);
        let three = vec![vec![3.0], vec![], vec![]];
        assert!(matches!(
            evaluate_strategy(&tree, &u, 1.0, &three),
            Err(Error::Inadmissible { .. })
        ));
    }

    #[test]
    fn assembled_plan_for_b1() {
        let tree = fixtures::b1();
        let u = fixtures::sqrt_utility();
        let na = certify_tree(&tree);
        let sol = backward_induct(&tree, &u, &na, 1.0, &opts()).unwrap();
        let plan = assemble_strategy(&tree, &u, &na, &sol, &opts()).unwrap();
        assert!((plan.positions[0][0] - 1.0).abs() < 1e-3);
        assert!((plan.wealth[tree.find("u").unwrap()] - 2.0).abs() < 1e-3);
        assert!((plan.wealth[tree.find("d").unwrap()] - 0.5).abs() < 1e-3);

        let sol0 = backward_induct(&tree, &u, &na, 0.0, &opts()).unwrap();
        let plan0 = assemble_strategy(&tree, &u, &na, &sol0, &opts()).unwrap();
        assert_eq!(plan0.positions[0], vec![0.0]);
        assert!(plan0.wealth.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn envelope_for_sqrt() {
        let tree = fixtures::b1();
        let u = fixtures::sqrt_utility();
        let na = certify_tree(&tree);
        let j = compute_j(&tree, &GrowthCertificate::new(0.5, 1.0, 0.0), &na, &u).unwrap();
        assert_eq!(j.j[1], 1.0);
        assert!((j.j[0] - 0.5 * (3f64.sqrt() + 2f64.sqrt())).abs() < 1e-12);
        let sol = backward_induct(&tree, &u, &na, 1.0, &opts()).unwrap();
        let r = check_bounds(&tree, &sol, &j);
        assert!(r.passed, "{r:?}");
        assert!((r.root_upper - 2.0 * j.j[0]).abs() < 1e-12);
    }

    #[test]
    fn envelope_of_zero_and_kf() {
        let tree = fixtures::b1();
        let na = certify_tree(&tree);
        let zero = UtilityModel::deterministic(UtilityFamily::Ramp {
            lo: 0.0,
            hi: 1.0,
            low: 0.0,
            high: 0.0,
        })
        .unwrap();
        let j = compute_j(&tree, &GrowthCertificate::new(1.0, 1.0, 0.0), &na, &zero).unwrap();
        assert!(j.j.iter().all(|&v| v == 0.0));
        let sol = backward_induct(&tree, &zero, &na, 1.0, &opts()).unwrap();
        let r = check_bounds(&tree, &sol, &j);
        assert_eq!(r.worst_slack, 0.0);

        let j = compute_j(&tree, &GrowthCertificate::new(1.0, 1.0, 0.5), &na, &fixtures::kf_utility()).unwrap();
        assert_eq!(j.j[1], 0.5);

        let err = compute_j(&tree, &GrowthCertificate::new(1.0, 0.0, 0.5), &na, &zero).unwrap_err();
        assert!(matches!(err, Error::BoundUnavailable(_)));
    }

    #[test]
    fn growth_propagates_through_layers() {
        let tree = fixtures::b2();
        let u = fixtures::kf_utility();
        let na = certify_tree(&tree);
        let cert = lift_growth(&u, &GrowthCertificate::new(1.0, 1.0, 0.5), &tree.leaf_ids()).unwrap();
        let sol = backward_induct(&tree, &u, &na, 1.0, &opts()).unwrap();
        let r = check_growth_propagation(&tree, &sol, &cert, &[1.0, 1.5, 2.0, 4.0, 8.0, 16.0], 40).unwrap();
        assert!(r.worst_slack >= -1e-6, "{r:?}");
        // Cbar(root) = E[Cbar(t=1) + U1-(0)] with Cbar(t=1) = 0.5 + 0.5
        assert!((r.c_bar[0] - 1.5).abs() < 1e-12, "{:?}", r.c_bar);
    }
}
