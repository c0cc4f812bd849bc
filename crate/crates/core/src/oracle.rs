//! Brute-force verifiers for small trees: exhaustive strategy grids for the
//! optimal value and a lattice search for zero-cost arbitrage.
//!
//! A strategy on a tree is a position per node, and the problem at a node
//! depends on the past only through the realised wealth, so both searches
//! walk the tree depth-first carrying that wealth.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::arbitrage::TreeCertificate;
use crate::dp::evaluate_strategy;
use crate::error::{Error, Result};
use crate::market::{dot, support_hull_basis, Increment, NodeIdx, ScenarioTree, SubspaceBasis};
use crate::utility::{LeafUtility, UtilityModel};

/// Upper limit on the product of per-node grid sizes along any
/// root-to-leaf path.
pub const SEARCH_CAP: f64 = 1e7;

const ADMISSIBLE: f64 = -1e-12;
const TIE_REL: f64 = 1e-12;

/// Half-width of the per-node box of positions, in coordinates of the
/// node's increment span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    /// `1.05 * wealth / beta` from the no-arbitrage certificate.
    Certified,
    Fixed(f64),
}

/// Candidate positions at each node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleGrid {
    /// `points` per axis (made odd so that zero is on the grid) on the box
    /// of half-width `radius`, admissibility filtered.
    Box { points: usize, radius: Radius },
    /// Every `sum_j (a_j / divisions) v_j` with non-negative integers `a_j`
    /// summing to `divisions`, over the vertices `v_j` of the node's
    /// admissible set. Needs a no-arbitrage certificate.
    Polytope { divisions: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    /// Exact expected utility of `positions`.
    pub best_value: f64,
    /// Best position per node; empty at leaves.
    pub positions: Vec<Vec<f64>>,
    pub grid: OracleGrid,
    /// Some node along the best strategy picked a point on the box boundary
    /// (always false for polytope grids).
    pub on_boundary: bool,
    /// Number of leaf utility evaluations.
    pub evaluations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub dp_value: f64,
    pub oracle_value: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub passed: bool,
}

/// `|dp - oracle|` relative to the larger magnitude of the two.
pub fn compare(report: &OracleReport, dp_value: f64, rel_tol: f64) -> Comparison {
    let gap = (dp_value - report.best_value).abs();
    let scale = dp_value.abs().max(report.best_value.abs()).max(1e-12);
    Comparison {
        dp_value,
        oracle_value: report.best_value,
        gap,
        rel_gap: gap / scale,
        passed: gap / scale <= rel_tol,
    }
}

struct NodeData {
    incs: Vec<Increment>,
    basis: SubspaceBasis,
    beta: Option<f64>,
    /// Vertices of the admissible set at unit wealth, in basis coordinates.
    vertices: Option<Vec<Vec<f64>>>,
    /// Polytope lattice at unit wealth, filled in once the grid is known:
    /// positions and, per child, `<xi, dS>`.
    unit_xi: Vec<Vec<f64>>,
    unit_moves: Vec<Vec<f64>>,
}

/// Linear span of a node's increments; equals the affine hull when the
/// node is arbitrage-free.
fn span_basis(incs: &[Increment], d: usize) -> SubspaceBasis {
    let mut with_zero = incs.to_vec();
    with_zero.push(Increment {
        child: usize::MAX,
        prob: 0.0,
        delta: vec![0.0; d],
    });
    support_hull_basis(&with_zero).basis
}

fn node_data(tree: &ScenarioTree, na: Option<&TreeCertificate>) -> Result<Vec<Option<NodeData>>> {
    let cert = na.and_then(|c| c.certificate());
    (0..tree.len())
        .map(|i| {
            if tree.is_leaf(i) {
                return Ok(None);
            }
            let incs = tree.increments(i)?;
            let (basis, beta) = match cert.and_then(|c| c.node(i)) {
                Some(nc) => (nc.basis.clone(), Some(nc.beta)),
                None => (span_basis(&incs, tree.assets()), None),
            };
            let vertices = beta.map(|_| unit_vertices(&incs, &basis));
            Ok(Some(NodeData {
                incs,
                basis,
                beta,
                vertices,
                unit_xi: Vec::new(),
                unit_moves: Vec::new(),
            }))
        })
        .collect()
}

/// Vertices of `{z : <z, c_i> >= -1}` for the increments `c_i` in basis
/// coordinates; bounded when the node is arbitrage-free.
fn unit_vertices(incs: &[Increment], basis: &SubspaceBasis) -> Vec<Vec<f64>> {
    let k = basis.dim();
    if k == 0 {
        return vec![Vec::new()];
    }
    let coords: Vec<Vec<f64>> = incs.iter().map(|inc| basis.coords(&inc.delta)).collect();
    let m = coords.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    if m < k {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let a = nalgebra::DMatrix::from_fn(k, k, |r, c| coords[idx[r]][c]);
        if let Some(z) = a.lu().solve(&nalgebra::DVector::from_element(k, -1.0)) {
            let z: Vec<f64> = z.iter().cloned().collect();
            let scale = z.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            let feasible = z.iter().all(|v| v.is_finite())
                && coords.iter().all(|c| dot(c, &z) >= -1.0 - 1e-9 * scale);
            let fresh = out
                .iter()
                .all(|v| v.iter().zip(&z).any(|(a, b)| (a - b).abs() > 1e-9 * scale));
            if feasible && fresh {
                out.push(z);
            }
        }
        let Some(i) = (0..k).rev().find(|&i| idx[i] < m - k + i) else { break };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    out
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Non-negative integer vectors of length `m` summing to `n`, in
/// lexicographic order.
fn compositions(n: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, m - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Largest product of per-node sizes along a root-to-leaf path, and the
/// total number of leaf evaluations of the depth-first search.
fn search_size(tree: &ScenarioTree, per_node: impl Fn(NodeIdx) -> f64) -> (f64, f64) {
    let mut path = vec![1.0; tree.len()];
    let mut evals = vec![1.0; tree.len()];
    for t in (0..tree.horizon()).rev() {
        for i in tree.layer(t) {
            let ch = &tree.node(i).children;
            path[i] = per_node(i) * ch.iter().map(|&c| path[c]).fold(0.0, f64::max);
            evals[i] = per_node(i) * ch.iter().map(|&c| evals[c]).sum::<f64>();
        }
    }
    (path[tree.root()], evals[tree.root()])
}

struct Candidate {
    xi: Vec<f64>,
    payoffs: Vec<f64>,
    boundary: bool,
}

struct ValueSearch<'a> {
    leaves: Vec<Option<LeafUtility<'a>>>,
    nodes: Vec<Option<NodeData>>,
    children: Vec<Vec<NodeIdx>>,
    grid: OracleGrid,
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        == Some(Ordering::Less)
}

/// Best-then-lexicographic reduction over candidates in grid order.
fn better(v: f64, xi: &[f64], best_v: f64, best_xi: &[f64]) -> bool {
    let window = TIE_REL * best_v.abs().max(1.0);
    v > best_v + window || ((v - best_v).abs() <= window && lex_less(xi, best_xi))
}

impl ValueSearch<'_> {
    fn half_width(&self, nd: &NodeData, w: f64, radius: Radius) -> Result<f64> {
        match radius {
            Radius::Fixed(r) => Ok(r),
            Radius::Certified => nd
                .beta
                .map(|b| 1.05 * w.max(0.0) / b)
                .ok_or_else(|| Error::MissingCertificate("oracle radius needs beta".into())),
        }
    }

    fn candidates(&self, i: NodeIdx, w: f64) -> Result<Vec<Candidate>> {
        let nd = self.nodes[i].as_ref().expect("internal node");
        let k = nd.basis.dim();
        let d = nd.basis.ambient;
        let zero = || Candidate {
            xi: vec![0.0; d],
            payoffs: nd.incs.iter().map(|_| w).collect(),
            boundary: false,
        };
        let (points, radius) = match self.grid {
            OracleGrid::Box { points, radius } => (points, radius),
            OracleGrid::Polytope { .. } => {
                if k == 0 || w <= 0.0 {
                    return Ok(vec![zero()]);
                }
                let mut out = Vec::with_capacity(nd.unit_xi.len());
                for (xi, moves) in nd.unit_xi.iter().zip(&nd.unit_moves) {
                    let payoffs: Vec<f64> = moves.iter().map(|m| w + w * m).collect();
                    if payoffs.iter().all(|&p| p >= ADMISSIBLE) {
                        out.push(Candidate {
                            xi: xi.iter().map(|x| w * x).collect(),
                            payoffs,
                            boundary: false,
                        });
                    }
                }
                return Ok(out);
            }
        };
        let r = self.half_width(nd, w, radius)?;
        if k == 0 || r == 0.0 {
            return Ok(vec![zero()]);
        }
        let g = points;
        let axis: Vec<f64> = (0..g)
            .map(|s| if 2 * s + 1 == g { 0.0 } else { -r + 2.0 * r * s as f64 / (g - 1) as f64 })
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; k];
        loop {
            let z: Vec<f64> = idx.iter().map(|&s| axis[s]).collect();
            let xi = nd.basis.combine(&z);
            let payoffs: Vec<f64> = nd.incs.iter().map(|inc| w + dot(&xi, &inc.delta)).collect();
            if payoffs.iter().all(|&p| p >= ADMISSIBLE) {
                let boundary = idx.iter().any(|&s| s == 0 || s == g - 1);
                out.push(Candidate { xi, payoffs, boundary });
            }
            let mut j = k;
            loop {
                if j == 0 {
                    return Ok(out);
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < g {
                    break;
                }
                idx[j] = 0;
            }
        }
    }

    fn score(&self, i: NodeIdx, c: &Candidate) -> Result<f64> {
        let nd = self.nodes[i].as_ref().expect("internal node");
        let mut total = 0.0;
        for (inc, &p) in nd.incs.iter().zip(&c.payoffs) {
            total += inc.prob * self.value(inc.child, p)?;
        }
        Ok(total)
    }

    fn value(&self, i: NodeIdx, w: f64) -> Result<f64> {
        Ok(self.best(i, w)?.0)
    }

    fn best(&self, i: NodeIdx, w: f64) -> Result<(f64, Vec<f64>, bool)> {
        if let Some(leaf) = &self.leaves[i] {
            return Ok((leaf.value(w.max(0.0)), Vec::new(), false));
        }
        let nd = self.nodes[i].as_ref().expect("internal node");
        if matches!(self.grid, OracleGrid::Polytope { .. }) && w > 0.0 && !nd.unit_xi.is_empty() {
            // scan without materialising candidates; positions scale with w,
            // so the lexicographic order of unit positions is the same
            let mut best: Option<(f64, usize)> = None;
            'points: for (j, moves) in nd.unit_moves.iter().enumerate() {
                let mut v = 0.0;
                for (inc, m) in nd.incs.iter().zip(moves) {
                    let p = w + w * m;
                    if p < ADMISSIBLE {
                        continue 'points;
                    }
                    v += inc.prob * self.value(inc.child, p)?;
                }
                if best.is_none_or(|(bv, bj)| better(v, &nd.unit_xi[j], bv, &nd.unit_xi[bj])) {
                    best = Some((v, j));
                }
            }
            let (v, j) = best.ok_or_else(|| Error::Numerical(format!("no admissible grid point at node {i}")))?;
            return Ok((v, nd.unit_xi[j].iter().map(|x| w * x).collect(), false));
        }
        let mut best: Option<(f64, Vec<f64>, bool)> = None;
        for c in self.candidates(i, w)? {
            let v = self.score(i, &c)?;
            if best.as_ref().is_none_or(|(bv, bx, _)| better(v, &c.xi, *bv, bx)) {
                best = Some((v, c.xi, c.boundary));
            }
        }
        best.ok_or_else(|| Error::Numerical(format!("no admissible grid point at node {i}")))
    }

    fn best_root(&self, root: NodeIdx, x0: f64) -> Result<(f64, Vec<f64>, bool)> {
        let cands = self.candidates(root, x0)?;
        let scores: Vec<Result<f64>> = cands.par_iter().map(|c| self.score(root, c)).collect();
        let mut best: Option<(f64, Vec<f64>, bool)> = None;
        for (c, v) in cands.into_iter().zip(scores) {
            let v = v?;
            if best.as_ref().is_none_or(|(bv, bx, _)| better(v, &c.xi, *bv, bx)) {
                best = Some((v, c.xi, c.boundary));
            }
        }
        best.ok_or_else(|| Error::Numerical("no admissible grid point at the root".into()))
    }
}

/// Maximises the exact expected utility over all strategies whose position
/// at each node lies on the node's grid.
///
/// `na` is required for [`Radius::Certified`] and [`OracleGrid::Polytope`];
/// without it the span of the increments is gridded with a fixed radius.
pub fn brute_force_value(
    tree: &ScenarioTree,
    utility: &UtilityModel,
    na: Option<&TreeCertificate>,
    x0: f64,
    grid: OracleGrid,
) -> Result<OracleReport> {
    if !(x0 >= 0.0) {
        return Err(Error::InvalidInput(format!("initial wealth {x0} must be >= 0")));
    }
    let needs_cert = match grid {
        OracleGrid::Box { points: 0, .. } | OracleGrid::Polytope { divisions: 0 } => {
            return Err(Error::InvalidInput("oracle grid needs at least one point".into()));
        }
        OracleGrid::Box { radius, .. } => radius == Radius::Certified,
        OracleGrid::Polytope { .. } => true,
    };
    if needs_cert {
        match na {
            Some(TreeCertificate::Arbitrage(w)) => return Err(Error::Arbitrage { node: w.node.clone() }),
            None => return Err(Error::MissingCertificate("this oracle grid needs a certificate".into())),
            Some(_) => {}
        }
    }
    let grid = match grid {
        OracleGrid::Box { points, radius } => OracleGrid::Box {
            points: points | 1,
            radius,
        },
        g => g,
    };
    let mut nodes = node_data(tree, na)?;
    let (path, evaluations) = search_size(tree, |i| {
        let nd = nodes[i].as_ref().expect("internal node");
        match grid {
            OracleGrid::Box { points, .. } => (points as f64).powi(nd.basis.dim() as i32),
            OracleGrid::Polytope { divisions } => {
                let m = nd.vertices.as_ref().map_or(1, |v| v.len().max(1));
                binomial(divisions + m - 1, m - 1)
            }
        }
    });
    if path > SEARCH_CAP {
        return Err(Error::SearchTooLarge(path));
    }
    if let OracleGrid::Polytope { divisions } = grid {
        for nd in nodes.iter_mut().flatten() {
            let verts = nd.vertices.as_ref().expect("certified node");
            let k = nd.basis.dim();
            for a in compositions(divisions, verts.len()) {
                let mut z = vec![0.0; k];
                for (aj, v) in a.iter().zip(verts) {
                    let t = *aj as f64 / divisions as f64;
                    z.iter_mut().zip(v).for_each(|(zi, vi)| *zi += t * vi);
                }
                let xi = nd.basis.combine(&z);
                nd.unit_moves.push(nd.incs.iter().map(|inc| dot(&xi, &inc.delta)).collect());
                nd.unit_xi.push(xi);
            }
        }
    }
    let leaves = (0..tree.len())
        .map(|i| {
            if tree.is_leaf(i) {
                utility.at_node(&tree.node(i).id).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let search = ValueSearch {
        leaves,
        nodes,
        children: tree.nodes().iter().map(|n| n.children.clone()).collect(),
        grid,
    };

    let mut positions = vec![Vec::new(); tree.len()];
    let mut wealth = vec![0.0; tree.len()];
    wealth[tree.root()] = x0;
    let mut on_boundary = false;
    for i in tree.internal_nodes() {
        let (_, xi, boundary) = if i == tree.root() {
            search.best_root(i, x0)?
        } else {
            search.best(i, wealth[i])?
        };
        on_boundary |= boundary;
        for &c in &search.children[i] {
            let inc = search.nodes[i]
                .as_ref()
                .and_then(|n| n.incs.iter().find(|inc| inc.child == c))
                .expect("child increment");
            wealth[c] = wealth[i] + dot(&xi, &inc.delta);
        }
        positions[i] = xi;
    }
    let best_value = evaluate_strategy(tree, utility, x0, &positions)?;
    Ok(OracleReport {
        best_value,
        positions,
        grid,
        on_boundary,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSweep {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub on_boundary: Vec<bool>,
    /// The best point sat on the boundary for two consecutive doublings while
    /// the value kept growing.
    pub unbounded: bool,
}

/// Reruns the fixed-radius search with the radius doubled `doublings` times.
pub fn radius_sweep(
    tree: &ScenarioTree,
    utility: &UtilityModel,
    x0: f64,
    points: usize,
    r0: f64,
    doublings: usize,
) -> Result<RadiusSweep> {
    let mut sweep = RadiusSweep {
        radii: Vec::new(),
        values: Vec::new(),
        on_boundary: Vec::new(),
        unbounded: false,
    };
    for n in 0..=doublings {
        let r = r0 * 2f64.powi(n as i32);
        let grid = OracleGrid::Box {
            points,
            radius: Radius::Fixed(r),
        };
        let rep = brute_force_value(tree, utility, None, x0, grid)?;
        sweep.radii.push(r);
        sweep.values.push(rep.best_value);
        sweep.on_boundary.push(rep.on_boundary);
    }
    sweep.unbounded = (1..sweep.radii.len())
        .any(|n| sweep.on_boundary[n - 1] && sweep.on_boundary[n] && sweep.values[n] > sweep.values[n - 1]);
    Ok(sweep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Outcome {
    Infeasible,
    Flat,
    Gain,
}

/// Zero-cost strategy with non-negative terminal wealth that is strictly
/// positive on some leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageStrategy {
    pub positions: Vec<Vec<f64>>,
    /// Wealth at every node, starting from zero at the root.
    pub wealth: Vec<f64>,
}

struct LatticeSearch<'a> {
    tree: &'a ScenarioTree,
    incs: Vec<Vec<Increment>>,
    lattice: Vec<Vec<f64>>,
}

impl LatticeSearch<'_> {
    fn outcome(&self, i: NodeIdx, w: f64) -> Outcome {
        self.choose(i, w).0
    }

    fn choose(&self, i: NodeIdx, w: f64) -> (Outcome, Option<&[f64]>) {
        if self.tree.is_leaf(i) {
            let o = if w < ADMISSIBLE {
                Outcome::Infeasible
            } else if w > 1e-9 {
                Outcome::Gain
            } else {
                Outcome::Flat
            };
            return (o, None);
        }
        let mut best = (Outcome::Infeasible, None);
        for xi in &self.lattice {
            let mut o = Outcome::Flat;
            for inc in &self.incs[i] {
                match self.outcome(inc.child, w + dot(xi, &inc.delta)) {
                    Outcome::Infeasible => {
                        o = Outcome::Infeasible;
                        break;
                    }
                    Outcome::Gain => o = Outcome::Gain,
                    Outcome::Flat => {}
                }
            }
            if o > best.0 {
                best = (o, Some(xi.as_slice()));
                if o == Outcome::Gain {
                    break;
                }
            }
        }
        best
    }
}

/// Searches integer positions in `{-m..m}^d` at every node, starting from
/// zero wealth. Zero is tried first, then the lattice in lexicographic order.
pub fn find_arbitrage(tree: &ScenarioTree, m: usize) -> Result<Option<ArbitrageStrategy>> {
    let d = tree.assets();
    let side = 2 * m + 1;
    let (path, _) = search_size(tree, |_| (side as f64).powi(d as i32));
    if path > SEARCH_CAP {
        return Err(Error::SearchTooLarge(path));
    }
    let mut lattice = vec![vec![0.0; d]];
    let mut idx = vec![0usize; d];
    'outer: loop {
        let xi: Vec<f64> = idx.iter().map(|&s| s as f64 - m as f64).collect();
        if xi.iter().any(|&x| x != 0.0) {
            lattice.push(xi);
        }
        let mut j = d;
        loop {
            if j == 0 {
                break 'outer;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < side {
                break;
            }
            idx[j] = 0;
        }
    }
    let incs = (0..tree.len())
        .map(|i| if tree.is_leaf(i) { Ok(Vec::new()) } else { tree.increments(i) })
        .collect::<Result<Vec<_>>>()?;
    let search = LatticeSearch { tree, incs, lattice };
    if search.choose(tree.root(), 0.0).0 != Outcome::Gain {
        return Ok(None);
    }
    let mut positions = vec![Vec::new(); tree.len()];
    let mut wealth = vec![0.0; tree.len()];
    for i in tree.internal_nodes() {
        let xi = search.choose(i, wealth[i]).1.expect("feasible node").to_vec();
        for inc in &search.incs[i] {
            wealth[inc.child] = wealth[i] + dot(&xi, &inc.delta);
        }
        positions[i] = xi;
    }
    Ok(Some(ArbitrageStrategy { positions, wealth }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::certify_tree;
    use crate::fixtures;

    fn boxed(points: usize) -> OracleGrid {
        OracleGrid::Box {
            points,
            radius: Radius::Certified,
        }
    }

    #[test]
    fn b1_sqrt_grid() {
        let tree = fixtures::b1();
        let na = certify_tree(&tree);
        let rep = brute_force_value(&tree, &fixtures::sqrt_utility(), Some(&na), 1.0, boxed(2001)).unwrap();
        assert!((rep.best_value - 0.75 * 2f64.sqrt()).abs() < 1e-5);
        assert!((rep.positions[0][0] - 1.0).abs() < 5e-3);
        assert!(!rep.on_boundary);
    }

    #[test]
    fn b1_ramp_smallest_maximiser() {
        let tree = fixtures::b1();
        let na = certify_tree(&tree);
        // radius 1.05 * 2 = 2.1 on 43 points puts 1.0 on the grid
        let rep = brute_force_value(&tree, &fixtures::ramp_utility(), Some(&na), 1.0, boxed(43)).unwrap();
        assert_eq!(rep.best_value, 0.5);
        assert!((rep.positions[0][0] - 1.0).abs() < 1e-12, "{:?}", rep.positions);
    }

    #[test]
    fn arbitrage_is_unbounded() {
        let tree = fixtures::arb();
        let sweep = radius_sweep(&tree, &fixtures::sqrt_utility(), 1.0, 21, 1.0, 3).unwrap();
        assert!(sweep.unbounded, "{sweep:?}");
        assert!(sweep.values.windows(2).all(|w| w[1] > w[0]));

        let na = certify_tree(&tree);
        assert!(brute_force_value(&tree, &fixtures::sqrt_utility(), Some(&na), 1.0, boxed(21)).is_err());
    }

    #[test]
    fn refinement_never_hurts() {
        let tree = fixtures::b2();
        let na = certify_tree(&tree);
        let u = fixtures::sqrt_utility();
        let coarse = brute_force_value(&tree, &u, Some(&na), 1.0, boxed(21)).unwrap();
        let fine = brute_force_value(&tree, &u, Some(&na), 1.0, boxed(41)).unwrap();
        assert!(fine.best_value >= coarse.best_value);
        assert!(fine.best_value <= 1.125 + 1e-12);
    }

    #[test]
    fn lattice_arbitrage() {
        let w = find_arbitrage(&fixtures::arb(), 2).unwrap().unwrap();
        assert_eq!(w.positions[0], vec![1.0]);
        assert!(w.wealth[1..].iter().all(|&x| x > 0.0));
        assert!(find_arbitrage(&fixtures::b1(), 2).unwrap().is_none());
        assert!(find_arbitrage(&fixtures::b2(), 2).unwrap().is_none());
        assert!(find_arbitrage(&fixtures::deg(), 2).unwrap().is_none());
    }

    #[test]
    fn caps_search() {
        let tree = fixtures::b2();
        let na = certify_tree(&tree);
        let err = brute_force_value(&tree, &fixtures::sqrt_utility(), Some(&na), 1.0, boxed(5001)).unwrap_err();
        assert!(matches!(err, Error::SearchTooLarge(_)));
    }

    #[test]
    fn polytope_vertices_and_grid() {
        let tree = fixtures::b1();
        let incs = tree.increments(0).unwrap();
        let na = certify_tree(&tree);
        let basis = &na.certificate().unwrap().node(0).unwrap().basis;
        let v = unit_vertices(&incs, basis);
        assert_eq!(v.len(), 2);
        assert!((v[0][0] + 1.0).abs() < 1e-12 && (v[1][0] - 2.0).abs() < 1e-12, "{v:?}");

        // thirds of [-1, 2] contain the optimum 1 exactly
        let rep = brute_force_value(&tree, &fixtures::sqrt_utility(), Some(&na), 1.0, OracleGrid::Polytope { divisions: 3 }).unwrap();
        assert!((rep.positions[0][0] - 1.0).abs() < 1e-12);
        assert!((rep.best_value - 0.75 * 2f64.sqrt()).abs() < 1e-12);
        assert!(!rep.on_boundary);

        assert_eq!(compositions(2, 3).len(), 6);
        assert_eq!(binomial(4, 2), 6.0);
        assert!(brute_force_value(&tree, &fixtures::sqrt_utility(), None, 1.0, OracleGrid::Polytope { divisions: 3 }).is_err());
    }

    #[test]
    fn polytope_vertices_empty_a_child_each() {
        let spec = r#"{"assets": 2, "horizon": 1, "nodes": [
            {"id": "r", "parent": null, "prob": 1, "price": [1, 1]},
            {"id": "a", "parent": "r", "prob": 0.4, "price": [1.5, 1.1]},
            {"id": "b", "parent": "r", "prob": 0.3, "price": [0.7, 1.3]},
            {"id": "c", "parent": "r", "prob": 0.3, "price": [1.0, 0.6]}]}"#;
        let tree = crate::market::load_tree(spec).unwrap();
        let incs = tree.increments(0).unwrap();
        let na = certify_tree(&tree);
        let basis = &na.certificate().unwrap().node(0).unwrap().basis;
        let v = unit_vertices(&incs, basis);
        assert_eq!(v.len(), 3);
        for z in &v {
            let xi = basis.combine(z);
            let zeros = incs.iter().filter(|inc| (1.0 + dot(&xi, &inc.delta)).abs() < 1e-12).count();
            assert_eq!(zeros, 2);
        }
    }
}
