//! Finite scenario trees: prices on nodes, conditional laws on child sets,
//! and the geometry of the conditional supports of the price increments.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arbitrage::NaCertificate;
use crate::error::{Error, Result};

/// Index of a node inside [`ScenarioTree::nodes`].
pub type NodeIdx = usize;

const PROB_SUM_TOL: f64 = 1e-12;
const RANK_REL_TOL: f64 = 1e-9;
const LINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: String,
    pub time: usize,
    pub parent: Option<NodeIdx>,
    pub price: Vec<f64>,
    /// Probability of this node given its parent (1 for the root).
    pub cond_prob: f64,
    pub children: Vec<NodeIdx>,
}

/// A validated, non-recombining event tree.
///
/// Nodes are stored sorted by `(time, id)`, so iteration over `nodes` is
/// breadth-first with ties broken by id.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    assets: usize,
    horizon: usize,
    nodes: Vec<TreeNode>,
    index: HashMap<String, NodeIdx>,
}

/// One branch out of an internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub child: NodeIdx,
    pub prob: f64,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub assets: usize,
    pub horizon: usize,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub parent: Option<String>,
    pub prob: f64,
    pub price: Vec<f64>,
}

impl ScenarioTree {
    pub fn from_spec(spec: &TreeSpec) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidTree(msg));
        if spec.assets == 0 {
            return invalid("asset count must be positive".into());
        }
        if spec.horizon == 0 {
            return invalid("horizon must be positive".into());
        }
        if spec.nodes.is_empty() {
            return invalid("tree has no nodes".into());
        }

        let mut raw_index = HashMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if n.id.is_empty() {
                return invalid("empty node id".into());
            }
            if raw_index.insert(n.id.as_str(), i).is_some() {
                return invalid(format!("duplicate node id `{}`", n.id));
            }
            if n.price.len() != spec.assets {
                return invalid(format!(
                    "node `{}` has {} prices, expected {}",
                    n.id,
                    n.price.len(),
                    spec.assets
                ));
            }
            if n.price.iter().any(|p| !p.is_finite()) {
                return invalid(format!("node `{}` has a non-finite price", n.id));
            }
            if !n.prob.is_finite() {
                return invalid(format!("node `{}` has a non-finite probability", n.id));
            }
        }

        let roots: Vec<usize> = (0..spec.nodes.len())
            .filter(|&i| spec.nodes[i].parent.is_none())
            .collect();
        if roots.len() != 1 {
            return invalid(format!("expected exactly one root, found {}", roots.len()));
        }
        let root = roots[0];
        if (spec.nodes[root].prob - 1.0).abs() > PROB_SUM_TOL {
            return invalid("root probability must be 1".into());
        }

        let mut raw_children: Vec<Vec<usize>> = vec![Vec::new(); spec.nodes.len()];
        for (i, n) in spec.nodes.iter().enumerate() {
            if let Some(p) = &n.parent {
                let Some(&pi) = raw_index.get(p.as_str()) else {
                    return invalid(format!("node `{}` references unknown parent `{p}`", n.id));
                };
                raw_children[pi].push(i);
            }
        }

        // times by BFS from the root; unreachable nodes mean a cycle
        let mut time = vec![usize::MAX; spec.nodes.len()];
        time[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &c in &raw_children[i] {
                time[c] = time[i] + 1;
                queue.push_back(c);
            }
        }
        if let Some(i) = time.iter().position(|&t| t == usize::MAX) {
            return invalid(format!("node `{}` is not reachable from the root", spec.nodes[i].id));
        }

        for (i, n) in spec.nodes.iter().enumerate() {
            let t = time[i];
            if t > spec.horizon {
                return invalid(format!("node `{}` lies beyond the horizon", n.id));
            }
            let leaf = raw_children[i].is_empty();
            if leaf && t != spec.horizon {
                return invalid(format!("leaf `{}` at time {t}, expected {}", n.id, spec.horizon));
            }
            if !leaf {
                let mut sum = 0.0;
                for &c in &raw_children[i] {
                    let p = spec.nodes[c].prob;
                    if p <= 0.0 || p > 1.0 + PROB_SUM_TOL {
                        return invalid(format!(
                            "node `{}` has conditional probability {p} outside (0, 1]",
                            spec.nodes[c].id
                        ));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return invalid(format!(
                        "children of `{}` have probabilities summing to {sum}",
                        n.id
                    ));
                }
            }
        }

        // reorder by (time, id)
        let mut order: Vec<usize> = (0..spec.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            time[a]
                .cmp(&time[b])
                .then_with(|| spec.nodes[a].id.cmp(&spec.nodes[b].id))
        });
        let mut new_of_old = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_of_old[old] = new;
        }

        let mut nodes: Vec<TreeNode> = order
            .iter()
            .map(|&old| {
                let n = &spec.nodes[old];
                TreeNode {
                    id: n.id.clone(),
                    time: time[old],
                    parent: n.parent.as_ref().map(|p| new_of_old[raw_index[p.as_str()]]),
                    price: n.price.clone(),
                    cond_prob: if old == root { 1.0 } else { n.prob },
                    children: Vec::new(),
                }
            })
            .collect();
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p].children.push(i);
            }
        }
        // exact renormalisation of each child law
        for i in 0..nodes.len() {
            let children = nodes[i].children.clone();
            if children.is_empty() {
                continue;
            }
            let sum: f64 = children.iter().map(|&c| nodes[c].cond_prob).sum();
            for &c in &children {
                nodes[c].cond_prob /= sum;
            }
        }

        let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Ok(Self {
            assets: spec.assets,
            horizon: spec.horizon,
            nodes,
            index,
        })
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            assets: self.assets,
            horizon: self.horizon,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.clone(),
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    prob: n.cond_prob,
                    price: n.price.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("tree spec serializes")
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, idx: NodeIdx) -> &TreeNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeIdx {
        0
    }

    pub fn find(&self, id: &str) -> Option<NodeIdx> {
        self.index.get(id).copied()
    }

    pub fn is_leaf(&self, idx: NodeIdx) -> bool {
        self.nodes[idx].children.is_empty()
    }

    /// Internal nodes in breadth-first, id-ordered sequence.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.is_leaf(i))
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i))
    }

    pub fn leaf_ids(&self) -> Vec<String> {
        self.leaves().map(|i| self.nodes[i].id.clone()).collect()
    }

    /// Nodes at time `t`, sorted by id.
    pub fn layer(&self, t: usize) -> Vec<NodeIdx> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].time == t).collect()
    }

    /// Product of conditional probabilities along the path from the root.
    pub fn unconditional_prob(&self, idx: NodeIdx) -> f64 {
        let mut p = 1.0;
        let mut cur = Some(idx);
        while let Some(i) = cur {
            p *= self.nodes[i].cond_prob;
            cur = self.nodes[i].parent;
        }
        p
    }

    /// Price increments from `node` to each of its children.
    pub fn increments(&self, node: NodeIdx) -> Result<Vec<Increment>> {
        let n = &self.nodes[node];
        if n.children.is_empty() {
            return Err(Error::InvalidInput(format!(
                "node `{}` is a leaf and has no increments",
                n.id
            )));
        }
        Ok(n.children
            .iter()
            .map(|&c| Increment {
                child: c,
                prob: self.nodes[c].cond_prob,
                delta: self.nodes[c]
                    .price
                    .iter()
                    .zip(&n.price)
                    .map(|(a, b)| a - b)
                    .collect(),
            })
            .collect())
    }
}

pub fn load_tree(text: &str) -> Result<ScenarioTree> {
    let spec: TreeSpec = serde_json::from_str(text)?;
    ScenarioTree::from_spec(&spec)
}

/// Orthonormal basis of a linear subspace of R^d. An empty basis is `{0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    pub ambient: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl SubspaceBasis {
    pub fn trivial(ambient: usize) -> Self {
        Self {
            ambient,
            vectors: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Coordinates of `v` in this basis.
    pub fn coords(&self, v: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|b| dot(b, v)).collect()
    }

    /// The vector with coordinates `z` in this basis.
    pub fn combine(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient];
        for (b, &zj) in self.vectors.iter().zip(z) {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += zj * bi;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullBasis {
    pub basis: SubspaceBasis,
    /// Whether the affine hull passes through the origin.
    pub is_linear: bool,
    /// Distance from the origin to the affine hull.
    pub offset: Vec<f64>,
}

/// Direction space of the affine hull of the increment vectors.
///
/// The returned basis is canonical for the subspace (Gram-Schmidt on the
/// columns of its orthogonal projector), so it does not depend on the order
/// of the increments or on duplicated support points.
pub fn support_hull_basis(incs: &[Increment]) -> HullBasis {
    let d = incs.first().map_or(0, |i| i.delta.len());
    let scale = incs.iter().map(|i| norm(&i.delta)).fold(0.0, f64::max);
    if incs.len() < 2 || scale == 0.0 {
        let p0 = incs.first().map(|i| i.delta.clone()).unwrap_or_else(|| vec![0.0; d]);
        let linear = norm(&p0) <= LINEAR_TOL * scale.max(1.0);
        return HullBasis {
            basis: SubspaceBasis::trivial(d),
            is_linear: linear,
            offset: p0,
        };
    }

    let anchor = &incs[0].delta;
    let m = incs.len() - 1;
    let diffs = DMatrix::from_fn(d, m, |r, c| incs[c + 1].delta[r] - anchor[r]);
    let svd = diffs.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut spanning = Vec::new();
    if smax > 1e-14 * scale {
        for (j, &s) in svd.singular_values.iter().enumerate() {
            if s > RANK_REL_TOL * smax {
                spanning.push(u.column(j).into_owned());
            }
        }
    }

    let basis = canonical_basis(d, &spanning);
    let p0 = anchor.clone();
    let proj = project(&p0, &basis);
    let offset: Vec<f64> = p0.iter().zip(&proj).map(|(a, b)| a - b).collect();
    let is_linear = norm(&offset) <= LINEAR_TOL * scale.max(1.0);
    HullBasis {
        basis,
        is_linear,
        offset,
    }
}

fn canonical_basis(d: usize, spanning: &[DVector<f64>]) -> SubspaceBasis {
    let k = spanning.len();
    if k == 0 {
        return SubspaceBasis::trivial(d);
    }
    let mut projector = DMatrix::<f64>::zeros(d, d);
    for v in spanning {
        projector += v * v.transpose();
    }
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    // pick columns greedily by residual size to keep Gram-Schmidt stable
    let mut remaining: Vec<DVector<f64>> = (0..d).map(|j| projector.column(j).into_owned()).collect();
    while out.len() < k {
        let mut best = None;
        let mut best_norm = 0.0;
        for (j, col) in remaining.iter().enumerate() {
            let mut r = col.clone();
            for q in &out {
                r -= q * q.dot(&r);
            }
            let n = r.norm();
            // prefer the lowest column index among near-equal residuals
            if n > best_norm * (1.0 + 1e-9) {
                best_norm = n;
                best = Some((j, r));
            }
        }
        let Some((j, r)) = best else { break };
        if best_norm < 1e-12 {
            break;
        }
        let mut q = r / best_norm;
        if let Some(first) = q.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                q = -q;
            }
        }
        out.push(q);
        remaining[j] = DVector::zeros(d);
    }
    out.sort_by(|a, b| lex_cmp(b.as_slice(), a.as_slice()));
    SubspaceBasis {
        ambient: d,
        vectors: out.into_iter().map(|v| v.as_slice().to_vec()).collect(),
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Orthogonal projection of `v` onto the span of `basis`.
pub fn project(v: &[f64], basis: &SubspaceBasis) -> Vec<f64> {
    basis.combine(&basis.coords(v))
}

/// Largest wealth reachable at each node from `x0` under the one-step
/// bound `|xi| <= x / beta`.
pub fn wealth_bounds(tree: &ScenarioTree, x0: f64, cert: &NaCertificate) -> Result<Vec<f64>> {
    if !(x0 >= 0.0) || !x0.is_finite() {
        return Err(Error::InvalidInput(format!("initial wealth {x0} must be finite and >= 0")));
    }
    let mut w = vec![0.0; tree.len()];
    w[tree.root()] = x0;
    for idx in tree.internal_nodes() {
        let c = cert
            .node(idx)
            .ok_or_else(|| Error::MissingCertificate(tree.node(idx).id.clone()))?;
        let incs = tree.increments(idx)?;
        let max_inc = incs.iter().map(|i| norm(&i.delta)).fold(0.0, f64::max);
        let growth = 1.0 + max_inc / c.beta;
        for inc in &incs {
            w[inc.child] = w[idx] * growth;
        }
    }
    Ok(w)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
