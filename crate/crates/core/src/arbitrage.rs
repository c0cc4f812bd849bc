//! Node-wise no-arbitrage certificates.
//!
//! At a node the market is free of arbitrage iff the origin lies in the
//! relative interior of the convex hull of the price increments. When it
//! does, the radius `beta` of the largest ball (inside the support's linear
//! hull `D`) centred at the origin and contained in that hull, together with
//! the smallest child probability `kappa`, gives the quantitative bound
//! `P(<xi, dS> <= -beta |xi| | node) >= kappa` for every `xi` in `D`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{dot, norm, support_hull_basis, Increment, NodeIdx, ScenarioTree, SubspaceBasis};

const NA_REL_TOL: f64 = 1e-9;
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCertificate {
    pub basis: SubspaceBasis,
    pub beta: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageWitness {
    pub node: String,
    /// Unit vector with `<direction, dS_i> >= 0` for every child and `> 0`
    /// for at least one.
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeVerdict {
    Certified(NodeCertificate),
    Arbitrage { direction: Vec<f64> },
}

/// Certificates for every internal node of a tree, indexed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct NaCertificate {
    nodes: Vec<Option<NodeCertificate>>,
}

impl NaCertificate {
    pub fn new(nodes: Vec<Option<NodeCertificate>>) -> Self {
        Self { nodes }
    }

    pub fn node(&self, idx: NodeIdx) -> Option<&NodeCertificate> {
        self.nodes.get(idx).and_then(|c| c.as_ref())
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeIdx, &NodeCertificate)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeCertificate {
    NoArbitrage(NaCertificate),
    Arbitrage(ArbitrageWitness),
}

impl TreeCertificate {
    pub fn certificate(&self) -> Option<&NaCertificate> {
        match self {
            TreeCertificate::NoArbitrage(c) => Some(c),
            TreeCertificate::Arbitrage(_) => None,
        }
    }

    pub fn witness(&self) -> Option<&ArbitrageWitness> {
        match self {
            TreeCertificate::NoArbitrage(_) => None,
            TreeCertificate::Arbitrage(w) => Some(w),
        }
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> serde_json::Value {
        match self {
            TreeCertificate::NoArbitrage(c) => {
                let nodes: BTreeMap<String, serde_json::Value> = c
                    .entries()
                    .map(|(i, nc)| {
                        (
                            tree.node(i).id.clone(),
                            serde_json::json!({
                                "beta": nc.beta,
                                "kappa": nc.kappa,
                                "dim": nc.basis.dim(),
                                "basis": nc.basis.vectors,
                            }),
                        )
                    })
                    .collect();
                serde_json::json!({ "nodes": nodes })
            }
            TreeCertificate::Arbitrage(w) => serde_json::json!({
                "witness": { "node": w.node, "direction": w.direction }
            }),
        }
    }
}

/// A supporting hyperplane `{z : <normal, z> = offset}` of a point cloud,
/// with every point satisfying `<normal, z> <= offset`.
#[derive(Debug, Clone)]
pub(crate) struct Facet {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Facets of the convex hull of `points` in R^k (k >= 1), assuming the hull
/// is full-dimensional. Brute force over k-subsets; fine for the small child
/// counts of scenario trees.
pub(crate) fn hull_facets(points: &[Vec<f64>], scale: f64) -> Vec<Facet> {
    let k = points[0].len();
    let pts = dedup_points(points, scale);
    let eps = 1e-10 * scale.max(1e-300);
    if k == 1 {
        let max = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return vec![
            Facet {
                normal: vec![1.0],
                offset: max,
            },
            Facet {
                normal: vec![-1.0],
                offset: -min,
            },
        ];
    }
    let mut facets: Vec<Facet> = Vec::new();
    let n = pts.len();
    let mut idx: Vec<usize> = (0..k).collect();
    if n < k {
        return facets;
    }
    loop {
        if let Some(normal) = hyperplane_normal(&pts, &idx) {
            let offset = dot(&normal, &pts[idx[0]]);
            let mut above = false;
            let mut below = false;
            for p in &pts {
                let s = dot(&normal, p) - offset;
                if s > eps {
                    above = true;
                }
                if s < -eps {
                    below = true;
                }
            }
            let candidate = match (above, below) {
                (false, true) => Some(Facet { normal, offset }),
                (true, false) => Some(Facet {
                    normal: normal.iter().map(|x| -x).collect(),
                    offset: -offset,
                }),
                _ => None,
            };
            if let Some(f) = candidate {
                let dup = facets.iter().any(|g| {
                    g.normal.iter().zip(&f.normal).all(|(a, b)| (a - b).abs() < 1e-9)
                        && (g.offset - f.offset).abs() < eps.max(1e-12)
                });
                if !dup {
                    facets.push(f);
                }
            }
        }
        // next k-combination
        let mut i = k;
        loop {
            if i == 0 {
                return facets;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn dedup_points(points: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !out
            .iter()
            .any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() <= 1e-12 * scale.max(1.0)))
        {
            out.push(p.clone());
        }
    }
    out
}

/// Unit normal of the affine hyperplane through the selected points, if they
/// are affinely independent.
fn hyperplane_normal(pts: &[Vec<f64>], idx: &[usize]) -> Option<Vec<f64>> {
    let k = pts[0].len();
    let base = &pts[idx[0]];
    let m = DMatrix::from_fn(k - 1, k, |r, c| pts[idx[r + 1]][c] - base[c]);
    let gram = m.transpose() * &m;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[k - 1]].max(0.0);
    if largest == 0.0 {
        return None;
    }
    // rank k-1 required: second-smallest eigenvalue well above zero
    if k >= 2 && eig.eigenvalues[order[1]] <= 1e-18 * largest.max(1.0) {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]);
    let n = v.norm();
    Some(v.iter().map(|x| x / n).collect())
}

/// Decides no-arbitrage at one node and returns either the canonical
/// `(beta, kappa)` certificate or a witness direction.
pub fn certify_node(incs: &[Increment]) -> NodeVerdict {
    let hull = support_hull_basis(incs);
    let basis = hull.basis;
    let scale = incs.iter().map(|i| norm(&i.delta)).fold(0.0, f64::max);
    let tol = NA_REL_TOL * scale;

    if !hull.is_linear {
        // every increment has the same positive component along the offset
        let n = norm(&hull.offset);
        return NodeVerdict::Arbitrage {
            direction: hull.offset.iter().map(|x| x / n).collect(),
        };
    }
    if basis.dim() == 0 {
        return NodeVerdict::Certified(NodeCertificate {
            basis,
            beta: 1.0,
            kappa: 1.0,
        });
    }

    let kappa = incs.iter().map(|i| i.prob).fold(f64::INFINITY, f64::min);
    let coords: Vec<Vec<f64>> = incs.iter().map(|i| basis.coords(&i.delta)).collect();
    let facets = hull_facets(&coords, scale);
    let Some(worst) = facets.iter().min_by(|a, b| a.offset.total_cmp(&b.offset)) else {
        return NodeVerdict::Certified(NodeCertificate {
            basis,
            beta: 1.0,
            kappa: 1.0,
        });
    };
    if worst.offset > tol {
        NodeVerdict::Certified(NodeCertificate {
            basis,
            beta: worst.offset,
            kappa,
        })
    } else {
        let z: Vec<f64> = worst.normal.iter().map(|x| -x).collect();
        NodeVerdict::Arbitrage {
            direction: basis.combine(&z),
        }
    }
}

/// Certifies every internal node, stopping at the first (breadth-first,
/// id-ordered) witness.
pub fn certify_tree(tree: &ScenarioTree) -> TreeCertificate {
    let internal: Vec<NodeIdx> = tree.internal_nodes().collect();
    let verdicts: Vec<(NodeIdx, NodeVerdict)> = internal
        .par_iter()
        .map(|&i| {
            let incs = tree.increments(i).expect("internal node has increments");
            (i, certify_node(&incs))
        })
        .collect();
    let mut nodes = vec![None; tree.len()];
    for (i, v) in verdicts {
        match v {
            NodeVerdict::Certified(c) => nodes[i] = Some(c),
            NodeVerdict::Arbitrage { direction } => {
                return TreeCertificate::Arbitrage(ArbitrageWitness {
                    node: tree.node(i).id.clone(),
                    direction,
                })
            }
        }
    }
    TreeCertificate::NoArbitrage(NaCertificate::new(nodes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub passed: bool,
    pub directions_checked: usize,
    /// Minimum over directions of (qualifying mass - kappa).
    pub worst_mass_margin: f64,
    /// Minimum over directions of (max_i -<u, dS_i>) - beta.
    pub worst_beta_margin: f64,
    pub first_failure: Option<Vec<f64>>,
}

/// Checks the certificate inequality on unit directions of `D`: both signs
/// of the basis vector in dimension one, otherwise `n_dirs` seeded uniform
/// samples plus the facet normals of the increment hull when `dim <= 3`.
pub fn verify_certificate(
    incs: &[Increment],
    cert: &NodeCertificate,
    n_dirs: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let d = incs.first().map_or(0, |i| i.delta.len());
    if cert.basis.ambient != d || cert.basis.vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidInput(format!(
            "certificate lives in R^{} but increments in R^{d}",
            cert.basis.ambient
        )));
    }
    let hull = support_hull_basis(incs);
    if hull.basis.dim() != cert.basis.dim() {
        return Err(Error::InvalidInput(format!(
            "certificate has dim {} but the support spans dim {}",
            cert.basis.dim(),
            hull.basis.dim()
        )));
    }
    let k = cert.basis.dim();
    let scale = incs.iter().map(|i| norm(&i.delta)).fold(0.0, f64::max);
    let coords: Vec<Vec<f64>> = incs.iter().map(|i| cert.basis.coords(&i.delta)).collect();

    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if k == 1 {
        dirs.push(vec![1.0]);
        dirs.push(vec![-1.0]);
    } else if k > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dirs.extend((0..n_dirs).map(|_| random_unit(&mut rng, k)));
        if k <= 3 {
            for f in hull_facets(&coords, scale) {
                dirs.push(f.normal.iter().map(|x| -x).collect());
                dirs.push(f.normal.clone());
            }
        }
    }

    let slack = 1e-12 * scale.max(1.0);
    let mut report = VerificationReport {
        passed: true,
        directions_checked: dirs.len(),
        worst_mass_margin: f64::INFINITY,
        worst_beta_margin: f64::INFINITY,
        first_failure: None,
    };
    for u in &dirs {
        let mut mass = 0.0;
        let mut reach = f64::NEG_INFINITY;
        for (z, inc) in coords.iter().zip(incs) {
            let s = dot(u, z);
            if s <= -cert.beta + slack {
                mass += inc.prob;
            }
            reach = reach.max(-s);
        }
        report.worst_mass_margin = report.worst_mass_margin.min(mass - cert.kappa);
        report.worst_beta_margin = report.worst_beta_margin.min(reach - cert.beta);
        if mass < cert.kappa - MASS_TOL && report.first_failure.is_none() {
            report.passed = false;
            report.first_failure = Some(cert.basis.combine(u));
        }
    }
    Ok(report)
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    loop {
        // Box-Muller normals give a rotation-invariant direction
        let v: Vec<f64> = (0..k)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn incs(points: &[(&[f64], f64)]) -> Vec<Increment> {
        points
            .iter()
            .enumerate()
            .map(|(i, (p, pr))| Increment {
                child: i,
                prob: *pr,
                delta: p.to_vec(),
            })
            .collect()
    }

    #[test]
    fn binomial_root_certificate() {
        let b1 = fixtures::b1();
        let NodeVerdict::Certified(c) = certify_node(&b1.increments(0).unwrap()) else {
            panic!("B1 is arbitrage-free");
        };
        assert_eq!(c.beta, 0.5);
        assert_eq!(c.kappa, 0.5);
    }

    #[test]
    fn all_positive_increments_are_arbitrage() {
        let arb = fixtures::arb();
        match certify_node(&arb.increments(0).unwrap()) {
            NodeVerdict::Arbitrage { direction } => assert_eq!(direction, vec![1.0]),
            other => panic!("expected witness, got {other:?}"),
        }
        let TreeCertificate::Arbitrage(w) = certify_tree(&arb) else {
            panic!()
        };
        assert_eq!(w.node, "root");
    }

    #[test]
    fn degenerate_node_gets_vacuous_certificate() {
        let deg = fixtures::deg();
        let NodeVerdict::Certified(c) = certify_node(&deg.increments(0).unwrap()) else {
            panic!()
        };
        assert_eq!((c.basis.dim(), c.beta, c.kappa), (0, 1.0, 1.0));
        let r = verify_certificate(&deg.increments(0).unwrap(), &c, 10, 1).unwrap();
        assert!(r.passed);
        assert_eq!(r.directions_checked, 0);
    }

    #[test]
    fn two_period_certificates() {
        let b2 = fixtures::b2();
        let TreeCertificate::NoArbitrage(c) = certify_tree(&b2) else {
            panic!()
        };
        assert_eq!(c.node(b2.find("root").unwrap()).unwrap().beta, 0.5);
        assert_eq!(c.node(b2.find("u").unwrap()).unwrap().beta, 1.0);
        assert_eq!(c.node(b2.find("d").unwrap()).unwrap().beta, 0.25);
        assert_eq!(c.entries().count(), 3);
    }

    #[test]
    fn verification_passes_and_catches_tampering() {
        let b1 = fixtures::b1();
        let incs = b1.increments(0).unwrap();
        let NodeVerdict::Certified(c) = certify_node(&incs) else {
            panic!()
        };
        let r = verify_certificate(&incs, &c, 2, 0).unwrap();
        assert!(r.passed);
        assert_eq!(r.worst_mass_margin, 0.0);

        let tampered = NodeCertificate { beta: 1.1, ..c };
        let r = verify_certificate(&incs, &tampered, 2, 0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.first_failure, Some(vec![1.0]));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let b1 = fixtures::b1();
        let c = NodeCertificate {
            basis: SubspaceBasis::trivial(1),
            beta: 1.0,
            kappa: 1.0,
        };
        assert!(verify_certificate(&b1.increments(0).unwrap(), &c, 4, 0).is_err());
    }

    #[test]
    fn triangle_inradius_in_the_plane() {
        // origin-centred square: inradius 1
        let sq = incs(&[
            (&[1.0, 1.0], 0.25),
            (&[1.0, -1.0], 0.25),
            (&[-1.0, 1.0], 0.25),
            (&[-1.0, -1.0], 0.25),
        ]);
        let NodeVerdict::Certified(c) = certify_node(&sq) else {
            panic!()
        };
        assert!((c.beta - 1.0).abs() < 1e-12);
        assert!(verify_certificate(&sq, &c, 500, 3).unwrap().passed);

        // origin on an edge: weak arbitrage orthogonal to that edge
        let edge = incs(&[(&[1.0, 0.0], 0.3), (&[-1.0, 0.0], 0.3), (&[0.0, 1.0], 0.4)]);
        let NodeVerdict::Arbitrage { direction } = certify_node(&edge) else {
            panic!()
        };
        assert!(direction[0].abs() < 1e-12 && (direction[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_support_off_origin_is_arbitrage() {
        let v = incs(&[(&[1.0, 0.0], 0.5), (&[0.0, 1.0], 0.5)]);
        let NodeVerdict::Arbitrage { direction } = certify_node(&v) else {
            panic!()
        };
        for p in [[1.0, 0.0], [0.0, 1.0]] {
            assert!(dot(&direction, &p) > 0.0);
        }
    }

    #[test]
    fn three_dimensional_simplex() {
        let pts = incs(&[
            (&[1.0, 0.0, 0.0], 0.25),
            (&[0.0, 1.0, 0.0], 0.25),
            (&[0.0, 0.0, 1.0], 0.25),
            (&[-1.0, -1.0, -1.0], 0.25),
        ]);
        let NodeVerdict::Certified(c) = certify_node(&pts) else {
            panic!()
        };
        // facets through (-1,-1,-1) and two unit vectors have normals
        // (1,1,-3)/sqrt(11) up to permutation; x+y+z=1 is farther out
        let expected = 1.0 / 11f64.sqrt();
        assert!((c.beta - expected).abs() < 1e-12, "beta = {}", c.beta);
        assert!(verify_certificate(&pts, &c, 2000, 9).unwrap().passed);
    }
}
