//! Random utilities `u(x, leaf) = core(x - B(leaf))` and their growth
//! certificates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GROWTH_SLACK: f64 = 1e-9;
const CONTINUITY_TOL: f64 = 1e-9;

fn one() -> f64 {
    1.0
}

/// Deterministic core of a utility, defined on the whole real line so that a
/// reference shift can push its argument below zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum UtilityFamily {
    /// `scale * y^exponent`, extended oddly to negative `y`.
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// S-shaped: `y^alpha` on gains, `-loss_aversion * (-y)^beta` on losses.
    TwoPiecePower {
        alpha: f64,
        beta: f64,
        loss_aversion: f64,
    },
    /// `low` up to `lo`, linear to `high` at `hi`, then flat.
    Ramp {
        lo: f64,
        hi: f64,
        #[serde(default)]
        low: f64,
        #[serde(default = "one")]
        high: f64,
    },
    /// Bounded utility with infinite asymptotic elasticity, see [`kramkov_f`].
    KramkovF {},
    /// Piece `j` is `sum_m coeffs[j][m] * (y - knots[j])^m` on
    /// `[knots[j], knots[j+1])`; the last piece extends to infinity and the
    /// function is constant left of `knots[0]`.
    PiecewisePolynomial { knots: Vec<f64>, coeffs: Vec<Vec<f64>> },
    /// `scale * exp(rate * y)`.
    Exponential {
        rate: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

impl UtilityFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidUtility(m));
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        match self {
            UtilityFamily::Power { exponent, scale } => {
                if !finite_pos(*exponent) || !finite_pos(*scale) {
                    return bad(format!("power needs exponent > 0 and scale > 0, got {exponent}, {scale}"));
                }
            }
            UtilityFamily::TwoPiecePower {
                alpha,
                beta,
                loss_aversion,
            } => {
                if !finite_pos(*alpha) || !finite_pos(*beta) || !finite_pos(*loss_aversion) {
                    return bad("two_piece_power needs positive alpha, beta, loss_aversion".into());
                }
            }
            UtilityFamily::Ramp { lo, hi, low, high } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("ramp needs lo < hi, got {lo}, {hi}"));
                }
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return bad(format!("ramp needs low <= high, got {low}, {high}"));
                }
            }
            UtilityFamily::KramkovF {} => {}
            UtilityFamily::PiecewisePolynomial { knots, coeffs } => {
                validate_piecewise(knots, coeffs)?;
            }
            UtilityFamily::Exponential { rate, scale } => {
                if !(rate.is_finite() && *rate >= 0.0) || !finite_pos(*scale) {
                    return bad("exponential needs rate >= 0 and scale > 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            UtilityFamily::Power { exponent, scale } => {
                if y >= 0.0 {
                    scale * y.powf(*exponent)
                } else {
                    -scale * (-y).powf(*exponent)
                }
            }
            UtilityFamily::TwoPiecePower {
                alpha,
                beta,
                loss_aversion,
            } => {
                if y >= 0.0 {
                    y.powf(*alpha)
                } else {
                    -loss_aversion * (-y).powf(*beta)
                }
            }
            UtilityFamily::Ramp { lo, hi, low, high } => {
                if y <= *lo {
                    *low
                } else if y >= *hi {
                    *high
                } else {
                    low + (high - low) * (y - lo) / (hi - lo)
                }
            }
            UtilityFamily::KramkovF {} => kramkov_f(y.max(0.0)).0,
            UtilityFamily::PiecewisePolynomial { knots, coeffs } => {
                let y = y.max(knots[0]);
                let j = knots.partition_point(|&k| k <= y).saturating_sub(1);
                poly_eval(&coeffs[j], y - knots[j])
            }
            UtilityFamily::Exponential { rate, scale } => scale * (rate * y).exp(),
        }
    }

    /// Points in `[lo, hi]` where the core is not differentiable.
    pub fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = match self {
            UtilityFamily::Power { .. } | UtilityFamily::TwoPiecePower { .. } => vec![0.0],
            UtilityFamily::Ramp { lo: a, hi: b, .. } => vec![*a, *b],
            UtilityFamily::KramkovF {} => {
                let mut v = Vec::new();
                if hi >= 0.0 {
                    let first = lo.max(0.0).floor() as u64;
                    let last = hi.ceil() as u64;
                    for n in first..=last {
                        let a = kramkov_a(n);
                        let nf = n as f64;
                        v.extend([nf, nf + 0.5 - a, nf + 0.5 + a]);
                    }
                }
                v
            }
            UtilityFamily::PiecewisePolynomial { knots, .. } => knots.clone(),
            UtilityFamily::Exponential { .. } => Vec::new(),
        };
        out.retain(|&k| k >= lo && k <= hi);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(m, &a)| m as f64 * a).collect()
}

fn validate_piecewise(knots: &[f64], coeffs: &[Vec<f64>]) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidUtility(m));
    if knots.is_empty() || knots.len() != coeffs.len() {
        return bad("piecewise_polynomial needs one coefficient list per knot".into());
    }
    if knots.iter().chain(coeffs.iter().flatten()).any(|v| !v.is_finite()) {
        return bad("piecewise_polynomial has non-finite entries".into());
    }
    if coeffs.iter().any(|c| c.is_empty()) {
        return bad("empty polynomial piece".into());
    }
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return bad("knots must be strictly increasing".into());
    }
    for j in 0..knots.len() {
        let deriv = poly_derivative(&coeffs[j]);
        let width = if j + 1 < knots.len() {
            let w = knots[j + 1] - knots[j];
            let left = poly_eval(&coeffs[j], w);
            let right = coeffs[j + 1][0];
            if (left - right).abs() > CONTINUITY_TOL * left.abs().max(1.0) {
                return bad(format!(
                    "discontinuity at knot {}: {left} vs {right}",
                    knots[j + 1]
                ));
            }
            w
        } else {
            // last piece: the derivative must be eventually non-negative and
            // non-negative up to the Cauchy bound of its roots
            let Some(lead) = deriv.iter().rposition(|a| *a != 0.0) else {
                continue;
            };
            if deriv[lead] < 0.0 {
                return bad("last polynomial piece is eventually decreasing".into());
            }
            1.0 + deriv[..lead]
                .iter()
                .map(|a| (a / deriv[lead]).abs())
                .fold(0.0, f64::max)
        };
        let steps = 400;
        for s in 0..=steps {
            let t = width * s as f64 / steps as f64;
            let slope = poly_eval(&deriv, t);
            if slope < -1e-12 * poly_eval(&coeffs[j], t).abs().max(1.0) {
                return bad(format!(
                    "piece starting at {} decreases at {}",
                    knots[j],
                    knots[j] + t
                ));
            }
        }
    }
    Ok(())
}

fn kramkov_a(n: u64) -> f64 {
    let n = n as f64;
    1.0 / (4.0 * (n + 1.0) * (n + 2.0))
}

/// The bounded, piecewise linear utility with infinite asymptotic
/// elasticity: `f(n) = 1/2 - 1/(n+1)`, `f(n + 1/2 - a_n) = f(n) + a_n`,
/// `f(n + 1/2 + a_n) = f(n+1) - a_n` with `a_n = 1/(4(n+1)(n+2))`, linear in
/// between. Returns the value and, away from knots, the derivative.
pub fn kramkov_f(x: f64) -> (f64, Option<f64>) {
    let x = x.max(0.0);
    let n = x.floor();
    let ni = n as u64;
    let a = kramkov_a(ni);
    let f_n = (n - 1.0) / (2.0 * (n + 1.0));
    let f_next = n / (2.0 * (n + 2.0));
    let left = n + 0.5 - a;
    let right = n + 0.5 + a;
    let outer_slope = a / (0.5 - a);
    let on_knot = x == n || x == left || x == right;
    let (value, slope) = if x <= left {
        (f_n + outer_slope * (x - n), outer_slope)
    } else if x <= right {
        (f_n + a + (x - left), 1.0)
    } else {
        (f_next - a + outer_slope * (x - right), outer_slope)
    };
    (value, (!on_knot).then_some(slope))
}

/// Per-leaf real quantity, either shared or keyed by leaf id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeScalar {
    Constant(f64),
    PerNode(BTreeMap<String, f64>),
}

impl NodeScalar {
    pub fn get(&self, node: &str) -> Result<f64> {
        match self {
            NodeScalar::Constant(v) => Ok(*v),
            NodeScalar::PerNode(m) => m
                .get(node)
                .copied()
                .ok_or_else(|| Error::InvalidUtility(format!("no value for node `{node}`"))),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            NodeScalar::Constant(v) => *v,
            NodeScalar::PerNode(m) => m.values().cloned().fold(0.0, f64::max),
        }
    }

    fn all_values(&self) -> Vec<f64> {
        match self {
            NodeScalar::Constant(v) => vec![*v],
            NodeScalar::PerNode(m) => m.values().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Reference {
    Constant(f64),
    PerNode(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    #[serde(flatten)]
    pub family: UtilityFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
}

/// The utility of one leaf, with its reference point resolved.
#[derive(Debug, Clone, Copy)]
pub struct LeafUtility<'a> {
    pub family: &'a UtilityFamily,
    pub reference: f64,
}

impl LeafUtility<'_> {
    pub fn value(&self, x: f64) -> f64 {
        self.family.eval(x - self.reference)
    }

    /// Kinks in wealth units within `[lo, hi]`.
    pub fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.family
            .kinks(lo - self.reference, hi - self.reference)
            .into_iter()
            .map(|k| k + self.reference)
            .collect()
    }
}

impl UtilityModel {
    pub fn new(family: UtilityFamily, reference: Option<Reference>) -> Result<Self> {
        let m = Self { family, reference };
        m.validate()?;
        Ok(m)
    }

    pub fn deterministic(family: UtilityFamily) -> Result<Self> {
        Self::new(family, None)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        let refs: Vec<f64> = match &self.reference {
            None => vec![],
            Some(Reference::Constant(b)) => vec![*b],
            Some(Reference::PerNode(m)) => m.values().cloned().collect(),
        };
        if refs.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidUtility("reference points must be finite and >= 0".into()));
        }
        for b in refs.iter().chain(std::iter::once(&0.0)) {
            let u0 = self.family.eval(-b);
            if !u0.is_finite() {
                return Err(Error::InvalidUtility(format!(
                    "utility at zero wealth is not finite for reference {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn reference_for(&self, node: &str) -> Result<f64> {
        match &self.reference {
            None => Ok(0.0),
            Some(Reference::Constant(b)) => Ok(*b),
            Some(Reference::PerNode(m)) => m
                .get(node)
                .copied()
                .ok_or_else(|| Error::InvalidUtility(format!("no reference point for node `{node}`"))),
        }
    }

    pub fn max_reference(&self) -> f64 {
        match &self.reference {
            None => 0.0,
            Some(Reference::Constant(b)) => *b,
            Some(Reference::PerNode(m)) => m.values().cloned().fold(0.0, f64::max),
        }
    }

    pub fn at_node(&self, node: &str) -> Result<LeafUtility<'_>> {
        Ok(LeafUtility {
            family: &self.family,
            reference: self.reference_for(node)?,
        })
    }

    /// Leaf ids the model distinguishes, or a single placeholder.
    pub fn known_nodes(&self) -> Vec<String> {
        match &self.reference {
            Some(Reference::PerNode(m)) => m.keys().cloned().collect(),
            _ => vec!["*".to_string()],
        }
    }
}

/// Contents of a utility file: the model plus an optional growth certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    #[serde(flatten)]
    pub model: UtilityModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthCertificate>,
}

pub fn load_utility(text: &str) -> Result<UtilitySpec> {
    let spec: UtilitySpec = serde_json::from_str(text)?;
    spec.model.validate()?;
    if let Some(g) = &spec.growth {
        g.validate()?;
    }
    Ok(spec)
}

pub fn eval_u(model: &UtilityModel, x: f64, node: &str) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!("wealth {x} must be >= 0")));
    }
    Ok(model.at_node(node)?.value(x))
}

/// `u(lambda x) <= lambda^g u(x) + lambda^g c` for `lambda >= 1`, `x >= x_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub gamma_bar: f64,
    pub x_bar: f64,
    pub c: NodeScalar,
    /// `u+(x_bar) + c` per leaf, which extends the inequality to all `x >= 0`
    /// for the positive part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lifted: Option<BTreeMap<String, f64>>,
}

impl GrowthCertificate {
    pub fn new(gamma_bar: f64, x_bar: f64, c: f64) -> Self {
        Self {
            gamma_bar,
            x_bar,
            c: NodeScalar::Constant(c),
            c_lifted: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_bar.is_finite() && self.gamma_bar > 0.0) {
            return Err(Error::InvalidUtility("gamma_bar must be > 0".into()));
        }
        if !(self.x_bar.is_finite() && self.x_bar >= 0.0) {
            return Err(Error::InvalidUtility("x_bar must be >= 0".into()));
        }
        if self.c.all_values().iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidUtility("c must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn lifted(&self, node: &str) -> Result<f64> {
        self.c_lifted
            .as_ref()
            .and_then(|m| m.get(node).copied())
            .ok_or_else(|| Error::InvalidUtility(format!("no lifted constant for node `{node}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthCounterexample {
    pub lambda: f64,
    pub x: f64,
    pub node: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl From<GrowthCounterexample> for Error {
    fn from(c: GrowthCounterexample) -> Self {
        Error::GrowthFalsified {
            lambda: c.lambda,
            x: c.x,
            node: c.node,
            lhs: c.lhs,
            rhs: c.rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationGrids {
    pub lambdas: Vec<f64>,
    /// Points at or above `x_bar`.
    pub above: Vec<f64>,
    /// Points in `[0, x_bar)`, used for the lifted inequality only.
    pub below: Vec<f64>,
}

impl ValidationGrids {
    pub fn for_x_bar(x_bar: f64) -> Self {
        let lo = if x_bar > 0.0 { x_bar } else { 1e-3 };
        let hi = 100.0 * (x_bar + 1.0);
        let n = 40;
        let mut above: Vec<f64> = (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect();
        if x_bar == 0.0 {
            above.insert(0, 0.0);
            above.pop();
        }
        let below = (0..20).map(|i| x_bar * i as f64 / 20.0).collect();
        Self {
            lambdas: vec![1.0, 1.5, 2.0, 4.0, 8.0, 16.0],
            above,
            below,
        }
    }
}

/// Searches the grids for a violation of the growth inequality. Passing is
/// evidence, not proof: the condition quantifies over a continuum.
pub fn falsify_growth(
    model: &UtilityModel,
    cert: &GrowthCertificate,
    lambdas: &[f64],
    xs: &[f64],
    nodes: &[String],
) -> Result<Option<GrowthCounterexample>> {
    cert.validate()?;
    for node in nodes {
        let u = model.at_node(node)?;
        let c = cert.c.get(node)?;
        for &lambda in lambdas {
            let lg = lambda.powf(cert.gamma_bar);
            for &x in xs {
                let lhs = u.value(lambda * x);
                let rhs = lg * u.value(x) + lg * c;
                if lhs > rhs + GROWTH_SLACK {
                    return Ok(Some(GrowthCounterexample {
                        lambda,
                        x,
                        node: node.clone(),
                        lhs,
                        rhs,
                    }));
                }
            }
        }
    }
    Ok(None)
}

/// Checks `u+(lambda x) <= lambda^g u+(x) + lambda^g C` with the lifted
/// constants of `cert`.
pub fn falsify_lifted(
    model: &UtilityModel,
    cert: &GrowthCertificate,
    lambdas: &[f64],
    xs: &[f64],
    nodes: &[String],
) -> Result<Option<GrowthCounterexample>> {
    for node in nodes {
        let u = model.at_node(node)?;
        let big_c = cert.lifted(node)?;
        for &lambda in lambdas {
            let lg = lambda.powf(cert.gamma_bar);
            for &x in xs {
                let lhs = u.value(lambda * x).max(0.0);
                let rhs = lg * u.value(x).max(0.0) + lg * big_c;
                if lhs > rhs + GROWTH_SLACK {
                    return Ok(Some(GrowthCounterexample {
                        lambda,
                        x,
                        node: node.clone(),
                        lhs,
                        rhs,
                    }));
                }
            }
        }
    }
    Ok(None)
}

/// Fills in `C = u+(x_bar) + c` per leaf after re-running the falsifier on
/// the default grids.
pub fn lift_growth(
    model: &UtilityModel,
    cert: &GrowthCertificate,
    nodes: &[String],
) -> Result<GrowthCertificate> {
    let grids = ValidationGrids::for_x_bar(cert.x_bar);
    if let Some(cx) = falsify_growth(model, cert, &grids.lambdas, &grids.above, nodes)? {
        return Err(cx.into());
    }
    let mut lifted = BTreeMap::new();
    for node in nodes {
        let u = model.at_node(node)?;
        lifted.insert(node.clone(), u.value(cert.x_bar).max(0.0) + cert.c.get(node)?);
    }
    let out = GrowthCertificate {
        c_lifted: Some(lifted),
        ..cert.clone()
    };
    let mut xs = grids.below.clone();
    xs.extend(&grids.above);
    if let Some(cx) = falsify_lifted(model, &out, &grids.lambdas, &xs, nodes)? {
        return Err(Error::Numerical(format!(
            "lifted growth inequality fails at lambda={}, x={} on `{}`",
            cx.lambda, cx.x, cx.node
        )));
    }
    Ok(out)
}

/// Central-difference estimate of `x u'(x) / u(x)`.
pub fn empirical_elasticity(model: &UtilityModel, node: &str, x: f64, h: f64) -> Result<f64> {
    if !(x > 0.0) || !(h > 0.0) || h >= x {
        return Err(Error::InvalidInput(format!(
            "elasticity needs 0 < h < x, got x={x}, h={h}"
        )));
    }
    let u = model.at_node(node)?;
    let ux = u.value(x);
    if ux == 0.0 {
        return Err(Error::InvalidInput(format!("u({x}) = 0, elasticity undefined")));
    }
    let slope = (u.value(x + h) - u.value(x - h)) / (2.0 * h);
    Ok(x * slope / ux)
}

/// Growth certificate for `u(x) = core(x - B)` from a certificate
/// `(gamma_bar, x_tilde, C)` of the core, a slope bound `core' <= K` on
/// `[x_hat, inf)` and `B <= b_max`: `x_bar = max(x_tilde, x_hat) + b_max`,
/// `c = K b_max + C`.
pub fn refpoint_certificate(
    core: (f64, f64, f64),
    lipschitz: (f64, f64),
    b_max: f64,
) -> Result<GrowthCertificate> {
    let (gamma_bar, x_tilde, big_c) = core;
    let (k, x_hat) = lipschitz;
    if !(b_max.is_finite() && b_max >= 0.0) {
        return Err(Error::InvalidInput("reference bound must be finite and >= 0".into()));
    }
    if !(k.is_finite() && k >= 0.0) || !(x_hat.is_finite() && x_hat >= 0.0) {
        return Err(Error::InvalidInput("slope bound needs K >= 0 and x_hat >= 0".into()));
    }
    if !(x_tilde.is_finite() && x_tilde >= 0.0) || !(big_c.is_finite() && big_c >= 0.0) {
        return Err(Error::InvalidInput("core certificate needs x_tilde >= 0 and C >= 0".into()));
    }
    let cert = GrowthCertificate::new(gamma_bar, x_tilde.max(x_hat) + b_max, k * b_max + big_c);
    cert.validate()?;
    Ok(cert)
}
