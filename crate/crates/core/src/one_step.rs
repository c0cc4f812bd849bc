//! The single-period problem at one node: maximise
//! `xi -> sum_i p_i V_i(x + <xi, dS_i>)` over admissible positions in `D`.
//!
//! The objective is continuous but in general neither concave nor smooth,
//! so the search is global: exact candidate enumeration along lines (the
//! kinks of every child function are mapped back to positions) plus
//! multi-resolution grids in dimension two and higher.

use log::warn;

use crate::arbitrage::NodeCertificate;
use crate::error::{Error, Result};
use crate::market::{dot, norm, Increment};
use crate::utility::LeafUtility;

/// Relative window inside which two objective values count as tied.
const TIE_REL: f64 = 1e-12;
/// Payoffs this far below zero are treated as the boundary.
const FEAS_EPS: f64 = 1e-12;
const GOLDEN_ITERS: usize = 60;

/// A value function of wealth on `[0, inf)`.
pub trait WealthValue: Sync {
    fn value(&self, x: f64) -> f64;
    /// Points in `[lo, hi]` where the function may fail to be smooth.
    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64>;
}

impl WealthValue for LeafUtility<'_> {
    fn value(&self, x: f64) -> f64 {
        LeafUtility::value(self, x)
    }

    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        LeafUtility::kinks(self, lo, hi)
    }
}

/// Continuous, non-decreasing, piecewise linear function on a wealth grid
/// starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCurve {
    wealth: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub value: f64,
    /// Set when `x` lies beyond the last knot and the value was extrapolated.
    pub out_of_range: bool,
}

impl ValueCurve {
    pub fn new(wealth: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if wealth.is_empty() || wealth.len() != values.len() {
            return Err(Error::InvalidInput("curve needs matching, non-empty grids".into()));
        }
        if wealth[0] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "wealth grid must start at 0, starts at {}",
                wealth[0]
            )));
        }
        if wealth.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("wealth grid must be strictly increasing".into()));
        }
        if values.iter().chain(&wealth).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("curve has non-finite entries".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("curve values must be non-decreasing".into()));
        }
        Ok(Self { wealth, values })
    }

    pub fn wealth(&self) -> &[f64] {
        &self.wealth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_wealth(&self) -> f64 {
        *self.wealth.last().expect("non-empty")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.wealth.len();
        if x <= 0.0 || n == 1 {
            return self.values[0];
        }
        let j = self.wealth.partition_point(|&w| w <= x);
        if j >= n {
            let (x0, x1) = (self.wealth[n - 2], self.wealth[n - 1]);
            let (y0, y1) = (self.values[n - 2], self.values[n - 1]);
            return y1 + (y1 - y0) / (x1 - x0) * (x - x1);
        }
        let (x0, x1) = (self.wealth[j - 1], self.wealth[j]);
        let (y0, y1) = (self.values[j - 1], self.values[j]);
        if x == x0 {
            return y0;
        }
        y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
    }

    pub fn eval_checked(&self, x: f64) -> Result<CurvePoint> {
        if !(x >= 0.0) {
            return Err(Error::InvalidInput(format!("cannot evaluate a value curve at {x}")));
        }
        Ok(CurvePoint {
            value: self.eval(x),
            out_of_range: x > self.max_wealth(),
        })
    }
}

impl WealthValue for ValueCurve {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let a = self.wealth.partition_point(|&w| w < lo);
        let b = self.wealth.partition_point(|&w| w <= hi);
        self.wealth[a..b].to_vec()
    }
}

pub fn eval_curve(curve: &ValueCurve, x: f64) -> Result<CurvePoint> {
    curve.eval_checked(x)
}

/// `1 + n_grid` points on `[0, w_max]`, geometrically spaced so that the
/// last gap is 100 times the first. Zero wealth gives the single point 0.
pub fn wealth_grid(w_max: f64, n_grid: usize) -> Vec<f64> {
    if w_max <= 0.0 || n_grid == 0 {
        return vec![0.0];
    }
    let ratio = 100f64.powf(1.0 / n_grid as f64);
    let denom = ratio.powi(n_grid as i32) - 1.0;
    let mut g: Vec<f64> = (0..=n_grid)
        .map(|j| w_max * (ratio.powi(j as i32) - 1.0) / denom)
        .collect();
    g[n_grid] = w_max;
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepSolution {
    pub xi: Vec<f64>,
    pub value: f64,
    /// Wealth in each child after trading `xi`.
    pub payoffs: Vec<f64>,
}

struct Problem<'a> {
    x: f64,
    incs: &'a [Increment],
    children: &'a [&'a dyn WealthValue],
    cert: &'a NodeCertificate,
    /// Increments in basis coordinates.
    coords: Vec<Vec<f64>>,
}

#[derive(Clone)]
struct Cand {
    z: Vec<f64>,
    xi: Vec<f64>,
    value: f64,
}

impl<'a> Problem<'a> {
    fn dim(&self) -> usize {
        self.cert.basis.dim()
    }

    fn payoff(&self, z: &[f64], i: usize) -> f64 {
        self.x + dot(z, &self.coords[i])
    }

    fn objective(&self, z: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        for (i, inc) in self.incs.iter().enumerate() {
            let w = self.payoff(z, i);
            if w < -FEAS_EPS * self.x.max(1.0) {
                return None;
            }
            total += inc.prob * self.children[i].value(w.max(0.0));
        }
        Some(total)
    }

    fn cand(&self, z: Vec<f64>) -> Option<Cand> {
        let value = self.objective(&z)?;
        let xi = self.cert.basis.combine(&z);
        Some(Cand { z, xi, value })
    }

    /// Feasible parameter range of `z0 + t dir`.
    fn line_range(&self, z0: &[f64], dir: &[f64]) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..self.incs.len() {
            let base = self.payoff(z0, i).max(0.0);
            let s = dot(dir, &self.coords[i]);
            if s > 0.0 {
                lo = lo.max(-base / s);
            } else if s < 0.0 {
                hi = hi.min(base / -s);
            }
        }
        (lo.is_finite() && hi.is_finite() && lo <= hi).then_some((lo, hi))
    }

    /// Global search along a line: candidate set of endpoints, a uniform
    /// grid and every parameter where some child crosses one of its kinks,
    /// followed by golden-section refinement between neighbouring
    /// candidates of the best few.
    fn search_line(&self, z0: &[f64], dir: &[f64], n_uniform: usize, out: &mut Vec<Cand>) {
        let Some((lo, hi)) = self.line_range(z0, dir) else {
            return;
        };
        let at = |t: f64| -> Vec<f64> { z0.iter().zip(dir).map(|(a, b)| a + t * b).collect() };
        let mut ts = vec![lo, hi, 0.0_f64.clamp(lo, hi)];
        if hi > lo {
            ts.extend((1..n_uniform).map(|j| lo + (hi - lo) * j as f64 / n_uniform as f64));
            for i in 0..self.incs.len() {
                let base = self.payoff(z0, i).max(0.0);
                let s = dot(dir, &self.coords[i]);
                if s == 0.0 {
                    continue;
                }
                let (wa, wb) = (base + lo * s, base + hi * s);
                for k in self.children[i].kinks(wa.min(wb).max(0.0), wa.max(wb)) {
                    let t = (k - base) / s;
                    if t >= lo && t <= hi {
                        ts.push(t);
                    }
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let vals: Vec<Option<f64>> = ts.iter().map(|&t| self.objective(&at(t))).collect();

        let mut order: Vec<usize> = (0..ts.len()).filter(|&j| vals[j].is_some()).collect();
        order.sort_by(|&a, &b| vals[b].unwrap().total_cmp(&vals[a].unwrap()));
        for &j in &order {
            let z = at(ts[j]);
            out.push(Cand {
                xi: self.cert.basis.combine(&z),
                z,
                value: vals[j].unwrap(),
            });
        }
        for &j in order.iter().take(6) {
            let a = ts[j.saturating_sub(1)];
            let b = ts[(j + 1).min(ts.len() - 1)];
            if b > a {
                let t = golden_max(|t| self.objective(&at(t)).unwrap_or(f64::NEG_INFINITY), a, b);
                if let Some(c) = self.cand(at(t)) {
                    out.push(c);
                }
            }
        }
    }

    /// Vertices of the feasible polytope in basis coordinates.
    fn vertices(&self) -> Vec<Vec<f64>> {
        let k = self.dim();
        let m = self.incs.len();
        if m < k {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let a = nalgebra::DMatrix::from_fn(k, k, |r, c| self.coords[idx[r]][c]);
            let b = nalgebra::DVector::from_element(k, -self.x);
            if let Some(z) = a.lu().solve(&b) {
                let z: Vec<f64> = z.iter().cloned().collect();
                if z.iter().all(|v| v.is_finite()) && self.objective(&z).is_some() {
                    out.push(z);
                }
            }
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] < m - k + i {
                    idx[i] += 1;
                    for j in i + 1..k {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn search_box(&self, lo: &[f64], hi: &[f64], n: usize, out: &mut Vec<Cand>) {
        let k = lo.len();
        let mut counter = vec![0usize; k];
        loop {
            let z: Vec<f64> = (0..k)
                .map(|j| {
                    if n == 1 {
                        0.5 * (lo[j] + hi[j])
                    } else {
                        lo[j] + (hi[j] - lo[j]) * counter[j] as f64 / (n - 1) as f64
                    }
                })
                .collect();
            if let Some(c) = self.cand(z) {
                out.push(c);
            }
            let mut j = 0;
            loop {
                if j == k {
                    return;
                }
                counter[j] += 1;
                if counter[j] < n {
                    break;
                }
                counter[j] = 0;
                j += 1;
            }
        }
    }

    fn solve_multi(&self, hints: &[Vec<f64>], out: &mut Vec<Cand>) {
        let k = self.dim();
        let verts = self.vertices();
        let (mut lo, mut hi) = (vec![0.0; k], vec![0.0; k]);
        if verts.is_empty() {
            let r = self.x / self.cert.beta;
            lo.iter_mut().for_each(|v| *v = -r);
            hi.iter_mut().for_each(|v| *v = r);
        } else {
            for j in 0..k {
                lo[j] = verts.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min).min(0.0);
                hi[j] = verts.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max).max(0.0);
            }
        }
        for v in verts {
            if let Some(c) = self.cand(v) {
                out.push(c);
            }
        }
        for h in hints {
            if let Some(c) = self.cand(h.clone()) {
                out.push(c);
            }
        }

        let n0 = ((2500f64).powf(1.0 / k as f64).floor() as usize).max(5);
        self.search_box(&lo, &hi, n0, out);

        let n_ref = 11;
        let mut half: Vec<f64> = (0..k).map(|j| (hi[j] - lo[j]) / (n0 - 1) as f64).collect();
        for _round in 0..3 {
            let seeds = top_distinct(out, 5);
            for s in seeds {
                let a: Vec<f64> = (0..k).map(|j| s.z[j] - half[j]).collect();
                let b: Vec<f64> = (0..k).map(|j| s.z[j] + half[j]).collect();
                self.search_box(&a, &b, n_ref, out);
            }
            half.iter_mut().for_each(|h| *h *= 2.0 / (n_ref - 1) as f64);
        }

        // polish: exact line searches through the best points
        let mut dirs: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let mut e = vec![0.0; k];
                e[j] = 1.0;
                e
            })
            .collect();
        if k == 2 {
            let s = 0.5f64.sqrt();
            dirs.push(vec![s, s]);
            dirs.push(vec![s, -s]);
        }
        for seed in top_distinct(out, 3) {
            let mut cur = seed;
            for _sweep in 0..8 {
                let before = cur.value;
                for d in &dirs {
                    let mut local = Vec::new();
                    self.search_line(&cur.z, d, 32, &mut local);
                    if let Some(b) = pick(&local) {
                        if b.value > cur.value {
                            cur = b.clone();
                        }
                    }
                    out.extend(local);
                }
                if cur.value - before <= TIE_REL * before.abs().max(1.0) {
                    break;
                }
            }
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Best value; among candidates tied with it, the lexicographically
/// smallest position.
fn pick(cands: &[Cand]) -> Option<&Cand> {
    let best = cands.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let window = TIE_REL * best.abs().max(1.0);
    cands
        .iter()
        .filter(|c| c.value >= best - window)
        .fold(None, |acc: Option<&Cand>, c| match acc {
            Some(a) if !lex_less(&c.xi, &a.xi) => Some(a),
            _ => Some(c),
        })
}

fn top_distinct(cands: &[Cand], n: usize) -> Vec<Cand> {
    let mut sorted: Vec<&Cand> = cands.iter().collect();
    sorted.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mut out: Vec<Cand> = Vec::new();
    for c in sorted {
        if out.iter().all(|o| o.z.iter().zip(&c.z).any(|(a, b)| (a - b).abs() > 1e-12)) {
            out.push(c.clone());
            if out.len() == n {
                break;
            }
        }
    }
    out
}

/// Global maximiser of the one-step objective at wealth `x`.
pub fn maximize_one_step(
    x: f64,
    incs: &[Increment],
    children: &[&dyn WealthValue],
    cert: &NodeCertificate,
    tol: f64,
) -> Result<OneStepSolution> {
    maximize_one_step_with_hints(x, incs, children, cert, tol, &[])
}

/// As [`maximize_one_step`], additionally evaluating the given positions
/// (projected onto `D`) as candidates.
pub fn maximize_one_step_with_hints(
    x: f64,
    incs: &[Increment],
    children: &[&dyn WealthValue],
    cert: &NodeCertificate,
    tol: f64,
    hints: &[Vec<f64>],
) -> Result<OneStepSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::InvalidInput(format!("wealth {x} must be finite and >= 0")));
    }
    if incs.len() != children.len() {
        return Err(Error::InvalidInput(format!(
            "{} increments but {} child value functions",
            incs.len(),
            children.len()
        )));
    }
    if !(cert.beta > 0.0) {
        return Err(Error::InvalidInput("certificate needs beta > 0".into()));
    }
    let problem = Problem {
        x,
        incs,
        children,
        cert,
        coords: incs.iter().map(|i| cert.basis.coords(&i.delta)).collect(),
    };
    let k = problem.dim();
    let d = cert.basis.ambient;

    let zero = vec![0.0; k];
    let best = if k == 0 || x == 0.0 {
        problem.cand(zero).ok_or_else(|| Error::Numerical("zero position infeasible".into()))?
    } else {
        let mut cands = Vec::new();
        let hint_z: Vec<Vec<f64>> = hints
            .iter()
            .filter(|h| h.len() == d)
            .map(|h| cert.basis.coords(h))
            .collect();
        if let Some(c) = problem.cand(zero.clone()) {
            cands.push(c);
        }
        for h in &hint_z {
            if let Some(c) = problem.cand(h.clone()) {
                cands.push(c);
            }
        }
        if k == 1 {
            problem.search_line(&zero, &[1.0], 1024, &mut cands);
        } else {
            problem.solve_multi(&hint_z, &mut cands);
        }
        pick(&cands)
            .cloned()
            .ok_or_else(|| Error::Numerical("no feasible candidate".into()))?
    };

    let mut xi = best.xi;
    // pull back onto the feasible set if rounding left a payoff below zero
    let mut shrink: f64 = 1.0;
    for inc in incs {
        let gain = dot(&xi, &inc.delta);
        if x + gain < 0.0 && gain < 0.0 {
            shrink = shrink.min(x / -gain);
        }
    }
    if shrink < 1.0 {
        xi.iter_mut().for_each(|v| *v *= shrink);
    }
    let payoffs: Vec<f64> = incs.iter().map(|i| x + dot(&xi, &i.delta)).collect();
    let value = incs
        .iter()
        .zip(&payoffs)
        .zip(children)
        .map(|((i, &w), c)| i.prob * c.value(w.max(0.0)))
        .sum();
    debug_assert!(norm(&xi) <= x / cert.beta * (1.0 + 1e-9) + 1e-9);
    Ok(OneStepSolution { xi, value, payoffs })
}

/// Solves the one-step problem at every grid wealth and returns the
/// resulting monotone curve together with the maximisers.
pub fn build_value_curve(
    grid: &[f64],
    incs: &[Increment],
    children: &[&dyn WealthValue],
    cert: &NodeCertificate,
    tol: f64,
) -> Result<(ValueCurve, Vec<Vec<f64>>)> {
    if grid.first() != Some(&0.0) {
        return Err(Error::InvalidInput("wealth grid must start at 0".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut xis: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    for (j, &x) in grid.iter().enumerate() {
        let hints: Vec<Vec<f64>> = xis.last().cloned().into_iter().collect();
        let sol = maximize_one_step_with_hints(x, incs, children, cert, tol, &hints)?;
        let (mut value, mut xi) = (sol.value, sol.xi);
        if let Some(&prev) = values.last() {
            if value < prev {
                let drop = prev - value;
                if drop > 10.0 * tol {
                    return Err(Error::Numerical(format!(
                        "value curve drops by {drop} at wealth {x} (grid point {j})"
                    )));
                }
                warn!("repairing value-curve dip of {drop:.3e} at wealth {x}");
                value = prev;
                xi = xis.last().cloned().expect("previous maximiser");
            }
        }
        values.push(value);
        xis.push(xi);
    }
    Ok((ValueCurve::new(grid.to_vec(), values)?, xis))
}
