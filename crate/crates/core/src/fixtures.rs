//! Small reference markets and utilities used by the examples and tests.

use crate::market::{NodeSpec, ScenarioTree, TreeSpec};
use crate::utility::{UtilityFamily, UtilityModel};

fn node(id: &str, parent: Option<&str>, prob: f64, price: f64) -> NodeSpec {
    NodeSpec {
        id: id.to_string(),
        parent: parent.map(str::to_string),
        prob,
        price: vec![price],
    }
}

fn build(horizon: usize, nodes: Vec<NodeSpec>) -> ScenarioTree {
    ScenarioTree::from_spec(&TreeSpec {
        assets: 1,
        horizon,
        nodes,
    })
    .expect("fixture tree is valid")
}

/// One period, one asset: price 1 moves to 2 or 0.5 with equal odds.
pub fn b1() -> ScenarioTree {
    build(
        1,
        vec![
            node("root", None, 1.0, 1.0),
            node("u", Some("root"), 0.5, 2.0),
            node("d", Some("root"), 0.5, 0.5),
        ],
    )
}

/// Two i.i.d. periods of the [`b1`] move.
pub fn b2() -> ScenarioTree {
    build(
        2,
        vec![
            node("root", None, 1.0, 1.0),
            node("u", Some("root"), 0.5, 2.0),
            node("d", Some("root"), 0.5, 0.5),
            node("uu", Some("u"), 0.5, 4.0),
            node("ud", Some("u"), 0.5, 1.0),
            node("du", Some("d"), 0.5, 1.0),
            node("dd", Some("d"), 0.5, 0.25),
        ],
    )
}

/// Both moves are gains: a one-step arbitrage.
pub fn arb() -> ScenarioTree {
    build(
        1,
        vec![
            node("root", None, 1.0, 1.0),
            node("a", Some("root"), 0.5, 2.0),
            node("b", Some("root"), 0.5, 3.0),
        ],
    )
}

/// A single child with an unchanged price.
pub fn deg() -> ScenarioTree {
    build(
        1,
        vec![node("root", None, 1.0, 1.0), node("only", Some("root"), 1.0, 1.0)],
    )
}

pub fn sqrt_utility() -> UtilityModel {
    UtilityModel::deterministic(UtilityFamily::Power {
        exponent: 0.5,
        scale: 1.0,
    })
    .expect("valid family")
}

/// Zero up to 1.5, linear to 1 at 2, flat afterwards.
pub fn ramp_utility() -> UtilityModel {
    UtilityModel::deterministic(UtilityFamily::Ramp {
        lo: 1.5,
        hi: 2.0,
        low: 0.0,
        high: 1.0,
    })
    .expect("valid family")
}

pub fn kf_utility() -> UtilityModel {
    UtilityModel::deterministic(UtilityFamily::KramkovF {}).expect("valid family")
}
