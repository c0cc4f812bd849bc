//! Optimal investment with non-concave, possibly random utilities on finite
//! scenario trees.
//!
//! The pieces, in the order a run uses them:
//!
//! * [`market`] loads a scenario tree and computes conditional increments.
//! * [`arbitrage`] certifies no-arbitrage node by node (`beta`, `kappa`) or
//!   produces an arbitrage direction.
//! * [`utility`] holds utility families, reference points and growth
//!   certificates.
//! * [`one_step`] solves the one-period problem on a node.
//! * [`dp`] runs backward induction, assembles the strategy and checks the
//!   polynomial envelope.
//! * [`oracle`] brute-forces small trees for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arbitrage;
pub mod cli;
pub mod dp;
pub mod error;
pub mod fixtures;
pub mod market;
pub mod one_step;
pub mod oracle;
pub mod utility;

pub use arbitrage::{certify_node, certify_tree, NaCertificate, NodeCertificate, TreeCertificate};
pub use dp::{backward_induct, DpOptions, DpSolution};
pub use error::{Error, Result};
pub use market::{load_tree, ScenarioTree};
pub use one_step::{maximize_one_step, ValueCurve};
pub use utility::{GrowthCertificate, UtilityFamily, UtilityModel};
