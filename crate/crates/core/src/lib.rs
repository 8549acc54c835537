//! Laboratory for studying how an autonomous agent's perception layer shapes
//! its world representation.
//!
//! The crate bundles a deterministic network simulator ([`sim`]), a
//! sensor/transformer pipeline with time-slice alignment ([`pipeline`]),
//! interchangeable world representations ([`repr`]), power and bandwidth
//! budgeting ([`budget`]), fault injection and voting ([`trust`]) and a
//! tabular Q-learning harness ([`harness`]) that measures each
//! representation's cost and fidelity.

pub mod bits;
pub mod budget;
pub mod cli;
pub mod digest;
pub mod harness;
pub mod message;
pub mod pipeline;
pub mod repr;
pub mod scenario;
pub mod sim;
pub mod trust;
