//! Asynchronous network Newton for penalized consensus optimization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod bounds;
pub mod gossip;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod real;
pub mod simulator;
pub mod splitting;
pub mod topology;
