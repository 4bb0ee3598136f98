//! Simulation and control of serial flexible manipulators.
//!
//! Links are Euler–Bernoulli beams discretized with clamped-free modes; rigid
//! motion is described by body-fixed twists and wrenches on se(3).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptation;
pub mod analysis;
pub mod chain_dynamics;
pub mod control;
pub mod exec;
pub mod flexible_link;
pub mod reference_gen;
pub mod screw_algebra;
pub mod sim;
