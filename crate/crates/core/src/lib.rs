//! Sticky particle dynamics on the line and verification of the resulting
//! measure/velocity pair as a weak solution of the pressureless Euler
//! equations.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod dynamics;
pub mod io;
pub mod measures;
pub mod potentials;
pub mod quadrature;
pub mod sticky;
pub mod verify;
