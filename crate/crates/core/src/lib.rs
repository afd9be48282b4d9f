//! Pseudo-spectral solver and verification suite for the two-dimensional
//! MHD-Boussinesq system with calmed Ohmic heating on the periodic unit torus.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calming;
pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod io;
pub mod spectral;
