//! Numerical toolkit for isothermal compressible multi-component mixture flow
//! in one space dimension: the symmetrizing change of variables, the coercive
//! diffusion/relaxation matrices, the Lagrangian-coordinate operator
//! transforms, the linearized system with explicit remainders, and a Picard
//! fixed-point time stepper.
//!
//! The numerics are generic over the working scalar ([`scalar::Real`], i.e.
//! `f32` or `f64`); the [`f64` aliases](crate#types) below are what the CLI
//! and most downstream code use.

pub mod diffusion;
pub mod grid;
pub mod lagrangian;
pub mod linear;
pub mod linalg;
pub mod mixture;
pub mod norms;
pub mod picard;
pub mod scalar;
pub mod verify;

pub use scalar::Real;

/// Concrete `f64` aliases for the main domain types.
pub type Grid1dF64 = grid::Grid1d<f64>;
pub type SpeciesParamsF64 = mixture::SpeciesParams<f64>;
pub type PrimitiveStateF64 = mixture::PrimitiveState<f64>;
pub type NormalStateF64 = mixture::NormalState<f64>;
